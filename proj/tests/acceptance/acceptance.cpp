// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../toy_model.hpp"
#include "spml/adapters.hpp"
#include "spml/cli.hpp"
#include "spml/data.hpp"
#include "spml/eval.hpp"
#include "spml/gr_loss.hpp"
#include "spml/trainer.hpp"

using namespace spml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---- AC1 ------------------------------------------------------------------

Outcome unannotated_gradient_grid() {
    const auto t0 = Clock::now();
    const double qs[] = {0.01, 0.5, 1.0, 1.5};
    const double ks[] = {0.0, 0.3, 0.7, 1.0};
    double worst = 0.0;
    int points = 0;
    for (int i = 0; i < 50; ++i) {
        const double p = 0.01 + 0.02 * i;
        for (double q2 : qs)
            for (double q3 : qs)
                for (double k : ks) {
                    const double fd = oracle::central_difference(
                        [&](double z) { return gr::unannotated_loss(oracle::sigmoid(z), k, q2, q3); }, logit(p), 1e-6);
                    worst = std::max(worst, oracle::rel_err(gr::grad_unannotated_wrt_logit(p, k, q2, q3), fd, 1e-6));
                    ++points;
                }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-5 && secs < 5.0, std::to_string(points) + " points, max rel-err " + fmt("%.2e", worst) +
                                             " (<= 1e-5), " + fmt("%.3f", secs) + " s (< 5 s)"};
}

// ---- AC2 ------------------------------------------------------------------

Outcome closed_form_gradients() {
    double hill = 0.0, em = 0.0;
    for (int i = 1; i <= 99; ++i) {
        const double p = i / 100.0;
        hill = std::max(hill, std::abs(adapters::hill_neg_logit_grad(p, 1.5) - 3 * p * p * (1 - p) * (1 - p)));
        em = std::max(em, std::abs(adapters::entropy_logit_grad(p) - std::log(p / (1 - p)) * p * (1 - p)));
    }
    return {hill <= 1e-8 && em <= 1e-8,
            "Hill max err " + fmt("%.2e", hill) + ", EM max err " + fmt("%.2e", em) + " (<= 1e-8)"};
}

// ---- AC3 ------------------------------------------------------------------

Outcome adapter_equivalence() {
    const adapters::MethodHyper hyper;
    RngStream rng(2024, 0);
    double worst = 0.0;
    std::string worst_method;
    for (adapters::Method m : adapters::kAllMethods) {
        for (int i = 0; i < 10000; ++i) {
            adapters::EpochState st;
            st.tau1 = rng.uniform() < 0.1 ? -std::numeric_limits<double>::infinity() : rng.uniform();
            st.splc_active = rng.uniform() < 0.7;
            st.gr = {gr::PseudoLabelParams{rng.uniform(0, 10), rng.uniform(-8, 2)},
                     gr::WeightParams{rng.uniform(), rng.uniform(0.05, 3.0)},
                     gr::RobustParams{rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0)}};
            const double p = std::clamp(rng.uniform(), 1e-9, 1 - 1e-9);
            const int s = rng.uniform() < 0.3 ? 1 : 0;
            const double framework = adapters::to_framework(m, hyper, st).evaluate(p, s);
            const double direct = adapters::direct_loss(m, hyper, st, p, s);
            const double err = std::isfinite(framework) ? std::abs(framework - direct)
                                                         : std::numeric_limits<double>::infinity();
            if (err > worst) {
                worst = err;
                worst_method = adapters::method_name(m);
            }
        }
    }
    return {worst <= 1e-12, "9 methods x 10^4 inputs, max |framework - direct| " + fmt("%.2e", worst) +
                                (worst_method.empty() ? "" : " (" + worst_method + ")") + " (<= 1e-12)"};
}

// ---- AC4 ------------------------------------------------------------------

Outcome limit_behaviors() {
    double gce = 0.0;
    for (int i = 0; i <= 94; ++i) {
        const double p = 0.05 + 0.01 * i;
        gce = std::max(gce, std::abs(gr::robust_pos_loss(p, 1e-4) + std::log(p)));
    }
    double hard = 0.0;
    for (double tau : {0.2, 0.5, 0.8}) {
        const gr::PseudoLabelParams beta{1000.0, -1000.0 * tau};
        for (int i = 0; i <= 1000; ++i) {
            const double p = i / 1000.0;
            if (std::abs(p - tau) < 0.05) continue;
            hard = std::max(hard, std::abs(gr::k_hat(p, beta) - (p > tau ? 1.0 : 0.0)));
        }
    }
    return {gce <= 1e-3 && hard <= 1e-8, "GCE q=1e-4 vs -ln p max err " + fmt("%.2e", gce) +
                                             " (<= 1e-3), hard pseudo-label max err " + fmt("%.2e", hard) +
                                             " (<= 1e-8)"};
}

// ---- AC5 ------------------------------------------------------------------

Outcome schedule_exactness() {
    // Dyadic endpoints keep the midpoint representable.
    RngStream rng(5, 0);
    int checked = 0, wrong = 0;
    for (int i = 0; i < 2000; ++i) {
        const double a = static_cast<double>(static_cast<int>(rng.uniform_index(1281)) - 640) / 64.0;
        const double b = static_cast<double>(static_cast<int>(rng.uniform_index(1281)) - 640) / 64.0;
        const int horizon = 2 * (1 + static_cast<int>(rng.uniform_index(50)));
        const gr::ScheduleSpec s{a, b, horizon};
        wrong += gr::schedule_value(s, 0) != a;
        wrong += gr::schedule_value(s, horizon) != b;
        wrong += gr::schedule_value(s, horizon / 2) != (a + b) / 2;
        checked += 3;
    }
    // The shipped defaults, through the GR parameter bundle.
    const gr::GrLossParams g = gr::make_params(10, 0.25, {2.0, -2.0}, {0.8, 0.5}, {});
    const auto e0 = g.at_epoch(0), e5 = g.at_epoch(5), e10 = g.at_epoch(10);
    const bool defaults = e0.beta->w == 0.0 && e0.beta->b == logit(0.25) && e0.alpha->mu == 0.8 &&
                          e0.alpha->sigma == 10.0 && e10.beta->w == 2.0 && e10.beta->b == -2.0 &&
                          e10.alpha->mu == 0.8 && e10.alpha->sigma == 0.5 && e5.beta->w == 1.0 &&
                          e5.alpha->sigma == 5.25;
    return {wrong == 0 && defaults, std::to_string(checked) + " endpoint/midpoint values, " + std::to_string(wrong) +
                                        " not bit-equal; default schedules " + (defaults ? "exact" : "NOT exact")};
}

// ---- AC6 ------------------------------------------------------------------

Outcome end_to_end_gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_method;
    for (std::uint64_t seed : {11, 12, 13}) {
        const toy::Problem prob = toy::make_problem(seed);
        for (adapters::Method m : adapters::kAllMethods) {
            const auto r = toy::check_gradients(m, prob);
            if (r.max_rel_err >= worst) {
                worst = r.max_rel_err;
                worst_method = adapters::method_name(m);
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 30.0, "toy MLP (d=4, h=3, C=2, N=5), 9 methods x 3 seeds, max rel-err " +
                                              fmt("%.2e", worst) + " (" + worst_method + ", <= 1e-4), " +
                                              fmt("%.3f", secs) + " s (< 30 s)"};
}

// ---- AC7-AC9: synthetic benchmark ------------------------------------------

constexpr std::uint64_t kBenchmarkSeeds[] = {0, 1, 2, 3, 4};
constexpr int kBenchmarkEpochs = 10;
// Test-mAP margin of GR over AN (median over seeds), frozen from an oracle
// run of this exact configuration, which measured 0.0490.
constexpr double kFrozenTestMargin = 0.03;

struct BenchmarkRun {
    double best_val_map = 0.0;
    double test_map = 0.0;
    double w1_best = 0.0;
    std::optional<double> spearman_final;
    std::optional<double> cv_initial;
    double cv_noise_floor = 0.0;  // CV expected from binomial noise alone
};

struct Benchmark {
    data::DatasetSplits splits;
    std::vector<BenchmarkRun> gr, an;
    double seconds = 0.0;
};

const Benchmark& benchmark() {
    static const Benchmark b = [] {
        const auto t0 = Clock::now();
        Benchmark out;
        data::SyntheticSpec spec;
        spec.num_classes = 10;
        spec.num_features = 20;
        spec.positive_rate = 0.2;
        spec.seed = 2024;
        out.splits = data::generate_splits(spec, {2000, 500, 500});
        const auto& s = out.splits;
        const double k0 = data::dataset_stats(s.train).k0_estimate;
        const double a = data::scar_rate(s.train.truth, s.train.observed);

        train::TrainerConfig trainer;
        trainer.epochs = kBenchmarkEpochs;
        auto run = [&](adapters::Method m, std::uint64_t seed) {
            train::LossConfig loss;
            loss.method = m;
            loss.gr = gr::make_params(kBenchmarkEpochs, k0, {2.0, -2.0}, {0.8, 0.5}, {});
            const auto r = train::train(trainer, loss, s.train, s.val, seed);
            BenchmarkRun out;
            out.best_val_map = r.best_val_map;
            out.test_map = eval::mean_average_precision(train::predict(r.best, s.test.features), s.test.truth).map;
            out.w1_best = eval::distinguishability(train::predict(r.best, s.train.features), s.train.truth,
                                                   s.train.observed)
                              .w1;
            auto summary = [&](const train::ModelParams& model) {
                return eval::summarize_fn_curve(
                    eval::fn_ratio_buckets(train::predict(model, s.train.features), s.train.truth, s.train.observed),
                    a);
            };
            out.spearman_final = summary(r.final_model).spearman;
            out.cv_initial = summary(r.initial).cv;
            const auto buckets =
                eval::fn_ratio_buckets(train::predict(r.initial, s.train.features), s.train.truth, s.train.observed);
            double fn = 0.0, total = 0.0, var = 0.0;
            std::size_t kept = 0;
            for (const auto& bk : buckets) {
                fn += static_cast<double>(bk.false_negatives);
                total += static_cast<double>(bk.count());
            }
            const double pooled = fn / total;
            for (const auto& bk : buckets)
                if (bk.count() >= eval::kMinBucketCount) {
                    var += pooled * (1.0 - pooled) / static_cast<double>(bk.count());
                    ++kept;
                }
            out.cv_noise_floor = std::sqrt(var / static_cast<double>(kept)) / pooled;
            return out;
        };
        std::vector<std::future<BenchmarkRun>> gr_jobs, an_jobs;
        for (std::uint64_t seed : kBenchmarkSeeds) {
            gr_jobs.push_back(std::async(std::launch::async, run, adapters::Method::GR, seed));
            an_jobs.push_back(std::async(std::launch::async, run, adapters::Method::AN, seed));
        }
        for (auto& f : gr_jobs) out.gr.push_back(f.get());
        for (auto& f : an_jobs) out.an.push_back(f.get());
        out.seconds = seconds_since(t0);
        return out;
    }();
    return b;
}

template <typename F>
std::vector<double> collect(const std::vector<BenchmarkRun>& runs, F f) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(f(r));
    return v;
}

std::string list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.4f", x);
    return "[" + s + "]";
}

Outcome benchmark_ordering() {
    const Benchmark& b = benchmark();
    const double gr_val = median(collect(b.gr, [](const auto& r) { return r.best_val_map; }));
    const double an_val = median(collect(b.an, [](const auto& r) { return r.best_val_map; }));
    const double gr_test = median(collect(b.gr, [](const auto& r) { return r.test_map; }));
    const double an_test = median(collect(b.an, [](const auto& r) { return r.test_map; }));
    const double margin = gr_test - an_test;
    return {gr_val > an_val && margin > kFrozenTestMargin,
            "median best-val mAP GR " + fmt("%.4f", gr_val) + " vs AN " + fmt("%.4f", an_val) +
                "; median test mAP GR " + fmt("%.4f", gr_test) + " vs AN " + fmt("%.4f", an_test) + ", margin " +
                fmt("%.4f", margin) + " (> frozen " + fmt("%.3f", kFrozenTestMargin) + "); " +
                fmt("%.1f", b.seconds) + " s for 10 runs"};
}

Outcome benchmark_distinguishability() {
    const Benchmark& b = benchmark();
    const auto gr_w1 = collect(b.gr, [](const auto& r) { return r.w1_best; });
    const auto an_w1 = collect(b.an, [](const auto& r) { return r.w1_best; });
    return {median(gr_w1) > median(an_w1), "median W1 GR " + fmt("%.4f", median(gr_w1)) + " " + list(gr_w1) +
                                               " vs AN " + fmt("%.4f", median(an_w1)) + " " + list(an_w1)};
}

Outcome assumption_verification() {
    const Benchmark& b = benchmark();
    bool pass = true;
    std::vector<double> rho, cv, floor;
    for (const auto& r : b.gr) {
        floor.push_back(r.cv_noise_floor);
        const double sp = r.spearman_final.value_or(std::numeric_limits<double>::quiet_NaN());
        const double c = r.cv_initial.value_or(std::numeric_limits<double>::quiet_NaN());
        pass = pass && sp > 0.8 && c < 0.3;
        rho.push_back(sp);
        cv.push_back(c);
    }
    return {pass, "GR runs, buckets with >= 20 samples: end-of-training Spearman " + list(rho) +
                      " (> 0.8), epoch-0 CV " + list(cv) + " (< 0.3, every seed); binomial-noise CV floor " + list(floor)};
}

// ---- AC10 -----------------------------------------------------------------

Outcome metric_oracles() {
    RngStream rng(10, 0);
    int ap_mismatch = 0;
    double w1_worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 2 + rng.uniform_index(30);
        std::vector<double> scores(n);
        std::vector<std::int8_t> truth(n);
        std::vector<int> truth_int(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse scores force ties.
            scores[i] = static_cast<double>(rng.uniform_index(8)) / 8.0;
            truth[i] = rng.uniform() < 0.4 ? 1 : 0;
            truth_int[i] = truth[i];
        }
        const auto lib = eval::average_precision(scores, truth);
        const auto ref = oracle::average_precision(scores, truth_int);
        if (lib.has_value() != ref.has_value() || (lib && *lib != *ref)) ++ap_mismatch;

        std::vector<double> a(1 + rng.uniform_index(20)), c(1 + rng.uniform_index(20));
        for (auto& x : a) x = rng.uniform();
        for (auto& x : c) x = rng.uniform() < 0.2 ? a[0] : rng.uniform();
        w1_worst = std::max(w1_worst, std::abs(eval::wasserstein1(a, c) - oracle::wasserstein1(a, c)));
    }
    return {ap_mismatch == 0 && w1_worst <= 1e-12, "AP: " + std::to_string(ap_mismatch) +
                                                       "/1000 instances differ from the rank-counting oracle; W1: "
                                                       "max |lib - quantile oracle| " +
                                                       fmt("%.2e", w1_worst) + " (<= 1e-12)"};
}

// ---- AC11 -----------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome reproducibility() {
    const fs::path root = fs::temp_directory_path() / "spml_acceptance_replay";
    fs::remove_all(root);
    fs::create_directories(root);
    int compared = 0, differing = 0;
    for (adapters::Method m : {adapters::Method::GR, adapters::Method::EN, adapters::Method::EM_APL}) {
        cli::ExperimentConfig c;
        c.method = m;
        c.dataset.splits = {300, 100, 100};
        c.trainer.epochs = 4;
        c.seeds = {3, 8};
        const fs::path cfg = root / "config.json";
        std::ofstream(cfg) << cli::to_json(c).dump(2);
        for (const char* out : {"a", "b"}) {
            const std::string dir = (root / out).string(), cfg_s = cfg.string();
            const char* argv[] = {"spml", "train", "--config", cfg_s.c_str(), "--out", dir.c_str(), "--jobs", "2"};
            if (cli::run_cli(8, argv) != cli::kExitOk) return {false, "train command failed"};
        }
        for (std::uint64_t seed : c.seeds) {
            const fs::path rel = fs::path("seed-" + std::to_string(seed)) / "metrics.jsonl";
            const std::string a = slurp(root / "a" / rel), b = slurp(root / "b" / rel);
            ++compared;
            differing += a.empty() || a != b;
        }
    }
    return {differing == 0, std::to_string(compared) + " metrics.jsonl pairs (GR, EN, EM+APL x 2 seeds), " +
                                std::to_string(differing) + " not byte-identical"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"AC1 unannotated-loss gradient vs finite differences", unannotated_gradient_grid},
        {"AC2 Hill and EM closed-form gradients", closed_form_gradients},
        {"AC3 framework vs direct loss for every method", adapter_equivalence},
        {"AC4 GCE and hard pseudo-label limits", limit_behaviors},
        {"AC5 schedule endpoints and midpoint", schedule_exactness},
        {"AC6 end-to-end parameter gradients", end_to_end_gradients},
        {"AC7 synthetic benchmark GR > AN", benchmark_ordering},
        {"AC8 distinguishability W1(GR) > W1(AN)", benchmark_distinguishability},
        {"AC9 FN/(FN+TN) curve vs theory", assumption_verification},
        {"AC10 mAP and W1 vs definitional oracles", metric_oracles},
        {"AC11 byte-identical metrics on replay", reproducibility},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
