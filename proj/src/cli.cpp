#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "spml/cli.hpp"
#include "spml/eval.hpp"

namespace spml::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Options {
    fs::path config;
    std::optional<fs::path> out;
    std::optional<std::size_t> jobs;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Applies flag > environment > config precedence for the two overridable settings.
void apply_overrides(ExperimentConfig& c, const Options& opt) {
    if (const char* env = std::getenv(kEnvOutputDir); env && *env) c.output_dir = env;
    if (const char* env = std::getenv(kEnvJobs); env && *env) {
        std::size_t jobs = 0;
        const std::string_view s(env);
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), jobs);
        if (ec != std::errc() || ptr != s.data() + s.size() || jobs == 0)
            throw ConfigError(std::string(kEnvJobs) + " must be a positive integer, got '" + env + "'");
        c.jobs = jobs;
    }
    if (opt.out) c.output_dir = *opt.out;
    if (opt.jobs) {
        if (*opt.jobs == 0) throw ConfigError("--jobs must be >= 1");
        c.jobs = *opt.jobs;
    }
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// (by index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> failures(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(n, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);
}

json manifest(const ExperimentConfig& c, std::optional<std::uint64_t> seed, const std::string& started,
              const fs::path& dir, const std::vector<std::string>& files) {
    json inventory = json::array();
    for (const auto& name : files) {
        const fs::path p = dir / name;
        inventory.push_back({{"path", name}, {"bytes", fs::file_size(p)}, {"sha256", file_sha256(p)}});
    }
    json m = {{"config_sha256", sha256_hex(to_json(c).dump())},
              {"code_version", kVersion},
              {"rng_algorithm_version", RngStream::kAlgorithmVersion},
              {"started", started},
              {"finished", utc_now()},
              {"files", inventory}};
    m["seed"] = seed ? json(*seed) : json(nullptr);
    return m;
}

fs::path seed_dir(const fs::path& root, std::uint64_t seed) { return root / ("seed-" + std::to_string(seed)); }

fs::path checkpoint_path(const fs::path& dir, Checkpoint which) {
    return dir / ("checkpoint-" + checkpoint_name(which) + ".csv");
}

struct RunOutcome {
    std::uint64_t seed = 0;
    int best_epoch = 0;
    double initial_val_map = 0.0;
    double best_val_map = 0.0;
    double test_map = 0.0;
};

train::LossConfig loss_config(const ExperimentConfig& c, const GrAnchors& anchors,
                              const data::LabeledDataset& train_set) {
    train::LossConfig loss;
    loss.method = c.method;
    loss.hyper = c.hyper;
    if (c.method == adapters::Method::GR) loss.gr = resolve_gr(anchors, c.ablation, c.trainer.epochs, train_set);
    return loss;
}

// One seed of one configuration. With `dir` set, writes the per-run artifacts.
RunOutcome run_seed(const ExperimentConfig& c, const train::LossConfig& loss, const data::DatasetSplits& splits,
                    std::uint64_t seed, const std::optional<fs::path>& dir) {
    const std::string started = utc_now();
    const train::TrainedRun run = train::train(c.trainer, loss, splits.train, splits.val, seed);
    RunOutcome out{seed, run.best_epoch, run.initial_val_map, run.best_val_map, 0.0};
    const Matrix test_scores = train::predict(run.best, splits.test.features);
    eval::EvalReport test_report;
    test_report.split = "test";
    test_report.map = eval::mean_average_precision(test_scores, splits.test.truth);
    out.test_map = test_report.map.map;
    if (!dir) return out;

    std::string metrics, timing;
    for (const auto& r : run.history) {
        metrics += json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_map", r.val_map}}.dump() + "\n";
        timing += json{{"epoch", r.epoch}, {"wall_seconds", r.wall_seconds}}.dump() + "\n";
    }
    write_text(*dir / "metrics.jsonl", metrics);
    write_text(*dir / "timing.jsonl", timing);
    train::save_checkpoint(run.initial, checkpoint_path(*dir, Checkpoint::Initial));
    train::save_checkpoint(run.best, checkpoint_path(*dir, Checkpoint::Best));
    train::save_checkpoint(run.final_model, checkpoint_path(*dir, Checkpoint::Final));

    json report = {{"seed", seed},
                   {"method", std::string(adapters::method_name(c.method))},
                   {"best_epoch", run.best_epoch},
                   {"initial_val_map", run.initial_val_map},
                   {"best_val_map", run.best_val_map},
                   {"test", test_report}};
    try {
        report["train_unannotated"] = eval::distinguishability(train::predict(run.best, splits.train.features),
                                                               splits.train.truth, splits.train.observed);
    } catch (const DomainError& e) {
        report["train_unannotated"] = {{"error", e.what()}};
    }
    write_json(*dir / "report.json", report);

    const std::vector<std::string> files{"metrics.jsonl",         "timing.jsonl",          "checkpoint-initial.csv",
                                         "checkpoint-best.csv",   "checkpoint-final.csv",  "report.json"};
    write_json(*dir / "manifest.json", manifest(c, seed, started, *dir, files));
    return out;
}

json outcome_json(const RunOutcome& r) {
    return {{"seed", r.seed},
            {"best_epoch", r.best_epoch},
            {"initial_val_map", r.initial_val_map},
            {"best_val_map", r.best_val_map},
            {"test_map", r.test_map}};
}

int cmd_generate(const ExperimentConfig& c) {
    if (c.dataset.source != DatasetConfig::Source::Synthetic)
        throw ConfigError("generate-data needs dataset.source = \"synthetic\"");
    const std::string started = utc_now();
    const data::DatasetSplits s = load_dataset(c.dataset);
    const fs::path dir = c.output_dir;
    fs::create_directories(dir);
    data::save_csv(s.train, dir / "train.csv");
    data::save_csv(s.val, dir / "val.csv");
    data::save_csv(s.test, dir / "test.csv");
    json stats = {{"train", data::dataset_stats(s.train)},
                  {"val", data::dataset_stats(s.val)},
                  {"test", data::dataset_stats(s.test)},
                  {"spec", c.dataset.synthetic}};
    stats["spec"].erase("instances");
    write_json(dir / "stats.json", stats);
    write_json(dir / "manifest.json",
               manifest(c, std::nullopt, started, dir, {"train.csv", "val.csv", "test.csv", "stats.json"}));
    std::cout << "wrote " << s.train.size() << "/" << s.val.size() << "/" << s.test.size()
              << " train/val/test rows to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_train(const ExperimentConfig& c) {
    const data::DatasetSplits splits = load_dataset(c.dataset);
    const train::LossConfig loss = loss_config(c, c.gr, splits.train);
    const fs::path root = c.output_dir;
    fs::create_directories(root);
    write_json(root / "config.json", to_json(c));

    std::vector<RunOutcome> outcomes(c.seeds.size());
    parallel_for(c.seeds.size(), c.jobs, [&](std::size_t i) {
        outcomes[i] = run_seed(c, loss, splits, c.seeds[i], seed_dir(root, c.seeds[i]));
    });

    json runs = json::array();
    std::vector<double> val, test;
    for (const auto& r : outcomes) {
        runs.push_back(outcome_json(r));
        val.push_back(r.best_val_map);
        test.push_back(r.test_map);
        std::cout << "seed " << r.seed << ": best val mAP " << std::fixed << std::setprecision(4) << r.best_val_map
                  << " (epoch " << r.best_epoch << "), test mAP " << r.test_map << "\n";
    }
    write_json(root / "summary.json", {{"method", std::string(adapters::method_name(c.method))},
                                       {"runs", runs},
                                       {"median_best_val_map", median(val)},
                                       {"median_test_map", median(test)}});
    return kExitOk;
}

struct SweepPoint {
    GrAnchors anchors;
    std::optional<double> tau;
};

std::vector<SweepPoint> sweep_points(const ExperimentConfig& c) {
    auto axis = [](const std::vector<double>& v, double base) { return v.empty() ? std::vector<double>{base} : v; };
    const auto bs = axis(c.sweep.bT, c.gr.bT);
    const auto mus = axis(c.sweep.muT, c.gr.muT);
    const auto sigmas = axis(c.sweep.sigmaT, c.gr.sigmaT);
    const auto q2s = axis(c.sweep.q2, c.gr.robust.q2);
    const auto q3s = axis(c.sweep.q3, c.gr.robust.q3);
    const bool by_tau = !c.sweep.tau.empty();
    const auto slopes = by_tau ? c.sweep.tau : axis(c.sweep.wT, c.gr.wT);

    std::vector<SweepPoint> points;
    for (double slope : slopes)
        for (double b : bs)
            for (double mu : mus)
                for (double sigma : sigmas)
                    for (double q2 : q2s)
                        for (double q3 : q3s) {
                            SweepPoint p{c.gr, std::nullopt};
                            p.anchors.bT = b;
                            if (by_tau) {
                                p.tau = slope;
                                p.anchors.wT = -b / slope;
                            } else {
                                p.anchors.wT = slope;
                            }
                            p.anchors.muT = mu;
                            p.anchors.sigmaT = sigma;
                            p.anchors.robust.q2 = q2;
                            p.anchors.robust.q3 = q3;
                            points.push_back(p);
                        }
    return points;
}

int cmd_sweep(const ExperimentConfig& c) {
    if (c.method != adapters::Method::GR) throw ConfigError("sweep grids apply to method GR only");
    const std::vector<SweepPoint> points = sweep_points(c);
    const std::size_t total = points.size() * c.seeds.size();
    if (total > c.sweep.max_runs)
        throw ConfigError("sweep grid has " + std::to_string(total) + " runs (" + std::to_string(points.size()) +
                          " points x " + std::to_string(c.seeds.size()) + " seeds), cap is " +
                          std::to_string(c.sweep.max_runs));
    const std::string started = utc_now();
    const data::DatasetSplits splits = load_dataset(c.dataset);
    std::vector<train::LossConfig> losses;
    for (const auto& p : points) {
        try {
            losses.push_back(loss_config(c, p.anchors, splits.train));
        } catch (const ParameterError& e) {
            throw ConfigError("sweep point wT=" + format_double(p.anchors.wT) + " bT=" + format_double(p.anchors.bT) +
                              ": " + e.what());
        }
    }

    std::vector<RunOutcome> outcomes(total);
    parallel_for(total, c.jobs, [&](std::size_t i) {
        const std::size_t point = i / c.seeds.size();
        outcomes[i] = run_seed(c, losses[point], splits, c.seeds[i % c.seeds.size()], std::nullopt);
    });

    std::string csv = "point,seed,wT,bT,tau,muT,sigmaT,q1,q2,q3,best_epoch,best_val_map,test_map\n";
    for (std::size_t i = 0; i < total; ++i) {
        const SweepPoint& p = points[i / c.seeds.size()];
        const RunOutcome& r = outcomes[i];
        csv += std::to_string(i / c.seeds.size()) + "," + std::to_string(r.seed) + "," + format_double(p.anchors.wT) +
               "," + format_double(p.anchors.bT) + "," + (p.tau ? format_double(*p.tau) : std::string()) + "," +
               format_double(p.anchors.muT) + "," + format_double(p.anchors.sigmaT) + "," +
               format_double(p.anchors.robust.q1) + "," + format_double(p.anchors.robust.q2) + "," +
               format_double(p.anchors.robust.q3) + "," + std::to_string(r.best_epoch) + "," +
               format_double(r.best_val_map) + "," + format_double(r.test_map) + "\n";
    }
    const fs::path root = c.output_dir;
    write_text(root / "sweep.csv", csv);
    write_json(root / "config.json", to_json(c));
    write_json(root / "manifest.json", manifest(c, std::nullopt, started, root, {"sweep.csv", "config.json"}));
    std::cout << "swept " << points.size() << " points x " << c.seeds.size() << " seeds into "
              << (root / "sweep.csv").string() << "\n";
    return kExitOk;
}

bool wants(const AnalyzeConfig& a, const std::string& name) {
    return std::find(a.analyses.begin(), a.analyses.end(), name) != a.analyses.end();
}

int cmd_analyze(const ExperimentConfig& c) {
    const fs::path root = c.analyze.run_dir ? *c.analyze.run_dir : c.output_dir;
    const bool needs_model = wants(c.analyze, "distinguishability") || wants(c.analyze, "fn-buckets");
    if (needs_model) {
        for (std::uint64_t seed : c.seeds) {
            const fs::path ckpt = checkpoint_path(seed_dir(root, seed), c.analyze.checkpoint);
            if (!fs::exists(ckpt)) throw MissingArtifactError("checkpoint not found: " + ckpt.string());
        }
    }
    const data::DatasetSplits splits = load_dataset(c.dataset);

    if (wants(c.analyze, "grad-curves")) {
        const gr::GrLossParams p = resolve_gr(c.gr, c.ablation, std::max(c.trainer.epochs, 1), splits.train);
        eval::GradientCurveConfig g;
        g.w_start = p.w.start;
        g.b_start = p.b.start;
        g.w_end = p.w.end;
        g.b_end = p.b.end;
        g.q2 = p.robust.q2;
        g.q3 = p.robust.q3;
        g.hill_lambda = c.hyper.hill_lambda;
        const auto curves = eval::gradient_curves(g, eval::probability_grid(c.analyze.grid_step));
        const auto rows = eval::plot_rows(curves);
        fs::create_directories(root / "analysis");
        eval::write_plot_csv(root / "analysis" / "grad_curves.csv", rows);
        write_json(root / "analysis" / "grad_curves.json", curves);
        std::cout << "wrote gradient curves to " << (root / "analysis").string() << "\n";
    }
    if (!needs_model) return kExitOk;

    const std::string which = checkpoint_name(c.analyze.checkpoint);
    for (std::uint64_t seed : c.seeds) {
        const fs::path dir = seed_dir(root, seed);
        const train::ModelParams model = train::load_checkpoint(checkpoint_path(dir, c.analyze.checkpoint));
        const Matrix p = train::predict(model, splits.train.features);
        const fs::path out = dir / "analysis";
        fs::create_directories(out);
        if (wants(c.analyze, "distinguishability")) {
            const auto d = eval::distinguishability(p, splits.train.truth, splits.train.observed);
            write_json(out / ("distinguishability-" + which + ".json"), d);
            eval::write_plot_csv(out / ("distinguishability-" + which + ".csv"), eval::plot_rows(d));
            std::cout << "seed " << seed << ": W1 " << format_double(d.w1) << "\n";
        }
        if (wants(c.analyze, "fn-buckets")) {
            const auto buckets = eval::fn_ratio_buckets(p, splits.train.truth, splits.train.observed);
            const double a = splits.train.scar_rate.value_or(data::scar_rate(splits.train.truth, splits.train.observed));
            const auto summary = eval::summarize_fn_curve(buckets, a);
            write_json(out / ("fn_buckets-" + which + ".json"),
                       {{"checkpoint", which}, {"scar_a", a}, {"buckets", buckets}, {"summary", summary}});
            eval::write_plot_csv(out / ("fn_buckets-" + which + ".csv"), eval::plot_rows(buckets, "fn_ratio"));
            std::cout << "seed " << seed << ": fn-bucket spearman "
                      << (summary.spearman ? format_double(*summary.spearman) : std::string("n/a")) << ", cv "
                      << (summary.cv ? format_double(*summary.cv) : std::string("n/a")) << "\n";
        }
    }
    return kExitOk;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return s.str();
}

std::string file_sha256(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot read " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return sha256_hex(buf.str());
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Generalized robust loss workbench for single-positive multi-label learning", "spml"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    Options opt;
    std::size_t jobs = 0;
    std::string out;
    for (const char* name : {"generate-data", "train", "sweep", "analyze"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", opt.config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory (overrides config and " + std::string(kEnvOutputDir) + ")");
        sub->add_option("--jobs", jobs, "concurrent runs (overrides config and " + std::string(kEnvJobs) + ")");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    const CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--out")) opt.out = out;
    if (sub->count("--jobs")) opt.jobs = jobs;

    try {
        ExperimentConfig c = load_config(opt.config);
        apply_overrides(c, opt);
        const std::string name = sub->get_name();
        if (name == "generate-data") return cmd_generate(c);
        if (name == "train") return cmd_train(c);
        if (name == "sweep") return cmd_sweep(c);
        return cmd_analyze(c);
    } catch (const MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParameterError& e) {
        std::cerr << "error: invalid parameter: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace spml::cli
