#include "spml/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <numeric>

#include "spml/gr_loss.hpp"
#include "spml/numerics.hpp"

namespace spml::eval {

namespace {

std::size_t bin_index(double v, std::size_t bins, double lo, double hi) {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
    if (!(t > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(t), bins - 1);
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores, std::span<const std::int8_t> truth) {
    if (scores.size() != truth.size()) throw ShapeError("average_precision: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (truth[order[rank]] == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    if (hits == 0) return std::nullopt;
    return sum / static_cast<double>(hits);
}

MapResult mean_average_precision(const Matrix& scores, const LabelMatrix& truth) {
    require_same_shape(scores, truth, "mean_average_precision");
    MapResult out;
    std::vector<double> col_scores(scores.rows());
    std::vector<std::int8_t> col_truth(scores.rows());
    double sum = 0.0;
    std::size_t valid = 0;
    for (std::size_t c = 0; c < scores.cols(); ++c) {
        for (std::size_t n = 0; n < scores.rows(); ++n) {
            col_scores[n] = scores(n, c);
            col_truth[n] = truth(n, c);
        }
        auto ap = average_precision(col_scores, col_truth);
        out.per_class.push_back(ap);
        if (ap) {
            sum += *ap;
            ++valid;
        } else {
            out.skipped.push_back(c);
        }
    }
    if (valid == 0) throw DomainError("mean_average_precision: no class has a positive label");
    out.map = sum / static_cast<double>(valid);
    return out;
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DomainError("wasserstein1: empty sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    double total = 0.0;
    double x = std::min(sa.front(), sb.front());
    while (i < sa.size() || j < sb.size()) {
        // Advance past every sample equal to x, then integrate the CDF gap up
        // to the next sample point.
        while (i < sa.size() && sa[i] <= x) ++i;
        while (j < sb.size() && sb[j] <= x) ++j;
        if (i == sa.size() && j == sb.size()) break;
        double next;
        if (i == sa.size()) next = sb[j];
        else if (j == sb.size()) next = sa[i];
        else next = std::min(sa[i], sb[j]);
        total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (next - x);
        x = next;
    }
    return total;
}

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
    Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
    for (double v : values) ++h.counts[bin_index(v, bins, lo, hi)];
    return h;
}

Distinguishability distinguishability(const Matrix& confidences, const LabelMatrix& truth,
                                      const LabelMatrix& observed) {
    require_same_shape(confidences, truth, "distinguishability");
    require_same_shape(truth, observed, "distinguishability");
    Distinguishability out;
    std::vector<double> pos, neg;
    for (std::size_t c = 0; c < truth.cols(); ++c) {
        std::vector<double> cpos, cneg;
        for (std::size_t n = 0; n < truth.rows(); ++n) {
            if (observed(n, c) != 0) continue;
            (truth(n, c) == 1 ? cpos : cneg).push_back(confidences(n, c));
        }
        if (!cpos.empty() && !cneg.empty()) out.per_class.push_back(wasserstein1(cpos, cneg));
        else out.per_class.push_back(std::nullopt);
        pos.insert(pos.end(), cpos.begin(), cpos.end());
        neg.insert(neg.end(), cneg.begin(), cneg.end());
    }
    if (pos.empty() || neg.empty())
        throw DomainError("distinguishability: no unannotated positives or negatives");
    out.w1 = wasserstein1(pos, neg);
    out.positive = histogram(pos, kHistogramBins);
    out.negative = histogram(neg, kHistogramBins);
    out.num_positive = pos.size();
    out.num_negative = neg.size();
    return out;
}

std::vector<FnBucket> fn_ratio_buckets(const Matrix& confidences, const LabelMatrix& truth,
                                       const LabelMatrix& observed, std::size_t buckets) {
    require_same_shape(confidences, truth, "fn_ratio_buckets");
    require_same_shape(truth, observed, "fn_ratio_buckets");
    if (buckets == 0) throw ParameterError("fn_ratio_buckets: need at least one bucket");
    std::vector<FnBucket> out(buckets);
    for (std::size_t k = 0; k < buckets; ++k) {
        out[k].lo = static_cast<double>(k) / static_cast<double>(buckets);
        out[k].hi = static_cast<double>(k + 1) / static_cast<double>(buckets);
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (observed.data()[i] != 0) continue;
        auto& b = out[bin_index(confidences.data()[i], buckets, 0.0, 1.0)];
        if (truth.data()[i] == 1) ++b.false_negatives;
        else ++b.true_negatives;
    }
    for (auto& b : out)
        if (b.count() > 0)
            b.ratio = static_cast<double>(b.false_negatives) / static_cast<double>(b.count());
    return out;
}

std::vector<CurveSeries> gradient_curves(const GradientCurveConfig& config, std::span<const double> grid) {
    for (double p : grid)
        if (!(p > 0.0 && p < 1.0)) throw DomainError("gradient_curves: grid must lie in (0, 1)");

    auto gr_series = [&](std::string label, double w, double b) {
        CurveSeries s{std::move(label), {}, {}};
        for (double p : grid) {
            const double k = 1.0 / (1.0 + std::exp(-(w * p + b)));
            s.p.push_back(p);
            s.g.push_back((1.0 - k) * std::pow(1.0 - p, config.q3) * p -
                          k * std::pow(p, config.q2) * (1.0 - p));
        }
        return s;
    };
    std::vector<CurveSeries> out;
    out.push_back(gr_series("GR beta(0)", config.w_start, config.b_start));
    out.push_back(gr_series("GR beta(T)", config.w_end, config.b_end));

    CurveSeries em{"EM", {}, {}};
    CurveSeries hill{"Hill", {}, {}};
    const double lambda = config.hill_lambda;
    for (double p : grid) {
        em.p.push_back(p);
        em.g.push_back(std::log(p / (1.0 - p)) * p * (1.0 - p));
        hill.p.push_back(p);
        hill.g.push_back(p * p * (2.0 * lambda - 3.0 * p) * (1.0 - p));
    }
    out.push_back(std::move(em));
    out.push_back(std::move(hill));
    return out;
}

std::vector<double> probability_grid(double step) {
    if (!(step > 0.0 && step < 0.5)) throw ParameterError("probability_grid: step must lie in (0, 0.5)");
    std::vector<double> grid;
    const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
    for (std::size_t i = 1; i < n; ++i) grid.push_back(static_cast<double>(i) * step);
    return grid;
}

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
    if (a.size() < 2) throw DomainError("spearman: need at least two points");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw DomainError("spearman: constant input");
    return sab / std::sqrt(saa * sbb);
}

double coefficient_of_variation(std::span<const double> values) {
    if (values.empty()) throw DomainError("coefficient_of_variation: empty input");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    if (mean == 0.0) return ss == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(ss / n) / std::abs(mean);
}

FnCurveSummary summarize_fn_curve(const std::vector<FnBucket>& buckets, double scar_a, std::size_t min_count) {
    FnCurveSummary out;
    out.min_count = min_count;
    for (const auto& b : buckets) {
        if (!b.ratio || b.count() < min_count) continue;
        const double center = 0.5 * (b.lo + b.hi);
        out.centers.push_back(center);
        out.ratios.push_back(*b.ratio);
        out.theory.push_back(gr::theoretical_k(center, scar_a));
    }
    if (!out.ratios.empty()) out.cv = coefficient_of_variation(out.ratios);
    if (out.ratios.size() >= 2) {
        try {
            out.spearman = spearman(out.ratios, out.theory);
        } catch (const DomainError&) {
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const FnCurveSummary& s) {
    j = {{"min_count", s.min_count},
         {"centers", s.centers},
         {"ratios", s.ratios},
         {"theoretical_k", s.theory},
         {"spearman", s.spearman ? nlohmann::json(*s.spearman) : nlohmann::json()},
         {"cv", s.cv ? nlohmann::json(*s.cv) : nlohmann::json()}};
}

void to_json(nlohmann::json& j, const MapResult& m) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& ap : m.per_class) per_class.push_back(ap ? nlohmann::json(*ap) : nlohmann::json());
    j = {{"mAP", m.map}, {"per_class_ap", per_class}, {"skipped_classes", m.skipped}};
}

void to_json(nlohmann::json& j, const Histogram& h) {
    j = {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
}

void to_json(nlohmann::json& j, const Distinguishability& d) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& w : d.per_class) per_class.push_back(w ? nlohmann::json(*w) : nlohmann::json());
    j = {{"wasserstein", d.w1},
         {"per_class_wasserstein", per_class},
         {"positive_histogram", d.positive},
         {"negative_histogram", d.negative},
         {"num_positive", d.num_positive},
         {"num_negative", d.num_negative}};
}

void to_json(nlohmann::json& j, const FnBucket& b) {
    j = {{"lo", b.lo},
         {"hi", b.hi},
         {"false_negatives", b.false_negatives},
         {"true_negatives", b.true_negatives},
         {"ratio", b.ratio ? nlohmann::json(*b.ratio) : nlohmann::json()}};
}

void to_json(nlohmann::json& j, const CurveSeries& c) {
    j = {{"label", c.label}, {"p", c.p}, {"g", c.g}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = {{"split", r.split}, {"map", r.map}};
    if (r.distinguishability) j["distinguishability"] = *r.distinguishability;
    if (!r.fn_buckets.empty()) j["fn_buckets"] = r.fn_buckets;
    if (!r.curves.empty()) j["gradient_curves"] = r.curves;
}

void write_plot_csv(const std::filesystem::path& path, std::span<const PlotRow> rows) {
    std::string out = "x,y,series\n";
    for (const auto& r : rows) {
        append_double(out, r.x);
        out += ',';
        append_double(out, r.y);
        out += ',';
        out += r.series;
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << out;
}

std::vector<PlotRow> plot_rows(const std::vector<CurveSeries>& curves) {
    std::vector<PlotRow> rows;
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.p.size(); ++i) rows.push_back({c.p[i], c.g[i], c.label});
    return rows;
}

std::vector<PlotRow> plot_rows(const Distinguishability& d) {
    std::vector<PlotRow> rows;
    auto add = [&rows](const Histogram& h, const std::string& label) {
        const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
        for (std::size_t k = 0; k < h.counts.size(); ++k)
            rows.push_back({h.lo + (static_cast<double>(k) + 0.5) * width,
                            static_cast<double>(h.counts[k]), label});
    };
    add(d.positive, "positive");
    add(d.negative, "negative");
    return rows;
}

std::vector<PlotRow> plot_rows(const std::vector<FnBucket>& buckets, const std::string& series) {
    std::vector<PlotRow> rows;
    for (const auto& b : buckets)
        if (b.ratio) rows.push_back({0.5 * (b.lo + b.hi), *b.ratio, series});
    return rows;
}

}  // namespace spml::eval
