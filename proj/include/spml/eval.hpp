#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spml/numerics.hpp"

namespace spml::eval {

// Mean over positives of precision at that positive's rank, ranking by
// descending score with ties broken by ascending index. nullopt when the
// truth vector has no positive.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::int8_t> truth);

struct MapResult {
    double map = 0.0;
    std::vector<std::optional<double>> per_class;  // nullopt: class skipped
    std::vector<std::size_t> skipped;
};

// Macro mean over classes with at least one positive. Throws DomainError if
// no class qualifies.
MapResult mean_average_precision(const Matrix& scores, const LabelMatrix& truth);

// 1-D Wasserstein-1 distance between two empirical distributions, as the
// integral of |F_a - F_b|.
double wasserstein1(std::span<const double> a, std::span<const double> b);

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> values, std::size_t bins, double lo = 0.0, double hi = 1.0);

struct Distinguishability {
    double w1 = 0.0;                                // pooled over all classes
    std::vector<std::optional<double>> per_class;   // nullopt where a side is empty
    Histogram positive;
    Histogram negative;
    std::size_t num_positive = 0;
    std::size_t num_negative = 0;
};

inline constexpr std::size_t kHistogramBins = 50;
inline constexpr std::size_t kFnBuckets = 100;

// Splits unannotated entries (s = 0) by ground truth and compares the two
// confidence distributions. Throws DomainError if either side is empty.
Distinguishability distinguishability(const Matrix& confidences, const LabelMatrix& truth,
                                      const LabelMatrix& observed);

struct FnBucket {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t false_negatives = 0;
    std::size_t true_negatives = 0;
    std::optional<double> ratio;  // FN / (FN + TN); nullopt for empty buckets

    std::size_t count() const { return false_negatives + true_negatives; }
};

// FN/(FN+TN) among missing labels, bucketed by confidence over [0, 1].
std::vector<FnBucket> fn_ratio_buckets(const Matrix& confidences, const LabelMatrix& truth,
                                       const LabelMatrix& observed, std::size_t buckets = kFnBuckets);

// FN-ratio curve restricted to well-populated buckets and compared with the
// SCAR prediction theoretical_k(p, a) at each bucket center.
struct FnCurveSummary {
    std::vector<double> centers;
    std::vector<double> ratios;
    std::vector<double> theory;
    std::size_t min_count = 0;
    std::optional<double> spearman;  // nullopt with fewer than two buckets
    std::optional<double> cv;        // coefficient of variation of ratios
};

inline constexpr std::size_t kMinBucketCount = 20;

FnCurveSummary summarize_fn_curve(const std::vector<FnBucket>& buckets, double scar_a,
                                  std::size_t min_count = kMinBucketCount);

struct CurveSeries {
    std::string label;
    std::vector<double> p;
    std::vector<double> g;
};

// Inputs for the missing-label gradient curves dL/dz.
struct GradientCurveConfig {
    double w_start = 0.0, b_start = 0.0;  // GR pseudo-label at the first epoch
    double w_end = 2.0, b_end = -2.0;     // and at the last
    double q2 = 0.01, q3 = 1.0;
    double hill_lambda = 1.5;
};

std::vector<CurveSeries> gradient_curves(const GradientCurveConfig& config, std::span<const double> grid);

// Evenly spaced open grid {step, 2 step, ..., 1 - step}.
std::vector<double> probability_grid(double step);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

double coefficient_of_variation(std::span<const double> values);

struct EvalReport {
    std::string split;
    MapResult map;
    std::optional<Distinguishability> distinguishability;
    std::vector<FnBucket> fn_buckets;
    std::vector<CurveSeries> curves;
};

void to_json(nlohmann::json& j, const MapResult& m);
void to_json(nlohmann::json& j, const Histogram& h);
void to_json(nlohmann::json& j, const Distinguishability& d);
void to_json(nlohmann::json& j, const FnBucket& b);
void to_json(nlohmann::json& j, const CurveSeries& c);
void to_json(nlohmann::json& j, const FnCurveSummary& s);
void to_json(nlohmann::json& j, const EvalReport& r);

// Plot-ready CSV with columns x,y,series.
struct PlotRow {
    double x;
    double y;
    std::string series;
};
void write_plot_csv(const std::filesystem::path& path, std::span<const PlotRow> rows);

std::vector<PlotRow> plot_rows(const std::vector<CurveSeries>& curves);
std::vector<PlotRow> plot_rows(const Distinguishability& d);
std::vector<PlotRow> plot_rows(const std::vector<FnBucket>& buckets, const std::string& series);

}  // namespace spml::eval
