#pragma once

#include <optional>

#include "spml/numerics.hpp"

// Generalized robust loss for single-positive multi-label learning.
//
// Per label, with confidence p = sigmoid(z) and observed label s:
//
//   L = v(p) * [ s * L1(p) + (1 - s) * ( k(p) * L2(p) + (1 - k(p)) * L3(p) ) ]
//
//   k(p) = sigmoid(w p + b)                       soft pseudo-label
//   v(p) = 1 if s = 1, exp(-(p - mu)^2 / 2 sigma^2) if s = 0
//   L1 = (1 - p^q1)/q1,  L2 = (1 - p^q2)/q2,  L3 = (1 - (1 - p)^q3)/q3
//
// k and v are calibrations of p and never carry gradient back to p. Their
// parameters (w, b, mu, sigma) move linearly with the epoch index.
namespace spml::gr {

// Clamp applied to p inside gradient expressions, where p^(q-1) would
// otherwise be singular at the boundary.
inline constexpr double kGradClamp = 1e-12;

struct PseudoLabelParams {
    double w = 0.0;  // slope, >= 0 keeps k non-decreasing in p
    double b = 0.0;

    void validate() const;
    bool operator==(const PseudoLabelParams&) const = default;
};

struct WeightParams {
    double mu = 0.8;    // peak location, in [0, 1]
    double sigma = 0.5; // width, > 0

    void validate() const;
    bool operator==(const WeightParams&) const = default;
};

struct RobustParams {
    double q1 = 0.01;
    double q2 = 0.01;
    double q3 = 1.0;

    void validate() const;
    bool operator==(const RobustParams&) const = default;
};

// Affine schedule: value(0) = start, value(horizon) = end.
struct ScheduleSpec {
    double start = 0.0;
    double end = 0.0;
    int horizon = 1;

    bool operator==(const ScheduleSpec&) const = default;
};

double schedule_value(const ScheduleSpec& spec, int t);

// Ablation switches. A disabled component falls back to the
// assumed-negative setting: k = 0, v = 1, q1 = q2 = q3 = 0.01.
struct Components {
    bool pseudo_label = true;
    bool weight = true;
    bool robust = true;

    bool operator==(const Components&) const = default;
};

inline constexpr double kAssumedNegativeQ = 0.01;

// Parameters frozen for one epoch. An empty beta means k = 0; an empty alpha
// means v = 1.
struct EpochParams {
    std::optional<PseudoLabelParams> beta;
    std::optional<WeightParams> alpha;
    RobustParams q;
};

struct GrLossParams {
    ScheduleSpec w;
    ScheduleSpec b;
    ScheduleSpec mu;
    ScheduleSpec sigma;
    RobustParams robust;
    Components components;

    // Checks every component invariant at every epoch in [0, horizon].
    void validate() const;
    EpochParams at_epoch(int t) const;

    bool operator==(const GrLossParams&) const = default;
};

// Schedules for a run of `horizon` epochs. b and mu/sigma start values follow
// the constant-k and flat-weight defaults: w0 = 0, b0 = logit(k0),
// mu0 = muT, sigma0 = 10.
GrLossParams make_params(int horizon, double k0, PseudoLabelParams final_beta,
                         WeightParams final_alpha, RobustParams robust);

double k_hat(double p, const PseudoLabelParams& beta);
double v_weight(double p, int s, const WeightParams& alpha);

double robust_pos_loss(double p, double q);
double robust_neg_loss(double p, double q3);
double unannotated_loss(double p, double khat, double q2, double q3);

double per_label_loss(double p, int s, const EpochParams& params);
// (1/N) * sum over all entries of per_label_loss.
double batch_loss(const Matrix& confidences, const LabelMatrix& observed,
                  const EpochParams& params);

// dL_unannotated/dz with k held constant.
double grad_unannotated_wrt_logit(double p, double khat, double q2, double q3);
// dL/dz for one label with k and v held constant.
double grad_per_label_wrt_logit(double p, int s, const EpochParams& params);

PseudoLabelParams init_beta_from_prior(double k0);

// P(y = 1 | x, s = 0) for a model that has fit P(y = 1 | x) = p, under a
// constant labeling rate a = P(s = 1 | y = 1).
double theoretical_k(double p, double a);

}  // namespace spml::gr
