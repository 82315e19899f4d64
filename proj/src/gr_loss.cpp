#include "spml/gr_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace spml::gr {

namespace {

void require_probability(double p, const char* fn) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError(std::string(fn) + ": probability outside [0, 1]: " + std::to_string(p));
    }
}

void require_q(double q, const char* name) {
    if (!(q > 0.0 && q <= 2.0)) {
        throw ParameterError(std::string(name) + " must lie in (0, 2], got " + std::to_string(q));
    }
}

void require_binary(int s) {
    if (s != 0 && s != 1) throw ParameterError("observed label must be 0 or 1");
}

double grad_clamp(double p) { return std::clamp(p, kGradClamp, 1.0 - kGradClamp); }

}  // namespace

void PseudoLabelParams::validate() const {
    if (!std::isfinite(w) || !std::isfinite(b)) throw ParameterError("pseudo-label params must be finite");
    if (w < 0.0) throw ParameterError("pseudo-label slope w must be >= 0, got " + std::to_string(w));
}

void WeightParams::validate() const {
    if (!(mu >= 0.0 && mu <= 1.0)) throw ParameterError("weight centre mu must lie in [0, 1]");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("weight width sigma must be > 0");
}

void RobustParams::validate() const {
    require_q(q1, "q1");
    require_q(q2, "q2");
    require_q(q3, "q3");
}

double schedule_value(const ScheduleSpec& spec, int t) {
    if (spec.horizon < 0) throw RangeError("schedule horizon must be >= 0");
    if (t < 0 || t > spec.horizon) {
        throw RangeError("schedule epoch " + std::to_string(t) + " outside [0, " +
                         std::to_string(spec.horizon) + "]");
    }
    if (t == 0) return spec.start;
    if (t == spec.horizon) return spec.end;
    return spec.start + (spec.end - spec.start) * static_cast<double>(t) /
                            static_cast<double>(spec.horizon);
}

void GrLossParams::validate() const {
    const int horizon = w.horizon;
    if (horizon < 0) throw ParameterError("horizon must be >= 0");
    if (b.horizon != horizon || mu.horizon != horizon || sigma.horizon != horizon) {
        throw ParameterError("all schedules must share one horizon");
    }
    robust.validate();
    // Affine schedules attain their extremes at the endpoints, so checking
    // t = 0 and t = T covers the whole range.
    for (int t : {0, horizon}) {
        PseudoLabelParams{schedule_value(w, t), schedule_value(b, t)}.validate();
        WeightParams{schedule_value(mu, t), schedule_value(sigma, t)}.validate();
    }
}

EpochParams GrLossParams::at_epoch(int t) const {
    EpochParams out;
    if (components.pseudo_label) out.beta = PseudoLabelParams{schedule_value(w, t), schedule_value(b, t)};
    if (components.weight) out.alpha = WeightParams{schedule_value(mu, t), schedule_value(sigma, t)};
    out.q = components.robust ? robust
                              : RobustParams{kAssumedNegativeQ, kAssumedNegativeQ, kAssumedNegativeQ};
    return out;
}

GrLossParams make_params(int horizon, double k0, PseudoLabelParams final_beta,
                         WeightParams final_alpha, RobustParams robust) {
    const PseudoLabelParams start = init_beta_from_prior(k0);
    GrLossParams params;
    params.w = {start.w, final_beta.w, horizon};
    params.b = {start.b, final_beta.b, horizon};
    params.mu = {final_alpha.mu, final_alpha.mu, horizon};
    params.sigma = {10.0, final_alpha.sigma, horizon};
    params.robust = robust;
    params.validate();
    return params;
}

double k_hat(double p, const PseudoLabelParams& beta) {
    require_probability(p, "k_hat");
    return sigmoid(beta.w * p + beta.b);
}

double v_weight(double p, int s, const WeightParams& alpha) {
    require_binary(s);
    if (!(alpha.sigma > 0.0)) throw ParameterError("weight width sigma must be > 0");
    if (s == 1) return 1.0;
    require_probability(p, "v_weight");
    const double d = p - alpha.mu;
    return std::exp(-(d * d) / (2.0 * alpha.sigma * alpha.sigma));
}

double robust_pos_loss(double p, double q) {
    if (!(q > 0.0)) throw ParameterError("robust loss exponent must be > 0");
    require_probability(p, "robust_pos_loss");
    if (q == 1.0) return 1.0 - p;
    // -expm1(q log p) avoids the cancellation in 1 - p^q for small q.
    return -std::expm1(q * std::log(p)) / q;
}

double robust_neg_loss(double p, double q3) {
    if (!(q3 > 0.0)) throw ParameterError("robust loss exponent must be > 0");
    require_probability(p, "robust_neg_loss");
    if (q3 == 1.0) return p;
    return -std::expm1(q3 * std::log1p(-p)) / q3;
}

double unannotated_loss(double p, double khat, double q2, double q3) {
    require_probability(khat, "unannotated_loss");
    return khat * robust_pos_loss(p, q2) + (1.0 - khat) * robust_neg_loss(p, q3);
}

double per_label_loss(double p, int s, const EpochParams& params) {
    require_binary(s);
    if (s == 1) return robust_pos_loss(p, params.q.q1);
    const double khat = params.beta ? k_hat(p, *params.beta) : 0.0;
    const double v = params.alpha ? v_weight(p, 0, *params.alpha) : 1.0;
    return v * unannotated_loss(p, khat, params.q.q2, params.q.q3);
}

double batch_loss(const Matrix& confidences, const LabelMatrix& observed, const EpochParams& params) {
    require_same_shape(confidences, observed, "batch_loss");
    if (confidences.rows() == 0) throw ShapeError("batch_loss: empty batch");
    double total = 0.0;
    for (std::size_t n = 0; n < confidences.rows(); ++n)
        for (std::size_t i = 0; i < confidences.cols(); ++i)
            total += per_label_loss(confidences(n, i), observed(n, i), params);
    return total / static_cast<double>(confidences.rows());
}

double grad_unannotated_wrt_logit(double p, double khat, double q2, double q3) {
    p = grad_clamp(p);
    return (1.0 - khat) * std::pow(1.0 - p, q3) * p - khat * std::pow(p, q2) * (1.0 - p);
}

double grad_per_label_wrt_logit(double p, int s, const EpochParams& params) {
    require_binary(s);
    if (s == 1) {
        const double pc = grad_clamp(p);
        return -std::pow(pc, params.q.q1) * (1.0 - pc);
    }
    const double khat = params.beta ? k_hat(p, *params.beta) : 0.0;
    const double v = params.alpha ? v_weight(p, 0, *params.alpha) : 1.0;
    return v * grad_unannotated_wrt_logit(p, khat, params.q.q2, params.q.q3);
}

PseudoLabelParams init_beta_from_prior(double k0) {
    if (!(k0 > 0.0 && k0 < 1.0)) {
        throw DomainError("prior pseudo-label k0 must lie in (0, 1), got " + std::to_string(k0));
    }
    return {0.0, logit(k0)};
}

double theoretical_k(double p, double a) {
    require_probability(p, "theoretical_k");
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("labeling rate a must lie in [0, 1]");
    if (a * p >= 1.0) throw DomainError("theoretical_k undefined for a * p >= 1");
    return (1.0 - a) * p / (1.0 - a * p);
}

}  // namespace spml::gr
