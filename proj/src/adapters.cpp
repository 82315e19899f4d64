#include "spml/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spml::adapters {

namespace {

void require_binary(int s) {
    if (s != 0 && s != 1) throw ParameterError("observed label must be 0 or 1");
}

double bce(double p, double target) {
    return -target * safe_log(p) - (1.0 - target) * safe_log(1.0 - p);
}

// p_m = sigmoid(logit(p) - m) written in terms of p.
double shift_confidence(double p, double margin) {
    const double denom = p + (1.0 - p) * std::exp(margin);
    return denom > 0.0 ? p / denom : 0.0;
}

double focal_margin_value(double pm, double gamma) {
    return -std::pow(1.0 - pm, gamma) * safe_log(pm);
}

double focal_margin_grad(double pm, double gamma) {
    const double one_minus = 1.0 - pm;
    return gamma * pm * std::pow(one_minus, gamma) * safe_log(pm) - std::pow(one_minus, gamma + 1.0);
}

double focal_pos_grad(double p, double gamma) { return focal_margin_grad(p, gamma); }

double focal_neg_grad(double p, double gamma) {
    return std::pow(p, gamma + 1.0) - gamma * std::pow(p, gamma) * (1.0 - p) * safe_log(1.0 - p);
}

double resolve_anchor(double p, double anchor) { return std::isnan(anchor) ? p : anchor; }

Branch branch(std::function<double(double)> value, std::function<double(double)> grad) {
    return {[value](double p, double) { return value(p); },
            [grad](double p, double) { return grad(p); }};
}

Branch neg_log_branch() {
    return branch([](double p) { return -safe_log(p); }, [](double p) { return -(1.0 - p); });
}

Branch neg_log_complement_branch() {
    return branch([](double p) { return -safe_log(1.0 - p); }, [](double p) { return p; });
}

Branch bce_target_branch(double target) {
    return branch([target](double p) { return bce(p, target); },
                  [target](double p) { return p - target; });
}

Branch hill_branch(double lambda) {
    return branch([lambda](double p) { return hill_neg_loss(p, lambda); },
                  [lambda](double p) { return hill_neg_logit_grad(p, lambda); });
}

Branch focal_margin_branch(double margin, double gamma) {
    return branch(
        [margin, gamma](double p) { return focal_margin_value(shift_confidence(p, margin), gamma); },
        [margin, gamma](double p) { return focal_margin_grad(shift_confidence(p, margin), gamma); });
}

int code_from_threshold(double p, int s, double tau1) {
    if (s == 1) return kObservedPositive;
    return p <= tau1 ? kPseudoNegative : kMissing;
}

std::vector<std::size_t> ascending_order(const Matrix& scores, std::size_t cls,
                                         const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> order = rows;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(a, cls) < scores(b, cls);
    });
    return order;
}

}  // namespace

std::string_view method_name(Method m) {
    switch (m) {
        case Method::AN: return "AN";
        case Method::AN_LS: return "AN-LS";
        case Method::Focal: return "Focal";
        case Method::EN: return "EN";
        case Method::EM: return "EM";
        case Method::EM_APL: return "EM+APL";
        case Method::Hill: return "Hill";
        case Method::SPLC: return "SPLC";
        case Method::GR: return "GR";
    }
    return "?";
}

Method parse_method(std::string_view id) {
    for (Method m : kAllMethods)
        if (method_name(m) == id) return m;
    throw ParameterError("unknown method id '" + std::string(id) + "'");
}

bool uses_ranking_relabel(Method m) { return m == Method::EN || m == Method::EM_APL; }

void MethodHyper::validate() const {
    if (!(ls_epsilon >= 0.0 && ls_epsilon < 0.5)) throw ParameterError("ls_epsilon must lie in [0, 0.5)");
    if (!(focal_gamma >= 0.0)) throw ParameterError("focal_gamma must be >= 0");
    if (!(hill_lambda >= 1.0)) throw ParameterError("hill_lambda must be >= 1");
    if (!(splc_tau >= 0.0 && splc_tau <= 1.0)) throw ParameterError("splc_tau must lie in [0, 1]");
    if (!(splc_margin >= 0.0)) throw ParameterError("splc_margin must be >= 0");
    if (!(splc_gamma >= 0.0)) throw ParameterError("splc_gamma must be >= 0");
    if (splc_start_epoch < 0) throw ParameterError("splc_start_epoch must be >= 0");
    if (!(em_missing_weight >= 0.0) || !(em_negative_weight >= 0.0))
        throw ParameterError("EM weights must be >= 0");
    if (!(apl_theta >= 0.0 && apl_theta <= 100.0)) throw ParameterError("apl_theta must lie in [0, 100]");
    if (!(en_ema_decay > 0.0 && en_ema_decay < 1.0)) throw ParameterError("en_ema_decay must lie in (0, 1)");
}

double an_loss(double p, int s) {
    require_binary(s);
    return s == 1 ? -safe_log(p) : -safe_log(1.0 - p);
}

double an_ls_loss(double p, int s, double epsilon) {
    require_binary(s);
    if (!(epsilon >= 0.0 && epsilon < 0.5)) throw ParameterError("label smoothing epsilon must lie in [0, 0.5)");
    return bce(p, s == 1 ? 1.0 - epsilon : epsilon);
}

double focal_loss(double p, int s, double gamma) {
    require_binary(s);
    if (!(gamma >= 0.0)) throw ParameterError("focal gamma must be >= 0");
    if (s == 1) return -std::pow(1.0 - p, gamma) * safe_log(p);
    return -std::pow(p, gamma) * safe_log(1.0 - p);
}

double hill_neg_loss(double p, double lambda) { return (lambda - p) * p * p; }

double hill_neg_logit_grad(double p, double lambda) {
    return p * p * (2.0 * lambda - 3.0 * p) * (1.0 - p);
}

double entropy_logit_grad(double p) {
    return (safe_log(p) - safe_log(1.0 - p)) * p * (1.0 - p);
}

double focal_margin_pos_loss(double z, double margin, double gamma) {
    if (!(margin >= 0.0)) throw ParameterError("focal margin must be >= 0");
    return focal_margin_value(sigmoid(z - margin), gamma);
}

double focal_margin_pos_logit_grad(double z, double margin, double gamma) {
    return focal_margin_grad(sigmoid(z - margin), gamma);
}

double splc_loss(double z, int s, double tau, double margin, double gamma, double lambda,
                 bool gate_open) {
    require_binary(s);
    if (s == 1) return focal_margin_pos_loss(z, margin, gamma);
    const double p = sigmoid(z);
    if (!gate_open || p <= tau) return hill_neg_loss(p, lambda);
    return focal_margin_pos_loss(z, margin, gamma);
}

double em_loss(double p, int s, double missing_weight) {
    require_binary(s);
    return em_apl_loss(p, s, missing_weight, 0.0);
}

double em_apl_loss(double p, int code, double missing_weight, double negative_weight, double anchor) {
    switch (code) {
        case kObservedPositive: return -safe_log(p);
        case kMissing:
            // -alpha * H(p), with H the binary entropy.
            return missing_weight * (p * safe_log(p) + (1.0 - p) * safe_log(1.0 - p));
        case kPseudoNegative: return negative_weight * bce(p, resolve_anchor(p, anchor));
        default: throw ParameterError("unknown label code " + std::to_string(code));
    }
}

double en_loss(double p, int code) {
    switch (code) {
        case kObservedPositive: return -safe_log(p);
        case kMissing: return 0.0;
        case kPseudoNegative: return -safe_log(1.0 - p);
        default: throw ParameterError("unknown label code " + std::to_string(code));
    }
}

LabelMatrix apl_relabel(const Matrix& confidences, const LabelMatrix& observed, double theta) {
    require_same_shape(confidences, observed, "apl_relabel");
    if (!(theta >= 0.0 && theta <= 100.0)) throw ParameterError("theta must lie in [0, 100]");
    LabelMatrix codes(observed.rows(), observed.cols(), kMissing);
    for (std::size_t c = 0; c < observed.cols(); ++c) {
        std::vector<std::size_t> missing;
        for (std::size_t n = 0; n < observed.rows(); ++n) {
            if (observed(n, c) == 1) codes(n, c) = kObservedPositive;
            else missing.push_back(n);
        }
        const auto count = std::min(
            missing.size(),
            static_cast<std::size_t>(std::floor(theta * static_cast<double>(missing.size()) / 100.0 + 1e-9)));
        const auto order = ascending_order(confidences, c, missing);
        for (std::size_t k = 0; k < count; ++k) codes(order[k], c) = kPseudoNegative;
    }
    return codes;
}

LabelMatrix en_relabel(const Matrix& ema, const LabelMatrix& observed,
                       std::span<const std::size_t> positives_per_class) {
    require_same_shape(ema, observed, "en_relabel");
    if (positives_per_class.size() != observed.cols())
        throw ShapeError("en_relabel: one expected positive count per class required");
    const std::size_t n_rows = observed.rows();
    LabelMatrix codes(n_rows, observed.cols(), kMissing);
    std::vector<std::size_t> all(n_rows);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t c = 0; c < observed.cols(); ++c) {
        if (positives_per_class[c] > n_rows)
            throw ParameterError("expected positives for class " + std::to_string(c) + " exceed N");
        const std::size_t negatives = n_rows - positives_per_class[c];
        const auto order = ascending_order(ema, c, all);
        for (std::size_t k = 0; k < negatives; ++k) codes(order[k], c) = kPseudoNegative;
        for (std::size_t n = 0; n < n_rows; ++n)
            if (observed(n, c) == 1) codes(n, c) = kObservedPositive;
    }
    return codes;
}

void ema_update(Matrix& ema, const Matrix& confidences, double decay) {
    require_same_shape(ema, confidences, "ema_update");
    for (std::size_t i = 0; i < ema.size(); ++i)
        ema.data()[i] = decay * ema.data()[i] + (1.0 - decay) * confidences.data()[i];
}

double relabel_boundary(const Matrix& confidences, const LabelMatrix& codes, std::size_t cls) {
    double boundary = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < codes.rows(); ++n)
        if (codes(n, cls) == kPseudoNegative) boundary = std::max(boundary, confidences(n, cls));
    return boundary;
}

Calibration FrameworkLoss::calibrate(double p, int s) const {
    Calibration c;
    c.weight = weight(p, s);
    c.khat = khat(p);
    c.anchor = p;
    return c;
}

double FrameworkLoss::compose(double p, int s, const Calibration& c) const {
    require_binary(s);
    if (c.weight == 0.0) return 0.0;
    if (s == 1) return c.weight * observed.value(p, c.anchor);
    if (!c.khat) throw ContractError(std::string(method_name(method)) + ": undefined pseudo-label under nonzero weight");
    const double k = *c.khat;
    double inner = 0.0;
    if (k != 0.0) {
        if (!missing_positive) throw ContractError(std::string(method_name(method)) + ": L2 undefined but pseudo-label is nonzero");
        inner += k * missing_positive->value(p, c.anchor);
    }
    if (k != 1.0) inner += (1.0 - k) * missing_negative.value(p, c.anchor);
    return c.weight * inner;
}

double FrameworkLoss::compose_logit_grad(double p, int s, const Calibration& c) const {
    require_binary(s);
    if (c.weight == 0.0) return 0.0;
    if (s == 1) return c.weight * observed.logit_grad(p, c.anchor);
    if (!c.khat) throw ContractError(std::string(method_name(method)) + ": undefined pseudo-label under nonzero weight");
    const double k = *c.khat;
    double inner = 0.0;
    if (k != 0.0) {
        if (!missing_positive) throw ContractError(std::string(method_name(method)) + ": L2 undefined but pseudo-label is nonzero");
        inner += k * missing_positive->logit_grad(p, c.anchor);
    }
    if (k != 1.0) inner += (1.0 - k) * missing_negative.logit_grad(p, c.anchor);
    return c.weight * inner;
}

FrameworkLoss to_framework(Method method, const MethodHyper& hyper, const EpochState& state) {
    FrameworkLoss f;
    f.method = method;
    const auto always_zero = [](double) -> std::optional<double> { return 0.0; };
    const auto unit_weight = [](double, int) { return 1.0; };
    const double tau1 = state.tau1;

    switch (method) {
        case Method::AN:
            f.khat = always_zero;
            f.weight = unit_weight;
            f.observed = neg_log_branch();
            f.missing_positive = neg_log_branch();
            f.missing_negative = neg_log_complement_branch();
            break;
        case Method::AN_LS:
            f.khat = always_zero;
            f.weight = unit_weight;
            f.observed = bce_target_branch(1.0 - hyper.ls_epsilon);
            f.missing_positive = bce_target_branch(1.0 - hyper.ls_epsilon);
            f.missing_negative = bce_target_branch(hyper.ls_epsilon);
            break;
        case Method::Focal: {
            const double g = hyper.focal_gamma;
            auto pos = branch([g](double p) { return focal_loss(p, 1, g); },
                              [g](double p) { return focal_pos_grad(p, g); });
            f.khat = always_zero;
            f.weight = unit_weight;
            f.observed = pos;
            f.missing_positive = pos;
            f.missing_negative = branch([g](double p) { return focal_loss(p, 0, g); },
                                        [g](double p) { return focal_neg_grad(p, g); });
            break;
        }
        case Method::EN:
            f.khat = [tau1](double p) -> std::optional<double> {
                if (p <= tau1) return 0.0;
                return std::nullopt;
            };
            f.weight = [tau1](double p, int s) { return (s == 0 && p > tau1) ? 0.0 : 1.0; };
            f.observed = neg_log_branch();
            f.missing_positive = neg_log_branch();
            f.missing_negative = neg_log_complement_branch();
            break;
        case Method::EM:
        case Method::EM_APL: {
            const double a = hyper.em_missing_weight;
            const double b = hyper.em_negative_weight;
            f.khat = [tau1](double p) -> std::optional<double> { return p <= tau1 ? 0.0 : 1.0; };
            f.weight = [tau1, a, b](double p, int s) {
                if (s == 1) return 1.0;
                return p > tau1 ? a : b;
            };
            f.observed = neg_log_branch();
            f.missing_positive = branch(
                [](double p) { return p * safe_log(p) + (1.0 - p) * safe_log(1.0 - p); },
                [](double p) { return entropy_logit_grad(p); });
            f.missing_negative = Branch{
                [](double p, double anchor) { return bce(p, resolve_anchor(p, anchor)); },
                [](double p, double anchor) { return p - resolve_anchor(p, anchor); }};
            break;
        }
        case Method::Hill:
            f.khat = always_zero;
            f.weight = unit_weight;
            f.observed = neg_log_branch();
            f.missing_negative = hill_branch(hyper.hill_lambda);
            break;
        case Method::SPLC: {
            const double tau = hyper.splc_tau;
            const bool active = state.splc_active;
            f.khat = [tau, active](double p) -> std::optional<double> {
                return (active && p > tau) ? 1.0 : 0.0;
            };
            f.weight = unit_weight;
            f.observed = focal_margin_branch(hyper.splc_margin, hyper.splc_gamma);
            f.missing_positive = focal_margin_branch(hyper.splc_margin, hyper.splc_gamma);
            f.missing_negative = hill_branch(hyper.hill_lambda);
            break;
        }
        case Method::GR: {
            const gr::EpochParams params = state.gr;
            f.khat = [params](double p) -> std::optional<double> {
                return params.beta ? gr::k_hat(p, *params.beta) : 0.0;
            };
            f.weight = [params](double p, int s) {
                return params.alpha ? gr::v_weight(p, s, *params.alpha) : 1.0;
            };
            const gr::RobustParams q = params.q;
            f.observed = branch([q](double p) { return gr::robust_pos_loss(p, q.q1); },
                                [q](double p) { return gr::grad_unannotated_wrt_logit(p, 1.0, q.q1, q.q3); });
            f.missing_positive = branch([q](double p) { return gr::robust_pos_loss(p, q.q2); },
                                        [q](double p) { return gr::grad_unannotated_wrt_logit(p, 1.0, q.q2, q.q3); });
            f.missing_negative = branch([q](double p) { return gr::robust_neg_loss(p, q.q3); },
                                        [q](double p) { return gr::grad_unannotated_wrt_logit(p, 0.0, q.q2, q.q3); });
            break;
        }
    }
    return f;
}

double direct_loss(Method method, const MethodHyper& hyper, const EpochState& state, double p, int s) {
    require_binary(s);
    switch (method) {
        case Method::AN: return an_loss(p, s);
        case Method::AN_LS: return an_ls_loss(p, s, hyper.ls_epsilon);
        case Method::Focal: return focal_loss(p, s, hyper.focal_gamma);
        case Method::EN: return en_loss(p, code_from_threshold(p, s, state.tau1));
        case Method::EM:
        case Method::EM_APL:
            return em_apl_loss(p, code_from_threshold(p, s, state.tau1), hyper.em_missing_weight,
                               hyper.em_negative_weight);
        case Method::Hill: return s == 1 ? -safe_log(p) : hill_neg_loss(p, hyper.hill_lambda);
        case Method::SPLC:
            return splc_loss(logit(p), s, hyper.splc_tau, hyper.splc_margin, hyper.splc_gamma,
                             hyper.hill_lambda, state.splc_active);
        case Method::GR: return gr::per_label_loss(p, s, state.gr);
    }
    return 0.0;
}

Calibration calibrate_from_code(Method method, const MethodHyper& hyper, int code) {
    Calibration c;
    if (code == kObservedPositive) return c;
    if (method == Method::EN) {
        if (code == kPseudoNegative) c.khat = 0.0;
        else c.weight = 0.0;
        return c;
    }
    if (method == Method::EM_APL) {
        if (code == kPseudoNegative) {
            c.khat = 0.0;
            c.weight = hyper.em_negative_weight;
        } else {
            c.khat = 1.0;
            c.weight = hyper.em_missing_weight;
        }
        return c;
    }
    throw ContractError(std::string(method_name(method)) + " does not calibrate from ranking codes");
}

}  // namespace spml::adapters
