#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spml/gr_loss.hpp"
#include "spml/numerics.hpp"

// Prior single-positive / missing-label losses, each in two forms: the
// direct per-label formula, and its expression in the unified
// (pseudo-label, weight, L1, L2, L3) framework. All losses follow the
// "nonnegative, minimized" sign convention except the EM entropy term, which
// is a signed objective by construction.
namespace spml::adapters {

enum class Method { AN, AN_LS, Focal, EN, EM, EM_APL, Hill, SPLC, GR };

inline constexpr Method kAllMethods[] = {Method::AN, Method::AN_LS, Method::Focal,
                                         Method::EN, Method::EM,    Method::EM_APL,
                                         Method::Hill, Method::SPLC, Method::GR};

std::string_view method_name(Method m);
// Throws ParameterError on an unknown id.
Method parse_method(std::string_view id);

// Label codes written by relabeling passes.
inline constexpr std::int8_t kObservedPositive = 1;
inline constexpr std::int8_t kMissing = 0;
inline constexpr std::int8_t kPseudoNegative = -1;

struct MethodHyper {
    double ls_epsilon = 0.1;
    double focal_gamma = 2.0;
    double hill_lambda = 1.5;
    double splc_tau = 0.6;
    double splc_margin = 1.0;
    double splc_gamma = 2.0;
    int splc_start_epoch = 1;
    double em_missing_weight = 1.0;   // weight on the entropy term
    double em_negative_weight = 1.0;  // weight on pseudo-negative targets
    double apl_theta = 10.0;          // percent of missing labels relabeled per class
    double en_ema_decay = 0.9;
    // Expected positives per class for EN. Empty: taken from the data.
    std::vector<std::size_t> en_positive_counts;

    void validate() const;
    bool operator==(const MethodHyper&) const = default;
};

// ---- direct forms -------------------------------------------------------

double an_loss(double p, int s);
double an_ls_loss(double p, int s, double epsilon);
double focal_loss(double p, int s, double gamma);
double hill_neg_loss(double p, double lambda);
double focal_margin_pos_loss(double z, double margin, double gamma);
// Positive branch is the focal-margin loss; the missing branch switches
// from Hill to the focal-margin loss above tau once the gate is open.
double splc_loss(double z, int s, double tau, double margin, double gamma, double lambda,
                 bool gate_open);
double em_loss(double p, int s, double missing_weight = 1.0);
// code: 1 observed positive, 0 missing, -1 pseudo-negative. `anchor` is the
// frozen target of the pseudo-negative cross-entropy; NaN means p itself.
double em_apl_loss(double p, int code, double missing_weight, double negative_weight,
                   double anchor = std::numeric_limits<double>::quiet_NaN());
double en_loss(double p, int code);

// Logit gradients of the pieces above (p = sigmoid(z)).
double hill_neg_logit_grad(double p, double lambda);
double entropy_logit_grad(double p);  // d/dz [p ln p + (1 - p) ln(1 - p)]
double focal_margin_pos_logit_grad(double z, double margin, double gamma);

// ---- relabeling passes --------------------------------------------------

// Per class, the lowest theta percent of missing labels (by confidence,
// ties by instance index) become pseudo-negatives.
LabelMatrix apl_relabel(const Matrix& confidences, const LabelMatrix& observed, double theta);

// Per class c, the N - positives[c] instances with the lowest EMA confidence
// become pseudo-negatives; observed positives keep code 1.
LabelMatrix en_relabel(const Matrix& ema, const LabelMatrix& observed,
                       std::span<const std::size_t> positives_per_class);

void ema_update(Matrix& ema, const Matrix& confidences, double decay);

// Largest confidence among pseudo-negatives of one class; the threshold
// form of the ranking. -inf if the class has none.
double relabel_boundary(const Matrix& confidences, const LabelMatrix& codes, std::size_t cls);

// ---- framework form -----------------------------------------------------

struct Branch {
    std::function<double(double p, double anchor)> value;
    std::function<double(double p, double anchor)> logit_grad;
};

// Stop-gradient quantities for one label. An empty khat is "undefined" and
// only legal under weight 0.
struct Calibration {
    std::optional<double> khat;
    double weight = 1.0;
    double anchor = std::numeric_limits<double>::quiet_NaN();
};

struct FrameworkLoss {
    Method method = Method::AN;
    std::function<std::optional<double>(double p)> khat;
    std::function<double(double p, int s)> weight;
    Branch observed;                        // L1
    std::optional<Branch> missing_positive; // L2, absent where undefined
    Branch missing_negative;                // L3

    Calibration calibrate(double p, int s) const;
    double compose(double p, int s, const Calibration& c) const;
    double compose_logit_grad(double p, int s, const Calibration& c) const;
    double evaluate(double p, int s) const { return compose(p, s, calibrate(p, s)); }
};

// Epoch-dependent inputs of the table rows.
struct EpochState {
    // Ranking boundary (EN, EM+APL) as a confidence threshold; -inf relabels
    // nothing.
    double tau1 = -std::numeric_limits<double>::infinity();
    bool splc_active = true;
    gr::EpochParams gr;
};

FrameworkLoss to_framework(Method method, const MethodHyper& hyper, const EpochState& state);

// Direct form of `method` for the same (p, s, state) tuple the framework
// form consumes; ranking codes are derived from the threshold.
double direct_loss(Method method, const MethodHyper& hyper, const EpochState& state, double p,
                   int s);

// Calibration implied by a relabeling code for ranking-based methods (EN,
// EM+APL). Other methods calibrate from p directly.
Calibration calibrate_from_code(Method method, const MethodHyper& hyper, int code);

bool uses_ranking_relabel(Method m);

}  // namespace spml::adapters
