#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spml/adapters.hpp"
#include "spml/data.hpp"
#include "spml/gr_loss.hpp"
#include "spml/numerics.hpp"

namespace spml::train {

enum class Architecture { Linear, Mlp };

std::string architecture_name(Architecture a);
Architecture parse_architecture(const std::string& name);

struct Layer {
    Matrix weight;             // out x in
    std::vector<double> bias;  // out

    bool operator==(const Layer&) const = default;
};

// Linear: one layer d -> C. Mlp: d -> h (tanh) -> C. The C outputs are
// independent logit heads over a shared trunk.
struct ModelParams {
    Architecture arch = Architecture::Linear;
    std::vector<Layer> layers;

    std::size_t inputs() const { return layers.front().weight.cols(); }
    std::size_t outputs() const { return layers.back().weight.rows(); }
    std::size_t num_parameters() const;

    // Same architecture, all parameters zero; doubles as a gradient buffer.
    ModelParams zeros_like() const;

    // Flat views for optimizers and finite-difference checks. Order:
    // layer by layer, weight (row-major) then bias.
    double& param(std::size_t index);
    double param(std::size_t index) const;

    bool operator==(const ModelParams&) const = default;
};

// Glorot-uniform weights, zero biases.
ModelParams init_model(Architecture arch, std::size_t inputs, std::size_t hidden,
                       std::size_t outputs, RngStream& rng);

struct ForwardPass {
    std::vector<Matrix> inputs;  // input to each layer
    Matrix logits;
    Matrix confidences;
};

ForwardPass forward(const ModelParams& model, const Matrix& x);

// dZ holds dObjective/dlogit per entry (already carrying any 1/N factor).
ModelParams backward(const ModelParams& model, const ForwardPass& pass, const Matrix& dz);

// ---- objective ------------------------------------------------------------

using CalibrationGrid = std::vector<adapters::Calibration>;  // row-major, N x C

struct Objective {
    double value = 0.0;
    Matrix dz;
};

// Stop-gradient calibrations for every entry. Ranking methods (EN, EM+APL)
// read their per-label codes and frozen anchors; the rest calibrate from p.
CalibrationGrid calibrate(const adapters::FrameworkLoss& loss, const adapters::MethodHyper& hyper,
                          const Matrix& confidences, const LabelMatrix& observed,
                          const LabelMatrix* codes, const Matrix* anchors);

// (1/N) sum of per-label losses with calibrations held fixed, and its
// logit gradient.
Objective objective(const adapters::FrameworkLoss& loss, const Matrix& confidences,
                    const LabelMatrix& observed, const CalibrationGrid& calibration);

// ---- optimizers -----------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };

std::string optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;  // SGD only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const OptimizerConfig&) const = default;
};

class Optimizer {
public:
    Optimizer(OptimizerConfig config, const ModelParams& shape);

    void step(ModelParams& params, const ModelParams& grads);
    std::uint64_t steps() const { return steps_; }

private:
    OptimizerConfig config_;
    ModelParams first_;
    ModelParams second_;
    std::uint64_t steps_ = 0;
};

// ---- training loop --------------------------------------------------------

struct TrainerConfig {
    Architecture arch = Architecture::Mlp;
    std::size_t hidden = 32;
    OptimizerConfig optimizer;
    std::size_t batch_size = 32;
    int epochs = 10;

    void validate() const;
    bool operator==(const TrainerConfig&) const = default;
};

struct LossConfig {
    adapters::Method method = adapters::Method::GR;
    adapters::MethodHyper hyper;
    gr::GrLossParams gr;  // used by GR only; horizon must equal epochs

    bool operator==(const LossConfig&) const = default;
};

struct EpochRecord {
    int epoch = 0;  // 1-based count of completed epochs
    double train_loss = 0.0;
    double val_map = 0.0;
    double wall_seconds = 0.0;
};

struct TrainedRun {
    ModelParams initial;
    ModelParams final_model;
    ModelParams best;
    int best_epoch = 0;  // 0: the initial model was never beaten
    double initial_val_map = 0.0;
    double best_val_map = 0.0;
    std::vector<EpochRecord> history;
};

// Called after each epoch with the record and the current model.
using EpochObserver = std::function<void(const EpochRecord&, const ModelParams&)>;

// Loss state frozen for epoch t: schedule values, relabel codes, anchors.
struct EpochLoss {
    adapters::FrameworkLoss loss;
    std::optional<LabelMatrix> codes;
    std::optional<Matrix> anchors;
};

TrainedRun train(const TrainerConfig& trainer, const LossConfig& loss, const data::LabeledDataset& train_set,
                 const data::LabeledDataset& val_set, std::uint64_t seed,
                 const EpochObserver& observer = {});

Matrix predict(const ModelParams& model, const Matrix& x);

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace spml::train
