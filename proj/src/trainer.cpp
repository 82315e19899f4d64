#include "spml/trainer.hpp"

#include <chrono>
#include <cmath>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spml/eval.hpp"

namespace spml::train {

namespace {

constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kShuffleStream = 11;

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

LabelMatrix gather_rows(const LabelMatrix& m, std::span<const std::size_t> rows) {
    LabelMatrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::vector<std::size_t> expected_positive_counts(const adapters::MethodHyper& hyper,
                                                  const data::LabeledDataset& train_set) {
    if (!hyper.en_positive_counts.empty()) {
        if (hyper.en_positive_counts.size() != train_set.num_classes())
            throw ConfigError("en_positive_counts needs one entry per class");
        return hyper.en_positive_counts;
    }
    return data::dataset_stats(train_set).positives_per_class;
}

void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace

std::string architecture_name(Architecture a) { return a == Architecture::Linear ? "linear" : "mlp"; }

Architecture parse_architecture(const std::string& name) {
    if (name == "linear") return Architecture::Linear;
    if (name == "mlp") return Architecture::Mlp;
    throw ConfigError("unknown architecture '" + name + "'");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + name + "'");
}

std::size_t ModelParams::num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams out;
    out.arch = arch;
    for (const auto& l : layers)
        out.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
    return out;
}

double& ModelParams::param(std::size_t index) {
    for (auto& l : layers) {
        if (index < l.weight.size()) return l.weight.data()[index];
        index -= l.weight.size();
        if (index < l.bias.size()) return l.bias[index];
        index -= l.bias.size();
    }
    throw RangeError("parameter index out of range");
}

double ModelParams::param(std::size_t index) const {
    return const_cast<ModelParams*>(this)->param(index);
}

ModelParams init_model(Architecture arch, std::size_t inputs, std::size_t hidden, std::size_t outputs,
                       RngStream& rng) {
    if (inputs == 0 || outputs == 0) throw ShapeError("init_model: empty input or output layer");
    if (arch == Architecture::Mlp && hidden == 0) throw ShapeError("init_model: mlp needs hidden units");
    ModelParams m;
    m.arch = arch;
    auto make_layer = [&rng](std::size_t in, std::size_t out) {
        Layer l{Matrix(out, in), std::vector<double>(out, 0.0)};
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (auto& w : l.weight.data()) w = rng.uniform(-bound, bound);
        return l;
    };
    if (arch == Architecture::Linear) {
        m.layers.push_back(make_layer(inputs, outputs));
    } else {
        m.layers.push_back(make_layer(inputs, hidden));
        m.layers.push_back(make_layer(hidden, outputs));
    }
    return m;
}

ForwardPass forward(const ModelParams& model, const Matrix& x) {
    if (x.cols() != model.inputs())
        throw ShapeError("forward: feature width " + std::to_string(x.cols()) + " but model expects " +
                         std::to_string(model.inputs()));
    ForwardPass pass;
    Matrix a = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const Layer& layer = model.layers[l];
        Matrix z(a.rows(), layer.weight.rows());
        for (std::size_t n = 0; n < a.rows(); ++n) {
            for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
                double acc = layer.bias[o];
                for (std::size_t i = 0; i < layer.weight.cols(); ++i) acc += layer.weight(o, i) * a(n, i);
                z(n, o) = acc;
            }
        }
        pass.inputs.push_back(std::move(a));
        if (l + 1 < model.layers.size()) {
            a = map(z, [](double v) { return std::tanh(v); });
        } else {
            pass.logits = std::move(z);
        }
    }
    pass.confidences = map(pass.logits, [](double v) { return sigmoid(v); });
    return pass;
}

ModelParams backward(const ModelParams& model, const ForwardPass& pass, const Matrix& dz) {
    require_same_shape(dz, pass.logits, "backward");
    ModelParams grads = model.zeros_like();
    Matrix delta = dz;
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const Layer& layer = model.layers[l];
        const Matrix& input = pass.inputs[l];
        Layer& g = grads.layers[l];
        for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
            for (std::size_t i = 0; i < layer.weight.cols(); ++i) {
                double acc = 0.0;
                for (std::size_t n = 0; n < input.rows(); ++n) acc += delta(n, o) * input(n, i);
                g.weight(o, i) = acc;
            }
            double acc = 0.0;
            for (std::size_t n = 0; n < input.rows(); ++n) acc += delta(n, o);
            g.bias[o] = acc;
        }
        if (l == 0) break;
        // Back through the tanh that produced `input`.
        Matrix prev(input.rows(), input.cols());
        for (std::size_t n = 0; n < input.rows(); ++n) {
            for (std::size_t i = 0; i < input.cols(); ++i) {
                double acc = 0.0;
                for (std::size_t o = 0; o < layer.weight.rows(); ++o) acc += delta(n, o) * layer.weight(o, i);
                const double a = input(n, i);
                prev(n, i) = acc * (1.0 - a * a);
            }
        }
        delta = std::move(prev);
    }
    return grads;
}

CalibrationGrid calibrate(const adapters::FrameworkLoss& loss, const adapters::MethodHyper& hyper,
                          const Matrix& confidences, const LabelMatrix& observed, const LabelMatrix* codes,
                          const Matrix* anchors) {
    require_same_shape(confidences, observed, "calibrate");
    CalibrationGrid grid(confidences.size());
    const bool ranked = adapters::uses_ranking_relabel(loss.method);
    if (ranked && !codes) throw ContractError("calibrate: ranking method without relabel codes");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double p = confidences.data()[i];
        const int s = observed.data()[i];
        if (ranked) {
            grid[i] = adapters::calibrate_from_code(loss.method, hyper, codes->data()[i]);
            grid[i].anchor = anchors ? anchors->data()[i] : p;
        } else {
            grid[i] = loss.calibrate(p, s);
        }
    }
    return grid;
}

Objective objective(const adapters::FrameworkLoss& loss, const Matrix& confidences, const LabelMatrix& observed,
                    const CalibrationGrid& calibration) {
    require_same_shape(confidences, observed, "objective");
    if (calibration.size() != confidences.size()) throw ShapeError("objective: calibration grid size");
    if (confidences.rows() == 0) throw ShapeError("objective: empty batch");
    const double inv_n = 1.0 / static_cast<double>(confidences.rows());
    Objective out;
    out.dz = Matrix(confidences.rows(), confidences.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double p = confidences.data()[i];
        const int s = observed.data()[i];
        total += loss.compose(p, s, calibration[i]);
        out.dz.data()[i] = loss.compose_logit_grad(p, s, calibration[i]) * inv_n;
    }
    out.value = total * inv_n;
    return out;
}

Optimizer::Optimizer(OptimizerConfig config, const ModelParams& shape)
    : config_(config), first_(shape.zeros_like()), second_(shape.zeros_like()) {}

void Optimizer::step(ModelParams& params, const ModelParams& grads) {
    const std::size_t n = params.num_parameters();
    if (grads.num_parameters() != n || first_.num_parameters() != n)
        throw ShapeError("optimizer: parameter and gradient shapes differ");
    ++steps_;
    const double lr = config_.learning_rate;
    if (config_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < n; ++i) {
            double update = grads.param(i);
            if (config_.momentum != 0.0) {
                double& vel = first_.param(i);
                vel = config_.momentum * vel + update;
                update = vel;
            }
            params.param(i) -= lr * update;
        }
        return;
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads.param(i);
        double& m = first_.param(i);
        double& v = second_.param(i);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        params.param(i) -= lr * (m / c1) / (std::sqrt(v / c2) + config_.epsilon);
    }
}

void TrainerConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (arch == Architecture::Mlp && hidden == 0) throw ConfigError("mlp needs hidden >= 1");
    if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

Matrix predict(const ModelParams& model, const Matrix& x) { return forward(model, x).confidences; }

TrainedRun train(const TrainerConfig& trainer, const LossConfig& loss, const data::LabeledDataset& train_set,
                 const data::LabeledDataset& val_set, std::uint64_t seed, const EpochObserver& observer) {
    trainer.validate();
    loss.hyper.validate();
    if (loss.method == adapters::Method::GR) {
        loss.gr.validate();
        if (trainer.epochs > 0 && loss.gr.w.horizon != trainer.epochs)
            throw ConfigError("GR schedule horizon must equal the number of epochs");
    }
    if (train_set.num_features() != val_set.num_features() || train_set.num_classes() != val_set.num_classes())
        throw ConfigError("train and validation splits disagree on feature or class count");

    RngStream init_rng(seed, kInitStream);
    RngStream shuffle_rng(seed, kShuffleStream);

    TrainedRun run;
    ModelParams model = init_model(trainer.arch, train_set.num_features(), trainer.hidden,
                                   train_set.num_classes(), init_rng);
    run.initial = model;
    run.best = model;
    run.initial_val_map = eval::mean_average_precision(predict(model, val_set.features), val_set.truth).map;
    run.best_val_map = run.initial_val_map;

    Optimizer optimizer(trainer.optimizer, model);
    const std::size_t n = train_set.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::optional<Matrix> ema;
    std::vector<std::size_t> en_counts;
    if (loss.method == adapters::Method::EN) en_counts = expected_positive_counts(loss.hyper, train_set);

    for (int t = 0; t < trainer.epochs; ++t) {
        const auto started = std::chrono::steady_clock::now();
        adapters::EpochState state;
        state.splc_active = t >= loss.hyper.splc_start_epoch;
        if (loss.method == adapters::Method::GR) state.gr = loss.gr.at_epoch(t);
        EpochLoss epoch{adapters::to_framework(loss.method, loss.hyper, state), std::nullopt, std::nullopt};

        if (loss.method == adapters::Method::EN) {
            const Matrix p = predict(model, train_set.features);
            if (!ema) ema = p;
            else adapters::ema_update(*ema, p, loss.hyper.en_ema_decay);
            epoch.codes = adapters::en_relabel(*ema, train_set.observed, en_counts);
        } else if (loss.method == adapters::Method::EM_APL) {
            Matrix p = predict(model, train_set.features);
            epoch.codes = adapters::apl_relabel(p, train_set.observed, loss.hyper.apl_theta);
            epoch.anchors = std::move(p);
        }

        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += trainer.batch_size) {
            const std::size_t stop = std::min(n, start + trainer.batch_size);
            const std::span<const std::size_t> rows(order.data() + start, stop - start);
            const Matrix xb = gather_rows(train_set.features, rows);
            const LabelMatrix sb = gather_rows(train_set.observed, rows);
            std::optional<LabelMatrix> cb;
            std::optional<Matrix> ab;
            if (epoch.codes) cb = gather_rows(*epoch.codes, rows);
            if (epoch.anchors) ab = gather_rows(*epoch.anchors, rows);

            const ForwardPass pass = forward(model, xb);
            const CalibrationGrid calib = calibrate(epoch.loss, loss.hyper, pass.confidences, sb,
                                                    cb ? &*cb : nullptr, ab ? &*ab : nullptr);
            const Objective obj = objective(epoch.loss, pass.confidences, sb, calib);
            epoch_loss += obj.value * static_cast<double>(rows.size());
            optimizer.step(model, backward(model, pass, obj.dz));
        }

        EpochRecord rec;
        rec.epoch = t + 1;
        rec.train_loss = epoch_loss / static_cast<double>(n);
        rec.val_map = eval::mean_average_precision(predict(model, val_set.features), val_set.truth).map;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (rec.val_map > run.best_val_map) {
            run.best_val_map = rec.val_map;
            run.best_epoch = rec.epoch;
            run.best = model;
        }
        run.history.push_back(rec);
        if (observer) observer(rec, model);
    }
    run.final_model = model;
    return run;
}

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
    std::string out = "spml-checkpoint,1\n";
    out += "arch," + architecture_name(model.arch) + "\n";
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const Layer& layer = model.layers[l];
        out += "layer" + std::to_string(l) + ".weight," + std::to_string(layer.weight.rows()) + "," +
               std::to_string(layer.weight.cols());
        for (double v : layer.weight.data()) {
            out += ',';
            append_double(out, v);
        }
        out += "\nlayer" + std::to_string(l) + ".bias,1," + std::to_string(layer.bias.size());
        for (double v : layer.bias) {
            out += ',';
            append_double(out, v);
        }
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << out;
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("checkpoint not found: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    auto next_fields = [&]() -> std::vector<std::string> {
        if (!std::getline(f, line)) return {};
        ++line_no;
        std::vector<std::string> out;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) out.push_back(field);
        return out;
    };
    auto number = [&](const std::string& s) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line_no);
        return v;
    };
    auto header = next_fields();
    if (header.size() != 2 || header[0] != "spml-checkpoint" || header[1] != "1")
        throw ParseError("not a checkpoint file", 1);
    auto arch = next_fields();
    if (arch.size() != 2 || arch[0] != "arch") throw ParseError("missing architecture line", line_no);
    ModelParams model;
    model.arch = parse_architecture(arch[1]);
    while (true) {
        auto w = next_fields();
        if (w.empty()) break;
        auto b = next_fields();
        if (w.size() < 3 || b.size() < 3) throw ParseError("truncated layer record", line_no);
        const auto rows = static_cast<std::size_t>(number(w[1]));
        const auto cols = static_cast<std::size_t>(number(w[2]));
        if (w.size() != 3 + rows * cols) throw ParseError("weight value count mismatch", line_no - 1);
        const auto nb = static_cast<std::size_t>(number(b[2]));
        if (nb != rows || b.size() != 3 + nb) throw ParseError("bias value count mismatch", line_no);
        Layer layer{Matrix(rows, cols), std::vector<double>(nb)};
        for (std::size_t i = 0; i < rows * cols; ++i) layer.weight.data()[i] = number(w[3 + i]);
        for (std::size_t i = 0; i < nb; ++i) layer.bias[i] = number(b[3 + i]);
        model.layers.push_back(std::move(layer));
    }
    const std::size_t expected = model.arch == Architecture::Linear ? 1 : 2;
    if (model.layers.size() != expected) throw ParseError("unexpected layer count", line_no);
    return model;
}

}  // namespace spml::train
