#include <fstream>
#include <set>
#include <sstream>

#include "spml/cli.hpp"
#include "spml/errors.hpp"

namespace spml::cli {

using nlohmann::json;

namespace {

// Walks one JSON object, recording problems instead of throwing so that a
// config with several mistakes reports all of them.
class Reader {
public:
    Reader(const json& node, std::string path, std::vector<std::string>& errors)
        : node_(node), path_(std::move(path)), errors_(errors) {
        if (!node_.is_object()) error("must be an object");
    }

    void error(const std::string& msg) const { errors_.push_back((path_.empty() ? "<root>" : path_) + ": " + msg); }

    bool has(const char* key) const {
        seen_.insert(key);
        return node_.is_object() && node_.contains(key) && !node_.at(key).is_null();
    }

    std::string child_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& at(const char* key) const { return node_.at(key); }

    void number(const char* key, double& out) const {
        if (!has(key)) return;
        if (!at(key).is_number()) return bad(key, "a number");
        out = at(key).get<double>();
    }

    void optional_number(const char* key, std::optional<double>& out) const {
        if (!has(key)) return;
        if (!at(key).is_number()) return bad(key, "a number");
        out = at(key).get<double>();
    }

    template <typename Int>
    void integer(const char* key, Int& out, long long lo) const {
        if (!has(key)) return;
        const json& v = at(key);
        if (!v.is_number_integer()) return bad(key, "an integer");
        const long long x = v.is_number_unsigned() ? static_cast<long long>(v.get<unsigned long long>())
                                                   : v.get<long long>();
        if (x < lo) return bad(key, "an integer >= " + std::to_string(lo));
        out = static_cast<Int>(x);
    }

    void boolean(const char* key, bool& out) const {
        if (!has(key)) return;
        if (!at(key).is_boolean()) return bad(key, "a boolean");
        out = at(key).get<bool>();
    }

    bool string(const char* key, std::string& out) const {
        if (!has(key)) return false;
        if (!at(key).is_string()) {
            bad(key, "a string");
            return false;
        }
        out = at(key).get<std::string>();
        return true;
    }

    void numbers(const char* key, std::vector<double>& out) const {
        if (!has(key)) return;
        const json& v = at(key);
        if (!v.is_array()) return bad(key, "an array of numbers");
        out.clear();
        for (const auto& e : v) {
            if (!e.is_number()) return bad(key, "an array of numbers");
            out.push_back(e.get<double>());
        }
    }

    void counts(const char* key, std::vector<std::size_t>& out) const {
        if (!has(key)) return;
        const json& v = at(key);
        if (!v.is_array()) return bad(key, "an array of non-negative integers");
        out.clear();
        for (const auto& e : v) {
            if (!e.is_number_unsigned()) return bad(key, "an array of non-negative integers");
            out.push_back(e.get<std::size_t>());
        }
    }

    // Reports keys that no accessor asked about.
    void finish(std::initializer_list<const char*> also_known = {}) const {
        if (!node_.is_object()) return;
        for (const char* k : also_known) seen_.insert(k);
        for (const auto& [key, value] : node_.items())
            if (!seen_.count(key)) errors_.push_back(child_path(key.c_str()) + ": unknown key");
    }

private:
    void bad(const char* key, const std::string& what) const { errors_.push_back(child_path(key) + ": must be " + what); }

    const json& node_;
    std::string path_;
    std::vector<std::string>& errors_;
    mutable std::set<std::string> seen_;
};

void read_dataset(const Reader& r, DatasetConfig& d, std::vector<std::string>& errors) {
    std::string source = "synthetic";
    r.string("source", source);
    if (source == "synthetic") {
        d.source = DatasetConfig::Source::Synthetic;
    } else if (source == "csv") {
        d.source = DatasetConfig::Source::Csv;
    } else {
        r.error("source must be \"synthetic\" or \"csv\", got \"" + source + "\"");
    }
    if (r.has("synthetic")) {
        Reader s(r.at("synthetic"), r.child_path("synthetic"), errors);
        s.integer("classes", d.synthetic.num_classes, 0);
        s.integer("features", d.synthetic.num_features, 0);
        s.number("weight_scale", d.synthetic.weight_scale);
        s.number("latent_noise", d.synthetic.latent_noise);
        s.number("positive_rate", d.synthetic.positive_rate);
        s.integer("seed", d.synthetic.seed, 0);
        if (s.has("instances")) s.error("instances: set dataset.splits instead");
        s.finish();
    }
    if (r.has("splits")) {
        Reader s(r.at("splits"), r.child_path("splits"), errors);
        s.integer("train", d.splits.train, 1);
        s.integer("val", d.splits.val, 1);
        s.integer("test", d.splits.test, 1);
        s.finish();
    }
    std::string path;
    if (r.string("train_csv", path)) d.train_csv = path;
    if (r.string("val_csv", path)) d.val_csv = path;
    if (r.string("test_csv", path)) d.test_csv = path;
    if (d.source == DatasetConfig::Source::Csv && (d.train_csv.empty() || d.val_csv.empty() || d.test_csv.empty()))
        r.error("csv source needs train_csv, val_csv and test_csv");
    if (d.source == DatasetConfig::Source::Synthetic) {
        data::SyntheticSpec probe = d.synthetic;
        probe.num_instances = d.splits.train + d.splits.val + d.splits.test;
        try {
            probe.validate();
        } catch (const std::exception& e) {
            r.error(std::string("synthetic: ") + e.what());
        }
    }
    r.finish();
}

void read_hyper(const Reader& r, adapters::MethodHyper& h) {
    r.number("ls_epsilon", h.ls_epsilon);
    r.number("focal_gamma", h.focal_gamma);
    r.number("hill_lambda", h.hill_lambda);
    r.number("splc_tau", h.splc_tau);
    r.number("splc_margin", h.splc_margin);
    r.number("splc_gamma", h.splc_gamma);
    r.integer("splc_start_epoch", h.splc_start_epoch, 0);
    r.number("em_missing_weight", h.em_missing_weight);
    r.number("em_negative_weight", h.em_negative_weight);
    r.number("apl_theta", h.apl_theta);
    r.number("en_ema_decay", h.en_ema_decay);
    r.counts("en_positive_counts", h.en_positive_counts);
    r.finish();
    try {
        h.validate();
    } catch (const std::exception& e) {
        r.error(e.what());
    }
}

void read_gr(const Reader& r, GrAnchors& g) {
    r.number("w0", g.w0);
    r.optional_number("b0", g.b0);
    r.optional_number("k0", g.k0);
    r.number("wT", g.wT);
    r.number("bT", g.bT);
    r.optional_number("mu0", g.mu0);
    r.number("sigma0", g.sigma0);
    r.number("muT", g.muT);
    r.number("sigmaT", g.sigmaT);
    r.number("q1", g.robust.q1);
    r.number("q2", g.robust.q2);
    r.number("q3", g.robust.q3);
    r.finish();
    if (g.b0 && g.k0) r.error("give either b0 or k0, not both");
    if (g.k0 && !(*g.k0 > 0.0 && *g.k0 < 1.0)) r.error("k0 must lie in (0, 1)");
    auto check = [&r](auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            r.error(e.what());
        }
    };
    check([&] { gr::PseudoLabelParams{g.w0, g.b0.value_or(0.0)}.validate(); });
    check([&] { gr::PseudoLabelParams{g.wT, g.bT}.validate(); });
    check([&] { gr::WeightParams{g.mu0.value_or(g.muT), g.sigma0}.validate(); });
    check([&] { gr::WeightParams{g.muT, g.sigmaT}.validate(); });
    check([&] { g.robust.validate(); });
}

void read_trainer(const Reader& r, train::TrainerConfig& t) {
    std::string s;
    if (r.string("arch", s)) {
        try {
            t.arch = train::parse_architecture(s);
        } catch (const std::exception& e) {
            r.error(e.what());
        }
    }
    r.integer("hidden", t.hidden, 0);
    if (r.string("optimizer", s)) {
        try {
            t.optimizer.kind = train::parse_optimizer(s);
        } catch (const std::exception& e) {
            r.error(e.what());
        }
    }
    r.number("lr", t.optimizer.learning_rate);
    r.number("momentum", t.optimizer.momentum);
    r.integer("batch_size", t.batch_size, 1);
    r.integer("epochs", t.epochs, 0);
    r.finish();
    try {
        t.validate();
    } catch (const std::exception& e) {
        r.error(e.what());
    }
}

void read_sweep(const Reader& r, SweepGrid& s) {
    r.numbers("wT", s.wT);
    r.numbers("bT", s.bT);
    r.numbers("tau", s.tau);
    r.numbers("muT", s.muT);
    r.numbers("sigmaT", s.sigmaT);
    r.numbers("q2", s.q2);
    r.numbers("q3", s.q3);
    r.integer("max_runs", s.max_runs, 1);
    r.finish();
    if (!s.tau.empty() && !s.wT.empty()) r.error("tau and wT grids are exclusive (tau sets w = -b/tau)");
    for (double t : s.tau)
        if (!(t > 0.0)) r.error("tau values must be > 0");
}

void read_analyze(const Reader& r, AnalyzeConfig& a, std::vector<std::string>& errors) {
    if (r.has("analyses")) {
        const json& v = r.at("analyses");
        if (!v.is_array()) {
            r.error("analyses must be an array of strings");
        } else {
            a.analyses.clear();
            for (const auto& e : v) {
                const std::string name = e.is_string() ? e.get<std::string>() : std::string();
                if (name != "distinguishability" && name != "fn-buckets" && name != "grad-curves")
                    errors.push_back(r.child_path("analyses") + ": unknown analysis '" + e.dump() + "'");
                else
                    a.analyses.push_back(name);
            }
        }
    }
    std::string s;
    if (r.string("checkpoint", s)) {
        if (s == "initial") a.checkpoint = Checkpoint::Initial;
        else if (s == "best") a.checkpoint = Checkpoint::Best;
        else if (s == "final") a.checkpoint = Checkpoint::Final;
        else r.error("checkpoint must be initial, best or final");
    }
    if (r.string("run_dir", s)) a.run_dir = s;
    r.number("grid_step", a.grid_step);
    if (!(a.grid_step > 0.0 && a.grid_step < 0.5)) r.error("grid_step must lie in (0, 0.5)");
    r.finish();
}

json hyper_json(const adapters::MethodHyper& h) {
    return {{"ls_epsilon", h.ls_epsilon},
            {"focal_gamma", h.focal_gamma},
            {"hill_lambda", h.hill_lambda},
            {"splc_tau", h.splc_tau},
            {"splc_margin", h.splc_margin},
            {"splc_gamma", h.splc_gamma},
            {"splc_start_epoch", h.splc_start_epoch},
            {"em_missing_weight", h.em_missing_weight},
            {"em_negative_weight", h.em_negative_weight},
            {"apl_theta", h.apl_theta},
            {"en_ema_decay", h.en_ema_decay},
            {"en_positive_counts", h.en_positive_counts}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

bool DatasetConfig::operator==(const DatasetConfig& o) const {
    data::SyntheticSpec a = synthetic, b = o.synthetic;
    a.num_instances = b.num_instances = 0;
    return source == o.source && a == b && splits.train == o.splits.train &&
           splits.val == o.splits.val && splits.test == o.splits.test && train_csv == o.train_csv &&
           val_csv == o.val_csv && test_csv == o.test_csv;
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
    return dataset == o.dataset && method == o.method && hyper == o.hyper && gr == o.gr && ablation == o.ablation &&
           trainer == o.trainer && seeds == o.seeds && output_dir == o.output_dir && jobs == o.jobs &&
           sweep == o.sweep && analyze == o.analyze;
}

bool SweepGrid::empty() const {
    return wT.empty() && bT.empty() && tau.empty() && muT.empty() && sigmaT.empty() && q2.empty() && q3.empty();
}

std::string checkpoint_name(Checkpoint c) {
    switch (c) {
    case Checkpoint::Initial: return "initial";
    case Checkpoint::Best: return "best";
    case Checkpoint::Final: return "final";
    }
    return "best";
}

ExperimentConfig parse_config(const json& j) {
    std::vector<std::string> errors;
    ExperimentConfig c;
    c.dataset.synthetic.num_instances = 0;
    Reader root(j, "", errors);
    if (root.has("dataset")) read_dataset(Reader(root.at("dataset"), "dataset", errors), c.dataset, errors);
    if (root.has("method")) {
        Reader m(root.at("method"), "method", errors);
        std::string id;
        if (m.string("id", id)) {
            try {
                c.method = adapters::parse_method(id);
            } catch (const std::exception&) {
                m.error("unknown method id '" + id + "'");
            }
        }
        if (m.has("hyper")) read_hyper(Reader(m.at("hyper"), "method.hyper", errors), c.hyper);
        m.finish();
    }
    if (root.has("gr")) read_gr(Reader(root.at("gr"), "gr", errors), c.gr);
    if (root.has("ablation")) {
        Reader a(root.at("ablation"), "ablation", errors);
        a.boolean("pseudo_label", c.ablation.pseudo_label);
        a.boolean("weight", c.ablation.weight);
        a.boolean("robust", c.ablation.robust);
        a.finish();
    }
    if (root.has("trainer")) read_trainer(Reader(root.at("trainer"), "trainer", errors), c.trainer);
    if (root.has("seeds")) {
        const json& s = root.at("seeds");
        bool ok = s.is_array() && !s.empty();
        if (ok) {
            c.seeds.clear();
            for (const auto& e : s) {
                if (!e.is_number_unsigned()) {
                    ok = false;
                    break;
                }
                c.seeds.push_back(e.get<std::uint64_t>());
            }
        }
        if (!ok) root.error("seeds must be a non-empty array of non-negative integers");
        std::set<std::uint64_t> unique(c.seeds.begin(), c.seeds.end());
        if (ok && unique.size() != c.seeds.size()) root.error("seeds must be distinct");
    }
    std::string out;
    if (root.string("output_dir", out)) c.output_dir = out;
    root.integer("jobs", c.jobs, 1);
    if (root.has("sweep")) read_sweep(Reader(root.at("sweep"), "sweep", errors), c.sweep);
    if (root.has("analyze")) read_analyze(Reader(root.at("analyze"), "analyze", errors), c.analyze, errors);
    root.finish();

    if (errors.empty() && c.method == adapters::Method::SPLC && c.hyper.splc_start_epoch > c.trainer.epochs)
        errors.push_back("method.hyper.splc_start_epoch: exceeds trainer.epochs");
    if (!errors.empty()) {
        std::ostringstream msg;
        msg << errors.size() << " config error" << (errors.size() == 1 ? "" : "s") << ":";
        for (const auto& e : errors) msg << "\n  " << e;
        throw ConfigError(msg.str());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("config not found: " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
    json synthetic;
    data::to_json(synthetic, c.dataset.synthetic);
    synthetic.erase("instances");
    json dataset = {{"source", c.dataset.source == DatasetConfig::Source::Csv ? "csv" : "synthetic"},
                    {"synthetic", synthetic},
                    {"splits", {{"train", c.dataset.splits.train}, {"val", c.dataset.splits.val},
                                {"test", c.dataset.splits.test}}}};
    if (!c.dataset.train_csv.empty()) dataset["train_csv"] = c.dataset.train_csv.string();
    if (!c.dataset.val_csv.empty()) dataset["val_csv"] = c.dataset.val_csv.string();
    if (!c.dataset.test_csv.empty()) dataset["test_csv"] = c.dataset.test_csv.string();

    json analyze = {{"analyses", c.analyze.analyses},
                    {"checkpoint", checkpoint_name(c.analyze.checkpoint)},
                    {"grid_step", c.analyze.grid_step}};
    if (c.analyze.run_dir) analyze["run_dir"] = c.analyze.run_dir->string();

    return {{"dataset", dataset},
            {"method", {{"id", std::string(adapters::method_name(c.method))}, {"hyper", hyper_json(c.hyper)}}},
            {"gr",
             {{"w0", c.gr.w0},
              {"b0", optional_json(c.gr.b0)},
              {"k0", optional_json(c.gr.k0)},
              {"wT", c.gr.wT},
              {"bT", c.gr.bT},
              {"mu0", optional_json(c.gr.mu0)},
              {"sigma0", c.gr.sigma0},
              {"muT", c.gr.muT},
              {"sigmaT", c.gr.sigmaT},
              {"q1", c.gr.robust.q1},
              {"q2", c.gr.robust.q2},
              {"q3", c.gr.robust.q3}}},
            {"ablation",
             {{"pseudo_label", c.ablation.pseudo_label},
              {"weight", c.ablation.weight},
              {"robust", c.ablation.robust}}},
            {"trainer",
             {{"arch", train::architecture_name(c.trainer.arch)},
              {"hidden", c.trainer.hidden},
              {"optimizer", train::optimizer_name(c.trainer.optimizer.kind)},
              {"lr", c.trainer.optimizer.learning_rate},
              {"momentum", c.trainer.optimizer.momentum},
              {"batch_size", c.trainer.batch_size},
              {"epochs", c.trainer.epochs}}},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir.string()},
            {"jobs", c.jobs},
            {"sweep",
             {{"wT", c.sweep.wT},
              {"bT", c.sweep.bT},
              {"tau", c.sweep.tau},
              {"muT", c.sweep.muT},
              {"sigmaT", c.sweep.sigmaT},
              {"q2", c.sweep.q2},
              {"q3", c.sweep.q3},
              {"max_runs", c.sweep.max_runs}}},
            {"analyze", analyze}};
}

gr::GrLossParams resolve_gr(const GrAnchors& a, const gr::Components& ablation, int horizon,
                            const data::LabeledDataset& train_set) {
    gr::GrLossParams p;
    double b0 = 0.0;
    if (a.b0) {
        b0 = *a.b0;
    } else {
        const double k0 = a.k0 ? *a.k0 : data::dataset_stats(train_set).k0_estimate;
        if (!(k0 > 0.0 && k0 < 1.0))
            throw ConfigError("cannot derive b0: estimated k0 = " + std::to_string(k0) + " is outside (0, 1)");
        b0 = logit(k0);
    }
    const int h = std::max(horizon, 1);
    p.w = {a.w0, a.wT, h};
    p.b = {b0, a.bT, h};
    p.mu = {a.mu0.value_or(a.muT), a.muT, h};
    p.sigma = {a.sigma0, a.sigmaT, h};
    p.robust = a.robust;
    p.components = ablation;
    p.validate();
    return p;
}

data::DatasetSplits load_dataset(const DatasetConfig& config) {
    if (config.source == DatasetConfig::Source::Synthetic) return data::generate_splits(config.synthetic, config.splits);
    data::DatasetSplits s{data::load_csv(config.train_csv, data::Split::Train),
                          data::load_csv(config.val_csv, data::Split::Val),
                          data::load_csv(config.test_csv, data::Split::Test)};
    s.train.scar_rate = data::scar_rate(s.train.truth, s.train.observed);
    s.train.validate();
    return s;
}

}  // namespace spml::cli
