#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spml/cli.hpp"

using namespace spml;
using namespace spml::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "spml_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

// Small synthetic GR run that finishes in well under a second.
json small_config(const fs::path& out) {
    ExperimentConfig c;
    c.dataset.synthetic.num_classes = 4;
    c.dataset.synthetic.num_features = 6;
    c.dataset.synthetic.positive_rate = 0.4;
    c.dataset.synthetic.seed = 3;
    c.dataset.splits = {120, 60, 60};
    c.trainer.epochs = 3;
    c.trainer.hidden = 8;
    c.trainer.batch_size = 16;
    c.trainer.optimizer.learning_rate = 0.01;
    c.seeds = {0, 1};
    c.output_dir = out;
    return to_json(c);
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config-in.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

int invoke(std::vector<std::string> args) {
    std::vector<const char*> argv{"spml"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config round trip is the identity") {
    ExperimentConfig c;
    c.method = adapters::Method::EM_APL;
    c.gr.k0 = 0.12;
    c.gr.mu0 = 0.3;
    c.ablation.weight = false;
    c.seeds = {4, 9, 2};
    c.sweep.tau = {0.2, 0.5};
    c.sweep.q3 = {0.5, 1.0};
    c.analyze.checkpoint = Checkpoint::Final;
    c.analyze.run_dir = "elsewhere";
    c.dataset.source = DatasetConfig::Source::Csv;
    c.dataset.train_csv = "a.csv";
    c.dataset.val_csv = "b.csv";
    c.dataset.test_csv = "c.csv";
    const json j = to_json(c);
    const ExperimentConfig back = parse_config(j);
    CHECK(back == c);
    CHECK(to_json(back) == j);
    const ExperimentConfig d = parse_config(json::object());
    CHECK(parse_config(to_json(d)) == d);
    CHECK(to_json(d) == to_json(ExperimentConfig{}));
}

TEST_CASE("config errors are collected together") {
    json j = small_config("x");
    j["method"]["id"] = "NOPE";
    j["trainer"]["lr"] = -1.0;
    j["bogus"] = 1;
    j["gr"]["b0"] = 0.0;
    j["gr"]["k0"] = 0.1;
    try {
        parse_config(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("4 config errors") != std::string::npos);
        CHECK(msg.find("method: unknown method id 'NOPE'") != std::string::npos);
        CHECK(msg.find("trainer: learning rate") != std::string::npos);
        CHECK(msg.find("bogus: unknown key") != std::string::npos);
        CHECK(msg.find("gr: give either b0 or k0") != std::string::npos);
    }
    json dup = small_config("x");
    dup["seeds"] = {1, 1};
    CHECK_THROWS_AS(parse_config(dup), ConfigError);
    json tau = small_config("x");
    tau["sweep"]["tau"] = {0.0};
    CHECK_THROWS_AS(parse_config(tau), ConfigError);
}

TEST_CASE("ablation with only the pseudo-label keeps AN defaults elsewhere") {
    ExperimentConfig c;
    c.ablation = {true, false, false};
    c.gr.robust = {0.7, 0.5, 0.9};
    c.trainer.epochs = 4;
    const auto splits = load_dataset([] {
        DatasetConfig d;
        d.splits = {200, 10, 10};
        return d;
    }());
    const auto p = resolve_gr(c.gr, c.ablation, c.trainer.epochs, splits.train);
    for (int t = 0; t <= 4; ++t) {
        const auto e = p.at_epoch(t);
        CHECK(e.beta.has_value());
        CHECK_FALSE(e.alpha.has_value());
        CHECK(e.q.q1 == gr::kAssumedNegativeQ);
        CHECK(e.q.q2 == gr::kAssumedNegativeQ);
        CHECK(e.q.q3 == gr::kAssumedNegativeQ);
        CHECK(gr::per_label_loss(0.3, 0, e) ==
              gr::unannotated_loss(0.3, gr::k_hat(0.3, *e.beta), gr::kAssumedNegativeQ, gr::kAssumedNegativeQ));
    }
    const auto none = resolve_gr(c.gr, {false, false, false}, 4, splits.train).at_epoch(2);
    CHECK(gr::per_label_loss(0.3, 0, none) == gr::robust_neg_loss(0.3, gr::kAssumedNegativeQ));
}

TEST_CASE("generate-data writes a minimal dataset deterministically") {
    const fs::path dir = fresh_dir("generate");
    json j = small_config(dir / "a");
    j["dataset"]["synthetic"]["classes"] = 3;
    j["dataset"]["synthetic"]["features"] = 4;
    j["dataset"]["splits"] = {{"train", 10}, {"val", 5}, {"test", 5}};
    const fs::path cfg = write_config(dir, j);
    REQUIRE(invoke({"generate-data", "--config", cfg.string()}) == kExitOk);
    const auto train = data::load_csv(dir / "a" / "train.csv", data::Split::Train);
    CHECK(train.size() == 10);
    CHECK(train.num_classes() == 3);
    CHECK(train.features.cols() == 4);
    CHECK(fs::exists(dir / "a" / "stats.json"));

    REQUIRE(invoke({"generate-data", "--config", cfg.string(), "--out", (dir / "b").string()}) == kExitOk);
    for (const char* f : {"train.csv", "val.csv", "test.csv", "stats.json"})
        CHECK(file_sha256(dir / "a" / f) == file_sha256(dir / "b" / f));

    const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(manifest["files"].size() == 4);
    for (const auto& f : manifest["files"])
        CHECK(f["sha256"] == file_sha256(dir / "a" / f["path"].get<std::string>()));

    j["dataset"]["synthetic"]["classes"] = 0;
    CHECK(invoke({"generate-data", "--config", write_config(dir, j).string()}) == kExitConfig);
}

TEST_CASE("train writes every artifact and replays byte for byte") {
    const fs::path dir = fresh_dir("train");
    const fs::path cfg = write_config(dir, small_config(dir / "run1"));
    REQUIRE(invoke({"train", "--config", cfg.string(), "--jobs", "2"}) == kExitOk);
    REQUIRE(invoke({"train", "--config", cfg.string(), "--out", (dir / "run2").string()}) == kExitOk);
    for (const char* f : {"config.json", "summary.json"}) CHECK(fs::exists(dir / "run1" / f));
    for (int seed : {0, 1}) {
        const fs::path s1 = dir / "run1" / ("seed-" + std::to_string(seed));
        const fs::path s2 = dir / "run2" / ("seed-" + std::to_string(seed));
        for (const char* f : {"metrics.jsonl", "timing.jsonl", "checkpoint-initial.csv", "checkpoint-best.csv",
                              "checkpoint-final.csv", "report.json", "manifest.json"})
            CHECK(fs::exists(s1 / f));
        CHECK(slurp(s1 / "metrics.jsonl") == slurp(s2 / "metrics.jsonl"));
        CHECK(slurp(s1 / "checkpoint-best.csv") == slurp(s2 / "checkpoint-best.csv"));
        const json report = json::parse(slurp(s1 / "report.json"));
        CHECK(report.contains("test"));
        CHECK(report["train_unannotated"].contains("wasserstein"));
    }
    const json summary = json::parse(slurp(dir / "run1" / "summary.json"));
    CHECK(summary["runs"].size() == 2);
    json effective = small_config(dir / "run1");
    effective["jobs"] = 2;
    CHECK(json::parse(slurp(dir / "run1" / "config.json")) == effective);
}

TEST_CASE("config and parse failures map to exit code 2") {
    const fs::path dir = fresh_dir("exit2");
    json j = small_config(dir / "out");
    j["method"]["id"] = "MAGIC";
    CHECK(invoke({"train", "--config", write_config(dir, j).string()}) == kExitConfig);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(invoke({"train", "--config", (dir / "broken.json").string()}) == kExitConfig);
    CHECK(invoke({"train"}) == kExitConfig);
    CHECK(invoke({"frobnicate"}) == kExitConfig);
    CHECK(invoke({"train", "--config", (dir / "missing.json").string()}) == kExitMissingArtifact);
    CHECK(invoke({"train", "--config", write_config(dir, small_config(dir / "o")).string(), "--jobs", "0"}) ==
          kExitConfig);
}

TEST_CASE("environment overrides sit between flags and the config") {
    const fs::path dir = fresh_dir("env");
    json j = small_config(dir / "from-config");
    j["seeds"] = {0};
    j["trainer"]["epochs"] = 1;
    const fs::path cfg = write_config(dir, j);
    ::setenv(kEnvOutputDir, (dir / "from-env").c_str(), 1);
    ::setenv(kEnvJobs, "2", 1);
    CHECK(invoke({"train", "--config", cfg.string()}) == kExitOk);
    CHECK(invoke({"train", "--config", cfg.string(), "--out", (dir / "from-flag").string()}) == kExitOk);
    ::setenv(kEnvJobs, "many", 1);
    CHECK(invoke({"train", "--config", cfg.string()}) == kExitConfig);
    ::unsetenv(kEnvOutputDir);
    ::unsetenv(kEnvJobs);
    CHECK(fs::exists(dir / "from-env" / "summary.json"));
    CHECK(fs::exists(dir / "from-flag" / "summary.json"));
    CHECK_FALSE(fs::exists(dir / "from-config"));
}

TEST_CASE("a one-point sweep matches train") {
    const fs::path dir = fresh_dir("sweep1");
    json j = small_config(dir / "train");
    REQUIRE(invoke({"train", "--config", write_config(dir, j).string()}) == kExitOk);
    j["output_dir"] = (dir / "sweep").string();
    REQUIRE(invoke({"sweep", "--config", write_config(dir, j).string()}) == kExitOk);
    const json summary = json::parse(slurp(dir / "train" / "summary.json"));

    std::istringstream csv(slurp(dir / "sweep" / "sweep.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "point,seed,wT,bT,tau,muT,sigmaT,q1,q2,q3,best_epoch,best_val_map,test_map");
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE(std::getline(csv, line));
        std::vector<std::string> cells;
        std::stringstream row(line);
        for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
        REQUIRE(cells.size() == 13);
        const json& run = summary["runs"][i];
        CHECK(std::stoull(cells[1]) == run["seed"].get<std::uint64_t>());
        CHECK(std::stoi(cells[10]) == run["best_epoch"].get<int>());
        CHECK(std::stod(cells[11]) == run["best_val_map"].get<double>());
        CHECK(std::stod(cells[12]) == run["test_map"].get<double>());
    }
    CHECK_FALSE(std::getline(csv, line));
}

TEST_CASE("sweep grids: tau axis, mu by sigma grid, and the cap") {
    const fs::path dir = fresh_dir("sweep2");
    json j = small_config(dir / "tau");
    j["seeds"] = {0};
    j["trainer"]["epochs"] = 1;
    j["sweep"]["tau"] = {0.25, 0.5};
    j["sweep"]["bT"] = {-2.0};
    REQUIRE(invoke({"sweep", "--config", write_config(dir, j).string()}) == kExitOk);
    std::istringstream csv(slurp(dir / "tau" / "sweep.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<std::string> rows;
    while (std::getline(csv, line)) rows.push_back(line);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].find(",8,-2,0.25,") != std::string::npos);
    CHECK(rows[1].find(",4,-2,0.5,") != std::string::npos);

    json grid = small_config(dir / "grid");
    grid["seeds"] = {0};
    grid["sweep"]["muT"] = {0.2, 0.4, 0.6, 0.8, 1.0};
    grid["sweep"]["sigmaT"] = {0.1, 0.5, 1.0};
    grid["sweep"]["max_runs"] = 14;
    CHECK(invoke({"sweep", "--config", write_config(dir, grid).string()}) == kExitConfig);
    CHECK_FALSE(fs::exists(dir / "grid"));
    grid["sweep"]["max_runs"] = 15;
    grid["trainer"]["epochs"] = 1;
    REQUIRE(invoke({"sweep", "--config", write_config(dir, grid).string(), "--jobs", "4"}) == kExitOk);
    std::istringstream g(slurp(dir / "grid" / "sweep.csv"));
    std::size_t count = 0;
    for (std::getline(g, line); std::getline(g, line);) ++count;
    CHECK(count == 15);

    json an = small_config(dir / "an");
    an["method"]["id"] = "AN";
    an["sweep"]["q2"] = {0.5};
    CHECK(invoke({"sweep", "--config", write_config(dir, an).string()}) == kExitConfig);
}

TEST_CASE("analyze: curves need no checkpoint, model analyses do") {
    const fs::path dir = fresh_dir("analyze");
    json j = small_config(dir / "run");
    j["analyze"]["analyses"] = {"grad-curves"};
    REQUIRE(invoke({"analyze", "--config", write_config(dir, j).string()}) == kExitOk);
    CHECK(fs::exists(dir / "run" / "analysis" / "grad_curves.csv"));
    CHECK(fs::exists(dir / "run" / "analysis" / "grad_curves.json"));

    j["analyze"]["analyses"] = {"distinguishability", "fn-buckets"};
    const fs::path cfg = write_config(dir, j);
    CHECK(invoke({"analyze", "--config", cfg.string()}) == kExitMissingArtifact);

    REQUIRE(invoke({"train", "--config", cfg.string()}) == kExitOk);
    REQUIRE(invoke({"analyze", "--config", cfg.string()}) == kExitOk);
    for (int seed : {0, 1}) {
        const fs::path a = dir / "run" / ("seed-" + std::to_string(seed)) / "analysis";
        const json d = json::parse(slurp(a / "distinguishability-best.json"));
        CHECK(d["wasserstein"].get<double>() >= 0.0);
        CHECK(fs::exists(a / "distinguishability-best.csv"));
        const json fn = json::parse(slurp(a / "fn_buckets-best.json"));
        CHECK(fn["buckets"].is_array());
        CHECK(fn.contains("summary"));
        CHECK(fs::exists(a / "fn_buckets-best.csv"));
    }
    fs::remove(dir / "run" / "seed-1" / "checkpoint-final.csv");
    j["analyze"]["checkpoint"] = "final";
    CHECK(invoke({"analyze", "--config", write_config(dir, j).string()}) == kExitMissingArtifact);
}

TEST_CASE("sha256 of known inputs") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("shipped example configs parse") {
    std::size_t parsed = 0;
    for (const auto& entry : fs::directory_iterator(SPML_CONFIG_DIR)) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_config(entry.path()));
        ++parsed;
    }
    CHECK(parsed >= 10);
}
