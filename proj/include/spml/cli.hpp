#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spml/adapters.hpp"
#include "spml/data.hpp"
#include "spml/gr_loss.hpp"
#include "spml/trainer.hpp"

namespace spml::cli {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingArtifact = 3;

// Environment overrides; nothing else is read from the environment.
inline constexpr const char* kEnvOutputDir = "SPML_OUTPUT_DIR";
inline constexpr const char* kEnvJobs = "SPML_JOBS";

struct DatasetConfig {
    enum class Source { Synthetic, Csv };
    Source source = Source::Synthetic;
    data::SyntheticSpec synthetic;  // instances is ignored; sizes come from splits
    data::SplitSizes splits;
    std::filesystem::path train_csv, val_csv, test_csv;

    bool operator==(const DatasetConfig& o) const;
};

// Anchors of the four linear schedules plus the robust exponents. An absent
// b0 is derived as logit(k0); an absent k0 is estimated from the train split.
struct GrAnchors {
    double w0 = 0.0;
    std::optional<double> b0;
    std::optional<double> k0;
    double wT = 2.0, bT = -2.0;
    std::optional<double> mu0;  // defaults to muT
    double sigma0 = 10.0;
    double muT = 0.8, sigmaT = 0.5;
    gr::RobustParams robust;

    bool operator==(const GrAnchors&) const = default;
};

struct SweepGrid {
    std::vector<double> wT, bT, tau, muT, sigmaT, q2, q3;
    std::size_t max_runs = 512;

    bool empty() const;
    bool operator==(const SweepGrid&) const = default;
};

enum class Checkpoint { Initial, Best, Final };

struct AnalyzeConfig {
    std::vector<std::string> analyses{"distinguishability", "fn-buckets", "grad-curves"};
    Checkpoint checkpoint = Checkpoint::Best;
    std::optional<std::filesystem::path> run_dir;  // defaults to output_dir
    double grid_step = 0.01;

    bool operator==(const AnalyzeConfig&) const = default;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    adapters::Method method = adapters::Method::GR;
    adapters::MethodHyper hyper;
    GrAnchors gr;
    gr::Components ablation;
    train::TrainerConfig trainer;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "runs";
    std::size_t jobs = 1;
    SweepGrid sweep;
    AnalyzeConfig analyze;

    bool operator==(const ExperimentConfig&) const;
};

// Strict parse: every schema violation is collected and reported together
// in one ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical form with every field present.
nlohmann::json to_json(const ExperimentConfig& c);

std::string checkpoint_name(Checkpoint c);

// GR schedules for a run on `train_set` (which supplies k0 when unset).
gr::GrLossParams resolve_gr(const GrAnchors& anchors, const gr::Components& ablation, int horizon,
                            const data::LabeledDataset& train_set);

data::DatasetSplits load_dataset(const DatasetConfig& config);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);

// Entry point shared by the executable and the tests. Returns the exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace spml::cli
