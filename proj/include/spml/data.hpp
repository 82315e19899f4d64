#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spml/numerics.hpp"

namespace spml::data {

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split parse_split(const std::string& name);

// Features X (N x d), ground truth Y and observed labels S (N x C).
// Train splits carry exactly one observed positive per row with S <= Y;
// evaluation splits are fully labeled (S == Y).
struct LabeledDataset {
    Matrix features;
    LabelMatrix truth;
    LabelMatrix observed;
    Split split = Split::Train;
    std::optional<double> scar_rate;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t num_features() const noexcept { return features.cols(); }
    std::size_t num_classes() const noexcept { return truth.cols(); }

    // Throws ShapeError / ParameterError naming the violated invariant.
    void validate() const;
};

struct SyntheticSpec {
    std::size_t num_instances = 1000;
    std::size_t num_classes = 10;
    std::size_t num_features = 20;
    // Norm of each class hyperplane relative to the unit-variance latent noise;
    // larger means cleaner labels.
    double weight_scale = 3.0;
    // Latent noise standard deviation; 0 gives deterministic hyperplane labels.
    double latent_noise = 1.0;
    // Target fraction of positive entries in Y.
    double positive_rate = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SyntheticSpec&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

// Fully labeled dataset (S = Y) tagged as a test split. Rows with no
// positive are redrawn, so N is exact.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

struct SplitSizes {
    std::size_t train = 2000;
    std::size_t val = 500;
    std::size_t test = 500;
};

struct DatasetSplits {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

// One synthetic population cut into train/val/test; the train split is
// masked to a single observed positive per row.
DatasetSplits generate_splits(SyntheticSpec spec, const SplitSizes& sizes);

// Keeps one positive per row, uniformly among that row's positives.
LabelMatrix mask_single_positive(const LabelMatrix& truth, RngStream& rng);

// #{s = 1} / #{y = 1}.
double scar_rate(const LabelMatrix& truth, const LabelMatrix& observed);

struct DatasetStats {
    std::size_t num_instances = 0;
    std::size_t num_classes = 0;
    std::vector<std::size_t> positives_per_class;
    double positives_per_instance = 0.0;
    std::size_t missing_positives = 0;  // #{y = 1, s = 0}
    std::size_t missing_labels = 0;     // #{s = 0}
    double k0_estimate = 0.0;            // missing_positives / missing_labels
    double scar_a = 0.0;
};

void to_json(nlohmann::json& j, const DatasetStats& s);

DatasetStats dataset_stats(const LabeledDataset& ds);

// CSV with header f0..f{d-1},y0..y{C-1},s0..s{C-1}. Doubles are written in
// shortest round-trip form.
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_csv(const std::filesystem::path& path, Split split = Split::Train);

}  // namespace spml::data
