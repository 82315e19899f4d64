#include "spml/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace spml::data {

namespace {

constexpr std::uint64_t kHyperplaneStream = 0;
constexpr std::uint64_t kRowStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr int kMaxRowAttempts = 10000;

// Per-entry rate r whose rejection-resampled version (rows need one
// positive) has mean positive rate `target`, assuming independent classes:
// target = r / (1 - (1 - r)^C).
double base_rate_for(double target, std::size_t classes) {
    if (classes == 1) return target;
    const double c = static_cast<double>(classes);
    double lo = 0.0, hi = target;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double realized = mid / (1.0 - std::pow(1.0 - mid, c));
        (realized < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

double parse_double(std::string_view field, std::size_t line) {
    field = trim(field);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw ParseError("invalid number '" + std::string(field) + "'", line);
    }
    return v;
}

std::int8_t parse_binary(std::string_view field, std::size_t line) {
    field = trim(field);
    if (field == "0") return 0;
    if (field == "1") return 1;
    throw ParseError("label value must be 0 or 1, got '" + std::string(field) + "'", line);
}

// Counts a run of header columns named prefix0, prefix1, ... from `pos`.
std::size_t header_run(const std::vector<std::string_view>& header, std::size_t pos, char prefix) {
    std::size_t count = 0;
    while (pos + count < header.size() &&
           trim(header[pos + count]) == std::string(1, prefix) + std::to_string(count)) {
        ++count;
    }
    return count;
}

}  // namespace

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ParameterError("unknown split '" + name + "'");
}

void LabeledDataset::validate() const {
    const std::size_t n = features.rows();
    require_same_shape(truth, observed, "dataset labels");
    if (truth.rows() != n) throw ShapeError("dataset: feature and label row counts differ");
    for (std::size_t r = 0; r < n; ++r) {
        int positives = 0, observed_positives = 0;
        for (std::size_t c = 0; c < truth.cols(); ++c) {
            const int y = truth(r, c), s = observed(r, c);
            if ((y != 0 && y != 1) || (s != 0 && s != 1))
                throw ParameterError("dataset: labels must be binary (row " + std::to_string(r) + ")");
            positives += y;
            observed_positives += s;
            if (s > y) throw ParameterError("dataset: observed positive without ground truth (row " + std::to_string(r) + ")");
            if (split != Split::Train && s != y)
                throw ParameterError("dataset: evaluation splits must be fully labeled (row " + std::to_string(r) + ")");
        }
        if (positives == 0) throw ParameterError("dataset: row " + std::to_string(r) + " has no positive label");
        if (split == Split::Train && observed_positives != 1)
            throw ParameterError("dataset: train row " + std::to_string(r) + " must have exactly one observed positive");
    }
}

void SyntheticSpec::validate() const {
    if (num_instances < 1 || num_classes < 1 || num_features < 1)
        throw ParameterError("synthetic spec: N, C and d must all be >= 1");
    if (!(positive_rate > 0.0 && positive_rate < 1.0))
        throw ParameterError("synthetic spec: positive_rate must lie in (0, 1)");
    if (num_classes > 1 && positive_rate * static_cast<double>(num_classes) <= 1.0)
        throw ParameterError("synthetic spec: positive_rate * C must exceed 1 when every row needs a positive");
    if (!(weight_scale > 0.0)) throw ParameterError("synthetic spec: weight_scale must be > 0");
    if (!(latent_noise >= 0.0)) throw ParameterError("synthetic spec: latent_noise must be >= 0");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = {{"instances", s.num_instances}, {"classes", s.num_classes},
         {"features", s.num_features},   {"weight_scale", s.weight_scale},
         {"latent_noise", s.latent_noise}, {"positive_rate", s.positive_rate},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    SyntheticSpec d;
    s.num_instances = j.value("instances", d.num_instances);
    s.num_classes = j.value("classes", d.num_classes);
    s.num_features = j.value("features", d.num_features);
    s.weight_scale = j.value("weight_scale", d.weight_scale);
    s.latent_noise = j.value("latent_noise", d.latent_noise);
    s.positive_rate = j.value("positive_rate", d.positive_rate);
    s.seed = j.value("seed", d.seed);
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t n = spec.num_instances, classes = spec.num_classes, d = spec.num_features;

    RngStream plane_rng(spec.seed, kHyperplaneStream);
    Matrix planes(classes, d);
    std::vector<double> bias(classes);
    const double rate = base_rate_for(spec.positive_rate, classes);
    const double latent_sd = std::sqrt(spec.weight_scale * spec.weight_scale +
                                       spec.latent_noise * spec.latent_noise);
    for (std::size_t c = 0; c < classes; ++c) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            planes(c, j) = plane_rng.normal();
            norm2 += planes(c, j) * planes(c, j);
        }
        const double scale = spec.weight_scale / std::sqrt(norm2);
        for (std::size_t j = 0; j < d; ++j) planes(c, j) *= scale;
        bias[c] = rate >= 1.0 ? 1e300 : -latent_sd * normal_quantile(1.0 - rate);
    }

    LabeledDataset ds;
    ds.features = Matrix(n, d);
    ds.truth = LabelMatrix(n, classes);
    ds.split = Split::Test;
    RngStream row_rng(spec.seed, kRowStream);
    std::vector<double> x(d);
    for (std::size_t r = 0; r < n; ++r) {
        int attempts = 0;
        while (true) {
            if (++attempts > kMaxRowAttempts)
                throw ParameterError("synthetic spec: positive rate infeasible, no positive row after " +
                                     std::to_string(kMaxRowAttempts) + " draws");
            for (auto& v : x) v = row_rng.normal();
            int positives = 0;
            for (std::size_t c = 0; c < classes; ++c) {
                double u = bias[c];
                for (std::size_t j = 0; j < d; ++j) u += planes(c, j) * x[j];
                if (spec.latent_noise > 0.0) u += spec.latent_noise * row_rng.normal();
                ds.truth(r, c) = u > 0.0 ? 1 : 0;
                positives += ds.truth(r, c);
            }
            if (positives > 0) break;
        }
        for (std::size_t j = 0; j < d; ++j) ds.features(r, j) = x[j];
    }
    ds.observed = ds.truth;

    double total = 0.0;
    for (auto y : ds.truth.data()) total += y;
    const double realized = total / static_cast<double>(n * classes);
    // A single class is forced positive by the one-positive-per-row rule.
    if (classes > 1 && n >= 100 && std::abs(realized - spec.positive_rate) > 0.2 * spec.positive_rate) {
        throw ParameterError("synthetic spec: realized positive rate " + std::to_string(realized) +
                             " is more than 20% from target " + std::to_string(spec.positive_rate));
    }
    return ds;
}

namespace {

LabeledDataset slice_rows(const LabeledDataset& ds, std::size_t begin, std::size_t count, Split split) {
    LabeledDataset out;
    out.split = split;
    const std::size_t d = ds.num_features(), c = ds.num_classes();
    out.features = Matrix(count, d);
    out.truth = LabelMatrix(count, c);
    for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < d; ++j) out.features(r, j) = ds.features(begin + r, j);
        for (std::size_t k = 0; k < c; ++k) out.truth(r, k) = ds.truth(begin + r, k);
    }
    out.observed = out.truth;
    return out;
}

}  // namespace

DatasetSplits generate_splits(SyntheticSpec spec, const SplitSizes& sizes) {
    if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0)
        throw ParameterError("every split needs at least one instance");
    spec.num_instances = sizes.train + sizes.val + sizes.test;
    const LabeledDataset all = generate_synthetic(spec);
    DatasetSplits out{slice_rows(all, 0, sizes.train, Split::Train),
                      slice_rows(all, sizes.train, sizes.val, Split::Val),
                      slice_rows(all, sizes.train + sizes.val, sizes.test, Split::Test)};
    RngStream mask_rng(spec.seed, kMaskStream);
    out.train.observed = mask_single_positive(out.train.truth, mask_rng);
    out.train.scar_rate = scar_rate(out.train.truth, out.train.observed);
    return out;
}

LabelMatrix mask_single_positive(const LabelMatrix& truth, RngStream& rng) {
    LabelMatrix observed(truth.rows(), truth.cols(), 0);
    std::vector<std::size_t> positives;
    for (std::size_t r = 0; r < truth.rows(); ++r) {
        positives.clear();
        for (std::size_t c = 0; c < truth.cols(); ++c)
            if (truth(r, c) == 1) positives.push_back(c);
        if (positives.empty())
            throw ParameterError("mask_single_positive: row " + std::to_string(r) + " has no positive label");
        observed(r, positives[rng.uniform_index(positives.size())]) = 1;
    }
    return observed;
}

double scar_rate(const LabelMatrix& truth, const LabelMatrix& observed) {
    require_same_shape(truth, observed, "scar_rate");
    std::size_t labeled = 0, positives = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        positives += truth.data()[i] == 1;
        labeled += observed.data()[i] == 1;
    }
    if (positives == 0) throw DomainError("scar_rate: no positive labels");
    return static_cast<double>(labeled) / static_cast<double>(positives);
}

void to_json(nlohmann::json& j, const DatasetStats& s) {
    j = {{"instances", s.num_instances},
         {"classes", s.num_classes},
         {"positives_per_class", s.positives_per_class},
         {"positives_per_instance", s.positives_per_instance},
         {"missing_positives", s.missing_positives},
         {"missing_labels", s.missing_labels},
         {"k0_estimate", s.k0_estimate},
         {"scar_a", s.scar_a}};
}

DatasetStats dataset_stats(const LabeledDataset& ds) {
    require_same_shape(ds.truth, ds.observed, "dataset_stats");
    DatasetStats st;
    st.num_instances = ds.truth.rows();
    st.num_classes = ds.truth.cols();
    st.positives_per_class.assign(st.num_classes, 0);
    std::size_t positives = 0, labeled = 0;
    for (std::size_t r = 0; r < ds.truth.rows(); ++r) {
        for (std::size_t c = 0; c < ds.truth.cols(); ++c) {
            const int y = ds.truth(r, c), s = ds.observed(r, c);
            st.positives_per_class[c] += y == 1;
            positives += y == 1;
            labeled += s == 1;
            if (s == 0) {
                ++st.missing_labels;
                st.missing_positives += y == 1;
            }
        }
    }
    if (st.num_instances > 0)
        st.positives_per_instance = static_cast<double>(positives) / static_cast<double>(st.num_instances);
    if (st.missing_labels > 0)
        st.k0_estimate = static_cast<double>(st.missing_positives) / static_cast<double>(st.missing_labels);
    if (positives > 0) st.scar_a = static_cast<double>(labeled) / static_cast<double>(positives);
    return st;
}

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
    require_same_shape(ds.truth, ds.observed, "save_csv");
    std::string out;
    const std::size_t d = ds.num_features(), c = ds.num_classes();
    for (std::size_t j = 0; j < d; ++j) out += "f" + std::to_string(j) + ",";
    for (std::size_t k = 0; k < c; ++k) out += "y" + std::to_string(k) + ",";
    for (std::size_t k = 0; k < c; ++k) out += "s" + std::to_string(k) + (k + 1 < c ? "," : "");
    out += '\n';
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            append_double(out, ds.features(r, j));
            out += ',';
        }
        for (std::size_t k = 0; k < c; ++k) {
            out += ds.truth(r, k) ? '1' : '0';
            out += ',';
        }
        for (std::size_t k = 0; k < c; ++k) {
            out += ds.observed(r, k) ? '1' : '0';
            if (k + 1 < c) out += ',';
        }
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << out;
}

LabeledDataset load_csv(const std::filesystem::path& path, Split split) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || trim(line).empty()) throw ParseError("empty file, header required", 1);

    const auto header = split_fields(trim(line));
    const std::size_t d = header_run(header, 0, 'f');
    const std::size_t c = header_run(header, d, 'y');
    const std::size_t c_obs = header_run(header, d + c, 's');
    if (c == 0) throw ParseError("header declares no ground-truth columns y0..", 1);
    if (c_obs != c) throw ParseError("header declares " + std::to_string(c) + " ground-truth columns but " +
                                     std::to_string(c_obs) + " observed columns", 1);
    if (header.size() != d + 2 * c) throw ParseError("unexpected extra header columns", 1);

    std::vector<double> x;
    std::vector<std::int8_t> y, s;
    std::size_t line_no = 1, rows = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto row = trim(line);
        if (row.empty()) continue;
        const auto fields = split_fields(row);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                             std::to_string(fields.size()), line_no);
        for (std::size_t j = 0; j < d; ++j) x.push_back(parse_double(fields[j], line_no));
        for (std::size_t k = 0; k < c; ++k) y.push_back(parse_binary(fields[d + k], line_no));
        for (std::size_t k = 0; k < c; ++k) s.push_back(parse_binary(fields[d + c + k], line_no));
        ++rows;
    }
    if (rows == 0) throw ParseError("no data rows", line_no);
    LabeledDataset ds;
    ds.features = Matrix(rows, d, std::move(x));
    ds.truth = LabelMatrix(rows, c, std::move(y));
    ds.observed = LabelMatrix(rows, c, std::move(s));
    ds.split = split;
    return ds;
}

}  // namespace spml::data
