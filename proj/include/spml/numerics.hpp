#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spml/errors.hpp"

namespace spml {

// Lower clamp used wherever a probability enters a logarithm.
inline constexpr double kLogEpsilon = 1e-12;

// Numerically stable logistic function. Throws DomainError on NaN/inf.
double sigmoid(double z);

// Inverse of sigmoid; p must lie strictly inside (0, 1).
double logit(double p);

// Clamp to [kLogEpsilon, 1 - kLogEpsilon]. Only for log-taking call sites.
double clamp_probability(double p) noexcept;

// log(p) with p clamped; -log terms of BCE-style losses go through here.
double safe_log(double p) noexcept;

// Row-major dense matrix. Summation order in every reduction is fixed
// left-to-right so results are bit-stable between runs.
template <typename T>
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = DenseMatrix<double>;
// Binary label matrices (0/1); signed so relabeling passes can store -1.
using LabelMatrix = DenseMatrix<std::int8_t>;

Matrix identity(std::size_t n);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
std::vector<double> row_sums(const Matrix& a);
std::vector<double> col_sums(const Matrix& a);

template <typename F>
Matrix map(const Matrix& a, F&& f) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
    return out;
}

void require_same_shape(std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2,
                        const char* what);

template <typename A, typename B>
void require_same_shape(const DenseMatrix<A>& a, const DenseMatrix<B>& b, const char* what) {
    require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), what);
}

// Deterministic random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions below are written out
// here because the standard library ones are implementation-defined.
class RngStream {
public:
    // Bump when any draw routine changes; recorded in run manifests.
    static constexpr int kAlgorithmVersion = 1;

    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n), unbiased.
    std::size_t uniform_index(std::size_t n);
    // Standard normal (Marsaglia polar method).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Inverse of the standard normal CDF on (0, 1), by bisection on erfc.
double normal_quantile(double u);

}  // namespace spml
