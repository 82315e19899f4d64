#include "spml/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spml {

double sigmoid(double z) {
    if (!std::isfinite(z)) throw DomainError("sigmoid: non-finite logit");
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("logit: probability must lie in (0, 1), got " + std::to_string(p));
    }
    return std::log(p) - std::log1p(-p);
}

double clamp_probability(double p) noexcept {
    return std::clamp(p, kLogEpsilon, 1.0 - kLogEpsilon);
}

double safe_log(double p) noexcept { return std::log(clamp_probability(p)); }

void require_same_shape(std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2,
                        const char* what) {
    if (r1 != r2 || c1 != c2) {
        throw ShapeError(std::string(what) + ": shape " + std::to_string(r1) + "x" +
                         std::to_string(c1) + " vs " + std::to_string(r2) + "x" +
                         std::to_string(c2));
    }
}

Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

std::vector<double> row_sums(const Matrix& a) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        for (double v : a.row(i)) acc += v;
        out[i] = acc;
    }
    return out;
}

std::vector<double> col_sums(const Matrix& a) {
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, j);
        out[j] = acc;
    }
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed),
      stream_id_(stream_id),
      engine_(splitmix64(splitmix64(seed) ^ (stream_id * 0xd1b54a32d192ed03ULL + 1))) {}

double RngStream::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t RngStream::uniform_index(std::size_t n) {
    if (n == 0) throw RangeError("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

double normal_quantile(double u) {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("normal_quantile: argument must lie in (0, 1)");
    // Phi(x) = erfc(-x / sqrt 2) / 2 is increasing in x.
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
        (cdf < u ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace spml
