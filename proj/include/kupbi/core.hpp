#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kupbi {

/**
 * @brief Dense row-major matrix of doubles.
 *
 * Rows index time steps, columns index channels throughout the toolkit.
 * Storage is a single contiguous buffer so channel values of one time step
 * are adjacent; row(t) exposes the raw pointer for tight loops.
 */
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    }

    double& operator()(int t, int c) { return data[static_cast<size_t>(t) * cols + c]; }
    double operator()(int t, int c) const { return data[static_cast<size_t>(t) * cols + c]; }

    double* row(int t) { return data.data() + static_cast<size_t>(t) * cols; }
    const double* row(int t) const { return data.data() + static_cast<size_t>(t) * cols; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// Bitwise equality (distinguishes -0.0 from +0.0 and NaN payloads).
inline bool bit_equal(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols) + ")");
}

/// Maximum absolute elementwise difference.
inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

/// Mean of one column (population convention is used for all moments here).
inline double column_mean(const Matrix& m, int c) {
    double s = 0.0;
    for (int t = 0; t < m.rows; ++t) s += m(t, c);
    return s / m.rows;
}

/// Population standard deviation of one column (divides by N, not N-1).
inline double column_std(const Matrix& m, int c, double mean) {
    double s = 0.0;
    for (int t = 0; t < m.rows; ++t) {
        const double d = m(t, c) - mean;
        s += d * d;
    }
    return std::sqrt(s / m.rows);
}

/**
 * @brief Dot product with four independent accumulators.
 *
 * The fixed four-way split keeps results bit-reproducible run to run while
 * breaking the FMA latency chain that makes a single-accumulator loop ~4x
 * slower on long vectors.  Used by the retrieval scan and the linear layers.
 */
inline double dot(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

/// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64-bit) for config hashes and library fingerprints.
// ---------------------------------------------------------------------------

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a_str(const std::string& s, uint64_t h = kFnvOffset) { return fnv1a(s.data(), s.size(), h); }

inline uint64_t fnv1a_u64(uint64_t v, uint64_t h = kFnvOffset) { return fnv1a(&v, sizeof(v), h); }

inline uint64_t fnv1a_double(double v, uint64_t h = kFnvOffset) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    return fnv1a(&bits, sizeof(bits), h);
}

inline uint64_t fnv1a_doubles(const std::vector<double>& v, uint64_t h = kFnvOffset) {
    return fnv1a(v.data(), v.size() * sizeof(double), h);
}

/// splitmix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// mt19937_64's output sequence is fully specified by the standard; the
// distribution mappings below are fixed here because the standard library's
// distribution objects are implementation-defined and would break
// bit-reproducibility across toolchains.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n).  Modulo mapping: bias is negligible for the
    /// small n used here and the mapping is fixed for reproducibility.
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::bounded: n must be positive");
        return gen_() % n;
    }

    /// Fisher-Yates shuffle with the fixed bounded() mapping.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

inline bool nearly_equal(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

}  // namespace kupbi
