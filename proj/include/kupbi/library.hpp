#pragma once

#include <fstream>

#include "kupbi/dataset.hpp"

namespace kupbi {

/// How a library entry's value matrix encodes the continuation.
enum class DescriptorKind : uint32_t { kRatio = 0, kResidual = 1 };

inline const char* to_string(DescriptorKind k) { return k == DescriptorKind::kRatio ? "ratio" : "residual"; }

/**
 * @brief Elementwise continuation ratio R = (F - H) / (H + eps * sign(H)).
 *
 * sign(0) is taken as +1 so the denominator is never closer to zero than eps;
 * the result is finite for every finite input.
 */
inline Matrix ratio(const Matrix& H, const Matrix& F, double epsilon) {
    require_same_shape(H, F, "ratio");
    if (epsilon <= 0) throw std::invalid_argument("ratio: epsilon must be positive");
    Matrix R(H.rows, H.cols);
    for (size_t i = 0; i < H.data.size(); ++i) {
        const double h = H.data[i];
        const double denom = h + (h < 0 ? -epsilon : epsilon);
        R.data[i] = (F.data[i] - h) / denom;
    }
    return R;
}

/// Residual descriptor R = F - H (the ratio-free variant).
inline Matrix residual_descriptor(const Matrix& H, const Matrix& F) {
    require_same_shape(H, F, "residual_descriptor");
    Matrix R(H.rows, H.cols);
    for (size_t i = 0; i < H.data.size(); ++i) R.data[i] = F.data[i] - H.data[i];
    return R;
}

/**
 * @brief Anchor a window at its final step: out[t,:] = W[t,:] - W[L-1,:].
 *
 * The last row becomes exactly zero; applying the offset twice is a no-op.
 * Retrieval keys and queries are offset this way so correlation compares
 * shapes relative to the most recent value.
 */
inline Matrix offset_last_step(const Matrix& W) {
    if (W.rows == 0) throw std::invalid_argument("offset_last_step: empty window");
    Matrix out(W.rows, W.cols);
    const double* lastrow = W.row(W.rows - 1);
    for (int t = 0; t < W.rows; ++t)
        for (int c = 0; c < W.cols; ++c) out(t, c) = W(t, c) - lastrow[c];
    return out;
}

/**
 * @brief One stored pair: offset-anchored history key plus the continuation
 * descriptor computed from the same chain.
 */
struct LibraryEntry {
    Matrix key;    // offset_last_step(H), [LxC]
    Matrix value;  // descriptor R, [LxC]
    long source_start = 0;
};

/**
 * @brief Train-only retrieval library.
 *
 * Entries are ordered by source_start.  The fingerprint hashes the source
 * chains and the build parameters, so rebuilding from identical inputs gives
 * an identical fingerprint and reports can verify which library produced them.
 */
struct RetrievalLibrary {
    std::vector<LibraryEntry> entries;
    int L = 0;
    int C = 0;
    double epsilon = 1e-4;
    DescriptorKind descriptor = DescriptorKind::kRatio;
    uint64_t fingerprint = 0;

    size_t size() const { return entries.size(); }
};

inline RetrievalLibrary build_library(const std::vector<Chain>& chains, double epsilon,
                                      DescriptorKind kind = DescriptorKind::kRatio) {
    if (chains.empty()) throw std::invalid_argument("build_library: no chains");
    RetrievalLibrary lib;
    lib.L = chains.front().H.rows;
    lib.C = chains.front().H.cols;
    lib.epsilon = epsilon;
    lib.descriptor = kind;

    uint64_t h = kFnvOffset;
    h = fnv1a_u64(static_cast<uint64_t>(lib.L), h);
    h = fnv1a_u64(static_cast<uint64_t>(lib.C), h);
    h = fnv1a_u64(static_cast<uint64_t>(chains.size()), h);
    h = fnv1a_double(epsilon, h);
    h = fnv1a_u64(static_cast<uint64_t>(kind), h);

    lib.entries.reserve(chains.size());
    for (const Chain& ch : chains) {
        if (ch.H.rows != lib.L || ch.H.cols != lib.C)
            throw std::invalid_argument("build_library: inconsistent chain shapes");
        LibraryEntry e;
        e.key = offset_last_step(ch.H);
        e.value = (kind == DescriptorKind::kRatio) ? ratio(ch.H, ch.F, epsilon) : residual_descriptor(ch.H, ch.F);
        e.source_start = ch.start_index;
        h = fnv1a_doubles(ch.H.data, h);
        h = fnv1a_doubles(ch.F.data, h);
        h = fnv1a_u64(static_cast<uint64_t>(ch.start_index), h);
        lib.entries.push_back(std::move(e));
    }
    std::stable_sort(lib.entries.begin(), lib.entries.end(),
                     [](const LibraryEntry& a, const LibraryEntry& b) { return a.source_start < b.source_start; });
    lib.fingerprint = h;
    return lib;
}

// ---------------------------------------------------------------------------
// Binary serialization
//
// Layout: header {magic "KUPBILIB", version u32, L u32, C u32, N u64,
// epsilon f64, descriptor u32, fingerprint u64}, then per entry
// {source_start i64, key doubles row-major, value doubles row-major}.
// Round-trips are bit-exact.
// ---------------------------------------------------------------------------

constexpr char kLibraryMagic[8] = {'K', 'U', 'P', 'B', 'I', 'L', 'I', 'B'};
constexpr uint32_t kLibraryVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const char* what) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error(std::string("library file truncated while reading ") + what);
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& in, std::vector<double>& v, const char* what) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error(std::string("library file truncated while reading ") + what);
}

}  // namespace detail

inline void save_library(const RetrievalLibrary& lib, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("save_library: cannot open for write: " + path);
    out.write(kLibraryMagic, sizeof(kLibraryMagic));
    detail::write_pod(out, kLibraryVersion);
    detail::write_pod(out, static_cast<uint32_t>(lib.L));
    detail::write_pod(out, static_cast<uint32_t>(lib.C));
    detail::write_pod(out, static_cast<uint64_t>(lib.entries.size()));
    detail::write_pod(out, lib.epsilon);
    detail::write_pod(out, static_cast<uint32_t>(lib.descriptor));
    detail::write_pod(out, lib.fingerprint);
    for (const LibraryEntry& e : lib.entries) {
        detail::write_pod(out, static_cast<int64_t>(e.source_start));
        detail::write_doubles(out, e.key.data);
        detail::write_doubles(out, e.value.data);
    }
    if (!out) throw std::runtime_error("save_library: write failed: " + path);
}

inline RetrievalLibrary load_library(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("load_library: cannot open: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kLibraryMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_library: not a retrieval library file (bad magic): " + path);

    uint32_t version;
    detail::read_pod(in, version, "version");
    if (version != kLibraryVersion)
        throw std::runtime_error("load_library: unsupported version " + std::to_string(version) + " in " + path);

    RetrievalLibrary lib;
    uint32_t L, C, kind;
    uint64_t n;
    detail::read_pod(in, L, "L");
    detail::read_pod(in, C, "C");
    detail::read_pod(in, n, "entry count");
    detail::read_pod(in, lib.epsilon, "epsilon");
    detail::read_pod(in, kind, "descriptor kind");
    detail::read_pod(in, lib.fingerprint, "fingerprint");
    if (L == 0 || C == 0 || kind > 1) throw std::runtime_error("load_library: corrupt header in " + path);
    lib.L = static_cast<int>(L);
    lib.C = static_cast<int>(C);
    lib.descriptor = static_cast<DescriptorKind>(kind);

    lib.entries.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        LibraryEntry& e = lib.entries[i];
        int64_t s;
        detail::read_pod(in, s, "entry source_start");
        e.source_start = static_cast<long>(s);
        e.key = Matrix(lib.L, lib.C);
        e.value = Matrix(lib.L, lib.C);
        detail::read_doubles(in, e.key.data, "entry key");
        detail::read_doubles(in, e.value.data, "entry value");
    }
    return lib;
}

}  // namespace kupbi
