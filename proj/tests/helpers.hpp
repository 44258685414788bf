#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>

#include "kupbi/pipeline.hpp"

namespace testutil {

/// Unique scratch directory under the system temp dir.
inline std::filesystem::path fresh_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto p = std::filesystem::temp_directory_path() /
                   ("kupbi_test_" + tag + "_" + std::to_string(counter.fetch_add(1)) + "_" +
                    std::to_string(static_cast<unsigned long>(
                        std::hash<std::string>{}(std::filesystem::current_path().string()) & 0xffff)));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline kupbi::Matrix random_matrix(int rows, int cols, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    kupbi::Rng rng(kupbi::mix64(seed));
    kupbi::Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

/// Smooth multichannel series: per-channel sinusoid + mild trend + noise.
inline kupbi::Matrix synth_series(int rows, int cols, uint64_t seed, double noise = 0.1) {
    kupbi::Rng rng(kupbi::mix64(seed));
    std::vector<double> phase(cols), freq(cols), slope(cols);
    for (int c = 0; c < cols; ++c) {
        phase[c] = rng.uniform(0.0, 6.283185307179586);
        freq[c] = rng.uniform(0.05, 0.5);
        slope[c] = rng.uniform(-0.002, 0.002);
    }
    kupbi::Matrix m(rows, cols);
    for (int t = 0; t < rows; ++t)
        for (int c = 0; c < cols; ++c)
            m(t, c) = std::sin(freq[c] * t + phase[c]) + slope[c] * t + noise * rng.uniform(-1.0, 1.0);
    return m;
}

/**
 * @brief Series of randomly ordered fixed motifs: within a block the future
 * is determined by the recent past, across block boundaries it is not unless
 * the continuation is retrieved from similar history.
 */
inline kupbi::Matrix motif_series(int rows, int cols, int block, int n_motifs, uint64_t seed, double noise = 0.0) {
    kupbi::Rng rng(kupbi::mix64(seed ^ 0xabcdef12ull));
    std::vector<kupbi::Matrix> motifs;
    motifs.reserve(n_motifs);
    for (int m = 0; m < n_motifs; ++m) {
        kupbi::Matrix mm(block, cols);
        for (double& v : mm.data) v = rng.uniform(-1.0, 1.0);
        motifs.push_back(std::move(mm));
    }
    kupbi::Matrix out(rows, cols);
    // Choose the motif sequence up front so every row lookup is O(1).
    const int blocks = (rows + block - 1) / block;
    std::vector<int> seq(blocks);
    for (int b = 0; b < blocks; ++b) seq[b] = static_cast<int>(rng.bounded(static_cast<uint64_t>(n_motifs)));
    for (int t = 0; t < rows; ++t) {
        const kupbi::Matrix& mm = motifs[seq[t / block]];
        for (int c = 0; c < cols; ++c) out(t, c) = mm(t % block, c) + (noise > 0 ? noise * rng.uniform(-1.0, 1.0) : 0.0);
    }
    return out;
}

/// Write a Matrix as a CSV with a leading timestamp-like column.
inline void write_csv(const std::filesystem::path& path, const kupbi::Matrix& m) {
    std::ofstream out(path);
    out << "date";
    for (int c = 0; c < m.cols; ++c) out << ",ch" << c;
    out << "\n";
    out.precision(17);
    for (int t = 0; t < m.rows; ++t) {
        out << "t" << t;
        for (int c = 0; c < m.cols; ++c) out << "," << m(t, c);
        out << "\n";
    }
}

/// Textbook two-pass Pearson correlation; 0 on degenerate variance.
inline double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

/// Hand-rolled reference retrieval: offset both windows, per-channel Pearson,
/// clamp negatives to zero, sort by (corr desc, index asc), keep k.
inline kupbi::CandidateSet reference_search(const kupbi::Matrix& X, const kupbi::RetrievalLibrary& lib,
                                            const kupbi::RetrievalConfig& cfg,
                                            std::optional<long> query_start = {}) {
    using namespace kupbi;
    const Matrix q = offset_last_step(X);
    CandidateSet out;
    out.per_channel.resize(lib.C);
    for (int c = 0; c < lib.C; ++c) {
        std::vector<Candidate> scored;
        for (int j = 0; j < static_cast<int>(lib.entries.size()); ++j) {
            if (cfg.exclude_self_window && query_start && cfg.exclusion_radius > 0 &&
                std::labs(lib.entries[j].source_start - *query_start) < cfg.exclusion_radius)
                continue;
            std::vector<double> a(lib.L), b(lib.L);
            for (int t = 0; t < lib.L; ++t) {
                a[t] = q(t, c);
                b[t] = lib.entries[j].key(t, c);
            }
            double corr = naive_pearson(a, b);
            if (corr < 0.0) corr = 0.0;
            if (corr > 1.0) corr = 1.0;
            scored.push_back({j, corr});
        }
        std::stable_sort(scored.begin(), scored.end(), [](const Candidate& x, const Candidate& y) {
            if (x.corr != y.corr) return x.corr > y.corr;
            return x.index < y.index;
        });
        const size_t kk = std::min<size_t>(static_cast<size_t>(cfg.k), scored.size());
        out.per_channel[c].assign(scored.begin(), scored.begin() + kk);
    }
    return out;
}

/// Chains cut straight from a random series (for library-level tests).
inline std::vector<kupbi::Chain> random_chains(int n, int L, int T, int C, uint64_t seed, long start0 = 0,
                                               long stride = 1) {
    std::vector<kupbi::Chain> chains;
    chains.reserve(n);
    for (int i = 0; i < n; ++i) {
        kupbi::Chain ch;
        ch.H = random_matrix(L, C, seed + 3 * i);
        ch.Y = random_matrix(T, C, seed + 3 * i + 1);
        ch.F = random_matrix(L, C, seed + 3 * i + 2);
        ch.start_index = start0 + i * stride;
        chains.push_back(std::move(ch));
    }
    return chains;
}

}  // namespace testutil
