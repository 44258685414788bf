#pragma once

#include <map>
#include <thread>

#include "kupbi/library.hpp"

namespace kupbi {

/**
 * @brief Pearson correlation of two equal-length vectors.
 *
 * Returns 0 when either vector has zero variance (the degenerate-case
 * convention used throughout retrieval); otherwise the result is clamped to
 * [-1, 1] against last-ulp rounding spill.
 */
inline double pearson(const double* a, const double* b, int n) {
    if (n <= 0) throw std::invalid_argument("pearson: empty vectors");
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (int i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    const double r = sab / std::sqrt(saa * sbb);
    return std::clamp(r, -1.0, 1.0);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
    return pearson(a.data(), b.data(), static_cast<int>(a.size()));
}

/**
 * @brief Search controls.
 *
 * Self-window exclusion applies when a query start index is supplied: entries
 * with |source_start - query_start| < exclusion_radius are skipped.  Radius
 * L+T removes every chain whose history or continuation overlaps the query's
 * own target, which is the leakage a train-only library must avoid for
 * train-time queries; radius 0 disables the filter even when the flag is on.
 */
struct RetrievalConfig {
    int k = 1;
    bool exclude_self_window = true;
    long exclusion_radius = 0;
};

struct Candidate {
    int index = 0;      // entry position in the library
    double corr = 0.0;  // clamped correlation, in [0, 1]
};

/**
 * @brief Per-channel top-k retrieval result for one query window.
 *
 * Each channel list is sorted by correlation descending, ties broken by the
 * smaller entry index.  Negative correlations are clamped to zero before
 * ranking, and zero-correlation entries are retained so the list always has
 * min(k, candidates) members.
 */
struct CandidateSet {
    std::vector<std::vector<Candidate>> per_channel;

    int channels() const { return static_cast<int>(per_channel.size()); }
};

/**
 * @brief Precomputed search structure over one library.
 *
 * For each entry and channel the offset-anchored key column is centred and
 * scaled to unit norm, so Pearson correlation against a query column reduces
 * to a dot product with the query column prepared the same way.  Channel
 * columns are stored contiguously ([channel][entry][time]) to stream well.
 * Zero-variance columns are stored as zeros, reproducing the "correlation 0"
 * convention.
 */
class SearchIndex {
public:
    explicit SearchIndex(const RetrievalLibrary& lib) : lib_(&lib), L_(lib.L), C_(lib.C), n_(static_cast<int>(lib.size())) {
        if (lib.entries.empty()) throw std::invalid_argument("SearchIndex: empty library");
        norm_keys_.assign(static_cast<size_t>(C_) * n_ * L_, 0.0);
        starts_.resize(n_);
        std::vector<double> col(L_);
        for (int j = 0; j < n_; ++j) {
            const LibraryEntry& e = lib.entries[j];
            starts_[j] = e.source_start;
            for (int c = 0; c < C_; ++c) {
                for (int t = 0; t < L_; ++t) col[t] = e.key(t, c);
                normalize_column(col);
                double* dst = slot(c, j);
                std::copy(col.begin(), col.end(), dst);
            }
        }
    }

    const RetrievalLibrary& library() const { return *lib_; }

    /**
     * @brief Top-k per-channel candidates for one query window [LxC].
     *
     * @param query_start global start row of the query, enabling self-window
     *        exclusion; pass std::nullopt for queries outside the library's
     *        source partition (validation/test), where no leakage is possible.
     */
    CandidateSet search(const Matrix& X, const RetrievalConfig& cfg, std::optional<long> query_start = {}) const {
        if (X.rows != L_ || X.cols != C_)
            throw std::invalid_argument("search: query shape " + std::to_string(X.rows) + "x" + std::to_string(X.cols) +
                                        " does not match library " + std::to_string(L_) + "x" + std::to_string(C_));
        if (cfg.k < 1) throw std::invalid_argument("search: k must be >= 1");
        if (cfg.exclusion_radius < 0) throw std::invalid_argument("search: exclusion_radius must be >= 0");

        const Matrix Xo = offset_last_step(X);
        const bool excluding = cfg.exclude_self_window && query_start.has_value() && cfg.exclusion_radius > 0;

        CandidateSet out;
        out.per_channel.resize(C_);
        std::vector<double> qcol(L_);
        std::vector<Candidate> scored;
        scored.reserve(n_);
        for (int c = 0; c < C_; ++c) {
            for (int t = 0; t < L_; ++t) qcol[t] = Xo(t, c);
            normalize_column(qcol);
            scored.clear();
            for (int j = 0; j < n_; ++j) {
                if (excluding && std::labs(starts_[j] - *query_start) < cfg.exclusion_radius) continue;
                double r = dot(qcol.data(), slot(c, j), L_);
                r = std::clamp(r, -1.0, 1.0);
                scored.push_back({j, r < 0.0 ? 0.0 : r});
            }
            const int kk = std::min<int>(cfg.k, static_cast<int>(scored.size()));
            std::partial_sort(scored.begin(), scored.begin() + kk, scored.end(), [](const Candidate& a, const Candidate& b) {
                if (a.corr != b.corr) return a.corr > b.corr;
                return a.index < b.index;
            });
            out.per_channel[c].assign(scored.begin(), scored.begin() + kk);
        }
        return out;
    }

    /// Entry indices passing the exclusion filter for one query position.
    std::vector<int> allowed_indices(const RetrievalConfig& cfg, std::optional<long> query_start) const {
        const bool excluding = cfg.exclude_self_window && query_start.has_value() && cfg.exclusion_radius > 0;
        std::vector<int> idx;
        idx.reserve(n_);
        for (int j = 0; j < n_; ++j) {
            if (excluding && std::labs(starts_[j] - *query_start) < cfg.exclusion_radius) continue;
            idx.push_back(j);
        }
        return idx;
    }

private:
    static void normalize_column(std::vector<double>& col) {
        double mean = 0.0;
        for (double v : col) mean += v;
        mean /= static_cast<double>(col.size());
        double ss = 0.0;
        for (double& v : col) {
            v -= mean;
            ss += v * v;
        }
        if (ss == 0.0) {
            std::fill(col.begin(), col.end(), 0.0);
            return;
        }
        const double inv = 1.0 / std::sqrt(ss);
        for (double& v : col) v *= inv;
    }

    double* slot(int c, int j) { return norm_keys_.data() + (static_cast<size_t>(c) * n_ + j) * L_; }
    const double* slot(int c, int j) const { return norm_keys_.data() + (static_cast<size_t>(c) * n_ + j) * L_; }

    const RetrievalLibrary* lib_;
    int L_, C_, n_;
    std::vector<double> norm_keys_;
    std::vector<long> starts_;
};

/// Convenience single-shot search; builds a throwaway index.
inline CandidateSet search(const Matrix& X, const RetrievalLibrary& lib, const RetrievalConfig& cfg,
                           std::optional<long> query_start = {}) {
    return SearchIndex(lib).search(X, cfg, query_start);
}

/// First k candidates of a larger list (lists are sorted best-first).
inline CandidateSet truncate_candidates(const CandidateSet& full, int k) {
    CandidateSet out;
    out.per_channel.resize(full.per_channel.size());
    for (size_t c = 0; c < full.per_channel.size(); ++c) {
        const auto& list = full.per_channel[c];
        const size_t kk = std::min<size_t>(static_cast<size_t>(k), list.size());
        out.per_channel[c].assign(list.begin(), list.begin() + kk);
    }
    return out;
}

/**
 * @brief Batch candidate computation for many query windows.
 *
 * Results are keyed by window start index and independent per query, so the
 * map is identical for any thread count.  @p use_exclusion should be true
 * only for windows drawn from the library's own source partition.
 */
inline std::map<long, CandidateSet> precompute_candidates(const std::vector<QueryWindow>& queries,
                                                          const SearchIndex& index, const RetrievalConfig& cfg,
                                                          bool use_exclusion, int threads = 1) {
    std::vector<CandidateSet> results(queries.size());
    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(queries.size())));
    auto worker = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            std::optional<long> qs;
            if (use_exclusion) qs = queries[i].start_index;
            results[i] = index.search(queries[i].X, cfg, qs);
        }
    };
    if (nthreads == 1) {
        worker(0, queries.size());
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (queries.size() + nthreads - 1) / nthreads;
        for (int t = 0; t < nthreads; ++t) {
            const size_t b = chunk * t;
            const size_t e = std::min(queries.size(), b + chunk);
            if (b < e) pool.emplace_back(worker, b, e);
        }
        for (auto& th : pool) th.join();
    }
    std::map<long, CandidateSet> out;
    for (size_t i = 0; i < queries.size(); ++i) out[queries[i].start_index] = std::move(results[i]);
    return out;
}

}  // namespace kupbi
