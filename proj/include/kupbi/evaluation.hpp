#pragma once

#include "kupbi/continuation.hpp"

namespace kupbi {

/**
 * @brief Mean test-set losses of a model.
 *
 * Plain average of per-window MSE/MAE (all windows share one shape, so this
 * equals the elementwise mean over every forecast value).  Auxiliary streams
 * must be precomputed and aligned with the window list.
 */
inline std::pair<double, double> evaluate(const LinearBackbone& model, const std::vector<QueryWindow>& windows,
                                          const AuxStreams* aux = nullptr) {
    return mean_losses(model, windows, aux);
}

/// Relative improvement in percent; positive when @p candidate beats @p baseline.
inline double improvement_percent(double baseline, double candidate) {
    if (baseline == 0.0) throw std::invalid_argument("improvement_percent: zero baseline");
    return 100.0 * (baseline - candidate) / baseline;
}

/**
 * @brief Agreement between constructed auxiliary streams and the true
 * continuations, over every test query that has one.
 *
 * mse / mae are elementwise means pooled over all eligible queries.  corr is
 * the Pearson correlation of the pooled flattened (Z, F_true) pairs by
 * default; per_query_corr averages one correlation per query instead.
 * Everything is computed on the standardized series, pre-model.
 */
struct RetrievalQuality {
    double mse = 0.0;
    double mae = 0.0;
    double corr = 0.0;
    long queries = 0;  // how many windows had a true continuation
};

inline RetrievalQuality retrieval_quality(const std::vector<QueryWindow>& queries, const RetrievalLibrary& lib,
                                          const RetrievalConfig& rcfg, const ContinuationConfig& cfg,
                                          const ConstructContext& base_ctx, bool per_query_corr = false,
                                          const std::map<long, CandidateSet>* cache = nullptr) {
    RetrievalQuality out;
    double se = 0.0, ae = 0.0;
    long elements = 0;
    std::vector<double> pooled_z, pooled_f;
    double corr_sum = 0.0;

    for (const QueryWindow& w : queries) {
        if (!w.F_true.has_value()) continue;
        ConstructContext ctx = base_ctx;
        ctx.query_start = w.start_index;
        ctx.cached = nullptr;
        CandidateSet truncated;
        if (cache != nullptr && cfg.variant != Variant::kRandomRetrieval && cfg.variant != Variant::kPbcc) {
            auto it = cache->find(w.start_index);
            if (it != cache->end()) {
                truncated = truncate_candidates(it->second, rcfg.k);
                ctx.cached = &truncated;
            }
        }
        const AuxiliaryResult aux = construct(w.X, lib, rcfg, cfg, ctx);
        const Matrix& F = *w.F_true;
        for (size_t i = 0; i < F.data.size(); ++i) {
            const double d = aux.Z.data[i] - F.data[i];
            se += d * d;
            ae += std::fabs(d);
        }
        elements += static_cast<long>(F.data.size());
        if (per_query_corr) {
            corr_sum += pearson(aux.Z.data, F.data);
        } else {
            pooled_z.insert(pooled_z.end(), aux.Z.data.begin(), aux.Z.data.end());
            pooled_f.insert(pooled_f.end(), F.data.begin(), F.data.end());
        }
        ++out.queries;
    }
    if (out.queries == 0)
        throw std::invalid_argument("retrieval_quality: no query has a true continuation (partition too short)");

    out.mse = se / static_cast<double>(elements);
    out.mae = ae / static_cast<double>(elements);
    out.corr = per_query_corr ? corr_sum / static_cast<double>(out.queries) : pearson(pooled_z, pooled_f);
    return out;
}

/**
 * @brief One line of a results table: a configuration evaluated over seeds.
 */
struct MetricsRow {
    std::string name;
    double mse_mean = 0.0, mse_std = 0.0;
    double mae_mean = 0.0, mae_std = 0.0;
    double mse_improvement_pct = 0.0;  // vs the table's baseline row, NaN when n/a
    double mae_improvement_pct = 0.0;
    int seeds = 0;
};

/// Sample standard deviation (n-1 denominator); 0 for a single value.
inline double sample_std(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("sample_std: empty");
    if (v.size() == 1) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
        const double d = x - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline MetricsRow make_row(const std::string& name, const std::vector<double>& mses, const std::vector<double>& maes) {
    if (mses.empty() || mses.size() != maes.size()) throw std::invalid_argument("make_row: misaligned metric lists");
    MetricsRow r;
    r.name = name;
    r.seeds = static_cast<int>(mses.size());
    double sm = 0.0, sa = 0.0;
    for (double v : mses) sm += v;
    for (double v : maes) sa += v;
    r.mse_mean = sm / static_cast<double>(mses.size());
    r.mae_mean = sa / static_cast<double>(maes.size());
    r.mse_std = sample_std(mses);
    r.mae_std = sample_std(maes);
    r.mse_improvement_pct = std::numeric_limits<double>::quiet_NaN();
    r.mae_improvement_pct = std::numeric_limits<double>::quiet_NaN();
    return r;
}

}  // namespace kupbi
