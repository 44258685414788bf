#pragma once

#include "kupbi/retrieval.hpp"
#include "kupbi/training.hpp"

namespace kupbi {

/// How the auxiliary stream is built for a query window.
enum class Variant { kRatio, kResidual, kDirectContinuation, kTarget, kRandomRetrieval, kPbcc };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::kRatio: return "ratio";
        case Variant::kResidual: return "residual";
        case Variant::kDirectContinuation: return "direct_continuation";
        case Variant::kTarget: return "target";
        case Variant::kRandomRetrieval: return "random_retrieval";
        case Variant::kPbcc: return "pbcc";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "ratio") return Variant::kRatio;
    if (s == "residual") return Variant::kResidual;
    if (s == "direct_continuation" || s == "dc") return Variant::kDirectContinuation;
    if (s == "target") return Variant::kTarget;
    if (s == "random_retrieval" || s == "random") return Variant::kRandomRetrieval;
    if (s == "pbcc") return Variant::kPbcc;
    throw std::invalid_argument("unknown variant: " + s);
}

struct ContinuationConfig {
    Variant variant = Variant::kRatio;
    double tau = 0.01;           // softmax temperature over correlations
    bool apply_clip = true;      // quantile-tanh clipping of the aggregate
    double clip_quantile = 0.9;  // quantile of |aggregate| that sets the scale
    double epsilon_s = 1e-8;     // modulation stabiliser
    double align_epsilon = 1e-8; // alignment stabiliser

    void validate() const {
        if (!(tau > 0)) throw std::invalid_argument("ContinuationConfig: tau must be positive");
        if (!(clip_quantile > 0 && clip_quantile <= 1))
            throw std::invalid_argument("ContinuationConfig: clip_quantile must lie in (0, 1]");
        if (epsilon_s < 0) throw std::invalid_argument("ContinuationConfig: epsilon_s must be >= 0");
        if (!(align_epsilon > 0)) throw std::invalid_argument("ContinuationConfig: align_epsilon must be positive");
    }
};

/**
 * @brief Per-channel softmax weights over candidate correlations.
 *
 * weights[c][j] = exp((corr_j - m_c)/tau) / sum, with m_c the channel's best
 * correlation subtracted for stability.  Equal correlations give exactly
 * uniform weights; a single candidate gets weight exactly 1 for any tau,
 * which is what makes k=1 pipelines temperature-invariant bit-for-bit.
 */
inline std::vector<std::vector<double>> softmax_weights(const CandidateSet& cands, double tau) {
    if (!(tau > 0)) throw std::invalid_argument("softmax_weights: tau must be positive");
    std::vector<std::vector<double>> weights(cands.per_channel.size());
    for (size_t c = 0; c < cands.per_channel.size(); ++c) {
        const auto& list = cands.per_channel[c];
        if (list.empty()) throw std::invalid_argument("softmax_weights: empty candidate list");
        double m = list[0].corr;
        for (const Candidate& cd : list) m = std::max(m, cd.corr);
        std::vector<double>& w = weights[c];
        w.resize(list.size());
        double sum = 0.0;
        for (size_t j = 0; j < list.size(); ++j) {
            w[j] = std::exp((list[j].corr - m) / tau);
            sum += w[j];
        }
        for (double& v : w) v /= sum;
    }
    return weights;
}

/**
 * @brief Weighted per-channel average of the retrieved descriptor columns.
 *
 * Returns the aggregated [LxC] matrix and the weights used.  The value
 * matrices come from the library entries named by the candidate set.
 */
inline std::pair<Matrix, std::vector<std::vector<double>>> aggregate(const CandidateSet& cands,
                                                                     const RetrievalLibrary& lib, double tau) {
    if (cands.channels() != lib.C) throw std::invalid_argument("aggregate: candidate channels mismatch library");
    auto weights = softmax_weights(cands, tau);
    Matrix out(lib.L, lib.C, 0.0);
    for (int c = 0; c < lib.C; ++c) {
        const auto& list = cands.per_channel[c];
        const auto& w = weights[c];
        for (size_t j = 0; j < list.size(); ++j) {
            const Matrix& value = lib.entries[list[j].index].value;
            for (int t = 0; t < lib.L; ++t) out(t, c) += w[j] * value(t, c);
        }
    }
    return {out, std::move(weights)};
}

/// Linear-interpolation quantile of a vector (values copied and sorted).
inline double quantile_linear(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile_linear: empty input");
    if (!(q >= 0 && q <= 1)) throw std::invalid_argument("quantile_linear: q must lie in [0, 1]");
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

/**
 * @brief Soft clipping: scale = the q-quantile of |R| over all elements
 * (one global scalar), result = scale * tanh(R / scale).
 *
 * Magnitudes stay within [0, scale]; elements well below the scale pass
 * nearly unchanged.  A zero scale (all-zero aggregate) returns zeros.
 */
struct ClipResult {
    Matrix clipped;
    double threshold = 0.0;
};

inline ClipResult clip(const Matrix& R, double q) {
    std::vector<double> mags(R.data.size());
    for (size_t i = 0; i < R.data.size(); ++i) mags[i] = std::fabs(R.data[i]);
    ClipResult out;
    out.threshold = quantile_linear(std::move(mags), q);
    out.clipped = Matrix(R.rows, R.cols, 0.0);
    if (out.threshold == 0.0) return out;
    for (size_t i = 0; i < R.data.size(); ++i) out.clipped.data[i] = out.threshold * std::tanh(R.data[i] / out.threshold);
    return out;
}

/**
 * @brief Apply a clipped descriptor to the query window.
 *
 * Ratio kind:    F_hat = X + (R + eps_s * sign(R)) . X   with sign(0) = 0,
 * Residual kind: F_hat = X + R.
 * A zero descriptor returns X exactly in both kinds.
 */
inline Matrix modulate(const Matrix& X, const Matrix& R, double epsilon_s, DescriptorKind kind) {
    require_same_shape(X, R, "modulate");
    Matrix out(X.rows, X.cols);
    if (kind == DescriptorKind::kResidual) {
        for (size_t i = 0; i < X.data.size(); ++i) out.data[i] = X.data[i] + R.data[i];
        return out;
    }
    for (size_t i = 0; i < X.data.size(); ++i) {
        const double r = R.data[i];
        const double sign = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
        out.data[i] = X.data[i] + (r + epsilon_s * sign) * X.data[i];
    }
    return out;
}

/**
 * @brief Distribution alignment of the proxy onto the query window.
 *
 * Per channel (population moments over the L rows):
 *   Z = (F_hat - mean(F_hat)) / (std(F_hat) + eps) * (std(X) + eps) + mean(X)
 * so each Z channel inherits X's location and scale.  A constant proxy
 * channel collapses to X's channel mean.
 */
inline Matrix align(const Matrix& F_hat, const Matrix& X, double epsilon) {
    require_same_shape(F_hat, X, "align");
    if (!(epsilon > 0)) throw std::invalid_argument("align: epsilon must be positive");
    Matrix Z(X.rows, X.cols);
    for (int c = 0; c < X.cols; ++c) {
        const double mu_f = column_mean(F_hat, c);
        const double sd_f = column_std(F_hat, c, mu_f);
        const double mu_x = column_mean(X, c);
        const double sd_x = column_std(X, c, mu_x);
        const double scale = (sd_x + epsilon) / (sd_f + epsilon);
        for (int t = 0; t < X.rows; ++t) Z(t, c) = (F_hat(t, c) - mu_f) * scale + mu_x;
    }
    return Z;
}

/**
 * @brief Everything construct() produces for one query, kept for
 * diagnostics: the aggregate before clipping is reconstructable from
 * weights, the clip threshold, the pre-alignment proxy, and the final Z.
 */
struct AuxiliaryResult {
    Matrix Z;                  // aligned auxiliary stream, [LxC]
    Matrix proxy;              // pre-alignment continuation proxy F_hat
    double clip_threshold = 0.0;
    std::vector<std::vector<double>> weights;  // per channel, aligned with candidates
    CandidateSet candidates;
};

/**
 * @brief Pass-through state construct() needs beyond the library.
 *
 * @c index       prebuilt search structure (required for retrieval variants).
 * @c cached      candidates precomputed for this query, if available.
 * @c chains      source chains, same order as the library entries; required
 *                by the direct-continuation and target variants.
 * @c pbcc        trained history-to-continuation predictor for the pbcc
 *                variant; querying without one is an error.
 * @c seed        master seed for the random-retrieval variant.
 * @c query_start global start row (enables self-window exclusion).
 */
struct ConstructContext {
    const SearchIndex* index = nullptr;
    const CandidateSet* cached = nullptr;
    const std::vector<Chain>* chains = nullptr;
    const LinearBackbone* pbcc = nullptr;
    uint64_t seed = 0;
    std::optional<long> query_start;
};

namespace detail {

/// Weighted per-channel average of matrices selected per candidate.
template <typename GetMatrix>
Matrix weighted_average(const CandidateSet& cands, const std::vector<std::vector<double>>& weights, int L, int C,
                        GetMatrix&& get) {
    Matrix out(L, C, 0.0);
    for (int c = 0; c < C; ++c) {
        const auto& list = cands.per_channel[c];
        const auto& w = weights[c];
        for (size_t j = 0; j < list.size(); ++j) {
            const Matrix& m = get(list[j].index);
            for (int t = 0; t < L; ++t) out(t, c) += w[j] * m(t, c);
        }
    }
    return out;
}

/// Chain target resized to L rows: repeat the final row when T < L,
/// drop the tail when T > L.
inline Matrix target_segment(const Chain& ch, int L) {
    Matrix seg(L, ch.Y.cols);
    for (int t = 0; t < L; ++t) {
        const int src = std::min(t, ch.Y.rows - 1);
        for (int c = 0; c < ch.Y.cols; ++c) seg(t, c) = ch.Y(src, c);
    }
    return seg;
}

inline const Chain& chain_for_entry(const ConstructContext& ctx, const RetrievalLibrary& lib, int entry_index) {
    if (ctx.chains == nullptr)
        throw std::invalid_argument("construct: this variant needs the source chains in the context");
    const auto& chains = *ctx.chains;
    if (entry_index < 0 || entry_index >= static_cast<int>(chains.size()) ||
        chains[entry_index].start_index != lib.entries[entry_index].source_start)
        throw std::invalid_argument("construct: context chains do not match the library ordering");
    return chains[entry_index];
}

inline CandidateSet random_candidates(const ConstructContext& ctx, const RetrievalConfig& rcfg, int C) {
    if (ctx.index == nullptr) throw std::invalid_argument("construct: random retrieval needs a search index");
    const std::vector<int> allowed = ctx.index->allowed_indices(rcfg, ctx.query_start);
    if (allowed.empty()) throw std::invalid_argument("construct: exclusion removed every library entry");
    const uint64_t qs = ctx.query_start ? static_cast<uint64_t>(*ctx.query_start) : 0;
    CandidateSet cands;
    cands.per_channel.resize(C);
    const int kk = std::min<int>(rcfg.k, static_cast<int>(allowed.size()));
    const int n = static_cast<int>(allowed.size());
    for (int c = 0; c < C; ++c) {
        // Floyd's selection: kk distinct positions in [0, n), deterministic
        // per (seed, query start, channel).
        Rng rng(mix64(mix64(ctx.seed ^ qs) ^ static_cast<uint64_t>(c)));
        std::vector<int> chosen;
        chosen.reserve(kk);
        for (int i = n - kk; i < n; ++i) {
            const int j = static_cast<int>(rng.bounded(static_cast<uint64_t>(i) + 1));
            if (std::find(chosen.begin(), chosen.end(), j) != chosen.end())
                chosen.push_back(i);
            else
                chosen.push_back(j);
        }
        std::sort(chosen.begin(), chosen.end());
        auto& list = cands.per_channel[c];
        list.reserve(kk);
        // Correlation 0 for every pick: the softmax then weighs them exactly
        // uniformly, which is the contract of this control variant.
        for (int pos : chosen) list.push_back({allowed[pos], 0.0});
    }
    return cands;
}

}  // namespace detail

/**
 * @brief Build the auxiliary stream Z for one query window.
 *
 * Retrieval variants (ratio, residual, random_retrieval) run search /
 * aggregate / clip / modulate / align; the library's stored descriptor must
 * match the variant's arithmetic.  direct_continuation and target average
 * raw chain segments and only align.  pbcc forwards the query through a
 * trained predictor and aligns its output.
 */
inline AuxiliaryResult construct(const Matrix& X, const RetrievalLibrary& lib, const RetrievalConfig& rcfg,
                                 const ContinuationConfig& cfg, const ConstructContext& ctx) {
    cfg.validate();
    if (X.rows != lib.L || X.cols != lib.C)
        throw std::invalid_argument("construct: query shape does not match the library");

    AuxiliaryResult res;

    if (cfg.variant == Variant::kPbcc) {
        if (ctx.pbcc == nullptr)
            throw std::invalid_argument("construct: pbcc variant queried without a trained predictor");
        if (ctx.pbcc->horizon() != lib.L)
            throw std::invalid_argument("construct: pbcc predictor horizon must equal L");
        res.proxy = ctx.pbcc->forward(X);
        res.Z = align(res.proxy, X, cfg.align_epsilon);
        return res;
    }

    // Candidates: cached, or searched, or drawn uniformly for the control.
    if (cfg.variant == Variant::kRandomRetrieval) {
        res.candidates = detail::random_candidates(ctx, rcfg, lib.C);
    } else if (ctx.cached != nullptr) {
        res.candidates = *ctx.cached;
    } else if (ctx.index != nullptr) {
        res.candidates = ctx.index->search(X, rcfg, ctx.query_start);
    } else {
        res.candidates = search(X, lib, rcfg, ctx.query_start);
    }

    switch (cfg.variant) {
        case Variant::kRatio:
        case Variant::kResidual:
        case Variant::kRandomRetrieval: {
            const DescriptorKind want =
                (cfg.variant == Variant::kResidual) ? DescriptorKind::kResidual : lib.descriptor;
            if (cfg.variant == Variant::kRatio && lib.descriptor != DescriptorKind::kRatio)
                throw std::invalid_argument("construct: ratio variant needs a ratio-descriptor library");
            if (cfg.variant == Variant::kResidual && lib.descriptor != DescriptorKind::kResidual)
                throw std::invalid_argument("construct: residual variant needs a residual-descriptor library");
            auto [agg, weights] = aggregate(res.candidates, lib, cfg.tau);
            res.weights = std::move(weights);
            Matrix clipped;
            if (cfg.apply_clip) {
                ClipResult cr = clip(agg, cfg.clip_quantile);
                clipped = std::move(cr.clipped);
                res.clip_threshold = cr.threshold;
            } else {
                clipped = std::move(agg);
                res.clip_threshold = std::numeric_limits<double>::infinity();
            }
            res.proxy = modulate(X, clipped, cfg.epsilon_s, want);
            res.Z = align(res.proxy, X, cfg.align_epsilon);
            return res;
        }
        case Variant::kDirectContinuation: {
            res.weights = softmax_weights(res.candidates, cfg.tau);
            res.proxy = detail::weighted_average(res.candidates, res.weights, lib.L, lib.C, [&](int idx) -> const Matrix& {
                return detail::chain_for_entry(ctx, lib, idx).F;
            });
            res.Z = align(res.proxy, X, cfg.align_epsilon);
            return res;
        }
        case Variant::kTarget: {
            res.weights = softmax_weights(res.candidates, cfg.tau);
            // Per-entry resized targets; built once per needed entry.
            std::map<int, Matrix> segs;
            for (const auto& list : res.candidates.per_channel)
                for (const Candidate& cd : list)
                    if (!segs.count(cd.index))
                        segs.emplace(cd.index, detail::target_segment(detail::chain_for_entry(ctx, lib, cd.index), lib.L));
            res.proxy = detail::weighted_average(res.candidates, res.weights, lib.L, lib.C,
                                                 [&](int idx) -> const Matrix& { return segs.at(idx); });
            res.Z = align(res.proxy, X, cfg.align_epsilon);
            return res;
        }
        default:
            throw std::logic_error("construct: unhandled variant");
    }
}

/**
 * @brief Train the history-to-continuation predictor for the pbcc variant:
 * the same linear backbone, horizon L, fitted on (H -> F) chain pairs under
 * the same training protocol.
 */
inline LinearBackbone train_pbcc_predictor(const std::vector<Chain>& train_chains, const std::vector<Chain>& val_chains,
                                           const TrainConfig& cfg, int kernel = 25) {
    if (train_chains.empty()) throw std::invalid_argument("train_pbcc_predictor: no training chains");
    if (val_chains.empty()) throw std::invalid_argument("train_pbcc_predictor: no validation chains");
    const int L = train_chains.front().H.rows;
    const int C = train_chains.front().H.cols;
    auto to_windows = [](const std::vector<Chain>& chains) {
        std::vector<QueryWindow> ws;
        ws.reserve(chains.size());
        for (const Chain& ch : chains) {
            QueryWindow w;
            w.X = ch.H;
            w.Y_true = ch.F;
            w.start_index = ch.start_index;
            ws.push_back(std::move(w));
        }
        return ws;
    };
    LinearBackbone model(L, L, C, kernel, false);
    model.init(cfg.seed);
    train(model, to_windows(train_chains), to_windows(val_chains), cfg);
    return model;
}

}  // namespace kupbi
