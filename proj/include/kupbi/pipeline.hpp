#pragma once

#include <memory>

#include "kupbi/evaluation.hpp"

namespace kupbi {

/**
 * @brief Everything one experiment needs, resolved and validated.
 *
 * exclusion_radius -1 means "use L+T", the radius that removes every train
 * chain overlapping a query's own target.
 */
struct PipelineConfig {
    std::string data_path;
    bool drop_first_column = true;

    int L = 336;
    int T = 96;
    SplitSpec split_spec;
    int stride = 1;

    double epsilon = 1e-4;
    DescriptorKind descriptor = DescriptorKind::kRatio;

    int k = 1;
    bool exclude_self = true;
    long exclusion_radius = -1;

    ContinuationConfig cont;

    bool augmented = true;
    GateMode gate_mode = GateMode::kStatic;
    double alpha = 0.75;
    bool gate_per_stream = false;
    bool individual = false;
    int kernel = 25;

    TrainConfig train_cfg;
    std::vector<uint64_t> seeds = {2021, 2022, 2023};
    int threads = 1;
    bool per_query_corr = false;

    long resolved_radius() const { return exclusion_radius < 0 ? static_cast<long>(L) + T : exclusion_radius; }

    RetrievalConfig retrieval_config(std::optional<int> k_override = {}) const {
        RetrievalConfig r;
        r.k = k_override.value_or(k);
        r.exclude_self_window = exclude_self;
        r.exclusion_radius = resolved_radius();
        return r;
    }

    void validate() const {
        if (data_path.empty()) throw std::invalid_argument("config: data_path is required");
        if (L <= 0 || T <= 0) throw std::invalid_argument("config: L and T must be positive");
        if (stride <= 0) throw std::invalid_argument("config: stride must be positive");
        if (!(epsilon > 0)) throw std::invalid_argument("config: epsilon must be positive");
        if (k < 1) throw std::invalid_argument("config: k must be >= 1");
        if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("config: alpha must lie in [0, 1]");
        if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument("config: kernel must be odd and positive");
        if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
        if (seeds.empty()) throw std::invalid_argument("config: at least one seed");
        cont.validate();
        train_cfg.validate();
    }
};

/**
 * @brief Loaded, standardized, split, and indexed experiment state.
 *
 * Candidate caches are computed once per k ceiling and shared by every run;
 * they are keyed by global window start.  Not movable: the search index
 * points into the library.
 */
struct PreparedData {
    ChannelStats stats;
    SplitResult splits;
    std::vector<Chain> train_chains;
    std::vector<Chain> val_chains;  // for the pbcc predictor's early stopping
    RetrievalLibrary library;
    std::unique_ptr<SearchIndex> index;
    std::vector<QueryWindow> train_windows, val_windows, test_windows;

    int cached_k = 0;
    std::map<long, CandidateSet> cand_train, cand_val, cand_test;

    PreparedData() = default;
    PreparedData(const PreparedData&) = delete;
    PreparedData& operator=(const PreparedData&) = delete;

    int C() const { return library.C; }
};

inline std::unique_ptr<PreparedData> prepare(const PipelineConfig& cfg) {
    cfg.validate();
    auto prep = std::make_unique<PreparedData>();

    RawSeries raw = load_csv(cfg.data_path, cfg.drop_first_column);
    // Fit the scaler on the raw training rows, then split the standardized series.
    const SplitResult raw_split = split(raw, cfg.split_spec, cfg.L, cfg.T);
    prep->stats = compute_stats(raw.values, 0, raw_split.train.rows);
    const RawSeries std_series = standardize(raw, prep->stats);
    prep->splits = split(std_series, cfg.split_spec, cfg.L, cfg.T);

    prep->train_chains = extract_chains(prep->splits.train, prep->splits.train_offset, cfg.L, cfg.T, cfg.stride);
    if (prep->train_chains.empty())
        throw std::invalid_argument("prepare: training partition too short to cut any chain (needs " +
                                    std::to_string(chain_span(cfg.L, cfg.T)) + " rows)");
    prep->val_chains = extract_chains(prep->splits.val, prep->splits.val_offset, cfg.L, cfg.T, cfg.stride);

    prep->library = build_library(prep->train_chains, cfg.epsilon, cfg.descriptor);
    prep->index = std::make_unique<SearchIndex>(prep->library);

    prep->train_windows = make_query_windows(prep->splits.train, prep->splits.train_offset, cfg.L, cfg.T);
    prep->val_windows = make_query_windows(prep->splits.val, prep->splits.val_offset, cfg.L, cfg.T);
    prep->test_windows = make_query_windows(prep->splits.test, prep->splits.test_offset, cfg.L, cfg.T);
    return prep;
}

/// Candidate lists at ceiling @p k_needed for every split (idempotent).
inline void ensure_candidates(PreparedData& prep, const PipelineConfig& cfg, int k_needed) {
    if (prep.cached_k >= k_needed) return;
    const RetrievalConfig rcfg = cfg.retrieval_config(k_needed);
    // Exclusion applies only to train-partition queries; val/test targets lie
    // outside the train-only library.
    prep.cand_train = precompute_candidates(prep.train_windows, *prep.index, rcfg, true, cfg.threads);
    prep.cand_val = precompute_candidates(prep.val_windows, *prep.index, rcfg, false, cfg.threads);
    prep.cand_test = precompute_candidates(prep.test_windows, *prep.index, rcfg, false, cfg.threads);
    prep.cached_k = k_needed;
}

/**
 * @brief One row of the run matrix: which model shape plus which knob
 * overrides.  The ablations are expressed as overrides of the base config.
 */
struct RunVariant {
    enum class Kind { kBaseline, kAugmented, kConcat } kind = Kind::kAugmented;
    Variant construct_variant = Variant::kRatio;
    std::optional<double> alpha_override;
    std::optional<double> tau_override;
    std::optional<int> k_override;
    std::string name = "kupbi";

    static RunVariant baseline() { return {Kind::kBaseline, Variant::kRatio, {}, {}, {}, "baseline"}; }
    static RunVariant kupbi() { return {Kind::kAugmented, Variant::kRatio, {}, {}, {}, "kupbi"}; }
};

/// Resolve a named ablation/variant row.
inline RunVariant variant_by_name(const std::string& name) {
    if (name == "baseline") return RunVariant::baseline();
    if (name == "kupbi" || name == "base" || name == "ratio") return RunVariant::kupbi();
    if (name == "concat" || name == "concatenation")
        return {RunVariant::Kind::kConcat, Variant::kRatio, {}, {}, {}, "concat"};
    if (name == "random_retrieval" || name == "random")
        return {RunVariant::Kind::kAugmented, Variant::kRandomRetrieval, {}, {}, {}, "random_retrieval"};
    if (name == "direct_continuation" || name == "dc")
        return {RunVariant::Kind::kAugmented, Variant::kDirectContinuation, {}, {}, {}, "direct_continuation"};
    if (name == "target") return {RunVariant::Kind::kAugmented, Variant::kTarget, {}, {}, {}, "target"};
    if (name == "residual") {
        RunVariant v = RunVariant::kupbi();
        v.construct_variant = Variant::kResidual;
        v.name = "residual";
        return v;
    }
    if (name == "pbcc") return {RunVariant::Kind::kAugmented, Variant::kPbcc, {}, {}, {}, "pbcc"};
    if (name == "wo_alpha") {
        RunVariant v = RunVariant::kupbi();
        v.alpha_override = 0.0;
        v.name = "wo_alpha";
        return v;
    }
    if (name == "wo_tau") {
        RunVariant v = RunVariant::kupbi();
        v.tau_override = 1.0;
        v.name = "wo_tau";
        return v;
    }
    if (name == "wo_topk") {
        RunVariant v = RunVariant::kupbi();
        v.k_override = 1;
        v.name = "wo_topk";
        return v;
    }
    throw std::invalid_argument("unknown run variant: " + name);
}

namespace detail {

inline ContinuationConfig variant_cont_cfg(const PipelineConfig& cfg, const RunVariant& rv) {
    ContinuationConfig cc = cfg.cont;
    cc.variant = rv.construct_variant;
    if (rv.tau_override) cc.tau = *rv.tau_override;
    return cc;
}

}  // namespace detail

/**
 * @brief Auxiliary streams for one window list.
 *
 * @param cache      cached candidates for these windows (nullptr to search
 *                   on the fly); entries beyond the variant's k are dropped.
 * @param use_exclusion true only for train-partition windows.
 * @param run_seed   experiment seed (drives the random-retrieval control).
 */
inline AuxStreams build_aux_streams(PreparedData& prep, const PipelineConfig& cfg, const RunVariant& rv,
                                    const std::vector<QueryWindow>& windows, const std::map<long, CandidateSet>* cache,
                                    bool use_exclusion, uint64_t run_seed, const LinearBackbone* pbcc = nullptr) {
    const ContinuationConfig cc = detail::variant_cont_cfg(cfg, rv);
    const RetrievalConfig rcfg = cfg.retrieval_config(rv.k_override);
    RetrievalConfig rcfg_eff = rcfg;
    if (!use_exclusion) rcfg_eff.exclude_self_window = false;

    AuxStreams out;
    out.reserve(windows.size());
    for (const QueryWindow& w : windows) {
        ConstructContext ctx;
        ctx.index = prep.index.get();
        ctx.chains = &prep.train_chains;
        ctx.pbcc = pbcc;
        ctx.seed = run_seed;
        ctx.query_start = w.start_index;

        CandidateSet truncated;
        if (cache != nullptr && cc.variant != Variant::kRandomRetrieval && cc.variant != Variant::kPbcc) {
            auto it = cache->find(w.start_index);
            if (it == cache->end()) throw std::logic_error("build_aux_streams: window missing from candidate cache");
            truncated = truncate_candidates(it->second, rcfg.k);
            ctx.cached = &truncated;
        }
        out.push_back(construct(w.X, prep.library, rcfg_eff, cc, ctx).Z);
    }
    return out;
}

/// Time-axis concatenation [X; Z] used by the concatenation ablation.
inline std::vector<QueryWindow> concat_windows(const std::vector<QueryWindow>& windows, const AuxStreams& aux) {
    if (windows.size() != aux.size()) throw std::invalid_argument("concat_windows: misaligned streams");
    std::vector<QueryWindow> out;
    out.reserve(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) {
        const Matrix& X = windows[i].X;
        const Matrix& Z = aux[i];
        QueryWindow w;
        w.start_index = windows[i].start_index;
        w.Y_true = windows[i].Y_true;
        w.X = Matrix(X.rows + Z.rows, X.cols);
        std::copy(X.data.begin(), X.data.end(), w.X.data.begin());
        std::copy(Z.data.begin(), Z.data.end(), w.X.data.begin() + X.data.size());
        out.push_back(std::move(w));
    }
    return out;
}

struct RunOutcome {
    double test_mse = 0.0;
    double test_mae = 0.0;
    TrainReport report;
    LinearBackbone model;
};

/**
 * @brief Train and evaluate one (variant, seed) cell.
 *
 * Auxiliary streams are computed once per split up front; the training loop
 * never touches retrieval.  Candidate caches must already cover the
 * variant's k (see ensure_candidates).
 */
inline RunOutcome run_single(PreparedData& prep, const PipelineConfig& cfg, const RunVariant& rv, uint64_t seed) {
    TrainConfig tc = cfg.train_cfg;
    tc.seed = seed;

    const double alpha = rv.alpha_override.value_or(cfg.alpha);

    if (rv.kind == RunVariant::Kind::kBaseline) {
        RunOutcome out;
        out.model = LinearBackbone(cfg.L, cfg.T, prep.C(), cfg.kernel, cfg.individual);
        out.model.init(seed);
        out.report = train(out.model, prep.train_windows, prep.val_windows, tc);
        std::tie(out.test_mse, out.test_mae) = evaluate(out.model, prep.test_windows);
        return out;
    }

    // pbcc trains its predictor under the same protocol and seed.
    std::optional<LinearBackbone> pbcc;
    if (rv.construct_variant == Variant::kPbcc) {
        if (prep.val_chains.empty())
            throw std::invalid_argument("run_single: pbcc needs validation chains (partition too short)");
        TrainConfig ptc = tc;
        pbcc = train_pbcc_predictor(prep.train_chains, prep.val_chains, ptc, cfg.kernel);
    }

    const int k_eff = rv.k_override.value_or(cfg.k);
    const bool needs_search =
        rv.construct_variant != Variant::kPbcc && rv.construct_variant != Variant::kRandomRetrieval;
    if (needs_search && prep.cached_k < k_eff) ensure_candidates(prep, cfg, k_eff);

    const AuxStreams train_aux =
        build_aux_streams(prep, cfg, rv, prep.train_windows, &prep.cand_train, true, seed, pbcc ? &*pbcc : nullptr);
    const AuxStreams val_aux =
        build_aux_streams(prep, cfg, rv, prep.val_windows, &prep.cand_val, false, seed, pbcc ? &*pbcc : nullptr);
    const AuxStreams test_aux =
        build_aux_streams(prep, cfg, rv, prep.test_windows, &prep.cand_test, false, seed, pbcc ? &*pbcc : nullptr);

    RunOutcome out;
    if (rv.kind == RunVariant::Kind::kConcat) {
        // Auxiliary stream appended along time; plain backbone, no gates.
        const std::vector<QueryWindow> tr = concat_windows(prep.train_windows, train_aux);
        const std::vector<QueryWindow> va = concat_windows(prep.val_windows, val_aux);
        const std::vector<QueryWindow> te = concat_windows(prep.test_windows, test_aux);
        out.model = LinearBackbone(2 * cfg.L, cfg.T, prep.C(), cfg.kernel, cfg.individual);
        out.model.init(seed);
        out.report = train(out.model, tr, va, tc);
        std::tie(out.test_mse, out.test_mae) = evaluate(out.model, te);
        return out;
    }

    out.model = LinearBackbone(cfg.L, cfg.T, prep.C(), cfg.kernel, cfg.individual);
    out.model.enable_fusion(cfg.gate_mode, alpha, cfg.gate_per_stream);
    out.model.init(seed);
    out.report = train(out.model, prep.train_windows, prep.val_windows, tc, &train_aux, &val_aux);
    std::tie(out.test_mse, out.test_mae) = evaluate(out.model, prep.test_windows, &test_aux);
    return out;
}

/**
 * @brief Run a list of variants over the config's seeds and tabulate.
 *
 * The baseline row is always run (first); improvement percentages in every
 * other row are relative to it, positive meaning lower error.
 */
inline std::vector<MetricsRow> run_ablation_matrix(PreparedData& prep, const PipelineConfig& cfg,
                                                   const std::vector<RunVariant>& variants) {
    std::vector<RunVariant> rows;
    rows.push_back(RunVariant::baseline());
    for (const RunVariant& rv : variants)
        if (rv.kind != RunVariant::Kind::kBaseline) rows.push_back(rv);

    std::vector<MetricsRow> table;
    double base_mse = 0.0, base_mae = 0.0;
    for (const RunVariant& rv : rows) {
        std::vector<double> mses, maes;
        for (uint64_t seed : cfg.seeds) {
            RunOutcome oc = run_single(prep, cfg, rv, seed);
            mses.push_back(oc.test_mse);
            maes.push_back(oc.test_mae);
        }
        MetricsRow row = make_row(rv.name, mses, maes);
        if (rv.kind == RunVariant::Kind::kBaseline) {
            base_mse = row.mse_mean;
            base_mae = row.mae_mean;
        } else {
            row.mse_improvement_pct = improvement_percent(base_mse, row.mse_mean);
            row.mae_improvement_pct = improvement_percent(base_mae, row.mae_mean);
        }
        table.push_back(std::move(row));
    }
    return table;
}

/**
 * @brief One-knob sensitivity sweep: each grid value is one full
 * train+eval over the config's seeds, other knobs held at the config.
 */
inline std::vector<MetricsRow> run_sweep(PreparedData& prep, const PipelineConfig& cfg, const std::string& param,
                                         const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("run_sweep: empty grid");
    std::vector<MetricsRow> table;
    for (double value : grid) {
        RunVariant rv = RunVariant::kupbi();
        char buf[64];
        if (param == "alpha") {
            rv.alpha_override = value;
            std::snprintf(buf, sizeof(buf), "alpha=%g", value);
        } else if (param == "tau") {
            rv.tau_override = value;
            std::snprintf(buf, sizeof(buf), "tau=%g", value);
        } else if (param == "k") {
            if (value < 1 || value != std::floor(value)) throw std::invalid_argument("run_sweep: k grid must be integral");
            rv.k_override = static_cast<int>(value);
            std::snprintf(buf, sizeof(buf), "k=%d", static_cast<int>(value));
        } else {
            throw std::invalid_argument("run_sweep: unknown parameter '" + param + "' (alpha, tau, k)");
        }
        rv.name = buf;
        std::vector<double> mses, maes;
        for (uint64_t seed : cfg.seeds) {
            RunOutcome oc = run_single(prep, cfg, rv, seed);
            mses.push_back(oc.test_mse);
            maes.push_back(oc.test_mae);
        }
        table.push_back(make_row(rv.name, mses, maes));
    }
    return table;
}

/// Retrieval-quality diagnostics for the prepared test split.  Reuses the
/// candidate cache when a previous run already filled it at sufficient k.
inline RetrievalQuality pipeline_quality(PreparedData& prep, const PipelineConfig& cfg) {
    ConstructContext ctx;
    ctx.index = prep.index.get();
    ctx.chains = &prep.train_chains;
    ctx.seed = cfg.seeds.front();
    RetrievalConfig rcfg = cfg.retrieval_config();
    rcfg.exclude_self_window = false;  // test queries cannot leak
    ContinuationConfig cc = cfg.cont;
    const std::map<long, CandidateSet>* cache = (prep.cached_k >= cfg.k) ? &prep.cand_test : nullptr;
    return retrieval_quality(prep.test_windows, prep.library, rcfg, cc, ctx, cfg.per_query_corr, cache);
}

}  // namespace kupbi
