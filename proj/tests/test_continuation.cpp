#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "kupbi/continuation.hpp"

using namespace kupbi;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

CandidateSet single_channel_cands(std::vector<Candidate> list) {
    CandidateSet cs;
    cs.per_channel.push_back(std::move(list));
    return cs;
}

}  // namespace

TEST_CASE("softmax weights sum to one and order with correlation") {
    CandidateSet cs;
    cs.per_channel = {{{0, 0.9}, {1, 0.5}, {2, 0.1}}, {{0, 0.2}, {1, 0.8}, {2, 0.4}}};
    for (double tau : {0.01, 0.1, 1.0, 10.0}) {
        auto w = softmax_weights(cs, tau);
        for (const auto& cw : w) {
            double sum = 0.0;
            for (double v : cw) sum += v;
            CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
        }
        CHECK(w[0][0] > w[0][1]);
        CHECK(w[0][1] > w[0][2]);
        CHECK(w[1][1] > w[1][0]);
    }
}

TEST_CASE("a single candidate gets weight exactly one at any temperature") {
    for (double tau : {0.01, 1.0, 10.0, 1e6}) {
        auto w = softmax_weights(single_channel_cands({{4, 0.3}}), tau);
        REQUIRE(w[0].size() == 1);
        CHECK(w[0][0] == 1.0);  // bitwise: exp(0)/exp(0)
    }
}

TEST_CASE("equal correlations give exactly uniform weights") {
    auto w = softmax_weights(single_channel_cands({{0, 0.6}, {1, 0.6}, {2, 0.6}, {3, 0.6}}), 0.05);
    REQUIRE(w[0].size() == 4);
    for (double v : w[0]) CHECK(v == 0.25);
}

TEST_CASE("the default temperature is winner-takes-all for a 0.4 gap") {
    // exp(-0.4/0.01) = exp(-40) ~ 4.2e-18 underflows against 1 in the sum.
    auto w = softmax_weights(single_channel_cands({{0, 0.9}, {1, 0.5}}), 0.01);
    CHECK(w[0][0] == 1.0);
    CHECK(w[0][1] < 1e-15);
}

TEST_CASE("aggregate averages library values under the softmax weights") {
    auto chains = testutil::random_chains(3, 4, 2, 1, 91);
    RetrievalLibrary lib = build_library(chains, 1e-4);
    CandidateSet cs = single_channel_cands({{0, 0.7}, {2, 0.7}});
    auto [agg, w] = aggregate(cs, lib, 0.5);
    REQUIRE(w[0].size() == 2);
    CHECK(w[0][0] == 0.5);
    CHECK(w[0][1] == 0.5);
    for (int t = 0; t < 4; ++t)
        CHECK_THAT(agg(t, 0), WithinAbs(0.5 * lib.entries[0].value(t, 0) + 0.5 * lib.entries[2].value(t, 0), 1e-15));
}

TEST_CASE("linear-interpolation quantile hits textbook positions") {
    std::vector<double> v = {5, 1, 4, 2, 3};  // sorted: 1..5
    CHECK(quantile_linear(v, 0.0) == 1.0);
    CHECK(quantile_linear(v, 1.0) == 5.0);
    CHECK_THAT(quantile_linear(v, 0.5), WithinAbs(3.0, 1e-15));
    CHECK_THAT(quantile_linear(v, 0.9), WithinAbs(4.6, 1e-12));  // h = 3.6
    CHECK(quantile_linear({7.0}, 0.9) == 7.0);
    CHECK_THROWS(quantile_linear({}, 0.5));
    CHECK_THROWS(quantile_linear({1.0}, 1.5));
}

TEST_CASE("quantile-tanh clip bounds magnitudes by the threshold") {
    Matrix R = testutil::random_matrix(10, 3, 7, -8.0, 8.0);
    ClipResult cr = clip(R, 0.9);
    REQUIRE(cr.threshold > 0.0);
    for (size_t i = 0; i < R.data.size(); ++i) {
        CHECK(std::fabs(cr.clipped.data[i]) <= cr.threshold);
        // tanh preserves sign and never amplifies.
        CHECK(cr.clipped.data[i] * R.data[i] >= 0.0);
        CHECK(std::fabs(cr.clipped.data[i]) <= std::fabs(R.data[i]) + 1e-15);
    }
}

TEST_CASE("clip threshold equal to one reproduces tanh directly") {
    Matrix R(2, 2, 1.0);  // all |R| = 1 -> 0.9-quantile is 1
    ClipResult cr = clip(R, 0.9);
    CHECK(cr.threshold == 1.0);
    for (double v : cr.clipped.data) CHECK_THAT(v, WithinAbs(0.7615941559557649, 1e-15));  // tanh(1)
}

TEST_CASE("an all-zero aggregate clips to zeros with zero threshold") {
    Matrix R(3, 2, 0.0);
    ClipResult cr = clip(R, 0.9);
    CHECK(cr.threshold == 0.0);
    for (double v : cr.clipped.data) CHECK(v == 0.0);
}

TEST_CASE("elements well below the clip scale pass nearly unchanged") {
    // One huge element inflates the quantile so the small ones sit in the
    // linear region of tanh: |tanh(u) - u| <= |u|^3 / 3.
    Matrix R(10, 1);
    for (int t = 0; t < 9; ++t) R(t, 0) = 0.05 * (t + 1);
    R(9, 0) = 100.0;
    ClipResult cr = clip(R, 0.99);
    REQUIRE(cr.threshold > 10.0);
    for (int t = 0; t < 9; ++t) {
        const double u = R(t, 0) / cr.threshold;
        const double bound = cr.threshold * u * u * u / 3.0 * 1.001 + 1e-18;
        CHECK(std::fabs(cr.clipped(t, 0) - R(t, 0)) <= bound);
    }
}

TEST_CASE("ratio modulation scales the query and zero descriptors pass through") {
    Matrix X(1, 2);
    X(0, 0) = 2.0;
    X(0, 1) = -3.0;
    Matrix R(1, 2);
    R(0, 0) = 0.5;
    R(0, 1) = 0.0;
    Matrix F = modulate(X, R, 1e-8, DescriptorKind::kRatio);
    CHECK_THAT(F(0, 0), WithinAbs(2.0 + (0.5 + 1e-8) * 2.0, 1e-15));
    CHECK(F(0, 1) == -3.0);  // sign(0) = 0: exact pass-through

    Matrix Rneg(1, 2);
    Rneg(0, 0) = -0.25;
    Rneg(0, 1) = -0.25;
    Matrix Fneg = modulate(X, Rneg, 1e-8, DescriptorKind::kRatio);
    CHECK_THAT(Fneg(0, 0), WithinAbs(2.0 + (-0.25 - 1e-8) * 2.0, 1e-15));
}

TEST_CASE("residual modulation adds the descriptor verbatim") {
    Matrix X = testutil::random_matrix(5, 2, 31);
    Matrix R = testutil::random_matrix(5, 2, 32);
    Matrix F = modulate(X, R, 1e-8, DescriptorKind::kResidual);
    for (size_t i = 0; i < X.data.size(); ++i) CHECK(F.data[i] == X.data[i] + R.data[i]);
}

TEST_CASE("alignment transfers the query's per-channel moments onto the proxy") {
    Matrix F = testutil::random_matrix(40, 3, 41, -5.0, 9.0);
    Matrix X = testutil::random_matrix(40, 3, 42, 2.0, 4.0);
    Matrix Z = align(F, X, 1e-8);
    for (int c = 0; c < 3; ++c) {
        const double mz = column_mean(Z, c);
        const double mx = column_mean(X, c);
        CHECK_THAT(mz, WithinAbs(mx, 1e-9));
        const double sz = column_std(Z, c, mz);
        const double sx = column_std(X, c, mx);
        CHECK_THAT(sz, WithinAbs(sx, 1e-6));
    }
}

TEST_CASE("aligning a constant proxy collapses to the query mean") {
    Matrix F(6, 1, 3.14);
    Matrix X = testutil::random_matrix(6, 1, 43);
    Matrix Z = align(F, X, 1e-8);
    const double mx = column_mean(X, 0);
    for (int t = 0; t < 6; ++t) CHECK_THAT(Z(t, 0), WithinAbs(mx, 1e-12));
}

// ---------------------------------------------------------------------------
// construct() variants
// ---------------------------------------------------------------------------

namespace {

struct Fixture {
    std::vector<Chain> chains;
    RetrievalLibrary lib;
    std::unique_ptr<SearchIndex> index;
    RetrievalConfig rcfg;
    ContinuationConfig cfg;
    ConstructContext ctx;

    explicit Fixture(DescriptorKind kind = DescriptorKind::kRatio, int n = 12, int L = 8, int T = 4, int C = 2) {
        chains = testutil::random_chains(n, L, T, C, 71, /*start0=*/0);
        lib = build_library(chains, 1e-4, kind);
        index = std::make_unique<SearchIndex>(lib);
        rcfg.k = 3;
        rcfg.exclude_self_window = false;
        ctx.index = index.get();
        ctx.chains = &chains;
        ctx.seed = 5;
    }
};

}  // namespace

TEST_CASE("construct ratio pipeline equals its composed stages") {
    Fixture fx;
    const Matrix X = testutil::random_matrix(8, 2, 88);
    AuxiliaryResult res = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);

    CandidateSet cands = fx.index->search(X, fx.rcfg, std::nullopt);
    auto [agg, weights] = aggregate(cands, fx.lib, fx.cfg.tau);
    ClipResult cr = clip(agg, fx.cfg.clip_quantile);
    Matrix proxy = modulate(X, cr.clipped, fx.cfg.epsilon_s, DescriptorKind::kRatio);
    Matrix Z = align(proxy, X, fx.cfg.align_epsilon);

    CHECK(bit_equal(res.proxy, proxy));
    CHECK(bit_equal(res.Z, Z));
    CHECK(res.clip_threshold == cr.threshold);
    REQUIRE(res.weights.size() == weights.size());
    CHECK(res.weights == weights);
}

TEST_CASE("construct with clipping disabled reports an infinite threshold") {
    Fixture fx;
    fx.cfg.apply_clip = false;
    const Matrix X = testutil::random_matrix(8, 2, 89);
    AuxiliaryResult res = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);
    CHECK(std::isinf(res.clip_threshold));

    CandidateSet cands = fx.index->search(X, fx.rcfg, std::nullopt);
    auto [agg, weights] = aggregate(cands, fx.lib, fx.cfg.tau);
    Matrix proxy = modulate(X, agg, fx.cfg.epsilon_s, DescriptorKind::kRatio);
    CHECK(bit_equal(res.proxy, proxy));
}

TEST_CASE("cached candidates short-circuit the search") {
    Fixture fx;
    const Matrix X = testutil::random_matrix(8, 2, 90);
    CandidateSet cands = fx.index->search(X, fx.rcfg, std::nullopt);
    ConstructContext cached_ctx = fx.ctx;
    cached_ctx.cached = &cands;
    cached_ctx.index = nullptr;  // must not be needed
    AuxiliaryResult a = construct(X, fx.lib, fx.rcfg, fx.cfg, cached_ctx);
    AuxiliaryResult b = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);
    CHECK(bit_equal(a.Z, b.Z));
}

TEST_CASE("construct without index or cache falls back to a direct scan") {
    Fixture fx;
    ConstructContext bare;
    bare.chains = &fx.chains;
    const Matrix X = testutil::random_matrix(8, 2, 91);
    AuxiliaryResult a = construct(X, fx.lib, fx.rcfg, fx.cfg, bare);
    AuxiliaryResult b = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);
    CHECK(bit_equal(a.Z, b.Z));
}

TEST_CASE("variant and library descriptor kinds must match") {
    Fixture ratio_fx(DescriptorKind::kRatio);
    Fixture res_fx(DescriptorKind::kResidual);
    const Matrix X = testutil::random_matrix(8, 2, 92);

    ContinuationConfig want_res;
    want_res.variant = Variant::kResidual;
    CHECK_THROWS_WITH(construct(X, ratio_fx.lib, ratio_fx.rcfg, want_res, ratio_fx.ctx),
                      ContainsSubstring("residual"));

    ContinuationConfig want_ratio;
    want_ratio.variant = Variant::kRatio;
    CHECK_THROWS_WITH(construct(X, res_fx.lib, res_fx.rcfg, want_ratio, res_fx.ctx), ContainsSubstring("ratio"));

    // Matched kinds work.
    CHECK_NOTHROW(construct(X, res_fx.lib, res_fx.rcfg, want_res, res_fx.ctx));
}

TEST_CASE("residual variant composes residual aggregation with addition") {
    Fixture fx(DescriptorKind::kResidual);
    fx.cfg.variant = Variant::kResidual;
    const Matrix X = testutil::random_matrix(8, 2, 93);
    AuxiliaryResult res = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);

    CandidateSet cands = fx.index->search(X, fx.rcfg, std::nullopt);
    auto [agg, weights] = aggregate(cands, fx.lib, fx.cfg.tau);
    ClipResult cr = clip(agg, fx.cfg.clip_quantile);
    Matrix proxy = modulate(X, cr.clipped, fx.cfg.epsilon_s, DescriptorKind::kResidual);
    CHECK(bit_equal(res.proxy, proxy));
}

TEST_CASE("direct continuation averages raw futures and only aligns") {
    Fixture fx;
    fx.cfg.variant = Variant::kDirectContinuation;
    const Matrix X = testutil::random_matrix(8, 2, 94);
    AuxiliaryResult res = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);

    CandidateSet cands = fx.index->search(X, fx.rcfg, std::nullopt);
    auto weights = softmax_weights(cands, fx.cfg.tau);
    Matrix avg(8, 2, 0.0);
    for (int c = 0; c < 2; ++c)
        for (size_t j = 0; j < cands.per_channel[c].size(); ++j) {
            const Candidate& cd = cands.per_channel[c][j];
            for (int t = 0; t < 8; ++t) avg(t, c) += weights[c][j] * fx.chains[cd.index].F(t, c);
        }
    CHECK(bit_equal(res.proxy, avg));
    CHECK(bit_equal(res.Z, align(avg, X, fx.cfg.align_epsilon)));
}

TEST_CASE("target variant resizes the target segment to the history length") {
    // T < L: the final target row repeats; T > L: the tail is dropped.
    Chain shorty;
    shorty.H = testutil::random_matrix(4, 1, 1);
    shorty.Y = Matrix(2, 1);
    shorty.Y(0, 0) = 10.0;
    shorty.Y(1, 0) = 20.0;
    shorty.F = testutil::random_matrix(4, 1, 2);
    shorty.start_index = 0;

    Matrix seg = kupbi::detail::target_segment(shorty, 4);
    CHECK(seg(0, 0) == 10.0);
    CHECK(seg(1, 0) == 20.0);
    CHECK(seg(2, 0) == 20.0);
    CHECK(seg(3, 0) == 20.0);

    Chain longy = shorty;
    longy.Y = Matrix(6, 1);
    for (int t = 0; t < 6; ++t) longy.Y(t, 0) = t;
    Matrix seg2 = kupbi::detail::target_segment(longy, 4);
    for (int t = 0; t < 4; ++t) CHECK(seg2(t, 0) == static_cast<double>(t));

    // End-to-end: the variant runs and aligns.
    Fixture fx;
    fx.cfg.variant = Variant::kTarget;
    const Matrix X = testutil::random_matrix(8, 2, 95);
    AuxiliaryResult res = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);
    CHECK(res.Z.rows == 8);
    CHECK(res.Z.cols == 2);
}

TEST_CASE("random retrieval is deterministic, uniform, and respects exclusion") {
    Fixture fx;
    fx.cfg.variant = Variant::kRandomRetrieval;
    fx.rcfg.k = 4;
    fx.rcfg.exclude_self_window = true;
    fx.rcfg.exclusion_radius = 3;
    fx.ctx.query_start = 5;
    const Matrix X = testutil::random_matrix(8, 2, 96);

    AuxiliaryResult a = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);
    AuxiliaryResult b = construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx);
    CHECK(bit_equal(a.Z, b.Z));  // same seed, same draw

    ConstructContext other = fx.ctx;
    other.seed = 6;
    AuxiliaryResult c = construct(X, fx.lib, fx.rcfg, fx.cfg, other);
    CHECK_FALSE(bit_equal(a.Z, c.Z));  // a different seed draws differently

    for (const auto& list : a.candidates.per_channel) {
        REQUIRE(list.size() == 4);
        for (const Candidate& cd : list) {
            CHECK(cd.corr == 0.0);
            CHECK(std::labs(fx.lib.entries[cd.index].source_start - 5) >= 3);
        }
        // Distinct picks, sorted ascending.
        for (size_t j = 1; j < list.size(); ++j) CHECK(list[j].index > list[j - 1].index);
    }
    // Zero correlations make the averaging weights exactly uniform.
    for (const auto& w : a.weights)
        for (double v : w) CHECK(v == 0.25);
}

TEST_CASE("pbcc needs a trained predictor with horizon L") {
    Fixture fx;
    fx.cfg.variant = Variant::kPbcc;
    const Matrix X = testutil::random_matrix(8, 2, 97);
    CHECK_THROWS_WITH(construct(X, fx.lib, fx.rcfg, fx.cfg, fx.ctx),
                      ContainsSubstring("without a trained predictor"));

    // Train the H -> F predictor on the fixture chains.
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.batch_size = 4;
    std::vector<Chain> val(fx.chains.begin(), fx.chains.begin() + 3);
    LinearBackbone pred = train_pbcc_predictor(fx.chains, val, tc, 3);
    CHECK(pred.horizon() == 8);

    ConstructContext ctx = fx.ctx;
    ctx.pbcc = &pred;
    AuxiliaryResult res = construct(X, fx.lib, fx.rcfg, fx.cfg, ctx);
    CHECK(bit_equal(res.proxy, pred.forward(X)));
    CHECK(bit_equal(res.Z, align(res.proxy, X, fx.cfg.align_epsilon)));

    LinearBackbone wrong(8, 5, 2, 3, false);  // horizon != L
    wrong.init(1);
    ctx.pbcc = &wrong;
    CHECK_THROWS_WITH(construct(X, fx.lib, fx.rcfg, fx.cfg, ctx), ContainsSubstring("horizon"));
}

TEST_CASE("construct validates the query shape") {
    Fixture fx;
    CHECK_THROWS(construct(testutil::random_matrix(7, 2, 1), fx.lib, fx.rcfg, fx.cfg, fx.ctx));
    CHECK_THROWS(construct(testutil::random_matrix(8, 3, 1), fx.lib, fx.rcfg, fx.cfg, fx.ctx));
}

TEST_CASE("single-entry retrieval reconstructs the stored continuation") {
    // Query == stored history, k=1, no exclusion: the ratio round-trip
    // recovers F on elements whose history is not tiny.  A planted huge
    // ratio keeps the clip threshold far above the checked elements.
    const int L = 6, C = 1;
    Chain ch;
    ch.H = Matrix(L, C);
    ch.F = Matrix(L, C);
    ch.Y = Matrix(2, C);
    // The guard epsilon perturbs the denominator by eps/|H| relatively, so
    // keep |H| and the F/H step sized for comfortable 1e-4 reconstruction.
    Rng rng(mix64(4242));
    for (int t = 0; t < L; ++t) {
        ch.H(t, 0) = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 2.0);
        ch.F(t, 0) = ch.H(t, 0) * rng.uniform(0.8, 1.25);
    }
    ch.H(L - 1, 0) = 1e-6;  // tiny history element -> huge stored ratio
    ch.F(L - 1, 0) = 2.0;
    ch.start_index = 0;

    RetrievalLibrary lib = build_library({ch}, 1e-4);
    RetrievalConfig rcfg;
    rcfg.k = 1;
    rcfg.exclude_self_window = false;
    ContinuationConfig cfg;
    ConstructContext ctx;
    AuxiliaryResult res = construct(ch.H, lib, rcfg, cfg, ctx);

    for (int t = 0; t < L - 1; ++t) {
        REQUIRE(std::fabs(ch.H(t, 0)) >= 0.1);
        CHECK_THAT(res.proxy(t, 0), Catch::Matchers::WithinRel(ch.F(t, 0), 1e-4));
    }
}
