#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "kupbi/backbone.hpp"

using namespace kupbi;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

TEST_CASE("moving-average trend of a ramp, kernel 3") {
    Matrix X(5, 1);
    for (int t = 0; t < 5; ++t) X(t, 0) = t;
    auto [seasonal, trend] = decompose(X, 3);
    // Replicate padding: the edge windows reuse the first/last sample.
    CHECK_THAT(trend(0, 0), WithinAbs(1.0 / 3.0, 1e-12));
    CHECK_THAT(trend(1, 0), WithinAbs(1.0, 1e-12));
    CHECK_THAT(trend(2, 0), WithinAbs(2.0, 1e-12));
    CHECK_THAT(trend(3, 0), WithinAbs(3.0, 1e-12));
    CHECK_THAT(trend(4, 0), WithinAbs(11.0 / 3.0, 1e-12));
    for (int t = 0; t < 5; ++t) CHECK_THAT(seasonal(t, 0) + trend(t, 0), WithinAbs(X(t, 0), 1e-12));
}

TEST_CASE("decomposition reconstructs the input additively") {
    Matrix X = testutil::synth_series(64, 3, 21);
    auto [seasonal, trend] = decompose(X, 25);
    for (size_t i = 0; i < X.data.size(); ++i)
        CHECK_THAT(seasonal.data[i] + trend.data[i], WithinAbs(X.data[i], 1e-12));
}

TEST_CASE("kernel one leaves the trend equal to the input") {
    Matrix X = testutil::random_matrix(10, 2, 22);
    auto [seasonal, trend] = decompose(X, 1);
    CHECK(bit_equal(trend, X));
    for (double v : seasonal.data) CHECK(v == 0.0);
}

TEST_CASE("constant input decomposes into pure trend") {
    Matrix X(30, 2, 0.7);
    auto [seasonal, trend] = decompose(X, 25);
    for (double v : trend.data) CHECK_THAT(v, WithinAbs(0.7, 1e-15));
    for (double v : seasonal.data) CHECK_THAT(v, WithinAbs(0.0, 1e-15));
}

TEST_CASE("decompose rejects even or non-positive kernels") {
    Matrix X(4, 1, 1.0);
    CHECK_THROWS(decompose(X, 0));
    CHECK_THROWS(decompose(X, 4));
    CHECK_THROWS(decompose(X, -3));
}

TEST_CASE("constructor validation") {
    CHECK_THROWS(LinearBackbone(0, 4, 2));
    CHECK_THROWS(LinearBackbone(8, 4, 2, 24));  // even kernel
    LinearBackbone m(8, 4, 2, 3);
    CHECK(m.input_len() == 8);
    CHECK(m.horizon() == 4);
    CHECK(m.channels() == 2);
    CHECK(m.kernel() == 3);
    CHECK_FALSE(m.individual());
    CHECK_FALSE(m.fusion_enabled());
    CHECK_THROWS_AS(m.gate_params(), std::logic_error);
    Matrix X = testutil::random_matrix(8, 2, 23);
    CHECK_THROWS_AS(m.forward(X, X), std::logic_error);  // no gates attached
    CHECK_THROWS(m.forward(testutil::random_matrix(7, 2, 24)));
}

TEST_CASE("weight init is deterministic, bounded, and ordered") {
    const int L = 8, T = 4, C = 2;
    LinearBackbone a(L, T, C, 3), b(L, T, C, 3);
    a.init(99);
    b.init(99);
    CHECK(a.snapshot_params() == b.snapshot_params());
    b.init(100);
    CHECK(a.snapshot_params() != b.snapshot_params());

    // Replay the draw order through the flat parameter layout:
    // seasonal weights, seasonal biases (0), trend weights, trend biases (0).
    const auto flat = a.snapshot_params();
    REQUIRE(flat.size() == static_cast<size_t>(2 * T * L + 2 * T));
    Rng rng(mix64(99));
    const double bound = 1.0 / L;
    size_t i = 0;
    for (int n = 0; n < T * L; ++n) {
        const double expect = rng.uniform(-bound, bound);
        CHECK(flat[i] == expect);
        ++i;
    }
    for (int n = 0; n < T; ++n) CHECK(flat[i++] == 0.0);
    for (int n = 0; n < T * L; ++n) {
        const double expect = rng.uniform(-bound, bound);
        CHECK(flat[i] == expect);
        ++i;
    }
    for (int n = 0; n < T; ++n) CHECK(flat[i++] == 0.0);
    for (double v : flat) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("parameter counts for every configuration") {
    const int L = 8, T = 4, C = 3;
    const size_t linear = static_cast<size_t>(2 * T * (L + 1));
    LinearBackbone shared(L, T, C, 3);
    CHECK(shared.param_count() == linear);

    LinearBackbone indiv(L, T, C, 3, true);
    CHECK(indiv.param_count() == C * linear);

    LinearBackbone st(L, T, C, 3);
    st.enable_fusion(GateMode::kStatic, 0.75);
    CHECK(st.param_count() == linear + 1);
    st.enable_fusion(GateMode::kStatic, 0.75, true);
    CHECK(st.gate_per_stream());
    CHECK(st.param_count() == linear + 2);

    LinearBackbone dy(L, T, C, 3);
    dy.enable_fusion(GateMode::kDynamic, 0.75);
    CHECK(dy.param_count() == linear + C * 2 * C + C);
    dy.enable_fusion(GateMode::kDynamic, 0.75, true);
    CHECK(dy.param_count() == linear + 2 * (C * 2 * C + C));

    size_t total = 0;
    for (const auto& v : dy.param_views()) total += v.n;
    CHECK(total == dy.param_count());
}

TEST_CASE("set_alpha reaches both gate parameter sets") {
    LinearBackbone m(8, 4, 2, 3);
    m.enable_fusion(GateMode::kStatic, 0.75, true);
    m.set_alpha(1.0);
    CHECK(m.gate_params().alpha == 1.0);
    CHECK(m.trend_gate_params().alpha == 1.0);
}

TEST_CASE("alpha one makes the augmented forward equal the baseline bit-for-bit") {
    const int L = 16, T = 6, C = 3;
    LinearBackbone m(L, T, C, 5);
    m.init(7);
    m.enable_fusion(GateMode::kStatic, 1.0);
    Matrix X = testutil::random_matrix(L, C, 30);
    Matrix Z = testutil::random_matrix(L, C, 31);
    CHECK(bit_equal(m.forward(X, Z), m.forward(X)));

    m.enable_fusion(GateMode::kDynamic, 1.0, true);
    m.gate_params().phi_w = testutil::random_matrix(C, 2 * C, 32);
    CHECK(bit_equal(m.forward(X, Z), m.forward(X)));
}

TEST_CASE("an auxiliary stream equal to the input changes nothing bit-for-bit") {
    const int L = 16, T = 6, C = 3;
    LinearBackbone m(L, T, C, 5);
    m.init(8);
    m.enable_fusion(GateMode::kStatic, 0.4);
    m.gate_params().g = 0.8;
    Matrix X = testutil::random_matrix(L, C, 33);
    CHECK(bit_equal(m.forward(X, X), m.forward(X)));
}

TEST_CASE("checkpoint round-trips bit-for-bit across configurations") {
    namespace fs = std::filesystem;
    const fs::path dir = testutil::fresh_dir("ckpt");
    const int L = 8, T = 4, C = 2;

    auto roundtrip = [&](LinearBackbone& m, const std::string& name) {
        const fs::path p = dir / name;
        m.save(p.string());
        LinearBackbone r = LinearBackbone::load(p.string());
        CHECK(r.input_len() == m.input_len());
        CHECK(r.horizon() == m.horizon());
        CHECK(r.channels() == m.channels());
        CHECK(r.kernel() == m.kernel());
        CHECK(r.individual() == m.individual());
        CHECK(r.fusion_enabled() == m.fusion_enabled());
        CHECK(r.gate_per_stream() == m.gate_per_stream());
        CHECK(r.snapshot_params() == m.snapshot_params());
        if (m.fusion_enabled()) CHECK(r.gate_params().alpha == m.gate_params().alpha);
    };

    LinearBackbone base(L, T, C, 3);
    base.init(1);
    roundtrip(base, "base.ckpt");

    LinearBackbone st(L, T, C, 3);
    st.init(2);
    st.enable_fusion(GateMode::kStatic, 0.75);
    st.gate_params().g = 0.31;
    roundtrip(st, "static.ckpt");

    LinearBackbone dy(L, T, C, 3);
    dy.init(3);
    dy.enable_fusion(GateMode::kDynamic, 0.6, true);
    dy.gate_params().phi_w = testutil::random_matrix(C, 2 * C, 40);
    dy.trend_gate_params().phi_b = {0.1, -0.2};
    roundtrip(dy, "dynamic.ckpt");

    LinearBackbone indiv(L, T, C, 3, true);
    indiv.init(4);
    roundtrip(indiv, "individual.ckpt");

    // Same inputs, same forecasts after reload.
    Matrix X = testutil::random_matrix(L, C, 41);
    LinearBackbone r = LinearBackbone::load((dir / "static.ckpt").string());
    CHECK(bit_equal(r.forward(X), st.forward(X)));
}

TEST_CASE("checkpoint loader rejects junk and truncation") {
    namespace fs = std::filesystem;
    const fs::path dir = testutil::fresh_dir("ckpt_bad");
    {
        std::ofstream out(dir / "junk.ckpt", std::ios::binary);
        out << "definitely not a checkpoint";
    }
    CHECK_THROWS_WITH(LinearBackbone::load((dir / "junk.ckpt").string()), ContainsSubstring("not a checkpoint"));
    CHECK_THROWS_WITH(LinearBackbone::load((dir / "absent.ckpt").string()), ContainsSubstring("cannot open"));

    LinearBackbone m(8, 4, 2, 3);
    m.init(5);
    const fs::path p = dir / "trunc.ckpt";
    m.save(p.string());
    fs::resize_file(p, fs::file_size(p) - 24);
    CHECK_THROWS(LinearBackbone::load(p.string()));
}

// ---------------------------------------------------------------------------
// Whole-model gradient checks: backward vs central finite differences on
// loss = sum(cost . forward(X[, Z])).
// ---------------------------------------------------------------------------

namespace {

double model_loss(const LinearBackbone& m, const Matrix& X, const Matrix* Z, const Matrix& cost) {
    const Matrix Y = Z ? m.forward(X, *Z) : m.forward(X);
    double s = 0.0;
    for (size_t i = 0; i < Y.data.size(); ++i) s += cost.data[i] * Y.data[i];
    return s;
}

void gradcheck(LinearBackbone& m, const Matrix& X, const Matrix* Z, const Matrix& cost) {
    LinearBackbone::Cache cache;
    (void)m.forward_cached(X, Z, cache);
    auto grads = m.zero_grads();
    m.backward(cache, cost, grads);

    auto pviews = m.param_views();
    auto gviews = m.grad_views(grads);
    REQUIRE(pviews.size() == gviews.size());

    const double h = 1e-6;
    for (size_t v = 0; v < pviews.size(); ++v) {
        REQUIRE(pviews[v].n == gviews[v].n);
        for (size_t i = 0; i < pviews[v].n; ++i) {
            double& p = pviews[v].p[i];
            const double saved = p;
            p = saved + h;
            const double lp = model_loss(m, X, Z, cost);
            p = saved - h;
            const double lm = model_loss(m, X, Z, cost);
            p = saved;
            const double numeric = (lp - lm) / (2 * h);
            const double analytic = gviews[v].p[i];
            const double err = std::fabs(analytic - numeric);
            CHECK(err <= 1e-5 * std::max(std::fabs(analytic), std::fabs(numeric)) + 1e-9);
        }
    }
}

}  // namespace

TEST_CASE("analytic gradients match finite differences in every configuration") {
    const int L = 8, T = 4, C = 2;
    Matrix X = testutil::random_matrix(L, C, 50);
    Matrix Z = testutil::random_matrix(L, C, 51);
    Matrix cost = testutil::random_matrix(T, C, 52);

    SECTION("baseline, shared weights") {
        LinearBackbone m(L, T, C, 3);
        m.init(60);
        gradcheck(m, X, nullptr, cost);
    }
    SECTION("baseline, individual weights") {
        LinearBackbone m(L, T, C, 3, true);
        m.init(61);
        gradcheck(m, X, nullptr, cost);
    }
    SECTION("augmented, static shared gate") {
        LinearBackbone m(L, T, C, 3);
        m.init(62);
        m.enable_fusion(GateMode::kStatic, 0.75);
        m.gate_params().g = 0.2;
        gradcheck(m, X, &Z, cost);
    }
    SECTION("augmented, static per-stream gates") {
        LinearBackbone m(L, T, C, 3);
        m.init(63);
        m.enable_fusion(GateMode::kStatic, 0.5, true);
        m.gate_params().g = -0.3;
        m.trend_gate_params().g = 0.4;
        gradcheck(m, X, &Z, cost);
    }
    SECTION("augmented, dynamic gate with live mean path") {
        LinearBackbone m(L, T, C, 3);
        m.init(64);
        m.enable_fusion(GateMode::kDynamic, 0.65);
        m.gate_params().phi_w = testutil::random_matrix(C, 2 * C, 65, -0.5, 0.5);
        m.gate_params().phi_b = {0.1, -0.2};
        gradcheck(m, X, &Z, cost);
    }
    SECTION("augmented, dynamic per-stream, individual weights") {
        LinearBackbone m(L, T, C, 3, true);
        m.init(66);
        m.enable_fusion(GateMode::kDynamic, 0.8, true);
        m.gate_params().phi_w = testutil::random_matrix(C, 2 * C, 67, -0.5, 0.5);
        m.trend_gate_params().phi_w = testutil::random_matrix(C, 2 * C, 68, -0.5, 0.5);
        gradcheck(m, X, &Z, cost);
    }
}
