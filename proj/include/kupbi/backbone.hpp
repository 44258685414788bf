#pragma once

#include "kupbi/fusion.hpp"
#include "kupbi/library.hpp"

namespace kupbi {

/**
 * @brief Moving-average trend/seasonal decomposition.
 *
 * Kernel must be odd so the window is centred; edges are padded by
 * replicating the first/last row.  seasonal = X - trend, which makes the
 * additive identity seasonal + trend == X exact up to rounding.
 */
inline std::pair<Matrix, Matrix> decompose(const Matrix& X, int kernel) {
    if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument("decompose: kernel must be odd and positive");
    const int L = X.rows, C = X.cols;
    Matrix trend(L, C), seasonal(L, C);
    const int h = kernel / 2;
    const double inv = 1.0 / kernel;
    for (int c = 0; c < C; ++c) {
        for (int t = 0; t < L; ++t) {
            double s = 0.0;
            for (int i = t - h; i <= t + h; ++i) {
                const int idx = i < 0 ? 0 : (i >= L ? L - 1 : i);
                s += X(idx, c);
            }
            trend(t, c) = s * inv;
            seasonal(t, c) = X(t, c) - trend(t, c);
        }
    }
    return {seasonal, trend};
}

/**
 * @brief Linear forecaster over a seasonal/trend decomposition, optionally
 * fused with an auxiliary stream through a gated residual mix.
 *
 * Each stream has a [T_out x L] weight map plus a length-T_out bias.  By
 * default one map is shared across channels; individual mode keeps a map and
 * bias per channel.  The augmented forward decomposes the auxiliary window
 * with the same kernel and fuses stream-wise before the linear heads; one
 * gate parameter set is shared between the two streams unless per-stream
 * gates are enabled.
 */
class LinearBackbone {
public:
    LinearBackbone() = default;

    LinearBackbone(int input_len, int horizon, int channels, int kernel = 25, bool individual = false)
        : L_(input_len), T_(horizon), C_(channels), kernel_(kernel), individual_(individual) {
        if (L_ <= 0 || T_ <= 0 || C_ <= 0) throw std::invalid_argument("LinearBackbone: dimensions must be positive");
        if (kernel_ <= 0 || kernel_ % 2 == 0) throw std::invalid_argument("LinearBackbone: kernel must be odd");
        const int blocks = individual_ ? C_ : 1;
        Ws_.assign(blocks, Matrix(T_, L_, 0.0));
        Wt_.assign(blocks, Matrix(T_, L_, 0.0));
        bs_.assign(blocks, std::vector<double>(T_, 0.0));
        bt_.assign(blocks, std::vector<double>(T_, 0.0));
    }

    int input_len() const { return L_; }
    int horizon() const { return T_; }
    int channels() const { return C_; }
    int kernel() const { return kernel_; }
    bool individual() const { return individual_; }

    /// Draw every weight from U[-1/L, 1/L] in a fixed order; biases stay 0.
    void init(uint64_t seed) {
        Rng rng(mix64(seed));
        const double bound = 1.0 / L_;
        for (Matrix& w : Ws_)
            for (double& v : w.data) v = rng.uniform(-bound, bound);
        for (Matrix& w : Wt_)
            for (double& v : w.data) v = rng.uniform(-bound, bound);
        for (auto& b : bs_) std::fill(b.begin(), b.end(), 0.0);
        for (auto& b : bt_) std::fill(b.begin(), b.end(), 0.0);
        if (gate_) reset_gate_params(*gate_);
        if (gate_trend_) reset_gate_params(*gate_trend_);
    }

    /// Attach fusion gates.  One parameter set is shared across the seasonal
    /// and trend streams unless @p per_stream, which clones a second set.
    void enable_fusion(GateMode mode, double alpha, bool per_stream = false) {
        gate_ = (mode == GateMode::kStatic) ? GateParams::static_gate(alpha) : GateParams::dynamic_gate(alpha, C_);
        gate_trend_.reset();
        if (per_stream)
            gate_trend_ = (mode == GateMode::kStatic) ? GateParams::static_gate(alpha) : GateParams::dynamic_gate(alpha, C_);
    }

    bool fusion_enabled() const { return gate_.has_value(); }
    bool gate_per_stream() const { return gate_trend_.has_value(); }
    GateParams& gate_params() { return require_gate(); }
    const GateParams& gate_params() const { return const_cast<LinearBackbone*>(this)->require_gate(); }
    GateParams& trend_gate_params() { return gate_trend_ ? *gate_trend_ : require_gate(); }
    void set_alpha(double alpha) {
        require_gate().alpha = alpha;
        if (gate_trend_) gate_trend_->alpha = alpha;
    }

    /** Intermediate tensors of one forward pass, kept for backward. */
    struct Cache {
        Matrix Sx, Tx;          // decomposition of the input
        Matrix Sz, Tz;          // decomposition of the auxiliary stream
        Matrix fusedS, fusedT;  // streams entering the linear heads
        std::vector<double> gammaS, gammaT;
        bool augmented = false;
    };

    /// Baseline forward.
    Matrix forward(const Matrix& X) const {
        Cache cache;
        return forward_cached(X, nullptr, cache);
    }

    /// Augmented forward; requires fusion gates to be enabled.
    Matrix forward(const Matrix& X, const Matrix& Z) const {
        Cache cache;
        return forward_cached(X, &Z, cache);
    }

    Matrix forward_cached(const Matrix& X, const Matrix* Z, Cache& cache) const {
        check_input(X, "input");
        auto [Sx, Tx] = decompose(X, kernel_);
        cache.Sx = std::move(Sx);
        cache.Tx = std::move(Tx);
        cache.augmented = (Z != nullptr);
        if (Z) {
            const GateParams& gp = require_gate_const();
            check_input(*Z, "auxiliary");
            auto [Sz, Tz] = decompose(*Z, kernel_);
            cache.Sz = std::move(Sz);
            cache.Tz = std::move(Tz);
            const GateParams& gpt = gate_trend_ ? *gate_trend_ : gp;
            cache.gammaS = gate(cache.Sx, cache.Sz, gp);
            cache.gammaT = gate(cache.Tx, cache.Tz, gpt);
            cache.fusedS = fuse(cache.Sx, cache.Sz, cache.gammaS, gp.alpha);
            cache.fusedT = fuse(cache.Tx, cache.Tz, cache.gammaT, gpt.alpha);
        } else {
            cache.fusedS = cache.Sx;
            cache.fusedT = cache.Tx;
        }
        return heads(cache.fusedS, cache.fusedT);
    }

    /** Parameter-shaped gradient accumulator. */
    struct Grads {
        std::vector<Matrix> dWs, dWt;
        std::vector<std::vector<double>> dbs, dbt;
        double dg = 0.0, dg_trend = 0.0;
        Matrix dphi_w, dphi_w_trend;
        std::vector<double> dphi_b, dphi_b_trend;

        void scale(double s) {
            for (Matrix& m : dWs)
                for (double& v : m.data) v *= s;
            for (Matrix& m : dWt)
                for (double& v : m.data) v *= s;
            for (auto& b : dbs)
                for (double& v : b) v *= s;
            for (auto& b : dbt)
                for (double& v : b) v *= s;
            dg *= s;
            dg_trend *= s;
            for (double& v : dphi_w.data) v *= s;
            for (double& v : dphi_w_trend.data) v *= s;
            for (double& v : dphi_b) v *= s;
            for (double& v : dphi_b_trend) v *= s;
        }
    };

    Grads zero_grads() const {
        Grads g;
        const int blocks = individual_ ? C_ : 1;
        g.dWs.assign(blocks, Matrix(T_, L_, 0.0));
        g.dWt.assign(blocks, Matrix(T_, L_, 0.0));
        g.dbs.assign(blocks, std::vector<double>(T_, 0.0));
        g.dbt.assign(blocks, std::vector<double>(T_, 0.0));
        if (gate_ && gate_->mode == GateMode::kDynamic) {
            g.dphi_w = Matrix(C_, 2 * C_, 0.0);
            g.dphi_b.assign(C_, 0.0);
        }
        if (gate_trend_ && gate_trend_->mode == GateMode::kDynamic) {
            g.dphi_w_trend = Matrix(C_, 2 * C_, 0.0);
            g.dphi_b_trend.assign(C_, 0.0);
        }
        return g;
    }

    /**
     * @brief Accumulate parameter gradients for one sample.
     *
     * @param dY upstream dLoss/dYhat, [T_out x C].  Gradients flow through
     * the linear heads into the fusion gates when the pass was augmented.
     */
    void backward(const Cache& cache, const Matrix& dY, Grads& grads) const {
        if (dY.rows != T_ || dY.cols != C_) throw std::invalid_argument("backward: dY shape mismatch");

        // Transposed streams: [C x L] rows are contiguous per channel.
        const Matrix St = transpose(cache.fusedS);
        const Matrix Tt = transpose(cache.fusedT);

        Matrix dSt, dTt;
        const bool need_input_grads = cache.augmented;
        if (need_input_grads) {
            dSt = Matrix(C_, L_, 0.0);
            dTt = Matrix(C_, L_, 0.0);
        }

        for (int c = 0; c < C_; ++c) {
            const int wi = individual_ ? c : 0;
            Matrix& dWs = grads.dWs[wi];
            Matrix& dWt = grads.dWt[wi];
            std::vector<double>& dbs = grads.dbs[wi];
            std::vector<double>& dbt = grads.dbt[wi];
            for (int tau = 0; tau < T_; ++tau) {
                const double gy = dY(tau, c);
                if (gy == 0.0) continue;
                axpy(gy, St.row(c), dWs.row(tau), L_);
                axpy(gy, Tt.row(c), dWt.row(tau), L_);
                dbs[tau] += gy;
                dbt[tau] += gy;
                if (need_input_grads) {
                    axpy(gy, Ws_[wi].row(tau), dSt.row(c), L_);
                    axpy(gy, Wt_[wi].row(tau), dTt.row(c), L_);
                }
            }
        }

        if (!cache.augmented) return;

        const GateParams& gp = require_gate_const();
        const GateParams& gpt = gate_trend_ ? *gate_trend_ : gp;
        const Matrix dfusedS = transpose(dSt);
        const Matrix dfusedT = transpose(dTt);
        const FusionGrads fs = fusion_backward(cache.Sx, cache.Sz, gp, cache.gammaS, dfusedS);
        const FusionGrads ft = fusion_backward(cache.Tx, cache.Tz, gpt, cache.gammaT, dfusedT);

        if (gp.mode == GateMode::kStatic) {
            grads.dg += fs.dg;
        } else {
            for (size_t i = 0; i < grads.dphi_w.data.size(); ++i) grads.dphi_w.data[i] += fs.dphi_w.data[i];
            for (size_t i = 0; i < grads.dphi_b.size(); ++i) grads.dphi_b[i] += fs.dphi_b[i];
        }
        if (gate_trend_) {
            if (gpt.mode == GateMode::kStatic) {
                grads.dg_trend += ft.dg;
            } else {
                for (size_t i = 0; i < grads.dphi_w_trend.data.size(); ++i) grads.dphi_w_trend.data[i] += ft.dphi_w.data[i];
                for (size_t i = 0; i < grads.dphi_b_trend.size(); ++i) grads.dphi_b_trend[i] += ft.dphi_b[i];
            }
        } else {
            // Shared gate: the trend stream's contribution lands on the same parameters.
            if (gp.mode == GateMode::kStatic) {
                grads.dg += ft.dg;
            } else {
                for (size_t i = 0; i < grads.dphi_w.data.size(); ++i) grads.dphi_w.data[i] += ft.dphi_w.data[i];
                for (size_t i = 0; i < grads.dphi_b.size(); ++i) grads.dphi_b[i] += ft.dphi_b[i];
            }
        }
    }

    /** Mutable views over every trainable parameter, in a fixed order. */
    struct ParamView {
        double* p;
        size_t n;
    };

    std::vector<ParamView> param_views() {
        std::vector<ParamView> v;
        for (Matrix& w : Ws_) v.push_back({w.data.data(), w.data.size()});
        for (auto& b : bs_) v.push_back({b.data(), b.size()});
        for (Matrix& w : Wt_) v.push_back({w.data.data(), w.data.size()});
        for (auto& b : bt_) v.push_back({b.data(), b.size()});
        if (gate_) append_gate_views(*gate_, v);
        if (gate_trend_) append_gate_views(*gate_trend_, v);
        return v;
    }

    std::vector<ParamView> grad_views(Grads& g) const {
        std::vector<ParamView> v;
        for (Matrix& w : g.dWs) v.push_back({w.data.data(), w.data.size()});
        for (auto& b : g.dbs) v.push_back({b.data(), b.size()});
        for (Matrix& w : g.dWt) v.push_back({w.data.data(), w.data.size()});
        for (auto& b : g.dbt) v.push_back({b.data(), b.size()});
        if (gate_) {
            if (gate_->mode == GateMode::kStatic) {
                v.push_back({&g.dg, 1});
            } else {
                v.push_back({g.dphi_w.data.data(), g.dphi_w.data.size()});
                v.push_back({g.dphi_b.data(), g.dphi_b.size()});
            }
        }
        if (gate_trend_) {
            if (gate_trend_->mode == GateMode::kStatic) {
                v.push_back({&g.dg_trend, 1});
            } else {
                v.push_back({g.dphi_w_trend.data.data(), g.dphi_w_trend.data.size()});
                v.push_back({g.dphi_b_trend.data(), g.dphi_b_trend.size()});
            }
        }
        return v;
    }

    size_t param_count() {
        size_t n = 0;
        for (const ParamView& v : param_views()) n += v.n;
        return n;
    }

    std::vector<double> snapshot_params() {
        std::vector<double> out;
        for (const ParamView& v : param_views()) out.insert(out.end(), v.p, v.p + v.n);
        return out;
    }

    void restore_params(const std::vector<double>& flat) {
        size_t off = 0;
        for (const ParamView& v : param_views()) {
            if (off + v.n > flat.size()) throw std::invalid_argument("restore_params: size mismatch");
            std::copy(flat.begin() + off, flat.begin() + off + v.n, v.p);
            off += v.n;
        }
        if (off != flat.size()) throw std::invalid_argument("restore_params: size mismatch");
    }

    // --- checkpoint io -----------------------------------------------------

    void save(const std::string& path) {
        std::ofstream out(path, std::ios::binary);
        if (!out.is_open()) throw std::runtime_error("LinearBackbone::save: cannot open " + path);
        out.write(kCkptMagic, 8);
        detail::write_pod(out, kCkptVersion);
        detail::write_pod(out, static_cast<uint32_t>(L_));
        detail::write_pod(out, static_cast<uint32_t>(T_));
        detail::write_pod(out, static_cast<uint32_t>(C_));
        detail::write_pod(out, static_cast<uint32_t>(kernel_));
        detail::write_pod(out, static_cast<uint8_t>(individual_));
        detail::write_pod(out, static_cast<uint8_t>(gate_.has_value()));
        detail::write_pod(out, static_cast<uint8_t>(gate_ && gate_->mode == GateMode::kDynamic));
        detail::write_pod(out, static_cast<uint8_t>(gate_trend_.has_value()));
        detail::write_pod(out, gate_ ? gate_->alpha : 0.0);
        const std::vector<double> flat = snapshot_params();
        detail::write_pod(out, static_cast<uint64_t>(flat.size()));
        detail::write_doubles(out, flat);
        if (!out) throw std::runtime_error("LinearBackbone::save: write failed: " + path);
    }

    static LinearBackbone load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in.is_open()) throw std::runtime_error("LinearBackbone::load: cannot open " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
            throw std::runtime_error("LinearBackbone::load: not a checkpoint file: " + path);
        uint32_t version;
        detail::read_pod(in, version, "version");
        if (version != kCkptVersion)
            throw std::runtime_error("LinearBackbone::load: unsupported version " + std::to_string(version));
        uint32_t L, T, C, kernel;
        uint8_t individual, has_gate, dynamic, per_stream;
        double alpha;
        detail::read_pod(in, L, "L");
        detail::read_pod(in, T, "T");
        detail::read_pod(in, C, "C");
        detail::read_pod(in, kernel, "kernel");
        detail::read_pod(in, individual, "individual");
        detail::read_pod(in, has_gate, "gate flag");
        detail::read_pod(in, dynamic, "gate mode");
        detail::read_pod(in, per_stream, "per-stream flag");
        detail::read_pod(in, alpha, "alpha");
        LinearBackbone m(static_cast<int>(L), static_cast<int>(T), static_cast<int>(C), static_cast<int>(kernel),
                         individual != 0);
        if (has_gate)
            m.enable_fusion(dynamic ? GateMode::kDynamic : GateMode::kStatic, alpha, per_stream != 0);
        uint64_t n;
        detail::read_pod(in, n, "parameter count");
        if (n != m.param_count()) throw std::runtime_error("LinearBackbone::load: parameter count mismatch");
        std::vector<double> flat(n);
        detail::read_doubles(in, flat, "parameters");
        m.restore_params(flat);
        return m;
    }

private:
    static constexpr char kCkptMagic[8] = {'K', 'U', 'P', 'B', 'I', 'C', 'K', 'P'};
    static constexpr uint32_t kCkptVersion = 1;

    void check_input(const Matrix& X, const char* what) const {
        if (X.rows != L_ || X.cols != C_)
            throw std::invalid_argument(std::string("LinearBackbone: ") + what + " shape " + std::to_string(X.rows) +
                                        "x" + std::to_string(X.cols) + ", expected " + std::to_string(L_) + "x" +
                                        std::to_string(C_));
    }

    GateParams& require_gate() {
        if (!gate_) throw std::logic_error("LinearBackbone: fusion gates not enabled");
        return *gate_;
    }
    const GateParams& require_gate_const() const {
        if (!gate_) throw std::logic_error("LinearBackbone: augmented forward without fusion gates");
        return *gate_;
    }

    static void reset_gate_params(GateParams& gp) {
        gp.g = 0.0;
        for (double& v : gp.phi_w.data) v = 0.0;
        for (double& v : gp.phi_b) v = 0.0;
    }

    static void append_gate_views(GateParams& gp, std::vector<ParamView>& v) {
        if (gp.mode == GateMode::kStatic) {
            v.push_back({&gp.g, 1});
        } else {
            v.push_back({gp.phi_w.data.data(), gp.phi_w.data.size()});
            v.push_back({gp.phi_b.data(), gp.phi_b.size()});
        }
    }

    static Matrix transpose(const Matrix& m) {
        Matrix out(m.cols, m.rows);
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c) out(c, r) = m(r, c);
        return out;
    }

    /// Apply both linear heads to the (possibly fused) streams.
    Matrix heads(const Matrix& S, const Matrix& Tr) const {
        const Matrix St = transpose(S);
        const Matrix Tt = transpose(Tr);
        Matrix Y(T_, C_);
        for (int c = 0; c < C_; ++c) {
            const int wi = individual_ ? c : 0;
            const Matrix& Ws = Ws_[wi];
            const Matrix& Wt = Wt_[wi];
            const std::vector<double>& bs = bs_[wi];
            const std::vector<double>& bt = bt_[wi];
            for (int tau = 0; tau < T_; ++tau)
                Y(tau, c) = dot(Ws.row(tau), St.row(c), L_) + bs[tau] + dot(Wt.row(tau), Tt.row(c), L_) + bt[tau];
        }
        return Y;
    }

    int L_ = 0, T_ = 0, C_ = 0, kernel_ = 25;
    bool individual_ = false;
    std::vector<Matrix> Ws_, Wt_;
    std::vector<std::vector<double>> bs_, bt_;
    std::optional<GateParams> gate_;
    std::optional<GateParams> gate_trend_;
};

}  // namespace kupbi
