#pragma once

#include "kupbi/core.hpp"

namespace kupbi {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

enum class GateMode { kStatic, kDynamic };

/**
 * @brief Gated residual fusion parameters.
 *
 * Static mode learns one scalar logit g (gamma = sigmoid(g), initialised to
 * 0 so the gate starts at 1/2).  Dynamic mode learns an affine map phi from
 * the concatenated per-channel means of both inputs (2C values) to C gate
 * logits; phi is zero-initialised so it, too, starts at 1/2 everywhere.
 * alpha is a fixed mixing hyperparameter, not a trained weight.
 */
struct GateParams {
    GateMode mode = GateMode::kStatic;
    double alpha = 0.75;

    double g = 0.0;       // static-mode logit
    Matrix phi_w;         // dynamic mode: [C x 2C]
    std::vector<double> phi_b;  // dynamic mode: [C]

    static GateParams static_gate(double alpha) {
        GateParams p;
        p.mode = GateMode::kStatic;
        p.alpha = alpha;
        return p;
    }

    static GateParams dynamic_gate(double alpha, int channels) {
        GateParams p;
        p.mode = GateMode::kDynamic;
        p.alpha = alpha;
        p.phi_w = Matrix(channels, 2 * channels, 0.0);
        p.phi_b.assign(channels, 0.0);
        return p;
    }

    void validate(int channels) const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("GateParams: alpha must lie in [0, 1]");
        if (mode == GateMode::kDynamic) {
            if (phi_w.rows != channels || phi_w.cols != 2 * channels || static_cast<int>(phi_b.size()) != channels)
                throw std::invalid_argument("GateParams: phi shaped for different channel count");
        }
    }
};

/**
 * @brief Per-channel gate values gamma in (0, 1).
 *
 * Static: every channel gets sigmoid(g).  Dynamic: gamma[c] =
 * sigmoid(phi_w[c] . [mean(main); mean(aux)] + phi_b[c]) where the means run
 * along the time axis.
 */
inline std::vector<double> gate(const Matrix& main, const Matrix& aux, const GateParams& params) {
    require_same_shape(main, aux, "gate");
    params.validate(main.cols);
    const int C = main.cols;
    std::vector<double> gamma(C);
    if (params.mode == GateMode::kStatic) {
        const double v = sigmoid(params.g);
        std::fill(gamma.begin(), gamma.end(), v);
        return gamma;
    }
    std::vector<double> u(2 * C);
    for (int c = 0; c < C; ++c) {
        u[c] = column_mean(main, c);
        u[C + c] = column_mean(aux, c);
    }
    for (int c = 0; c < C; ++c) {
        double z = params.phi_b[c];
        z += dot(params.phi_w.row(c), u.data(), 2 * C);
        gamma[c] = sigmoid(z);
    }
    return gamma;
}

/**
 * @brief Gated residual mix: algebraically
 *   fused = alpha * main + (1 - alpha) * (gamma . main + (1 - gamma) . aux).
 *
 * Evaluated as  tilde = aux + gamma.(main - aux);
 *               fused = main - (1 - alpha).(main - tilde)
 * so that both exactness contracts hold in floating point: alpha = 1 returns
 * main bit-for-bit (the correction is multiplied by exactly 0), and
 * aux == main returns main bit-for-bit (every difference term is exactly 0).
 */
inline Matrix fuse(const Matrix& main, const Matrix& aux, const std::vector<double>& gamma, double alpha) {
    require_same_shape(main, aux, "fuse");
    if (static_cast<int>(gamma.size()) != main.cols) throw std::invalid_argument("fuse: gamma size mismatch");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("fuse: alpha must lie in [0, 1]");
    Matrix fused(main.rows, main.cols);
    const double one_minus_alpha = 1.0 - alpha;
    for (int t = 0; t < main.rows; ++t) {
        const double* m = main.row(t);
        const double* a = aux.row(t);
        double* f = fused.row(t);
        for (int c = 0; c < main.cols; ++c) {
            const double tilde = a[c] + gamma[c] * (m[c] - a[c]);
            f[c] = m[c] - one_minus_alpha * (m[c] - tilde);
        }
    }
    return fused;
}

/// gate() then fuse() in one call.
inline Matrix gate_and_fuse(const Matrix& main, const Matrix& aux, const GateParams& params) {
    return fuse(main, aux, gate(main, aux, params), params.alpha);
}

/// Effective weight on the main stream: alpha + (1 - alpha) * gamma, in [alpha, 1].
inline double effective_main_weight(double alpha, double gamma) { return alpha + (1.0 - alpha) * gamma; }

/**
 * @brief Gradients of a scalar loss through gate_and_fuse.
 *
 * Inputs: upstream dL/dfused.  Outputs: dL/dmain, dL/daux, and parameter
 * gradients (dg for static, dphi_w/dphi_b for dynamic).  The dynamic path
 * includes the contribution that flows through the channel-mean summaries
 * back into main and aux, so finite-difference checks close.
 */
struct FusionGrads {
    Matrix dmain, daux;
    double dg = 0.0;
    Matrix dphi_w;
    std::vector<double> dphi_b;
};

inline FusionGrads fusion_backward(const Matrix& main, const Matrix& aux, const GateParams& params,
                                   const std::vector<double>& gamma, const Matrix& dfused) {
    require_same_shape(main, aux, "fusion_backward");
    require_same_shape(main, dfused, "fusion_backward");
    const int C = main.cols;
    const int Lr = main.rows;
    const double oma = 1.0 - params.alpha;

    FusionGrads gr;
    gr.dmain = Matrix(Lr, C);
    gr.daux = Matrix(Lr, C);
    std::vector<double> dgamma(C, 0.0);

    // fused = main - oma*(main - tilde); tilde = aux + gamma.(main - aux)
    //   d fused / d main  (direct)   = 1 - oma + oma*gamma
    //   d fused / d aux   (direct)   = oma*(1 - gamma)
    //   d fused / d gamma[c]         = oma * (main - aux)[:,c]
    for (int t = 0; t < Lr; ++t) {
        const double* m = main.row(t);
        const double* a = aux.row(t);
        const double* df = dfused.row(t);
        double* dm = gr.dmain.row(t);
        double* da = gr.daux.row(t);
        for (int c = 0; c < C; ++c) {
            dm[c] = df[c] * (1.0 - oma + oma * gamma[c]);
            da[c] = df[c] * oma * (1.0 - gamma[c]);
            dgamma[c] += df[c] * oma * (m[c] - a[c]);
        }
    }

    if (params.mode == GateMode::kStatic) {
        // One shared logit: sum sigma' over channels.
        const double s = gamma.empty() ? sigmoid(params.g) : gamma[0];
        double total = 0.0;
        for (int c = 0; c < C; ++c) total += dgamma[c];
        gr.dg = total * s * (1.0 - s);
        return gr;
    }

    // Dynamic gate: logits z[c] = phi_w[c] . u + phi_b[c], u = [means(main); means(aux)].
    std::vector<double> u(2 * C);
    for (int c = 0; c < C; ++c) {
        u[c] = column_mean(main, c);
        u[C + c] = column_mean(aux, c);
    }
    std::vector<double> dz(C);
    for (int c = 0; c < C; ++c) dz[c] = dgamma[c] * gamma[c] * (1.0 - gamma[c]);

    gr.dphi_w = Matrix(C, 2 * C);
    gr.dphi_b.assign(C, 0.0);
    std::vector<double> du(2 * C, 0.0);
    for (int c = 0; c < C; ++c) {
        gr.dphi_b[c] = dz[c];
        double* dwrow = gr.dphi_w.row(c);
        const double* wrow = params.phi_w.row(c);
        for (int j = 0; j < 2 * C; ++j) {
            dwrow[j] = dz[c] * u[j];
            du[j] += dz[c] * wrow[j];
        }
    }
    const double invL = 1.0 / Lr;
    for (int t = 0; t < Lr; ++t) {
        double* dm = gr.dmain.row(t);
        double* da = gr.daux.row(t);
        for (int c = 0; c < C; ++c) {
            dm[c] += du[c] * invL;
            da[c] += du[C + c] * invL;
        }
    }
    return gr;
}

}  // namespace kupbi
