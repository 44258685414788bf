#pragma once

#include "kupbi/backbone.hpp"

namespace kupbi {

/// Mean squared error over all T*C elements of one forecast.
inline double loss_mse(const Matrix& y_true, const Matrix& y_pred) {
    require_same_shape(y_true, y_pred, "loss_mse");
    double s = 0.0;
    for (size_t i = 0; i < y_true.data.size(); ++i) {
        const double d = y_pred.data[i] - y_true.data[i];
        s += d * d;
    }
    return s / static_cast<double>(y_true.data.size());
}

/// Mean absolute error over all T*C elements of one forecast.
inline double loss_mae(const Matrix& y_true, const Matrix& y_pred) {
    require_same_shape(y_true, y_pred, "loss_mae");
    double s = 0.0;
    for (size_t i = 0; i < y_true.data.size(); ++i) s += std::fabs(y_pred.data[i] - y_true.data[i]);
    return s / static_cast<double>(y_true.data.size());
}

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::kAdam;
    double lr = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    int max_epochs = 10;
    int patience = 3;
    uint64_t seed = 2021;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
    }
};

/**
 * @brief Adam/SGD over a flat list of parameter views.
 *
 * State arrays are laid out in view order, so the update sequence is fixed
 * and runs are bit-reproducible.
 */
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, size_t total_params) : cfg_(cfg) {
        if (cfg.optimizer == OptimizerKind::kAdam) {
            m_.assign(total_params, 0.0);
            v_.assign(total_params, 0.0);
        }
    }

    void step(const std::vector<LinearBackbone::ParamView>& params,
              const std::vector<LinearBackbone::ParamView>& grads) {
        if (params.size() != grads.size()) throw std::invalid_argument("Optimizer::step: view count mismatch");
        ++t_;
        if (cfg_.optimizer == OptimizerKind::kSgd) {
            for (size_t i = 0; i < params.size(); ++i)
                for (size_t j = 0; j < params[i].n; ++j) params[i].p[j] -= cfg_.lr * grads[i].p[j];
            return;
        }
        size_t total = 0;
        for (const auto& pv : params) total += pv.n;
        if (total != m_.size()) throw std::logic_error("Optimizer::step: parameter layout changed between steps");
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        size_t off = 0;
        for (size_t i = 0; i < params.size(); ++i) {
            double* p = params[i].p;
            const double* g = grads[i].p;
            for (size_t j = 0; j < params[i].n; ++j, ++off) {
                m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * g[j];
                v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m_[off] / bc1;
                const double vhat = v_[off] / bc2;
                p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
            }
        }
    }

private:
    TrainConfig cfg_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

/**
 * @brief Per-run training record.
 *
 * train_loss holds the shuffled-batch mean objective per epoch; val_mse /
 * val_mae are full validation passes after each epoch.  best_epoch is
 * 0-based; parameters are restored to that epoch's snapshot on return.
 */
struct TrainReport {
    std::vector<double> train_loss;
    std::vector<double> val_mse;
    std::vector<double> val_mae;
    int best_epoch = -1;
    int epochs_run = 0;
};

/// Optional per-window auxiliary streams, aligned index-for-index with a
/// window list.  Empty means "train the baseline".
using AuxStreams = std::vector<Matrix>;

namespace detail {

inline const Matrix* aux_for(const AuxStreams* aux, size_t i) {
    if (aux == nullptr || aux->empty()) return nullptr;
    return &(*aux)[i];
}

}  // namespace detail

/// Mean MSE/MAE of a model over a window list (no gradient).
inline std::pair<double, double> mean_losses(const LinearBackbone& model, const std::vector<QueryWindow>& windows,
                                             const AuxStreams* aux = nullptr) {
    if (windows.empty()) throw std::invalid_argument("mean_losses: no windows");
    if (aux && !aux->empty() && aux->size() != windows.size())
        throw std::invalid_argument("mean_losses: auxiliary streams misaligned with windows");
    double mse = 0.0, mae = 0.0;
    for (size_t i = 0; i < windows.size(); ++i) {
        const Matrix* z = detail::aux_for(aux, i);
        const Matrix pred = z ? model.forward(windows[i].X, *z) : model.forward(windows[i].X);
        mse += loss_mse(windows[i].Y_true, pred);
        mae += loss_mae(windows[i].Y_true, pred);
    }
    const double n = static_cast<double>(windows.size());
    return {mse / n, mae / n};
}

/**
 * @brief Mini-batch training with early stopping on validation MSE.
 *
 * The model must be constructed and initialised by the caller.  Batches are
 * reshuffled every epoch from the config seed; the final partial batch is
 * dropped (standard protocol for these benchmarks) unless the epoch would
 * otherwise be empty.  Auxiliary streams, when given, must be precomputed
 * and aligned with their window lists — retrieval never runs inside the
 * training loop.  A non-finite objective aborts with an error.  After the
 * run the parameters holding the best validation MSE are restored.
 */
inline TrainReport train(LinearBackbone& model, const std::vector<QueryWindow>& train_windows,
                         const std::vector<QueryWindow>& val_windows, const TrainConfig& cfg,
                         const AuxStreams* train_aux = nullptr, const AuxStreams* val_aux = nullptr) {
    cfg.validate();
    if (train_windows.empty()) throw std::invalid_argument("train: no training windows");
    if (val_windows.empty()) throw std::invalid_argument("train: no validation windows");
    if (train_aux && !train_aux->empty() && train_aux->size() != train_windows.size())
        throw std::invalid_argument("train: auxiliary streams misaligned with training windows");

    const bool augmented = train_aux != nullptr && !train_aux->empty();
    Optimizer opt(cfg, model.param_count());
    Rng shuffle_rng(mix64(cfg.seed ^ 0x7261696e5f726eull));  // independent shuffle stream

    std::vector<size_t> order(train_windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainReport report;
    std::vector<double> best_params;
    double best_val = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    const int B = cfg.batch_size;
    const size_t n = train_windows.size();
    const size_t batches = n >= static_cast<size_t>(B) ? n / B : 1;  // drop last partial batch

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t b = 0; b < batches; ++b) {
            const size_t begin = b * B;
            const size_t end = std::min(n, begin + B);
            const double inv_batch = 1.0 / static_cast<double>(end - begin);

            LinearBackbone::Grads grads = model.zero_grads();
            double batch_loss = 0.0;
            for (size_t i = begin; i < end; ++i) {
                const size_t wi = order[i];
                const QueryWindow& w = train_windows[wi];
                const Matrix* z = augmented ? &(*train_aux)[wi] : nullptr;
                LinearBackbone::Cache cache;
                const Matrix pred = model.forward_cached(w.X, z, cache);
                batch_loss += loss_mse(w.Y_true, pred);
                // dLbatch/dpred = 2*(pred - y) / (T*C) / batch
                Matrix dY(pred.rows, pred.cols);
                const double scale = 2.0 * inv_batch / static_cast<double>(pred.data.size());
                for (size_t j = 0; j < pred.data.size(); ++j)
                    dY.data[j] = scale * (pred.data[j] - w.Y_true.data[j]);
                model.backward(cache, dY, grads);
            }
            batch_loss *= inv_batch;
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: objective diverged (non-finite loss at epoch " +
                                         std::to_string(epoch + 1) + ")");
            epoch_loss += batch_loss;
            opt.step(model.param_views(), model.grad_views(grads));
        }
        report.train_loss.push_back(epoch_loss / static_cast<double>(batches));

        auto [vmse, vmae] = mean_losses(model, val_windows, val_aux);
        if (!std::isfinite(vmse))
            throw std::runtime_error("train: validation loss diverged at epoch " + std::to_string(epoch + 1));
        report.val_mse.push_back(vmse);
        report.val_mae.push_back(vmae);
        report.epochs_run = epoch + 1;

        if (vmse < best_val) {
            best_val = vmse;
            report.best_epoch = epoch;
            best_params = model.snapshot_params();
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= cfg.patience) break;
        }
    }

    if (!best_params.empty()) model.restore_params(best_params);
    return report;
}

}  // namespace kupbi
