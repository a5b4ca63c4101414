#pragma once

// Schedulers, the decoupled-decay adaptive-moment optimizer, loss mixing, and
// early stopping. These are the pure pieces of the curriculum engine; the
// training loop itself lives in engine.hpp.

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "emosllm/autograd.hpp"
#include "emosllm/util.hpp"

namespace emosllm {

// Linear warmup to 1 over warmup_fraction of the steps, then linear decay to
// 0 at total_steps.
double lr_multiplier(double step, double total_steps, double warmup_fraction);

// Equal task weights at epoch 1, ASR weight linearly down to 0 at the last
// epoch; weights always sum to 1.
std::pair<double, double> asr_loss_weight(int epoch, int total_epochs);

inline double mix_losses(double asr_loss, double ser_loss, std::pair<double, double> weights) {
    return weights.first * asr_loss + weights.second * ser_loss;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    long long step = 0;
};

// One decoupled-weight-decay step over the given parameter ids. Gradients
// must be finite; a non-finite gradient rejects the whole step.
template <typename T>
void adamw_step(ParamStore<T>& store, const std::vector<int>& ids, AdamState& state, double lr,
                double weight_decay, const AdamConfig& cfg = {}) {
    for (int id : ids) {
        const auto& g = store[id].grad;
        for (T x : g.a)
            if (!std::isfinite(double(x)))
                throw NumericError("adamw_step: non-finite gradient in " + store[id].name +
                                   "; step rejected");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (int id : ids) {
        auto& e = store[id];
        if (!e.trainable) continue;
        if (e.m.empty()) e.m = Mat<T>(e.value.rows, e.value.cols);
        if (e.v.empty()) e.v = Mat<T>(e.value.rows, e.value.cols);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double grad = double(e.grad.a[i]);
            const double m = cfg.beta1 * double(e.m.a[i]) + (1.0 - cfg.beta1) * grad;
            const double v = cfg.beta2 * double(e.v.a[i]) + (1.0 - cfg.beta2) * grad * grad;
            e.m.a[i] = T(m);
            e.v.a[i] = T(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            const double p = double(e.value.a[i]);
            e.value.a[i] = T(p - lr * update - lr * weight_decay * p);
        }
    }
}

// Patience-based early stopping on a validation loss; stop() becomes true
// after `patience` consecutive epochs without improvement over the best.
struct EarlyStopState {
    double best = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int patience = 2;

    // Feed one epoch's validation loss; returns true when training should
    // stop after this epoch.
    bool update(double val_loss) {
        if (val_loss < best) {
            best = val_loss;
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
        }
        return epochs_since_improvement >= patience;
    }
};

}  // namespace emosllm
