#pragma once

#include <vector>

#include "csp/tensor.hpp"

namespace csp {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment accumulators, aligned by index with the
// parameter list they were initialized from.
struct OptimState {
    AdamConfig cfg;
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    void init(const std::vector<Tensor*>& params, const AdamConfig& config);
    bool initialized() const { return !m.empty(); }
};

// Bias-corrected Adam update, applied in place. Reads each parameter's grad.
void adam_step(const std::vector<Tensor*>& params, OptimState& state);

struct EmaState {
    double decay = 0.999;
    std::vector<std::vector<double>> shadow;

    void init(const std::vector<Tensor*>& params, double decay_value);
};

// shadow <- decay * shadow + (1 - decay) * weights. The per-call decay lets a
// training loop ramp the horizon up from zero without touching the state.
void ema_update(const std::vector<Tensor*>& params, EmaState& ema);
void ema_update(const std::vector<Tensor*>& params, EmaState& ema, double decay);

} // namespace csp
