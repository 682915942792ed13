#include "csp/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace csp {

void OptimState::init(const std::vector<Tensor*>& params, const AdamConfig& config)
{
    cfg = config;
    step = 0;
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
        m.emplace_back(p->numel(), 0.0);
        v.emplace_back(p->numel(), 0.0);
    }
}

void adam_step(const std::vector<Tensor*>& params, OptimState& state)
{
    if (params.size() != state.m.size()) {
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = *params[i];
        if (p.grad.size() != p.numel() || state.m[i].size() != p.numel()) {
            throw std::invalid_argument("adam_step: parameter " + std::to_string(i) +
                                        " has mismatched grad/moment storage");
        }
        for (double g : p.grad) {
            if (!std::isfinite(g)) {
                throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                         std::to_string(i));
            }
        }
    }

    state.step += 1;
    const double b1 = state.cfg.beta1;
    const double b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double g = p.grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p.data[j] -= state.cfg.lr * m_hat / (std::sqrt(v_hat) + state.cfg.eps);
        }
    }
}

void EmaState::init(const std::vector<Tensor*>& params, double decay_value)
{
    if (decay_value < 0.0 || decay_value > 1.0) {
        throw std::invalid_argument("EmaState: decay must lie in [0, 1]");
    }
    decay = decay_value;
    shadow.clear();
    for (const Tensor* p : params) {
        shadow.push_back(p->data);
    }
}

void ema_update(const std::vector<Tensor*>& params, EmaState& ema)
{
    ema_update(params, ema, ema.decay);
}

void ema_update(const std::vector<Tensor*>& params, EmaState& ema, double decay)
{
    if (decay < 0.0 || decay > 1.0) {
        throw std::invalid_argument("ema_update: decay must lie in [0, 1]");
    }
    if (params.size() != ema.shadow.size()) {
        throw std::invalid_argument("ema_update: shadow tracks " + std::to_string(ema.shadow.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = *params[i];
        std::vector<double>& s = ema.shadow[i];
        if (s.size() != p.numel()) {
            throw std::invalid_argument("ema_update: shadow shape mismatch at parameter " +
                                        std::to_string(i));
        }
        for (std::size_t j = 0; j < s.size(); ++j) {
            s[j] = decay * s[j] + (1.0 - decay) * p.data[j];
        }
    }
}

} // namespace csp
