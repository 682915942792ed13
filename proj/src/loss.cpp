#include "csp/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace csp {

namespace {
constexpr double kProbClamp = 1e-12;
}

LossGrad center_loss(const Tensor& p, const Tensor& y, const Tensor& gauss, int positives,
                     const LossConfig& cfg)
{
    if (!p.same_shape(y) || !p.same_shape(gauss)) {
        throw std::invalid_argument("center_loss: map shapes disagree: p " + shape_str(p) + ", y " +
                                    shape_str(y) + ", gauss " + shape_str(gauss));
    }
    LossGrad out;
    out.grad = Tensor::zeros_like(p);
    if (positives <= 0) {
        return out; // empty image contributes nothing
    }

    double sum = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double raw = p.data[i];
        if (!(raw >= 0.0 && raw <= 1.0)) {
            throw std::invalid_argument("center_loss: probability outside [0, 1]");
        }
        const double pe = std::min(std::max(raw, kProbClamp), 1.0 - kProbClamp);
        const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
        const bool pos = y.data[i] == 1.0;

        const double phat = pos ? pe : 1.0 - pe;
        const double alpha = pos ? 1.0 : std::pow(1.0 - gauss.data[i], cfg.beta);
        const double focal = std::pow(1.0 - phat, cfg.gamma);

        sum += -alpha * focal * std::log(phat);

        // d/dphat of -alpha (1-phat)^gamma log(phat)
        double d = -alpha * focal / phat;
        if (cfg.gamma != 0.0) {
            d += alpha * cfg.gamma * std::pow(1.0 - phat, cfg.gamma - 1.0) * std::log(phat);
        }
        const double dphat_dp = clamped ? 0.0 : (pos ? 1.0 : -1.0);
        out.grad.data[i] = d * dphat_dp / positives;
    }
    out.value = sum / positives;
    return out;
}

std::pair<double, double> smooth_l1(double x, double delta)
{
    if (delta <= 0.0) {
        throw std::invalid_argument("smooth_l1: delta must be positive");
    }
    if (std::abs(x) < delta) {
        return {0.5 * x * x / delta, x / delta};
    }
    return {std::abs(x) - 0.5 * delta, x > 0.0 ? 1.0 : -1.0};
}

LossGrad scale_loss(const Tensor& s, const Tensor& t, const Tensor& weight, const LossConfig& cfg)
{
    if (!s.same_shape(t) || !s.same_shape(weight)) {
        throw std::invalid_argument("scale_loss: map shapes disagree: s " + shape_str(s) + ", t " +
                                    shape_str(t) + ", weight " + shape_str(weight));
    }
    LossGrad out;
    out.grad = Tensor::zeros_like(s);

    long count = 0;
    for (double w : weight.data) {
        count += w == 1.0 ? 1 : 0;
    }
    if (count == 0) {
        return out;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) {
        if (weight.data[i] != 1.0) {
            continue;
        }
        const auto [v, d] = smooth_l1(s.data[i] - t.data[i], cfg.smooth_l1_delta);
        sum += v;
        out.grad.data[i] = d / count;
    }
    out.value = sum / count;
    return out;
}

LossGrad offset_loss(const Tensor& o, const Tensor& t, const Tensor& weight, const LossConfig& cfg)
{
    if (!o.same_shape(t)) {
        throw std::invalid_argument("offset_loss: prediction " + shape_str(o) + " vs target " +
                                    shape_str(t));
    }
    if (o.c() != 2 || weight.c() != 1 || weight.h() != o.h() || weight.w() != o.w()) {
        throw std::invalid_argument("offset_loss: expected 2-channel offsets with a 1-channel weight");
    }
    LossGrad out;
    out.grad = Tensor::zeros_like(o);

    long cells = 0;
    for (double w : weight.data) {
        cells += w == 1.0 ? 1 : 0;
    }
    if (cells == 0) {
        return out;
    }
    const long denom = 2 * cells;
    double sum = 0.0;
    for (int y = 0; y < o.h(); ++y) {
        for (int x = 0; x < o.w(); ++x) {
            if (weight.at(0, 0, y, x) != 1.0) {
                continue;
            }
            for (int c = 0; c < 2; ++c) {
                const auto [v, d] = smooth_l1(o.at(0, c, y, x) - t.at(0, c, y, x),
                                              cfg.smooth_l1_delta);
                sum += v;
                out.grad.at(0, c, y, x) = d / denom;
            }
        }
    }
    out.value = sum / denom;
    return out;
}

LossReport total_loss(double center, double scale, double offset, const LossConfig& cfg,
                      bool offset_enabled)
{
    if (!std::isfinite(center) || !std::isfinite(scale) || !std::isfinite(offset)) {
        throw std::invalid_argument("total_loss: non-finite component");
    }
    LossReport r;
    r.center = center;
    r.scale = scale;
    r.offset = offset_enabled ? offset : 0.0;
    r.total = cfg.lambda_c * r.center + cfg.lambda_s * r.scale + cfg.lambda_o * r.offset;
    return r;
}

} // namespace csp
