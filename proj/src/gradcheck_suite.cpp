#include "csp/gradcheck_suite.hpp"

#include <cmath>

#include "csp/codec.hpp"
#include "csp/gradcheck.hpp"
#include "csp/loss.hpp"
#include "csp/network.hpp"
#include "csp/ops.hpp"
#include "csp/rng.hpp"

namespace csp {

namespace {

constexpr double kEps = 1e-6;
constexpr int kInstances = 20;

Tensor random_tensor(std::mt19937_64& rng, int n, int c, int h, int w, double lo = -1.0,
                     double hi = 1.0)
{
    Tensor t(n, c, h, w);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) {
        v = d(rng);
    }
    return t;
}

// Keeps values away from the ReLU kink so central differences stay exact.
Tensor random_away_from_zero(std::mt19937_64& rng, int n, int c, int h, int w)
{
    Tensor t = random_tensor(rng, n, c, h, w, 0.05, 1.0);
    std::uniform_int_distribution<int> sign(0, 1);
    for (double& v : t.data) {
        if (sign(rng)) {
            v = -v;
        }
    }
    return t;
}

double dot(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        s += a.data[i] * b.data[i];
    }
    return s;
}

void maybe_corrupt(Tensor& grad, bool corrupt)
{
    if (corrupt && grad.numel() > 0) {
        grad.data[grad.numel() / 2] += 1e-3;
    }
}

GradCheckReport check_conv(std::mt19937_64& rng, bool transposed, bool corrupt)
{
    GradCheckReport rep;
    rep.name = transposed ? "deconv2d" : "conv2d";
    std::uniform_int_distribution<int> pick_c(1, 3);
    std::uniform_int_distribution<int> pick_hw(4, 7);
    std::uniform_int_distribution<int> pick_k(1, 3);
    std::uniform_int_distribution<int> pick_s(1, 2);

    for (int inst = 0; inst < kInstances; ++inst) {
        const int a_ch = pick_c(rng), b_ch = pick_c(rng);
        const int h = pick_hw(rng), w = pick_hw(rng);
        const int k = pick_k(rng);
        const int stride = pick_s(rng);
        const int pad = std::uniform_int_distribution<int>(0, k / 2 + 1)(rng);
        const int dil = transposed ? 1 : pick_s(rng);

        ConvParams p;
        if (transposed) {
            p.weight = random_tensor(rng, a_ch, b_ch, k, k);
            p.bias = random_tensor(rng, 1, b_ch, 1, 1);
        } else {
            p.weight = random_tensor(rng, b_ch, a_ch, k, k);
            p.bias = random_tensor(rng, 1, b_ch, 1, 1);
        }
        p.stride = stride;
        p.padding = pad;
        p.dilation = dil;

        if (!transposed && conv_out_size(h, k, stride, pad, dil) < 1) {
            --inst;
            continue;
        }
        if (transposed && deconv_out_size(h, k, stride, pad, 1) < 1) {
            --inst;
            continue;
        }

        const Tensor x = random_tensor(rng, 1, a_ch, h, w);
        auto fwd = [&](const Tensor& in, const ConvParams& pp) {
            return transposed ? deconv2d_forward(in, pp) : conv2d_forward(in, pp);
        };
        const Tensor out = fwd(x, p);
        const Tensor g = random_tensor(rng, out.n(), out.c(), out.h(), out.w());

        ConvGrads grads = transposed ? deconv2d_backward(x, p, g) : conv2d_backward(x, p, g);
        maybe_corrupt(grads.input, corrupt && inst == 0);

        const Tensor fd_in = finite_diff_grad(
            [&](const Tensor& probe) { return dot(fwd(probe, p), g); }, x, kEps);
        rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(grads.input, fd_in));

        const Tensor fd_w = finite_diff_grad(
            [&](const Tensor& probe) {
                ConvParams pp = p;
                pp.weight = probe;
                return dot(fwd(x, pp), g);
            },
            p.weight, kEps);
        rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(grads.weight, fd_w));

        const Tensor fd_b = finite_diff_grad(
            [&](const Tensor& probe) {
                ConvParams pp = p;
                pp.bias = probe;
                return dot(fwd(x, pp), g);
            },
            p.bias, kEps);
        rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(grads.bias, fd_b));
    }
    rep.pass = rep.worst_rel <= rep.tolerance;
    return rep;
}

GradCheckReport check_l2_normalize(std::mt19937_64& rng, bool corrupt)
{
    GradCheckReport rep;
    rep.name = "l2_normalize";
    for (int inst = 0; inst < kInstances; ++inst) {
        const int c = std::uniform_int_distribution<int>(2, 6)(rng);
        const int h = std::uniform_int_distribution<int>(2, 5)(rng);
        const int w = std::uniform_int_distribution<int>(2, 5)(rng);
        const Tensor x = random_away_from_zero(rng, 1, c, h, w);
        const Tensor g = random_tensor(rng, 1, c, h, w);
        Tensor analytic = l2_normalize_backward(x, 10.0, g);
        maybe_corrupt(analytic, corrupt && inst == 0);
        const Tensor fd = finite_diff_grad(
            [&](const Tensor& probe) { return dot(l2_normalize(probe, 10.0), g); }, x, kEps);
        rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(analytic, fd));
    }
    rep.pass = rep.worst_rel <= rep.tolerance;
    return rep;
}

GradCheckReport check_activation(std::mt19937_64& rng, Activation kind, bool corrupt)
{
    GradCheckReport rep;
    rep.name = kind == Activation::relu ? "relu" : "sigmoid";
    for (int inst = 0; inst < kInstances; ++inst) {
        const Tensor x = kind == Activation::relu ? random_away_from_zero(rng, 1, 3, 4, 4)
                                                  : random_tensor(rng, 1, 3, 4, 4, -3.0, 3.0);
        const Tensor g = random_tensor(rng, 1, 3, 4, 4);
        Tensor analytic = activation_backward(x, kind, g);
        maybe_corrupt(analytic, corrupt && inst == 0);
        const Tensor fd = finite_diff_grad(
            [&](const Tensor& probe) { return dot(activation(probe, kind), g); }, x, kEps);
        rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(analytic, fd));
    }
    rep.pass = rep.worst_rel <= rep.tolerance;
    return rep;
}

} // namespace

std::vector<GradCheckReport> gradcheck_ops(std::uint64_t seed, const std::string& corrupt)
{
    auto rng = make_rng(mix_seed(seed, 0x09f5));
    std::vector<GradCheckReport> out;
    out.push_back(check_conv(rng, false, corrupt == "conv2d"));
    out.push_back(check_conv(rng, true, corrupt == "deconv2d"));
    out.push_back(check_l2_normalize(rng, corrupt == "l2_normalize"));
    out.push_back(check_activation(rng, Activation::relu, corrupt == "relu"));
    out.push_back(check_activation(rng, Activation::sigmoid, corrupt == "sigmoid"));
    return out;
}

std::vector<GradCheckReport> gradcheck_losses(std::uint64_t seed, const std::string& corrupt)
{
    auto rng = make_rng(mix_seed(seed, 0x1055));
    LossConfig cfg;
    std::vector<GradCheckReport> out;

    {
        GradCheckReport rep;
        rep.name = "center_loss";
        for (int inst = 0; inst < kInstances; ++inst) {
            const int h = 6, w = 6;
            Tensor p = random_tensor(rng, 1, 1, h, w, 0.05, 0.95);
            Tensor y(1, 1, h, w);
            Tensor m(1, 1, h, w);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            int positives = 0;
            for (std::size_t i = 0; i < y.numel(); ++i) {
                if (unit(rng) < 0.1) {
                    y.data[i] = 1.0;
                    m.data[i] = 1.0;
                    ++positives;
                } else {
                    m.data[i] = 0.9 * unit(rng);
                }
            }
            if (positives == 0) {
                y.data[0] = 1.0;
                m.data[0] = 1.0;
                positives = 1;
            }
            LossGrad lg = center_loss(p, y, m, positives, cfg);
            maybe_corrupt(lg.grad, corrupt == "center_loss" && inst == 0);
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& probe) { return center_loss(probe, y, m, positives, cfg).value; },
                p, kEps);
            rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(lg.grad, fd));
        }
        rep.pass = rep.worst_rel <= rep.tolerance;
        out.push_back(rep);
    }

    {
        GradCheckReport rep;
        rep.name = "scale_loss";
        for (int inst = 0; inst < kInstances; ++inst) {
            const Tensor s = random_tensor(rng, 1, 1, 5, 5, -2.0, 2.0);
            const Tensor t = random_tensor(rng, 1, 1, 5, 5, -2.0, 2.0);
            Tensor weight(1, 1, 5, 5);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (double& v : weight.data) {
                v = unit(rng) < 0.3 ? 1.0 : 0.0;
            }
            weight.data[0] = 1.0;
            LossGrad lg = scale_loss(s, t, weight, cfg);
            maybe_corrupt(lg.grad, corrupt == "scale_loss" && inst == 0);
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& probe) { return scale_loss(probe, t, weight, cfg).value; }, s,
                kEps);
            rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(lg.grad, fd));
        }
        rep.pass = rep.worst_rel <= rep.tolerance;
        out.push_back(rep);
    }

    {
        GradCheckReport rep;
        rep.name = "offset_loss";
        for (int inst = 0; inst < kInstances; ++inst) {
            const Tensor o = random_tensor(rng, 1, 2, 5, 5, -0.5, 1.5);
            const Tensor t = random_tensor(rng, 1, 2, 5, 5, 0.0, 1.0);
            Tensor weight(1, 1, 5, 5);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (double& v : weight.data) {
                v = unit(rng) < 0.2 ? 1.0 : 0.0;
            }
            weight.data[3] = 1.0;
            LossGrad lg = offset_loss(o, t, weight, cfg);
            maybe_corrupt(lg.grad, corrupt == "offset_loss" && inst == 0);
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& probe) { return offset_loss(probe, t, weight, cfg).value; }, o,
                kEps);
            rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(lg.grad, fd));
        }
        rep.pass = rep.worst_rel <= rep.tolerance;
        out.push_back(rep);
    }
    return out;
}

std::vector<GradCheckReport> gradcheck_model(std::uint64_t seed, const std::string& corrupt)
{
    ModelConfig mc;
    mc.stage_channels = {4, 6, 8, 8};
    mc.head_channels = 8;
    mc.seed = mix_seed(seed, 0x3070);

    CodecConfig codec;
    LossConfig loss_cfg;

    auto rng = make_rng(mix_seed(seed, 0x307e));
    const Tensor image = random_tensor(rng, 1, 3, 32, 32, 0.0, 1.0);
    const std::vector<ObjectAnnotation> objects = {{9.5, 11.0, 14.0, 6.0, false},
                                                   {22.0, 20.5, 10.0, 4.5, false}};
    const TargetMaps targets = encode_targets(objects, 32, 32, codec);

    CspModel model = build_model(mc);

    auto loss_of = [&](CspModel& m) {
        ForwardCache cache;
        const Prediction pred = forward(m, image, cache);
        const LossGrad lc =
            center_loss(pred.center, targets.center, targets.gauss, targets.positives, loss_cfg);
        const LossGrad ls = scale_loss(pred.scale, targets.scale, targets.scale_weight, loss_cfg);
        const LossGrad lo = offset_loss(*pred.offset, targets.offset, targets.offset_weight,
                                        loss_cfg);
        return total_loss(lc.value, ls.value, lo.value, loss_cfg).total;
    };

    // Analytic gradient of the weighted total loss.
    ParamGrads grads = ParamGrads::zeros_for(model);
    {
        ForwardCache cache;
        const Prediction pred = forward(model, image, cache);
        LossGrad lc =
            center_loss(pred.center, targets.center, targets.gauss, targets.positives, loss_cfg);
        LossGrad ls = scale_loss(pred.scale, targets.scale, targets.scale_weight, loss_cfg);
        LossGrad lo = offset_loss(*pred.offset, targets.offset, targets.offset_weight, loss_cfg);
        for (double& v : lc.grad.data) v *= loss_cfg.lambda_c;
        for (double& v : ls.grad.data) v *= loss_cfg.lambda_s;
        for (double& v : lo.grad.data) v *= loss_cfg.lambda_o;
        backward(model, cache, lc.grad, ls.grad, &lo.grad, grads);
    }

    GradCheckReport rep;
    rep.name = "model";
    rep.tolerance = 1e-4;
    const auto params = model.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& t = *params[pi].tensor;
        Tensor analytic = Tensor::zeros_like(t);
        analytic.data = grads.g[pi];
        if (corrupt == "model" && pi == 0) {
            analytic.data[0] += 1e-2;
        }
        Tensor fd = Tensor::zeros_like(t);
        for (std::size_t j = 0; j < t.numel(); ++j) {
            const double orig = t.data[j];
            t.data[j] = orig + kEps;
            model.version += 1;
            const double hi = loss_of(model);
            t.data[j] = orig - kEps;
            model.version += 1;
            const double lo = loss_of(model);
            t.data[j] = orig;
            model.version += 1;
            fd.data[j] = (hi - lo) / (2.0 * kEps);
        }
        rep.worst_rel = std::max(rep.worst_rel, worst_rel_error(analytic, fd));
    }
    rep.pass = rep.worst_rel <= rep.tolerance;
    return {rep};
}

} // namespace csp
