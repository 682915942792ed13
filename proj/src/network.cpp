#include "csp/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <thread>

#include "csp/rng.hpp"

namespace csp {

namespace {

constexpr double kFeatureNorm = 10.0;
constexpr double kProbClamp = 1e-12;

int stage_downsampling(int stage, bool dilate_last)
{
    switch (stage) {
    case 2: return 4;
    case 3: return 8;
    case 4: return 16;
    case 5: return dilate_last ? 16 : 32;
    default: throw std::invalid_argument("unknown backbone stage " + std::to_string(stage));
    }
}

ConvUnit make_conv(std::mt19937_64& rng, int out_ch, int in_ch, int k, int stride, int pad,
                   int dilation)
{
    ConvUnit u;
    u.p.weight = Tensor(out_ch, in_ch, k, k);
    u.p.bias = Tensor(1, out_ch, 1, 1);
    u.p.stride = stride;
    u.p.padding = pad;
    u.p.dilation = dilation;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& v : u.p.weight.data) {
        v = dist(rng);
    }
    return u;
}

// Deconv kernels are stored as the kernel of the conv whose adjoint they
// compute: weight (in_ch, out_ch, k, k), bias sized by out_ch.
ConvUnit make_deconv(std::mt19937_64& rng, int in_ch, int out_ch, int k, int stride, int pad)
{
    ConvUnit u;
    u.p.weight = Tensor(in_ch, out_ch, k, k);
    u.p.bias = Tensor(1, out_ch, 1, 1);
    u.p.stride = stride;
    u.p.padding = pad;
    u.p.dilation = 1;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& v : u.p.weight.data) {
        v = dist(rng);
    }
    return u;
}

int log2_exact(int value)
{
    int shift = 0;
    while ((1 << shift) < value) {
        ++shift;
    }
    if ((1 << shift) != value) {
        throw std::invalid_argument("resolution ratio is not a power of two");
    }
    return shift;
}

void register_unit(CspModel& model, ConvUnit& u, int& next)
{
    u.pidx = next;
    next += 2;
    (void)model;
}

Tensor sigmoid_clamped(const Tensor& z)
{
    Tensor p = activation(z, Activation::sigmoid);
    for (double& v : p.data) {
        v = std::min(std::max(v, kProbClamp), 1.0 - kProbClamp);
    }
    return p;
}

} // namespace

std::vector<NamedParam> CspModel::parameters()
{
    std::vector<NamedParam> out;
    auto push = [&out](const std::string& name, ConvUnit& u) {
        out.push_back({name + ".weight", &u.p.weight});
        out.push_back({name + ".bias", &u.p.bias});
    };
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::string base = "stage" + std::to_string(s + 2);
        push(base + ".conv0", stages[s][0]);
        push(base + ".conv1", stages[s][1]);
    }
    for (FusedStage& f : fused) {
        for (std::size_t i = 0; i < f.resample.size(); ++i) {
            push("fuse" + std::to_string(f.stage) + (f.upsample ? ".up" : ".down") +
                     std::to_string(i),
                 f.resample[i]);
        }
    }
    if (fused_up) {
        push("fuse_up", *fused_up);
    }
    push("head", head);
    push("center", center_head);
    push("scale", scale_head);
    if (offset_head) {
        push("offset", *offset_head);
    }
    return out;
}

std::vector<Tensor*> CspModel::parameter_tensors()
{
    std::vector<Tensor*> out;
    for (const NamedParam& p : parameters()) {
        out.push_back(p.tensor);
    }
    return out;
}

int CspModel::fused_channel_sum() const
{
    int sum = 0;
    for (const FusedStage& f : fused) {
        sum += cfg.stage_channels[static_cast<std::size_t>(f.stage) - 2];
    }
    return sum;
}

CspModel build_model(const ModelConfig& cfg)
{
    if (cfg.stage_channels.size() != 4) {
        throw std::invalid_argument("build_model: stage_channels must list stages 2..5");
    }
    if (cfg.r != 2 && cfg.r != 4 && cfg.r != 8 && cfg.r != 16) {
        throw std::invalid_argument("build_model: r must be one of {2, 4, 8, 16}, got " +
                                    std::to_string(cfg.r));
    }
    if (cfg.stages_fused.empty()) {
        throw std::invalid_argument("build_model: stages_fused must not be empty");
    }
    std::vector<int> fused_ids = cfg.stages_fused;
    std::sort(fused_ids.begin(), fused_ids.end());
    fused_ids.erase(std::unique(fused_ids.begin(), fused_ids.end()), fused_ids.end());
    for (int s : fused_ids) {
        if (s < 2 || s > 5) {
            throw std::invalid_argument("build_model: fused stage " + std::to_string(s) +
                                        " outside {2, 3, 4, 5}");
        }
    }
    if (cfg.head_channels < 1 || cfg.input_channels < 1) {
        throw std::invalid_argument("build_model: channel counts must be positive");
    }

    CspModel model;
    model.cfg = cfg;
    std::mt19937_64 rng = make_rng(cfg.seed);

    const int max_stage = fused_ids.back();
    int in_ch = cfg.input_channels;
    for (int stage = 2; stage <= max_stage; ++stage) {
        const int out_ch = cfg.stage_channels[static_cast<std::size_t>(stage) - 2];
        std::array<ConvUnit, 2> convs;
        if (stage == 2) {
            convs[0] = make_conv(rng, out_ch, in_ch, 3, 2, 1, 1);
            convs[1] = make_conv(rng, out_ch, out_ch, 3, 2, 1, 1);
        } else if (stage == 5 && cfg.dilate_last_stage) {
            convs[0] = make_conv(rng, out_ch, in_ch, 3, 1, 2, 2);
            convs[1] = make_conv(rng, out_ch, out_ch, 3, 1, 2, 2);
        } else {
            convs[0] = make_conv(rng, out_ch, in_ch, 3, 2, 1, 1);
            convs[1] = make_conv(rng, out_ch, out_ch, 3, 1, 1, 1);
        }
        model.stages.push_back(std::move(convs));
        in_ch = out_ch;
    }

    // The r = 2 head is realized by building the r = 4 fusion and upsampling
    // the concatenated map once more.
    const int fuse_target = cfg.r == 2 ? 4 : cfg.r;
    for (int stage : fused_ids) {
        FusedStage f;
        f.stage = stage;
        const int ch = cfg.stage_channels[static_cast<std::size_t>(stage) - 2];
        const int native = stage_downsampling(stage, cfg.dilate_last_stage);
        if (native > fuse_target) {
            f.upsample = true;
            const int steps = log2_exact(native / fuse_target);
            for (int i = 0; i < steps; ++i) {
                f.resample.push_back(make_deconv(rng, ch, ch, 4, 2, 1));
            }
        } else if (native < fuse_target) {
            f.upsample = false;
            const int steps = log2_exact(fuse_target / native);
            for (int i = 0; i < steps; ++i) {
                f.resample.push_back(make_conv(rng, ch, ch, 3, 2, 1, 1));
            }
        }
        model.fused.push_back(std::move(f));
    }

    const int cat_ch = model.fused_channel_sum();
    if (cfg.r == 2) {
        model.fused_up = make_deconv(rng, cat_ch, cat_ch, 4, 2, 1);
    }

    model.head = make_conv(rng, cfg.head_channels, cat_ch, 3, 1, 1, 1);
    model.center_head = make_conv(rng, 1, cfg.head_channels, 1, 1, 0, 1);
    model.scale_head = make_conv(rng, scale_channels(cfg.scale_mode), cfg.head_channels, 1, 1, 0, 1);
    if (cfg.offset_enabled) {
        model.offset_head = make_conv(rng, 2, cfg.head_channels, 1, 1, 0, 1);
    }

    // Bias priors: sparse-positive prior for the center logits, dataset-scale
    // priors for the regression heads.
    model.center_head.p.bias.data[0] = std::log(0.01 / 0.99);
    for (double& b : model.scale_head.p.bias.data) {
        b = cfg.scale_bias_init;
    }
    if (model.offset_head) {
        for (double& b : model.offset_head->p.bias.data) {
            b = cfg.offset_bias_init;
        }
    }

    int next = 0;
    for (auto& stage : model.stages) {
        register_unit(model, stage[0], next);
        register_unit(model, stage[1], next);
    }
    for (auto& f : model.fused) {
        for (auto& u : f.resample) {
            register_unit(model, u, next);
        }
    }
    if (model.fused_up) {
        register_unit(model, *model.fused_up, next);
    }
    register_unit(model, model.head, next);
    register_unit(model, model.center_head, next);
    register_unit(model, model.scale_head, next);
    if (model.offset_head) {
        register_unit(model, *model.offset_head, next);
    }
    return model;
}

Prediction forward(const CspModel& model, const Tensor& images, ForwardCache& cache)
{
    if (images.c() != model.cfg.input_channels) {
        throw std::invalid_argument("forward: input has " + std::to_string(images.c()) +
                                    " channels, model expects " +
                                    std::to_string(model.cfg.input_channels));
    }
    if (images.h() % 16 != 0 || images.w() % 16 != 0) {
        const int ph = (images.h() + 15) / 16 * 16;
        const int pw = (images.w() + 15) / 16 * 16;
        throw std::invalid_argument("forward: input " + std::to_string(images.h()) + "x" +
                                    std::to_string(images.w()) +
                                    " is not divisible by 16; pad to " + std::to_string(ph) + "x" +
                                    std::to_string(pw));
    }

    cache.model = &model;
    cache.version = model.version;
    cache.input = images;
    cache.stage_acts.clear();
    cache.resample_outs.clear();
    cache.norm_outs.clear();
    // pointers into these vectors are taken while they grow
    cache.stage_acts.reserve(model.stages.size());
    cache.resample_outs.reserve(model.fused.size());
    cache.norm_outs.reserve(model.fused.size());

    const Tensor* x = &cache.input;
    for (const auto& stage : model.stages) {
        std::array<Tensor, 4> acts;
        acts[0] = conv2d_forward(*x, stage[0].p);
        acts[1] = activation(acts[0], Activation::relu);
        acts[2] = conv2d_forward(acts[1], stage[1].p);
        acts[3] = activation(acts[2], Activation::relu);
        cache.stage_acts.push_back(std::move(acts));
        x = &cache.stage_acts.back()[3];
    }

    std::vector<const Tensor*> to_concat;
    for (const FusedStage& f : model.fused) {
        const Tensor* t = &cache.stage_acts[static_cast<std::size_t>(f.stage) - 2][3];
        std::vector<Tensor> chain;
        for (const ConvUnit& u : f.resample) {
            chain.push_back(f.upsample ? deconv2d_forward(*t, u.p) : conv2d_forward(*t, u.p));
            t = &chain.back();
        }
        cache.resample_outs.push_back(std::move(chain));
        cache.norm_outs.push_back(l2_normalize(*t, kFeatureNorm));
        to_concat.push_back(&cache.norm_outs.back());
    }

    cache.cat = concat_channels(to_concat);
    cache.fused_map = model.fused_up ? deconv2d_forward(cache.cat, model.fused_up->p) : cache.cat;

    cache.head_z = conv2d_forward(cache.fused_map, model.head.p);
    cache.head_a = activation(cache.head_z, Activation::relu);
    cache.center_z = conv2d_forward(cache.head_a, model.center_head.p);

    Prediction pred;
    pred.center = sigmoid_clamped(cache.center_z);
    pred.scale = conv2d_forward(cache.head_a, model.scale_head.p);
    if (model.offset_head) {
        pred.offset = conv2d_forward(cache.head_a, model.offset_head->p);
    }

    const int expect_h = images.h() / model.cfg.r;
    const int expect_w = images.w() / model.cfg.r;
    if (pred.center.h() != expect_h || pred.center.w() != expect_w) {
        throw std::runtime_error("forward: output map " + shape_str(pred.center) +
                                 " does not match expected " + std::to_string(expect_h) + "x" +
                                 std::to_string(expect_w));
    }
    return pred;
}

ParamGrads ParamGrads::zeros_for(CspModel& model)
{
    ParamGrads g;
    for (Tensor* t : model.parameter_tensors()) {
        g.g.emplace_back(t->numel(), 0.0);
    }
    return g;
}

void ParamGrads::add_scaled(const ParamGrads& other, double factor)
{
    if (g.size() != other.g.size()) {
        throw std::invalid_argument("ParamGrads::add_scaled: size mismatch");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = 0; j < g[i].size(); ++j) {
            g[i][j] += factor * other.g[i][j];
        }
    }
}

namespace {

void accumulate(ParamGrads& grads, const ConvUnit& u, const ConvGrads& cg)
{
    std::vector<double>& gw = grads.g[static_cast<std::size_t>(u.pidx)];
    std::vector<double>& gb = grads.g[static_cast<std::size_t>(u.pidx) + 1];
    for (std::size_t i = 0; i < gw.size(); ++i) {
        gw[i] += cg.weight.data[i];
    }
    for (std::size_t i = 0; i < gb.size(); ++i) {
        gb[i] += cg.bias.data[i];
    }
}

} // namespace

void backward(const CspModel& model, const ForwardCache& cache, const Tensor& d_center,
              const Tensor& d_scale, const Tensor* d_offset, ParamGrads& grads)
{
    if (cache.model != &model || cache.version != model.version) {
        throw std::invalid_argument("backward: cache is stale (model changed since forward)");
    }
    if (static_cast<bool>(d_offset) != static_cast<bool>(model.offset_head)) {
        throw std::invalid_argument("backward: offset gradient presence must match the offset head");
    }

    // Sigmoid backward with the forward clamp: clamped cells are constant.
    Tensor d_center_z = Tensor::zeros_like(cache.center_z);
    for (std::size_t i = 0; i < d_center_z.numel(); ++i) {
        const double x = cache.center_z.data[i];
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        if (s > kProbClamp && s < 1.0 - kProbClamp) {
            d_center_z.data[i] = d_center.data[i] * s * (1.0 - s);
        }
    }

    ConvGrads g_center = conv2d_backward(cache.head_a, model.center_head.p, d_center_z);
    accumulate(grads, model.center_head, g_center);
    ConvGrads g_scale = conv2d_backward(cache.head_a, model.scale_head.p, d_scale);
    accumulate(grads, model.scale_head, g_scale);

    Tensor d_head_a = g_center.input;
    for (std::size_t i = 0; i < d_head_a.numel(); ++i) {
        d_head_a.data[i] += g_scale.input.data[i];
    }
    if (model.offset_head) {
        ConvGrads g_off = conv2d_backward(cache.head_a, model.offset_head->p, *d_offset);
        accumulate(grads, *model.offset_head, g_off);
        for (std::size_t i = 0; i < d_head_a.numel(); ++i) {
            d_head_a.data[i] += g_off.input.data[i];
        }
    }

    const Tensor d_head_z = activation_backward(cache.head_z, Activation::relu, d_head_a);
    ConvGrads g_head = conv2d_backward(cache.fused_map, model.head.p, d_head_z);
    accumulate(grads, model.head, g_head);

    Tensor d_cat;
    if (model.fused_up) {
        ConvGrads g_up = deconv2d_backward(cache.cat, model.fused_up->p, g_head.input);
        accumulate(grads, *model.fused_up, g_up);
        d_cat = std::move(g_up.input);
    } else {
        d_cat = std::move(g_head.input);
    }

    std::vector<int> channels;
    for (const FusedStage& f : model.fused) {
        channels.push_back(model.cfg.stage_channels[static_cast<std::size_t>(f.stage) - 2]);
    }
    std::vector<Tensor> d_norms = split_channels(d_cat, channels);

    // Gradient flowing into each backbone stage output.
    std::vector<Tensor> d_stage(model.stages.size());
    for (std::size_t fi = 0; fi < model.fused.size(); ++fi) {
        const FusedStage& f = model.fused[fi];
        const std::vector<Tensor>& chain = cache.resample_outs[fi];
        const Tensor& norm_in =
            chain.empty() ? cache.stage_acts[static_cast<std::size_t>(f.stage) - 2][3] : chain.back();
        Tensor d = l2_normalize_backward(norm_in, kFeatureNorm, d_norms[fi]);
        for (std::size_t ci = chain.size(); ci-- > 0;) {
            const Tensor& op_in =
                ci == 0 ? cache.stage_acts[static_cast<std::size_t>(f.stage) - 2][3] : chain[ci - 1];
            ConvGrads cg = f.upsample ? deconv2d_backward(op_in, f.resample[ci].p, d)
                                      : conv2d_backward(op_in, f.resample[ci].p, d);
            accumulate(grads, f.resample[ci], cg);
            d = std::move(cg.input);
        }
        Tensor& slot = d_stage[static_cast<std::size_t>(f.stage) - 2];
        if (slot.numel() == 0) {
            slot = std::move(d);
        } else {
            for (std::size_t i = 0; i < slot.numel(); ++i) {
                slot.data[i] += d.data[i];
            }
        }
    }

    for (std::size_t s = model.stages.size(); s-- > 0;) {
        Tensor& d_out = d_stage[s];
        if (d_out.numel() == 0) {
            d_out = Tensor::zeros_like(cache.stage_acts[s][3]);
        }
        const Tensor d_z1 = activation_backward(cache.stage_acts[s][2], Activation::relu, d_out);
        ConvGrads g1 = conv2d_backward(cache.stage_acts[s][1], model.stages[s][1].p, d_z1);
        accumulate(grads, model.stages[s][1], g1);
        const Tensor d_z0 = activation_backward(cache.stage_acts[s][0], Activation::relu, g1.input);
        const Tensor& conv0_in = s == 0 ? cache.input : cache.stage_acts[s - 1][3];
        ConvGrads g0 = conv2d_backward(conv0_in, model.stages[s][0].p, d_z0);
        accumulate(grads, model.stages[s][0], g0);
        if (s > 0) {
            Tensor& prev = d_stage[s - 1];
            if (prev.numel() == 0) {
                prev = std::move(g0.input);
            } else {
                for (std::size_t i = 0; i < prev.numel(); ++i) {
                    prev.data[i] += g0.input.data[i];
                }
            }
        }
    }
}

namespace {

struct ImageResult {
    LossReport report;
    ParamGrads grads;
};

ImageResult train_one_image(CspModel& model, const Tensor& image, const TargetMaps& target,
                            const LossConfig& loss_cfg)
{
    ImageResult res;
    res.grads = ParamGrads::zeros_for(model);

    ForwardCache cache;
    Prediction pred = forward(model, image, cache);

    if (!pred.center.same_shape(target.center)) {
        throw std::invalid_argument("train_step: target maps " + shape_str(target.center) +
                                    " do not match prediction " + shape_str(pred.center));
    }

    const LossGrad lc = center_loss(pred.center, target.center, target.gauss, target.positives,
                                    loss_cfg);
    const LossGrad ls = scale_loss(pred.scale, target.scale, target.scale_weight, loss_cfg);
    LossGrad lo;
    if (pred.offset) {
        lo = offset_loss(*pred.offset, target.offset, target.offset_weight, loss_cfg);
    } else {
        lo.grad = Tensor(1, 2, pred.center.h(), pred.center.w());
    }

    res.report = total_loss(lc.value, ls.value, lo.value, loss_cfg,
                            static_cast<bool>(pred.offset));
    res.report.positives = target.positives;

    Tensor d_center = lc.grad;
    for (double& v : d_center.data) {
        v *= loss_cfg.lambda_c;
    }
    Tensor d_scale = ls.grad;
    for (double& v : d_scale.data) {
        v *= loss_cfg.lambda_s;
    }
    Tensor d_offset = lo.grad;
    for (double& v : d_offset.data) {
        v *= loss_cfg.lambda_o;
    }

    backward(model, cache, d_center, d_scale, pred.offset ? &d_offset : nullptr, res.grads);
    return res;
}

const char* first_bad_term(const LossReport& r)
{
    if (!std::isfinite(r.center)) return "center";
    if (!std::isfinite(r.scale)) return "scale";
    if (!std::isfinite(r.offset)) return "offset";
    return nullptr;
}

} // namespace

LossReport train_step(CspModel& model, const Tensor& images,
                      const std::vector<TargetMaps>& targets, const LossConfig& loss_cfg,
                      OptimState& optim, EmaState& ema, int num_threads)
{
    const int batch = images.n();
    if (batch == 0 || static_cast<int>(targets.size()) != batch) {
        throw std::invalid_argument("train_step: got " + std::to_string(targets.size()) +
                                    " target sets for batch of " + std::to_string(batch));
    }

    std::vector<ImageResult> results(static_cast<std::size_t>(batch));
    int threads = num_threads > 0 ? num_threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, batch));

    if (threads == 1) {
        for (int i = 0; i < batch; ++i) {
            results[i] = train_one_image(model, images.slice_batch(i), targets[i], loss_cfg);
        }
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr error;
        std::mutex error_mu;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t]() {
                try {
                    for (int i = t; i < batch; i += threads) {
                        results[i] = train_one_image(model, images.slice_batch(i), targets[i],
                                                     loss_cfg);
                    }
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            });
        }
        for (std::thread& th : pool) {
            th.join();
        }
        if (error) {
            std::rethrow_exception(error);
        }
    }

    double sum_c = 0.0, sum_s = 0.0, sum_o = 0.0;
    long positives = 0;
    for (const ImageResult& r : results) {
        sum_c += r.report.center;
        sum_s += r.report.scale;
        sum_o += r.report.offset;
        positives += r.report.positives;
    }
    LossReport report = total_loss(sum_c / batch, sum_s / batch, sum_o / batch, loss_cfg,
                                   model.cfg.offset_enabled);
    report.positives = positives;

    if (const char* bad = first_bad_term(report)) {
        throw std::runtime_error(std::string("train_step: non-finite ") + bad + " loss");
    }

    std::vector<Tensor*> params = model.parameter_tensors();
    for (Tensor* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    const double inv_batch = 1.0 / batch;
    for (int i = 0; i < batch; ++i) {
        const ParamGrads& g = results[static_cast<std::size_t>(i)].grads;
        for (std::size_t k = 0; k < params.size(); ++k) {
            std::vector<double>& dst = params[k]->grad;
            const std::vector<double>& src = g.g[k];
            for (std::size_t j = 0; j < dst.size(); ++j) {
                dst[j] += inv_batch * src[j];
            }
        }
    }

    if (!optim.initialized()) {
        optim.init(params, optim.cfg);
    }
    adam_step(params, optim);
    model.version += 1;

    // Mean-teacher style warmup keeps the shadow usable from the first steps.
    const double t = static_cast<double>(optim.step);
    ema_update(params, ema, std::min(ema.decay, (1.0 + t) / (10.0 + t)));
    return report;
}

} // namespace csp
