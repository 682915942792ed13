#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csp/codec.hpp"
#include "csp/loss.hpp"
#include "csp/ops.hpp"
#include "csp/optim.hpp"
#include "csp/tensor.hpp"

namespace csp {

struct ModelConfig {
    std::vector<int> stage_channels{16, 32, 64, 64}; // stages 2..5
    std::vector<int> stages_fused{3, 4, 5};
    int r = 4;
    int head_channels = 256;
    bool offset_enabled = true;
    ScaleMode scale_mode = ScaleMode::height;
    bool dilate_last_stage = true;
    std::uint64_t seed = 0;
    int input_channels = 3;
    double scale_bias_init = 0.0;
    double offset_bias_init = 0.0;
};

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

// Conv layer plus its slot in the flat parameter list (weight at pidx,
// bias at pidx + 1).
struct ConvUnit {
    ConvParams p;
    int pidx = -1;
};

struct FusedStage {
    int stage = 2;
    bool upsample = true;           // direction of the resample chain
    std::vector<ConvUnit> resample; // empty when the stage is already at target resolution
};

struct CspModel {
    ModelConfig cfg;
    std::vector<std::array<ConvUnit, 2>> stages; // stage 2 first
    std::vector<FusedStage> fused;
    std::optional<ConvUnit> fused_up; // r = 2: extra deconvolution after concatenation
    ConvUnit head;
    ConvUnit center_head;
    ConvUnit scale_head;
    std::optional<ConvUnit> offset_head;
    long version = 0; // bumped whenever parameters change; stale caches are rejected

    std::vector<NamedParam> parameters();
    std::vector<Tensor*> parameter_tensors();
    int fused_channel_sum() const;
};

CspModel build_model(const ModelConfig& cfg);

struct Prediction {
    Tensor center; // post-sigmoid probabilities, clamped to [1e-12, 1 - 1e-12]
    Tensor scale;
    std::optional<Tensor> offset;
};

struct ForwardCache {
    const CspModel* model = nullptr;
    long version = -1;
    Tensor input;
    // per stage: conv0 pre-act, conv0 post-act, conv1 pre-act, conv1 post-act
    std::vector<std::array<Tensor, 4>> stage_acts;
    std::vector<std::vector<Tensor>> resample_outs; // per fused stage, per chain op
    std::vector<Tensor> norm_outs;
    Tensor cat;
    Tensor fused_map; // equals cat unless the r = 2 upsample ran
    Tensor head_z;
    Tensor head_a;
    Tensor center_z;
};

Prediction forward(const CspModel& model, const Tensor& images, ForwardCache& cache);

// Per-parameter gradient buffers aligned with CspModel::parameters().
struct ParamGrads {
    std::vector<std::vector<double>> g;

    static ParamGrads zeros_for(CspModel& model);
    void add_scaled(const ParamGrads& other, double factor);
};

// Exact adjoint of forward; accumulates into `grads`. Gradients of the center
// branch are taken with respect to the clamped post-sigmoid probabilities.
void backward(const CspModel& model, const ForwardCache& cache, const Tensor& d_center,
              const Tensor& d_scale, const Tensor* d_offset, ParamGrads& grads);

// forward -> losses -> backward -> Adam -> EMA over one batch. The loss is
// the mean of per-image weighted losses; images with no positives contribute
// zero center/scale/offset terms.
LossReport train_step(CspModel& model, const Tensor& images,
                      const std::vector<TargetMaps>& targets, const LossConfig& loss_cfg,
                      OptimState& optim, EmaState& ema, int num_threads = 0);

} // namespace csp
