#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "csp/codec.hpp"
#include "csp/data.hpp"
#include "csp/loss.hpp"
#include "csp/network.hpp"

namespace csp {

struct OptimizerConfig {
    double lr = 1e-3;
    double lr_final = -1.0; // < 0 means constant lr; otherwise linear decay target
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 8;
    int iterations = 2000;
    double ema_decay = 0.999;
    int checkpoint_every = 500;

    double lr_at(long step) const
    {
        if (lr_final < 0.0 || iterations <= 1) {
            return lr;
        }
        const double f = static_cast<double>(step - 1) / (iterations - 1);
        return lr + (lr_final - lr) * std::min(1.0, std::max(0.0, f));
    }
};

struct DataConfig {
    std::optional<SceneSpec> scene;
    int train_scenes = 128;
    int eval_scenes = 100;
    std::string train_annotations; // used when no scene spec is given
    std::string eval_annotations;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "runs/out";
    ModelConfig model;
    CodecConfig codec; // r, scale_mode and offset flag mirror the model
    LossConfig loss;
    OptimizerConfig optim;
    DataConfig data;
    AugmentParams augment;
    double aspect_ratio = 0.41;

    AspectPolicy decode_policy() const;
};

// Parses and validates a config file. The CSP_SEED environment variable, when
// set, overrides the configured seed. Throws ConfigError on any problem.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

ScaleMode scale_mode_from_string(const std::string& s);
std::string scale_mode_to_string(ScaleMode mode);

} // namespace csp
