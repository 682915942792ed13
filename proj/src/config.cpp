#include "csp/config.hpp"

#include <cstdlib>
#include <fstream>

#include "csp/errors.hpp"

namespace csp {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out)
{
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: field '") + key + "': " + e.what());
        }
    }
}

AspectSpec aspect_from_json(const json& j)
{
    AspectSpec a;
    std::string mode = "fixed";
    read_field(j, "mode", mode);
    if (mode == "fixed") {
        a.mode = AspectSpec::Mode::fixed;
        read_field(j, "ratio", a.ratio);
    } else if (mode == "range") {
        a.mode = AspectSpec::Mode::range;
        read_field(j, "lo", a.lo);
        read_field(j, "hi", a.hi);
        if (a.lo <= 0.0 || a.hi < a.lo) {
            throw ConfigError("config: aspect range must satisfy 0 < lo <= hi");
        }
    } else {
        throw ConfigError("config: aspect mode must be 'fixed' or 'range', got '" + mode + "'");
    }
    return a;
}

json aspect_to_json(const AspectSpec& a)
{
    if (a.mode == AspectSpec::Mode::fixed) {
        return {{"mode", "fixed"}, {"ratio", a.ratio}};
    }
    return {{"mode", "range"}, {"lo", a.lo}, {"hi", a.hi}};
}

BackgroundSpec background_from_json(const json& j)
{
    BackgroundSpec b;
    std::string kind = "gradient";
    read_field(j, "kind", kind);
    if (kind == "flat") {
        b.kind = BackgroundSpec::Kind::flat;
    } else if (kind == "gradient") {
        b.kind = BackgroundSpec::Kind::gradient;
    } else if (kind == "noise") {
        b.kind = BackgroundSpec::Kind::noise;
    } else {
        throw ConfigError("config: background kind must be flat/gradient/noise, got '" + kind + "'");
    }
    read_field(j, "intensity", b.intensity);
    read_field(j, "intensity2", b.intensity2);
    read_field(j, "sigma", b.sigma);
    return b;
}

json background_to_json(const BackgroundSpec& b)
{
    const char* kind = b.kind == BackgroundSpec::Kind::flat      ? "flat"
                       : b.kind == BackgroundSpec::Kind::gradient ? "gradient"
                                                                  : "noise";
    return {{"kind", kind}, {"intensity", b.intensity}, {"intensity2", b.intensity2},
            {"sigma", b.sigma}};
}

SceneSpec scene_from_json(const json& j)
{
    SceneSpec s;
    read_field(j, "image_w", s.image_w);
    read_field(j, "image_h", s.image_h);
    read_field(j, "objects_min", s.objects_min);
    read_field(j, "objects_max", s.objects_max);
    if (j.contains("height_range")) {
        const auto r = j.at("height_range").get<std::vector<double>>();
        if (r.size() != 2) {
            throw ConfigError("config: height_range must be [min, max]");
        }
        s.height_min = r[0];
        s.height_max = r[1];
    }
    if (j.contains("aspect")) {
        s.aspect = aspect_from_json(j.at("aspect"));
    }
    read_field(j, "overlap_max", s.overlap_max);
    if (j.contains("background")) {
        s.background = background_from_json(j.at("background"));
    }
    std::string fill = "mixed";
    read_field(j, "fill_style", fill);
    if (fill == "rectangles") {
        s.fill_style = FillStyle::rectangles;
    } else if (fill == "ellipses") {
        s.fill_style = FillStyle::ellipses;
    } else if (fill == "mixed") {
        s.fill_style = FillStyle::mixed;
    } else {
        throw ConfigError("config: fill_style must be rectangles/ellipses/mixed");
    }
    return s;
}

json scene_to_json(const SceneSpec& s)
{
    const char* fill = s.fill_style == FillStyle::rectangles ? "rectangles"
                       : s.fill_style == FillStyle::ellipses ? "ellipses"
                                                             : "mixed";
    return {{"image_w", s.image_w},
            {"image_h", s.image_h},
            {"objects_min", s.objects_min},
            {"objects_max", s.objects_max},
            {"height_range", {s.height_min, s.height_max}},
            {"aspect", aspect_to_json(s.aspect)},
            {"overlap_max", s.overlap_max},
            {"background", background_to_json(s.background)},
            {"fill_style", fill}};
}

} // namespace

ScaleMode scale_mode_from_string(const std::string& s)
{
    if (s == "height") return ScaleMode::height;
    if (s == "width") return ScaleMode::width;
    if (s == "height_width") return ScaleMode::height_width;
    throw ConfigError("config: scale_mode must be height/width/height_width, got '" + s + "'");
}

std::string scale_mode_to_string(ScaleMode mode)
{
    switch (mode) {
    case ScaleMode::height: return "height";
    case ScaleMode::width: return "width";
    case ScaleMode::height_width: return "height_width";
    }
    return "height";
}

AspectPolicy RunConfig::decode_policy() const
{
    if (model.scale_mode == ScaleMode::height_width) {
        return AspectPolicy::free_aspect();
    }
    return AspectPolicy::fixed(aspect_ratio);
}

RunConfig run_config_from_json(const json& j)
{
    RunConfig cfg;
    read_field(j, "seed", cfg.seed);
    read_field(j, "out_dir", cfg.out_dir);

    if (j.contains("model")) {
        const json& m = j.at("model");
        read_field(m, "stage_channels", cfg.model.stage_channels);
        read_field(m, "stages_fused", cfg.model.stages_fused);
        read_field(m, "r", cfg.model.r);
        read_field(m, "head_channels", cfg.model.head_channels);
        read_field(m, "offset_enabled", cfg.model.offset_enabled);
        if (m.contains("scale_mode")) {
            cfg.model.scale_mode = scale_mode_from_string(m.at("scale_mode").get<std::string>());
        }
        read_field(m, "dilate_last_stage", cfg.model.dilate_last_stage);
        read_field(m, "scale_bias_init", cfg.model.scale_bias_init);
        read_field(m, "offset_bias_init", cfg.model.offset_bias_init);
        read_field(m, "input_channels", cfg.model.input_channels);
    }

    if (j.contains("codec")) {
        const json& c = j.at("codec");
        if (c.contains("r") && c.at("r").get<int>() != cfg.model.r) {
            throw ConfigError("config: codec.r disagrees with model.r");
        }
        if (c.contains("scale_mode") &&
            scale_mode_from_string(c.at("scale_mode").get<std::string>()) != cfg.model.scale_mode) {
            throw ConfigError("config: codec.scale_mode disagrees with model.scale_mode");
        }
        read_field(c, "neighbor_radius", cfg.codec.neighbor_radius);
        read_field(c, "sigma_ratio", cfg.codec.sigma_ratio);
        read_field(c, "decode_threshold", cfg.codec.decode_threshold);
        read_field(c, "scale_at_neighbors", cfg.codec.scale_at_neighbors);
        read_field(c, "nms_iou", cfg.codec.nms_iou);
        read_field(c, "aspect_ratio", cfg.aspect_ratio);
    }
    cfg.codec.r = cfg.model.r;
    cfg.codec.scale_mode = cfg.model.scale_mode;
    cfg.codec.offset_enabled = cfg.model.offset_enabled;

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        read_field(l, "gamma", cfg.loss.gamma);
        read_field(l, "beta", cfg.loss.beta);
        read_field(l, "lambda_c", cfg.loss.lambda_c);
        read_field(l, "lambda_s", cfg.loss.lambda_s);
        read_field(l, "lambda_o", cfg.loss.lambda_o);
        read_field(l, "smooth_l1_delta", cfg.loss.smooth_l1_delta);
        if (cfg.loss.gamma < 0.0 || cfg.loss.beta < 0.0 || cfg.loss.lambda_c < 0.0 ||
            cfg.loss.lambda_s < 0.0 || cfg.loss.lambda_o < 0.0) {
            throw ConfigError("config: loss exponents and weights must be non-negative");
        }
    }

    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        read_field(o, "lr", cfg.optim.lr);
        read_field(o, "lr_final", cfg.optim.lr_final);
        read_field(o, "beta1", cfg.optim.beta1);
        read_field(o, "beta2", cfg.optim.beta2);
        read_field(o, "eps", cfg.optim.eps);
        read_field(o, "batch_size", cfg.optim.batch_size);
        read_field(o, "iterations", cfg.optim.iterations);
        read_field(o, "ema_decay", cfg.optim.ema_decay);
        read_field(o, "checkpoint_every", cfg.optim.checkpoint_every);
        if (cfg.optim.batch_size < 1 || cfg.optim.iterations < 1) {
            throw ConfigError("config: batch_size and iterations must be positive");
        }
        if (cfg.optim.ema_decay < 0.0 || cfg.optim.ema_decay > 1.0) {
            throw ConfigError("config: ema_decay must lie in [0, 1]");
        }
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        if (d.contains("scene")) {
            cfg.data.scene = scene_from_json(d.at("scene"));
        }
        read_field(d, "train_scenes", cfg.data.train_scenes);
        read_field(d, "eval_scenes", cfg.data.eval_scenes);
        read_field(d, "train_annotations", cfg.data.train_annotations);
        read_field(d, "eval_annotations", cfg.data.eval_annotations);
        if (!cfg.data.scene && cfg.data.train_annotations.empty()) {
            throw ConfigError("config: data needs either a scene spec or train_annotations");
        }
    } else {
        throw ConfigError("config: missing data section");
    }

    if (j.contains("augment")) {
        const json& a = j.at("augment");
        read_field(a, "enabled", cfg.augment.enabled);
        read_field(a, "hflip_prob", cfg.augment.hflip_prob);
        if (a.contains("scale_range")) {
            const auto r = a.at("scale_range").get<std::vector<double>>();
            if (r.size() != 2 || r[0] <= 0.0 || r[1] < r[0]) {
                throw ConfigError("config: augment.scale_range must be [lo, hi] with 0 < lo <= hi");
            }
            cfg.augment.scale_min = r[0];
            cfg.augment.scale_max = r[1];
        }
        if (a.contains("crop")) {
            const auto c = a.at("crop").get<std::vector<int>>();
            if (c.size() != 2) {
                throw ConfigError("config: augment.crop must be [w, h]");
            }
            cfg.augment.crop_w = c[0];
            cfg.augment.crop_h = c[1];
        }
        read_field(a, "brightness_jitter", cfg.augment.brightness_jitter);
    }
    if (cfg.data.scene) {
        if (cfg.augment.crop_w <= 0) {
            cfg.augment.crop_w = cfg.data.scene->image_w;
        }
        if (cfg.augment.crop_h <= 0) {
            cfg.augment.crop_h = cfg.data.scene->image_h;
        }
    }
    if (cfg.augment.crop_w % 16 != 0 || cfg.augment.crop_h % 16 != 0) {
        throw ConfigError("config: training crop size must be divisible by 16");
    }

    if (const char* env_seed = std::getenv("CSP_SEED")) {
        cfg.seed = std::strtoull(env_seed, nullptr, 10);
    }
    cfg.model.seed = cfg.seed;

    if (cfg.model.scale_mode != ScaleMode::height_width && cfg.aspect_ratio <= 0.0) {
        throw ConfigError("config: aspect_ratio must be positive for single-scale modes");
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path)
{
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("config: cannot open " + path);
    }
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg)
{
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["model"] = {{"stage_channels", cfg.model.stage_channels},
                  {"stages_fused", cfg.model.stages_fused},
                  {"r", cfg.model.r},
                  {"head_channels", cfg.model.head_channels},
                  {"offset_enabled", cfg.model.offset_enabled},
                  {"scale_mode", scale_mode_to_string(cfg.model.scale_mode)},
                  {"dilate_last_stage", cfg.model.dilate_last_stage},
                  {"scale_bias_init", cfg.model.scale_bias_init},
                  {"offset_bias_init", cfg.model.offset_bias_init},
                  {"input_channels", cfg.model.input_channels}};
    j["codec"] = {{"neighbor_radius", cfg.codec.neighbor_radius},
                  {"sigma_ratio", cfg.codec.sigma_ratio},
                  {"decode_threshold", cfg.codec.decode_threshold},
                  {"scale_at_neighbors", cfg.codec.scale_at_neighbors},
                  {"nms_iou", cfg.codec.nms_iou},
                  {"aspect_ratio", cfg.aspect_ratio}};
    j["loss"] = {{"gamma", cfg.loss.gamma},
                 {"beta", cfg.loss.beta},
                 {"lambda_c", cfg.loss.lambda_c},
                 {"lambda_s", cfg.loss.lambda_s},
                 {"lambda_o", cfg.loss.lambda_o},
                 {"smooth_l1_delta", cfg.loss.smooth_l1_delta}};
    j["optimizer"] = {{"lr", cfg.optim.lr},
                      {"lr_final", cfg.optim.lr_final},
                      {"beta1", cfg.optim.beta1},
                      {"beta2", cfg.optim.beta2},
                      {"eps", cfg.optim.eps},
                      {"batch_size", cfg.optim.batch_size},
                      {"iterations", cfg.optim.iterations},
                      {"ema_decay", cfg.optim.ema_decay},
                      {"checkpoint_every", cfg.optim.checkpoint_every}};
    json d;
    if (cfg.data.scene) {
        d["scene"] = scene_to_json(*cfg.data.scene);
    }
    d["train_scenes"] = cfg.data.train_scenes;
    d["eval_scenes"] = cfg.data.eval_scenes;
    d["train_annotations"] = cfg.data.train_annotations;
    d["eval_annotations"] = cfg.data.eval_annotations;
    j["data"] = std::move(d);
    j["augment"] = {{"enabled", cfg.augment.enabled},
                    {"hflip_prob", cfg.augment.hflip_prob},
                    {"scale_range", {cfg.augment.scale_min, cfg.augment.scale_max}},
                    {"crop", {cfg.augment.crop_w, cfg.augment.crop_h}},
                    {"brightness_jitter", cfg.augment.brightness_jitter}};
    return j;
}

} // namespace csp
