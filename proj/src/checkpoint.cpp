#include "csp/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "csp/errors.hpp"

namespace csp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string safe_name(const std::string& param_name)
{
    std::string out = param_name;
    for (char& c : out) {
        if (c == '.') {
            c = '_';
        }
    }
    return out;
}

Tensor vector_as_tensor(const std::vector<double>& v)
{
    Tensor t(1, 1, 1, static_cast<int>(v.size()));
    t.data = v;
    return t;
}

} // namespace

void save_checkpoint(const std::string& dir, const RunConfig& cfg, CspModel& model,
                     const OptimState& optim, const EmaState& ema)
{
    fs::create_directories(dir);
    const auto params = model.parameters();

    json manifest;
    manifest["format"] = "csp-checkpoint-v1";
    manifest["step"] = optim.step;
    manifest["config"] = run_config_to_json(cfg);

    json plist = json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string file = "param_" + safe_name(params[i].name) + ".cspt";
        save_tensor(dir + "/" + file, *params[i].tensor);
        plist.push_back({{"name", params[i].name}, {"file", file}});
    }
    manifest["params"] = std::move(plist);

    json moments = json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string mfile = "adam_m_" + safe_name(params[i].name) + ".cspt";
        const std::string vfile = "adam_v_" + safe_name(params[i].name) + ".cspt";
        save_tensor(dir + "/" + mfile, vector_as_tensor(optim.m[i]));
        save_tensor(dir + "/" + vfile, vector_as_tensor(optim.v[i]));
        moments.push_back({{"name", params[i].name}, {"m", mfile}, {"v", vfile}});
    }
    manifest["optimizer"] = {{"step", optim.step},
                             {"lr", optim.cfg.lr},
                             {"beta1", optim.cfg.beta1},
                             {"beta2", optim.cfg.beta2},
                             {"eps", optim.cfg.eps},
                             {"moments", std::move(moments)}};

    json elist = json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string file = "ema_" + safe_name(params[i].name) + ".cspt";
        save_tensor(dir + "/" + file, vector_as_tensor(ema.shadow[i]));
        elist.push_back({{"name", params[i].name}, {"file", file}});
    }
    manifest["ema"] = {{"decay", ema.decay}, {"params", std::move(elist)}};

    std::ofstream f(dir + "/manifest.json");
    if (!f) {
        throw ConfigError("save_checkpoint: cannot write " + dir + "/manifest.json");
    }
    f << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir)
{
    std::ifstream f(dir + "/manifest.json");
    if (!f) {
        throw ConfigError("load_checkpoint: cannot open " + dir + "/manifest.json");
    }
    json manifest;
    try {
        f >> manifest;
    } catch (const json::exception& e) {
        throw ConfigError("load_checkpoint: bad manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", std::string()) != "csp-checkpoint-v1") {
        throw ConfigError("load_checkpoint: unknown checkpoint format in " + dir);
    }

    Checkpoint ckpt;
    ckpt.cfg = run_config_from_json(manifest.at("config"));
    ckpt.step = manifest.value("step", 0L);
    ckpt.model = build_model(ckpt.cfg.model);

    const auto params = ckpt.model.parameters();
    auto find_file = [&](const json& list, const std::string& name, const char* key) {
        for (const json& entry : list) {
            if (entry.at("name").get<std::string>() == name) {
                return entry.at(key).get<std::string>();
            }
        }
        throw ConfigError("load_checkpoint: missing entry for parameter " + name);
    };

    for (const NamedParam& p : params) {
        const std::string file = find_file(manifest.at("params"), p.name, "file");
        Tensor t = load_tensor(dir + "/" + file);
        if (!t.same_shape(*p.tensor)) {
            throw ConfigError("load_checkpoint: shape mismatch for " + p.name + ": stored " +
                              shape_str(t) + ", model " + shape_str(*p.tensor));
        }
        p.tensor->data = std::move(t.data);
    }

    const json& opt = manifest.at("optimizer");
    ckpt.optim.cfg.lr = opt.at("lr").get<double>();
    ckpt.optim.cfg.beta1 = opt.at("beta1").get<double>();
    ckpt.optim.cfg.beta2 = opt.at("beta2").get<double>();
    ckpt.optim.cfg.eps = opt.at("eps").get<double>();
    ckpt.optim.step = opt.at("step").get<long>();
    for (const NamedParam& p : params) {
        const std::string mfile = find_file(opt.at("moments"), p.name, "m");
        const std::string vfile = find_file(opt.at("moments"), p.name, "v");
        Tensor m = load_tensor(dir + "/" + mfile);
        Tensor v = load_tensor(dir + "/" + vfile);
        if (m.numel() != p.tensor->numel() || v.numel() != p.tensor->numel()) {
            throw ConfigError("load_checkpoint: moment size mismatch for " + p.name);
        }
        ckpt.optim.m.push_back(std::move(m.data));
        ckpt.optim.v.push_back(std::move(v.data));
    }

    const json& ema = manifest.at("ema");
    ckpt.ema.decay = ema.at("decay").get<double>();
    for (const NamedParam& p : params) {
        const std::string file = find_file(ema.at("params"), p.name, "file");
        Tensor t = load_tensor(dir + "/" + file);
        if (t.numel() != p.tensor->numel()) {
            throw ConfigError("load_checkpoint: EMA size mismatch for " + p.name);
        }
        ckpt.ema.shadow.push_back(std::move(t.data));
    }
    return ckpt;
}

void apply_ema_weights(CspModel& model, const EmaState& ema)
{
    const auto params = model.parameters();
    if (params.size() != ema.shadow.size()) {
        throw ConfigError("apply_ema_weights: EMA tracks a different parameter count");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (ema.shadow[i].size() != params[i].tensor->numel()) {
            throw ConfigError("apply_ema_weights: size mismatch for " + params[i].name);
        }
        params[i].tensor->data = ema.shadow[i];
    }
    model.version += 1;
}

} // namespace csp
