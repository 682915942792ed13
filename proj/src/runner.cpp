#include "csp/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "csp/errors.hpp"
#include "csp/rng.hpp"

namespace csp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags keep the per-purpose RNGs independent of each other.
enum : std::uint64_t {
    kStreamTrainScene = 0x51,
    kStreamEvalScene = 0x52,
    kStreamStep = 0x53,
    kStreamAugment = 0x54,
    kStreamJitter = 0x55,
};

int env_threads()
{
    if (const char* v = std::getenv("CSP_THREADS")) {
        return std::max(1, std::atoi(v));
    }
    return 0;
}

std::vector<DatasetRecord> build_scene_set(const RunConfig& cfg, int count,
                                           std::uint64_t stream)
{
    std::vector<DatasetRecord> records(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto rng = make_rng(mix_seed(cfg.seed, stream, static_cast<std::uint64_t>(i)));
        records[static_cast<std::size_t>(i)] = generate_scene(*cfg.data.scene, rng);
    }
    return records;
}

std::vector<DatasetRecord> load_records_with_images(const std::string& path)
{
    std::vector<DatasetRecord> records = load_annotations(path);
    const fs::path base = fs::path(path).parent_path();
    for (DatasetRecord& rec : records) {
        if (!rec.image_path.empty()) {
            fs::path img(rec.image_path);
            if (img.is_relative()) {
                img = base / img;
            }
            rec.image = read_ppm(img.string());
        }
    }
    return records;
}

void materialize(std::vector<DatasetRecord>& records, const std::string& dir,
                 const std::string& prefix)
{
    fs::create_directories(dir);
    for (std::size_t i = 0; i < records.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04zu.ppm", prefix.c_str(), i);
        records[i].image_path = name;
        write_ppm(dir + "/" + name, records[i].image);
    }
    save_annotations(records, dir + "/scenes.jsonl");
}

std::vector<ObjectAnnotation> jitter_centers(const std::vector<ObjectAnnotation>& objects,
                                             double radius, int width, int height,
                                             std::mt19937_64& rng)
{
    std::vector<ObjectAnnotation> out = objects;
    std::uniform_real_distribution<double> d(-radius, radius);
    for (ObjectAnnotation& a : out) {
        a.cx = std::clamp(a.cx + d(rng), 0.0, width - 1e-6);
        a.cy = std::clamp(a.cy + d(rng), 0.0, height - 1e-6);
    }
    return out;
}

// Symmetric zero-information padding to a multiple of 16; detections are
// shifted back by the returned offsets.
Tensor pad_to_multiple16(const Tensor& img, int& pad_left, int& pad_top)
{
    const int H = img.h(), W = img.w();
    const int ph = (H + 15) / 16 * 16;
    const int pw = (W + 15) / 16 * 16;
    pad_left = (pw - W) / 2;
    pad_top = (ph - H) / 2;
    if (ph == H && pw == W) {
        return img;
    }
    Tensor out(1, img.c(), ph, pw);
    for (int c = 0; c < img.c(); ++c) {
        for (int y = 0; y < ph; ++y) {
            const int sy = std::clamp(y - pad_top, 0, H - 1);
            for (int x = 0; x < pw; ++x) {
                const int sx = std::clamp(x - pad_left, 0, W - 1);
                out.at(0, c, y, x) = img.at(0, c, sy, sx);
            }
        }
    }
    return out;
}

std::vector<Detection> detect_image(const CspModel& model, const CodecConfig& codec,
                                    const AspectPolicy& policy, const Tensor& image)
{
    int pad_left = 0, pad_top = 0;
    const Tensor padded = pad_to_multiple16(image, pad_left, pad_top);
    ForwardCache cache;
    const Prediction pred = forward(model, padded, cache);
    std::vector<Detection> dets =
        decode_detections(pred.center, pred.scale, pred.offset ? &*pred.offset : nullptr,
                          padded.w(), padded.h(), codec, policy);
    if (pad_left != 0 || pad_top != 0) {
        std::vector<Detection> shifted;
        for (Detection d : dets) {
            d.box.x1 -= pad_left;
            d.box.x2 -= pad_left;
            d.box.y1 -= pad_top;
            d.box.y2 -= pad_top;
            if (auto clipped = clip_box(d.box, image.w(), image.h())) {
                d.box = *clipped;
                shifted.push_back(d);
            }
        }
        dets = std::move(shifted);
    }
    return dets;
}

void write_metrics_csv(const std::string& path, const std::string& setting,
                       const std::vector<double>& ious, const std::vector<EvalSummary>& summaries)
{
    std::ofstream f(path);
    if (!f) {
        throw ConfigError("eval: cannot write " + path);
    }
    f << "setting,iou_thresh,mr2,ap,n_images,n_gt\n";
    f.precision(12);
    for (std::size_t i = 0; i < ious.size(); ++i) {
        f << setting << "," << ious[i] << "," << summaries[i].mr2 << "," << summaries[i].ap << ","
          << summaries[i].n_images << "," << summaries[i].n_gt << "\n";
    }
}

void write_curves(const std::string& dir, double iou, const EvalSummary& s)
{
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "iou%.2f.csv", iou);
    {
        std::ofstream f(dir + "/curve_mr_" + suffix);
        f.precision(12);
        f << "fppi,miss_rate\n";
        for (std::size_t k = 0; k < s.curve.fppi_ref.size(); ++k) {
            f << s.curve.fppi_ref[k] << "," << s.curve.miss_rate[k] << "\n";
        }
    }
    {
        std::ofstream f(dir + "/curve_pr_" + suffix);
        f.precision(12);
        f << "recall,precision\n";
        for (const PrPoint& p : s.pr) {
            f << p.recall << "," << p.precision << "\n";
        }
    }
}

} // namespace

std::vector<DatasetRecord> build_train_set(const RunConfig& cfg)
{
    if (cfg.data.scene) {
        return build_scene_set(cfg, cfg.data.train_scenes, kStreamTrainScene);
    }
    return load_records_with_images(cfg.data.train_annotations);
}

std::vector<DatasetRecord> build_eval_set(const RunConfig& cfg)
{
    if (cfg.data.scene) {
        return build_scene_set(cfg, cfg.data.eval_scenes, kStreamEvalScene);
    }
    if (cfg.data.eval_annotations.empty()) {
        throw ConfigError("config: eval_annotations required when no scene spec is given");
    }
    return load_records_with_images(cfg.data.eval_annotations);
}

TrainArtifacts run_training(const RunConfig& cfg, const std::string& out_dir,
                            const std::string& resume_dir, double center_jitter_radius)
{
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);

    std::vector<DatasetRecord> train_set = build_train_set(cfg);
    std::vector<DatasetRecord> eval_set = build_eval_set(cfg);
    if (train_set.empty()) {
        throw ConfigError("train: empty training set");
    }
    if (cfg.data.scene) {
        materialize(train_set, out_dir + "/train", "scene");
        materialize(eval_set, out_dir + "/eval", "scene");
    }

    CspModel model = build_model(cfg.model);
    OptimState optim;
    optim.cfg = {cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps};
    EmaState ema;

    if (!resume_dir.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_dir);
        if (run_config_to_json(ckpt.cfg)["model"] != run_config_to_json(cfg)["model"]) {
            throw ConfigError("train: resume checkpoint was built with a different model config");
        }
        model = std::move(ckpt.model);
        optim = std::move(ckpt.optim);
        ema = std::move(ckpt.ema);
    } else {
        optim.init(model.parameter_tensors(), optim.cfg);
        ema.init(model.parameter_tensors(), cfg.optim.ema_decay);
    }

    const int threads = env_threads();
    const int batch = cfg.optim.batch_size;
    const int map_w = cfg.augment.enabled ? cfg.augment.crop_w
                                          : (cfg.data.scene ? cfg.data.scene->image_w : 0);
    const int map_h = cfg.augment.enabled ? cfg.augment.crop_h
                                          : (cfg.data.scene ? cfg.data.scene->image_h : 0);

    std::ofstream log(out_dir + "/train_log.csv");
    if (!log) {
        throw ConfigError("train: cannot write " + out_dir + "/train_log.csv");
    }
    log << "step,center,scale,offset,total,positives\n";
    log.precision(12);

    TrainArtifacts artifacts;
    artifacts.log_csv = out_dir + "/train_log.csv";
    artifacts.train_jsonl = cfg.data.scene ? out_dir + "/train/scenes.jsonl" : cfg.data.train_annotations;
    artifacts.eval_jsonl = cfg.data.scene ? out_dir + "/eval/scenes.jsonl" : cfg.data.eval_annotations;

    bool first = true;
    for (long step = optim.step + 1; step <= cfg.optim.iterations; ++step) {
        auto step_rng = make_rng(mix_seed(cfg.seed, kStreamStep, static_cast<std::uint64_t>(step)));
        std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);

        Tensor images;
        std::vector<TargetMaps> targets;
        targets.reserve(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            const DatasetRecord& rec = train_set[pick(step_rng)];
            auto aug_rng = make_rng(mix_seed(cfg.seed, kStreamAugment,
                                             static_cast<std::uint64_t>(step) * 1024 + b));
            Augmented aug = augment(rec, cfg.augment, aug_rng);

            std::vector<ObjectAnnotation> objects = aug.objects;
            if (center_jitter_radius > 0.0) {
                auto jit_rng = make_rng(mix_seed(cfg.seed, kStreamJitter,
                                                 static_cast<std::uint64_t>(step) * 1024 + b));
                objects = jitter_centers(objects, center_jitter_radius, aug.image.w(),
                                         aug.image.h(), jit_rng);
            }
            targets.push_back(encode_targets(objects, aug.image.w(), aug.image.h(), cfg.codec));

            if (b == 0) {
                images = Tensor(batch, aug.image.c(), aug.image.h(), aug.image.w());
            }
            std::copy(aug.image.data.begin(), aug.image.data.end(),
                      images.data.begin() + images.index(b, 0, 0, 0));
        }
        (void)map_w;
        (void)map_h;

        LossReport report;
        optim.cfg.lr = cfg.optim.lr_at(step);
        try {
            report = train_step(model, images, targets, cfg.loss, optim, ema, threads);
        } catch (const std::runtime_error& e) {
            throw NumericError(std::string("train: step ") + std::to_string(step) + ": " + e.what());
        }

        log << step << "," << report.center << "," << report.scale << "," << report.offset << ","
            << report.total << "," << report.positives << "\n";
        if (first) {
            artifacts.first_loss = report;
            first = false;
        }
        artifacts.last_loss = report;

        if (cfg.optim.checkpoint_every > 0 && step % cfg.optim.checkpoint_every == 0 &&
            step < cfg.optim.iterations) {
            char name[64];
            std::snprintf(name, sizeof(name), "step_%06ld", step);
            save_checkpoint(out_dir + "/checkpoints/" + name, cfg, model, optim, ema);
        }
    }
    log.flush();

    artifacts.final_checkpoint = out_dir + "/checkpoints/final";
    save_checkpoint(artifacts.final_checkpoint, cfg, model, optim, ema);
    artifacts.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return artifacts;
}

std::vector<ImageEval> detect_records(const Checkpoint& ckpt,
                                      const std::vector<DatasetRecord>& records, double threshold,
                                      double nms_iou)
{
    CspModel model = build_model(ckpt.cfg.model);
    {
        // Inference runs on the EMA weights.
        const auto params = model.parameters();
        auto src = ckpt.ema.shadow.begin();
        for (const NamedParam& p : params) {
            p.tensor->data = *src++;
        }
    }
    CodecConfig codec = ckpt.cfg.codec;
    if (threshold >= 0.0) {
        codec.decode_threshold = threshold;
    }
    if (nms_iou > 0.0) {
        codec.nms_iou = nms_iou;
    }
    const AspectPolicy policy = ckpt.cfg.decode_policy();

    std::vector<ImageEval> out;
    for (const DatasetRecord& rec : records) {
        ImageEval ie;
        ie.dets = detect_image(model, codec, policy, rec.image);
        ie.gts = rec.objects;
        out.push_back(std::move(ie));
    }
    return out;
}

int run_detect(const std::string& checkpoint_dir, const std::string& input_path,
               const std::string& out_path, double threshold, double nms_iou)
{
    Checkpoint ckpt = load_checkpoint(checkpoint_dir);
    CspModel model = std::move(ckpt.model);
    apply_ema_weights(model, ckpt.ema);

    CodecConfig codec = ckpt.cfg.codec;
    if (threshold >= 0.0) {
        codec.decode_threshold = threshold;
    }
    if (nms_iou > 0.0) {
        codec.nms_iou = nms_iou;
    }
    const AspectPolicy policy = ckpt.cfg.decode_policy();

    struct Item {
        std::string name;
        std::string path;
    };
    std::vector<Item> items;
    if (input_path.size() > 4 && input_path.substr(input_path.size() - 4) == ".ppm") {
        items.push_back({input_path, input_path});
    } else {
        const std::vector<DatasetRecord> records = load_annotations(input_path);
        const fs::path base = fs::path(input_path).parent_path();
        for (const DatasetRecord& rec : records) {
            if (rec.image_path.empty()) {
                throw ConfigError("detect: record without an image path in " + input_path);
            }
            fs::path img(rec.image_path);
            if (img.is_relative()) {
                img = base / img;
            }
            items.push_back({rec.image_path, img.string()});
        }
    }

    std::ofstream out(out_path);
    if (!out) {
        throw ConfigError("detect: cannot write " + out_path);
    }
    int failures = 0;
    for (const Item& item : items) {
        json line;
        line["image"] = item.name;
        try {
            const Tensor image = read_ppm(item.path);
            const std::vector<Detection> dets = detect_image(model, codec, policy, image);
            json arr = json::array();
            for (const Detection& d : dets) {
                arr.push_back({{"x1", d.box.x1},
                               {"y1", d.box.y1},
                               {"x2", d.box.x2},
                               {"y2", d.box.y2},
                               {"score", d.score}});
            }
            line["detections"] = std::move(arr);
        } catch (const std::exception& e) {
            line["error"] = e.what();
            ++failures;
        }
        out << line.dump() << "\n";
    }
    if (!items.empty() && failures == static_cast<int>(items.size())) {
        return failures;
    }
    return 0;
}

EvalSummary summarize(const std::vector<ImageEval>& images, double iou_thresh)
{
    EvalSummary s;
    s.n_images = static_cast<int>(images.size());
    for (const ImageEval& img : images) {
        for (const ObjectAnnotation& g : img.gts) {
            s.n_gt += g.ignore ? 0 : 1;
        }
    }
    s.curve = log_average_miss_rate(images, iou_thresh);
    s.mr2 = s.curve.mr2;
    s.ap = average_precision(images, iou_thresh);
    s.pr = pr_curve(images, iou_thresh);
    s.center_err = mean_center_error(images, iou_thresh);
    return s;
}

std::vector<EvalSummary> run_eval_files(const std::string& dets_path, const std::string& gt_path,
                                        const std::vector<double>& ious, const std::string& out_dir,
                                        const std::string& setting)
{
    const std::vector<DatasetRecord> gt = load_annotations(gt_path);

    std::ifstream f(dets_path);
    if (!f) {
        throw ConfigError("eval: cannot open " + dets_path);
    }
    std::map<std::string, std::vector<Detection>> dets_by_image;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError("eval: " + dets_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const std::string image = j.at("image").get<std::string>();
        std::vector<Detection> dets;
        if (j.contains("detections")) {
            for (const json& d : j.at("detections")) {
                Detection det;
                det.box = {d.at("x1").get<double>(), d.at("y1").get<double>(),
                           d.at("x2").get<double>(), d.at("y2").get<double>()};
                det.score = d.at("score").get<double>();
                dets.push_back(det);
            }
        }
        dets_by_image[image] = std::move(dets);
    }

    std::vector<ImageEval> images;
    for (const DatasetRecord& rec : gt) {
        ImageEval ie;
        ie.gts = rec.objects;
        auto it = dets_by_image.find(rec.image_path);
        if (it != dets_by_image.end()) {
            ie.dets = it->second;
        }
        images.push_back(std::move(ie));
    }

    fs::create_directories(out_dir);
    std::vector<EvalSummary> summaries;
    for (double iou_t : ious) {
        EvalSummary s = summarize(images, iou_t);
        write_curves(out_dir, iou_t, s);
        summaries.push_back(std::move(s));
    }
    write_metrics_csv(out_dir + "/metrics.csv", setting, ious, summaries);
    return summaries;
}

void run_inspect_targets(const std::string& gt_path, const CodecConfig& codec,
                         const std::string& out_dir)
{
    const std::vector<DatasetRecord> records = load_annotations(gt_path);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const DatasetRecord& rec = records[i];
        const TargetMaps maps = encode_targets(rec.objects, rec.width, rec.height, codec);
        char prefix[64];
        std::snprintf(prefix, sizeof(prefix), "record_%04zu", i);
        const std::string base = out_dir + "/" + prefix;

        json sidecar;
        sidecar["record"] = i;
        sidecar["image"] = rec.image_path;
        sidecar["r"] = maps.r;
        sidecar["positives"] = maps.positives;
        auto dump = [&](const char* plane, const Tensor& t) {
            const std::string file = std::string(prefix) + "_" + plane + ".cspt";
            save_tensor(out_dir + "/" + file, t);
            sidecar["planes"][plane] = file;
        };
        dump("center", maps.center);
        dump("scale", maps.scale);
        dump("scale_weight", maps.scale_weight);
        dump("offset", maps.offset);
        dump("offset_weight", maps.offset_weight);
        dump("gauss", maps.gauss);
        write_pgm(base + "_gauss.pgm", maps.gauss);

        std::ofstream side(base + ".json");
        side << sidecar.dump(2) << "\n";
    }
}

namespace {

EvalSummary train_and_eval_variant(const RunConfig& cfg, const std::string& out_dir, double iou,
                                   std::vector<EvalSummary>* both = nullptr)
{
    run_training(cfg, out_dir);
    const Checkpoint ckpt = load_checkpoint(out_dir + "/checkpoints/final");
    const std::vector<DatasetRecord> eval_set = build_eval_set(cfg);
    const std::vector<ImageEval> images = detect_records(ckpt, eval_set);
    if (both) {
        both->push_back(summarize(images, 0.5));
        both->push_back(summarize(images, 0.75));
    }
    return summarize(images, iou);
}

} // namespace

std::vector<AblateRow> run_ablate(const RunConfig& base, const std::string& axis,
                                  const std::string& out_csv)
{
    struct Variant {
        std::string name;
        RunConfig cfg;
    };
    std::vector<Variant> variants;
    auto with = [&](const std::string& name, auto&& mutate) {
        RunConfig cfg = base;
        mutate(cfg);
        cfg.codec.r = cfg.model.r;
        cfg.codec.scale_mode = cfg.model.scale_mode;
        cfg.codec.offset_enabled = cfg.model.offset_enabled;
        variants.push_back({name, std::move(cfg)});
    };

    if (axis == "scale_mode") {
        for (ScaleMode mode : {ScaleMode::height, ScaleMode::width, ScaleMode::height_width}) {
            with("scale_mode=" + scale_mode_to_string(mode),
                 [mode](RunConfig& c) { c.model.scale_mode = mode; });
        }
    } else if (axis == "r") {
        for (int r : {2, 4, 8, 16}) {
            with("r=" + std::to_string(r), [r](RunConfig& c) { c.model.r = r; });
        }
    } else if (axis == "offset") {
        with("offset=on", [](RunConfig& c) { c.model.offset_enabled = true; });
        with("offset=off", [](RunConfig& c) { c.model.offset_enabled = false; });
    } else if (axis == "stages") {
        const std::vector<std::vector<int>> subsets = {{2, 3},    {3, 4},    {4, 5},
                                                       {2, 3, 4}, {3, 4, 5}, {2, 3, 4, 5}};
        for (const auto& subset : subsets) {
            std::string name = "stages=";
            for (int s : subset) {
                name += std::to_string(s);
            }
            with(name, [&subset](RunConfig& c) { c.model.stages_fused = subset; });
        }
    } else {
        throw ConfigError("ablate: unknown axis '" + axis +
                          "' (expected scale_mode, r, offset or stages)");
    }

    const fs::path csv_path(out_csv);
    const fs::path work = csv_path.parent_path().empty()
                              ? fs::path("ablate_runs")
                              : csv_path.parent_path() / "ablate_runs";
    std::vector<AblateRow> rows;
    for (const Variant& v : variants) {
        std::vector<EvalSummary> both;
        train_and_eval_variant(v.cfg, (work / v.name).string(), 0.5, &both);
        rows.push_back({v.name, 0.5, both[0]});
        rows.push_back({v.name, 0.75, both[1]});
        std::cout << "ablate: " << v.name << " mr2@0.5=" << both[0].mr2 << " ap@0.5=" << both[0].ap
                  << " ap@0.75=" << both[1].ap << "\n";
    }

    if (!csv_path.parent_path().empty()) {
        fs::create_directories(csv_path.parent_path());
    }
    std::ofstream f(out_csv);
    if (!f) {
        throw ConfigError("ablate: cannot write " + out_csv);
    }
    f << "setting,iou_thresh,mr2,ap,center_err,n_images,n_gt\n";
    f.precision(12);
    for (const AblateRow& row : rows) {
        f << row.setting << "," << row.iou << "," << row.summary.mr2 << "," << row.summary.ap << ","
          << row.summary.center_err << "," << row.summary.n_images << "," << row.summary.n_gt
          << "\n";
    }
    return rows;
}

std::vector<DisturbanceRow> center_disturbance_experiment(const RunConfig& base,
                                                          const std::vector<double>& radii,
                                                          const std::string& out_dir)
{
    std::vector<DisturbanceRow> rows;
    for (double radius : radii) {
        char name[64];
        std::snprintf(name, sizeof(name), "disturb_%g", radius);
        const std::string dir = out_dir + "/" + name;
        run_training(base, dir, "", radius);
        const Checkpoint ckpt = load_checkpoint(dir + "/checkpoints/final");
        const std::vector<DatasetRecord> eval_set = build_eval_set(base);
        const std::vector<ImageEval> images = detect_records(ckpt, eval_set);
        const EvalSummary s = summarize(images, 0.5);
        rows.push_back({radius, s.mr2, s.ap});
        std::cout << "disturbance radius " << radius << ": mr2=" << s.mr2 << " ap=" << s.ap << "\n";
    }
    return rows;
}

} // namespace csp
