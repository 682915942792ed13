#pragma once

#include <string>
#include <vector>

#include "csp/checkpoint.hpp"
#include "csp/config.hpp"
#include "csp/eval.hpp"

namespace csp {

struct TrainArtifacts {
    std::string final_checkpoint;
    std::string log_csv;
    std::string train_jsonl;
    std::string eval_jsonl;
    LossReport first_loss;
    LossReport last_loss;
    double wall_seconds = 0.0;
};

// Full training run: materializes the synthetic train/eval sets under
// out_dir, trains (optionally resuming), writes the loss log and checkpoints.
// center_jitter_radius > 0 disturbs annotation centers before encoding,
// re-sampled per step per object.
TrainArtifacts run_training(const RunConfig& cfg, const std::string& out_dir,
                            const std::string& resume_dir = "",
                            double center_jitter_radius = 0.0);

// Deterministic dataset construction (generation or annotation loading).
std::vector<DatasetRecord> build_train_set(const RunConfig& cfg);
std::vector<DatasetRecord> build_eval_set(const RunConfig& cfg);

// Runs EMA-weight inference over records and pairs detections with GT.
std::vector<ImageEval> detect_records(const Checkpoint& ckpt,
                                      const std::vector<DatasetRecord>& records,
                                      double threshold = -1.0, double nms_iou = -1.0);

// detect subcommand: reads a JSONL annotation file (or a single .ppm), writes
// detections JSONL. Returns the number of images that failed.
int run_detect(const std::string& checkpoint_dir, const std::string& input_path,
               const std::string& out_path, double threshold = -1.0, double nms_iou = -1.0);

struct EvalSummary {
    double mr2 = 1.0;
    double ap = 0.0;
    double center_err = 0.0;
    int n_images = 0;
    int n_gt = 0;
    FppiCurve curve;
    std::vector<PrPoint> pr;
};

EvalSummary summarize(const std::vector<ImageEval>& images, double iou_thresh);

// eval subcommand over detection/GT JSONL files; writes metrics.csv and the
// per-IoU curve CSVs into out_dir.
std::vector<EvalSummary> run_eval_files(const std::string& dets_path, const std::string& gt_path,
                                        const std::vector<double>& ious, const std::string& out_dir,
                                        const std::string& setting);

void run_inspect_targets(const std::string& gt_path, const CodecConfig& codec,
                         const std::string& out_dir);

struct AblateRow {
    std::string setting;
    double iou = 0.5;
    EvalSummary summary;
};

std::vector<AblateRow> run_ablate(const RunConfig& base, const std::string& axis,
                                  const std::string& out_csv);

struct DisturbanceRow {
    double radius = 0.0;
    double mr2 = 1.0;
    double ap = 0.0;
};

// Trains one model per jitter radius (same seed) and evaluates at IoU 0.5.
std::vector<DisturbanceRow> center_disturbance_experiment(const RunConfig& base,
                                                          const std::vector<double>& radii,
                                                          const std::string& out_dir);

} // namespace csp
