#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csp/errors.hpp"
#include "csp/gradcheck_suite.hpp"
#include "csp/runner.hpp"

namespace {

int wrap(const std::function<int()>& body)
{
    try {
        return body();
    } catch (const csp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const csp::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Box-free center-and-scale object detection"};
    app.require_subcommand(1);

    std::string config_path, resume_dir, out_override;
    CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("--config", config_path, "Run config JSON")->required();
    train->add_option("--resume", resume_dir, "Checkpoint directory to resume from");
    train->add_option("--out", out_override, "Override the configured output directory");

    std::string ckpt_dir, input_path, det_out;
    double threshold = -1.0, nms_iou = -1.0;
    CLI::App* detect = app.add_subcommand("detect", "Run inference and write detections JSONL");
    detect->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
    detect->add_option("--input", input_path, "Annotation JSONL or a single .ppm image")->required();
    detect->add_option("--out", det_out, "Output detections JSONL")->required();
    detect->add_option("--threshold", threshold, "Score threshold (default from config)");
    detect->add_option("--nms", nms_iou, "NMS IoU threshold (default from config)");

    std::string dets_path, gt_path, eval_out = "eval_out", setting;
    std::string iou_list = "0.5,0.75";
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score detections against ground truth");
    eval_cmd->add_option("--dets", dets_path, "Detections JSONL")->required();
    eval_cmd->add_option("--gt", gt_path, "Ground-truth JSONL")->required();
    eval_cmd->add_option("--iou", iou_list, "Comma-separated IoU thresholds");
    eval_cmd->add_option("--out", eval_out, "Output directory for CSVs");
    eval_cmd->add_option("--setting", setting, "Label for the metrics CSV");

    std::string inspect_gt, inspect_out, inspect_config;
    CLI::App* inspect = app.add_subcommand("inspect-targets", "Dump encoded supervision maps");
    inspect->add_option("--gt", inspect_gt, "Ground-truth JSONL")->required();
    inspect->add_option("--out", inspect_out, "Output directory")->required();
    inspect->add_option("--config", inspect_config, "Run config JSON for codec settings");

    std::string scope = "all", corrupt;
    std::uint64_t gc_seed = 7;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference verification suite");
    gradcheck->add_option("--scope", scope, "ops, losses, model or all");
    gradcheck->add_option("--seed", gc_seed, "Seed for the random instances");
    gradcheck->add_option("--corrupt", corrupt, "Corrupt one op's backward (negative control)");

    std::string ablate_config, axis, ablate_out = "ablate.csv";
    CLI::App* ablate = app.add_subcommand("ablate", "Sweep one config axis and evaluate each run");
    ablate->add_option("--config", ablate_config, "Base run config JSON")->required();
    ablate->add_option("--axis", axis, "scale_mode, r, offset or stages")->required();
    ablate->add_option("--out", ablate_out, "Consolidated CSV path");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        return wrap([&] {
            csp::RunConfig cfg = csp::load_run_config(config_path);
            const std::string out_dir = out_override.empty() ? cfg.out_dir : out_override;
            const csp::TrainArtifacts art = csp::run_training(cfg, out_dir, resume_dir);
            std::cout << "trained " << cfg.optim.iterations << " iterations in " << art.wall_seconds
                      << "s; final total loss " << art.last_loss.total << "\n"
                      << "checkpoint: " << art.final_checkpoint << "\n";
            return 0;
        });
    }
    if (detect->parsed()) {
        return wrap([&] {
            const int failures = csp::run_detect(ckpt_dir, input_path, det_out, threshold, nms_iou);
            return failures > 0 ? 1 : 0;
        });
    }
    if (eval_cmd->parsed()) {
        return wrap([&] {
            std::vector<double> ious;
            std::size_t pos = 0;
            while (pos < iou_list.size()) {
                std::size_t comma = iou_list.find(',', pos);
                if (comma == std::string::npos) {
                    comma = iou_list.size();
                }
                ious.push_back(std::stod(iou_list.substr(pos, comma - pos)));
                pos = comma + 1;
            }
            if (setting.empty()) {
                setting = dets_path;
            }
            const auto summaries = csp::run_eval_files(dets_path, gt_path, ious, eval_out, setting);
            for (std::size_t i = 0; i < ious.size(); ++i) {
                std::printf("iou=%.2f  mr2=%.4f  ap=%.4f\n", ious[i], summaries[i].mr2,
                            summaries[i].ap);
            }
            return 0;
        });
    }
    if (inspect->parsed()) {
        return wrap([&] {
            csp::CodecConfig codec;
            if (!inspect_config.empty()) {
                codec = csp::load_run_config(inspect_config).codec;
            }
            csp::run_inspect_targets(inspect_gt, codec, inspect_out);
            return 0;
        });
    }
    if (gradcheck->parsed()) {
        return wrap([&] {
            std::vector<csp::GradCheckReport> reports;
            if (scope == "ops" || scope == "all") {
                auto r = csp::gradcheck_ops(gc_seed, corrupt);
                reports.insert(reports.end(), r.begin(), r.end());
            }
            if (scope == "losses" || scope == "all") {
                auto r = csp::gradcheck_losses(gc_seed, corrupt);
                reports.insert(reports.end(), r.begin(), r.end());
            }
            if (scope == "model" || scope == "all") {
                auto r = csp::gradcheck_model(gc_seed, corrupt);
                reports.insert(reports.end(), r.begin(), r.end());
            }
            if (reports.empty()) {
                throw csp::ConfigError("gradcheck: unknown scope '" + scope + "'");
            }
            bool all_pass = true;
            for (const auto& rep : reports) {
                std::printf("%-12s worst relative error %.3e (tolerance %.0e)  %s\n",
                            rep.name.c_str(), rep.worst_rel, rep.tolerance,
                            rep.pass ? "OK" : "FAIL");
                all_pass = all_pass && rep.pass;
            }
            return all_pass ? 0 : 1;
        });
    }
    if (ablate->parsed()) {
        return wrap([&] {
            const csp::RunConfig cfg = csp::load_run_config(ablate_config);
            csp::run_ablate(cfg, axis, ablate_out);
            std::cout << "wrote " << ablate_out << "\n";
            return 0;
        });
    }
    return 0;
}
