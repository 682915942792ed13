#pragma once

#include <array>
#include <vector>

#include "csp/geometry.hpp"

namespace csp {

// Greedy match outcome. det_flag follows score order (ties by input index):
// 1 = true positive, 0 = false positive, -1 = matched an ignore region.
struct MatchResult {
    std::vector<int> det_flag;
    std::vector<double> det_score; // aligned with det_flag
    std::vector<int> det_gt;       // matched GT index or -1
    std::vector<char> gt_matched;  // non-ignored GTs only, original indexing
    int n_gt = 0;
    int n_tp = 0;
    int n_fp = 0;
};

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<ObjectAnnotation>& gts, double iou_thresh);

struct ImageEval {
    std::vector<Detection> dets;
    std::vector<ObjectAnnotation> gts;
};

// Nine log-spaced FPPI reference points in [1e-2, 1e0] and the envelope miss
// rate at each; mr2 is the geometric mean with a 1e-6 clamp.
struct FppiCurve {
    std::array<double, 9> fppi_ref{};
    std::array<double, 9> miss_rate{};
    double mr2 = 1.0;
};

FppiCurve log_average_miss_rate(const std::vector<ImageEval>& images, double iou_thresh);

double average_precision(const std::vector<ImageEval>& images, double iou_thresh);

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

std::vector<PrPoint> pr_curve(const std::vector<ImageEval>& images, double iou_thresh);

// Mean Euclidean distance between matched detection and GT centers; +inf when
// nothing matches.
double mean_center_error(const std::vector<ImageEval>& images, double iou_thresh);

} // namespace csp
