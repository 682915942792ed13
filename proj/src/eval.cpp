#include "csp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace csp {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<ObjectAnnotation>& gts, double iou_thresh)
{
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    MatchResult res;
    res.gt_matched.assign(gts.size(), 0);
    for (const ObjectAnnotation& g : gts) {
        res.n_gt += g.ignore ? 0 : 1;
    }

    for (std::size_t oi : order) {
        const Detection& d = dets[oi];
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gts[gi].ignore || res.gt_matched[gi]) {
                continue;
            }
            const double v = iou(d.box, gts[gi].box());
            if (v > best_iou) {
                best_iou = v;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_thresh) {
            res.gt_matched[static_cast<std::size_t>(best_gt)] = 1;
            res.det_flag.push_back(1);
            res.det_gt.push_back(best_gt);
            res.n_tp += 1;
        } else {
            // An ignore region absorbs any number of detections without penalty.
            bool absorbed = false;
            for (std::size_t gi = 0; gi < gts.size() && !absorbed; ++gi) {
                if (gts[gi].ignore && iou(d.box, gts[gi].box()) >= iou_thresh) {
                    absorbed = true;
                }
            }
            res.det_flag.push_back(absorbed ? -1 : 0);
            res.det_gt.push_back(-1);
            res.n_fp += absorbed ? 0 : 1;
        }
        res.det_score.push_back(d.score);
    }
    return res;
}

namespace {

struct ScoredFlag {
    double score;
    int flag; // 1 TP, 0 FP
};

// All non-ignored detection outcomes across images, sorted by descending
// score with ties kept in (image, detection) order.
std::vector<ScoredFlag> gather_flags(const std::vector<ImageEval>& images, double iou_thresh,
                                     int& n_gt)
{
    std::vector<ScoredFlag> flags;
    n_gt = 0;
    for (const ImageEval& img : images) {
        const MatchResult m = match_detections(img.dets, img.gts, iou_thresh);
        n_gt += m.n_gt;
        for (std::size_t i = 0; i < m.det_flag.size(); ++i) {
            if (m.det_flag[i] >= 0) {
                flags.push_back({m.det_score[i], m.det_flag[i]});
            }
        }
    }
    std::stable_sort(flags.begin(), flags.end(),
                     [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
    return flags;
}

} // namespace

FppiCurve log_average_miss_rate(const std::vector<ImageEval>& images, double iou_thresh)
{
    if (images.empty()) {
        throw std::invalid_argument("log_average_miss_rate: no images");
    }
    int n_gt = 0;
    const std::vector<ScoredFlag> flags = gather_flags(images, iou_thresh, n_gt);
    if (n_gt == 0) {
        throw std::invalid_argument("log_average_miss_rate: no ground truth objects");
    }

    // Operating points from sweeping the score threshold over every detection
    // score, plus the empty detector (fppi 0, miss rate 1).
    std::vector<std::pair<double, double>> points; // (fppi, miss rate)
    points.emplace_back(0.0, 1.0);
    int tp = 0, fp = 0;
    const double n_images = static_cast<double>(images.size());
    for (std::size_t i = 0; i < flags.size(); ++i) {
        tp += flags[i].flag == 1 ? 1 : 0;
        fp += flags[i].flag == 0 ? 1 : 0;
        if (i + 1 < flags.size() && flags[i + 1].score == flags[i].score) {
            continue; // equal scores form one operating point
        }
        points.emplace_back(fp / n_images, 1.0 - static_cast<double>(tp) / n_gt);
    }

    FppiCurve curve;
    double log_sum = 0.0;
    for (int k = 0; k < 9; ++k) {
        const double ref = std::pow(10.0, -2.0 + 0.25 * k);
        curve.fppi_ref[static_cast<std::size_t>(k)] = ref;
        double best = 1.0;
        for (const auto& [fppi, mr] : points) {
            if (fppi <= ref) {
                best = std::min(best, mr);
            }
        }
        curve.miss_rate[static_cast<std::size_t>(k)] = best;
        log_sum += std::log(std::max(best, 1e-6));
    }
    curve.mr2 = std::exp(log_sum / 9.0);
    return curve;
}

std::vector<PrPoint> pr_curve(const std::vector<ImageEval>& images, double iou_thresh)
{
    int n_gt = 0;
    const std::vector<ScoredFlag> flags = gather_flags(images, iou_thresh, n_gt);
    if (n_gt == 0) {
        throw std::invalid_argument("pr_curve: no ground truth objects");
    }
    std::vector<PrPoint> points;
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        tp += flags[i].flag == 1 ? 1 : 0;
        fp += flags[i].flag == 0 ? 1 : 0;
        if (i + 1 < flags.size() && flags[i + 1].score == flags[i].score) {
            continue; // equal scores form one operating point
        }
        points.push_back({static_cast<double>(tp) / n_gt,
                          static_cast<double>(tp) / (tp + fp)});
    }
    return points;
}

double average_precision(const std::vector<ImageEval>& images, double iou_thresh)
{
    const std::vector<PrPoint> points = pr_curve(images, iou_thresh);
    if (points.empty()) {
        return 0.0;
    }
    // Area under the precision envelope, continuous interpolation.
    std::vector<double> env(points.size());
    double running = 0.0;
    for (std::size_t i = points.size(); i-- > 0;) {
        running = std::max(running, points[i].precision);
        env[i] = running;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        ap += (points[i].recall - prev_recall) * env[i];
        prev_recall = points[i].recall;
    }
    return ap;
}

double mean_center_error(const std::vector<ImageEval>& images, double iou_thresh)
{
    double sum = 0.0;
    long count = 0;
    for (const ImageEval& img : images) {
        const MatchResult m = match_detections(img.dets, img.gts, iou_thresh);
        // det order in the result is score order; walk it next to the
        // matching sorted detection list.
        std::vector<std::size_t> order(img.dets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return img.dets[a].score > img.dets[b].score;
        });
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (m.det_flag[i] != 1) {
                continue;
            }
            const Detection& d = img.dets[order[i]];
            const ObjectAnnotation& g = img.gts[static_cast<std::size_t>(m.det_gt[i])];
            const double dx = d.box.cx() - g.cx;
            const double dy = d.box.cy() - g.cy;
            sum += std::sqrt(dx * dx + dy * dy);
            count += 1;
        }
    }
    if (count == 0) {
        return std::numeric_limits<double>::infinity();
    }
    return sum / count;
}

} // namespace csp
