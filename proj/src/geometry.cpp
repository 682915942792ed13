#include "csp/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace csp {

BoundBox box_from_center_scale(double cx, double cy, double h, std::optional<double> w,
                               const AspectPolicy& policy)
{
    if (h <= 0.0) {
        throw std::invalid_argument("box_from_center_scale: height must be positive");
    }
    double width = 0.0;
    if (policy.mode == AspectPolicy::Mode::fixed_ratio) {
        if (policy.ar <= 0.0) {
            throw std::invalid_argument("box_from_center_scale: fixed aspect ratio must be positive");
        }
        width = policy.ar * h;
    } else {
        if (!w.has_value()) {
            throw std::invalid_argument("box_from_center_scale: free aspect mode requires a width");
        }
        width = *w;
    }
    return {cx - 0.5 * width, cy - 0.5 * h, cx + 0.5 * width, cy + 0.5 * h};
}

double iou(const BoundBox& a, const BoundBox& b)
{
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0.0 || iy <= 0.0) {
        return 0.0;
    }
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::optional<BoundBox> clip_box(const BoundBox& box, double width, double height)
{
    BoundBox out{std::max(box.x1, 0.0), std::max(box.y1, 0.0), std::min(box.x2, width),
                 std::min(box.y2, height)};
    if (out.x2 <= out.x1 || out.y2 <= out.y1) {
        return std::nullopt;
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh)
{
    if (iou_thresh <= 0.0 || iou_thresh >= 1.0) {
        throw std::invalid_argument("nms: iou_thresh must lie in (0, 1)");
    }
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<Detection> kept;
    std::vector<char> suppressed(dets.size(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (suppressed[order[i]]) {
            continue;
        }
        const Detection& keep = dets[order[i]];
        kept.push_back(keep);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            if (!suppressed[order[j]] && iou(keep.box, dets[order[j]].box) >= iou_thresh) {
                suppressed[order[j]] = 1;
            }
        }
    }
    return kept;
}

} // namespace csp
