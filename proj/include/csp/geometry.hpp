#pragma once

#include <optional>
#include <vector>

namespace csp {

// Axis-aligned box in image pixel coordinates, half-open real rectangle:
// area = (x2 - x1) * (y2 - y1), no +1 pixel convention.
struct BoundBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
};

struct ObjectAnnotation {
    double cx = 0.0;
    double cy = 0.0;
    double h = 0.0;
    double w = 0.0;
    bool ignore = false;

    BoundBox box() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
};

struct Detection {
    BoundBox box;
    double score = 0.0;
    int cell_x = -1;
    int cell_y = -1;
};

struct AspectPolicy {
    enum class Mode { fixed_ratio, free };
    Mode mode = Mode::fixed_ratio;
    double ar = 0.41; // width / height

    static AspectPolicy fixed(double ratio) { return {Mode::fixed_ratio, ratio}; }
    static AspectPolicy free_aspect() { return {Mode::free, 0.0}; }
};

BoundBox box_from_center_scale(double cx, double cy, double h, std::optional<double> w,
                               const AspectPolicy& policy);

double iou(const BoundBox& a, const BoundBox& b);

std::optional<BoundBox> clip_box(const BoundBox& box, double width, double height);

// Greedy NMS: keep in descending score order (ties by input index), suppress
// remaining boxes with IoU >= iou_thresh against a kept box.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);

} // namespace csp
