#pragma once

#include <vector>

#include "csp/geometry.hpp"
#include "csp/tensor.hpp"

namespace csp {

enum class ScaleMode { height, width, height_width };

int scale_channels(ScaleMode mode);

struct CodecConfig {
    int r = 4;                      // downsampling factor, power of two in {2,4,8,16}
    ScaleMode scale_mode = ScaleMode::height;
    int neighbor_radius = 2;        // Chebyshev radius for scale-target spill
    double sigma_ratio = 1.0 / 6.0; // Gaussian sigma as a fraction of object extent
    bool offset_enabled = true;
    double decode_threshold = 0.01; // inclusive score cut
    bool scale_at_neighbors = true; // regress scale at neighbor cells, not only exact centers
    double nms_iou = 0.5;
};

// Supervision maps at (ceil(H/r), ceil(W/r)), all stored as (1, C, mh, mw)
// tensors: center is the binary positive map, scale holds log-size targets
// with scale_weight marking where the regression loss applies, offset holds
// the sub-cell fraction at exact centers, gauss is the soft ambiguity mask.
struct TargetMaps {
    Tensor center;
    Tensor scale;
    Tensor scale_weight;
    Tensor offset;
    Tensor offset_weight;
    Tensor gauss;
    int r = 4;
    int positives = 0;
};

TargetMaps encode_targets(const std::vector<ObjectAnnotation>& annotations, int image_w,
                          int image_h, const CodecConfig& cfg);

Tensor gaussian_mask(const std::vector<ObjectAnnotation>& annotations, int map_w, int map_h,
                     const CodecConfig& cfg);

std::vector<Detection> decode_detections(const Tensor& center_heat, const Tensor& scale_map,
                                         const Tensor* offset_map, int image_w, int image_h,
                                         const CodecConfig& cfg, const AspectPolicy& policy);

} // namespace csp
