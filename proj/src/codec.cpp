#include "csp/codec.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace csp {

namespace {

void check_codec_config(const CodecConfig& cfg)
{
    if (cfg.r != 2 && cfg.r != 4 && cfg.r != 8 && cfg.r != 16) {
        throw std::invalid_argument("codec: downsampling factor must be one of {2, 4, 8, 16}, got " +
                                    std::to_string(cfg.r));
    }
    if (cfg.sigma_ratio <= 0.0) {
        throw std::invalid_argument("codec: sigma_ratio must be positive");
    }
    if (cfg.neighbor_radius < 0) {
        throw std::invalid_argument("codec: neighbor_radius must be non-negative");
    }
}

int map_dim(int image_dim, int r)
{
    return (image_dim + r - 1) / r;
}

// Candidate written into a cell by object k; smaller Chebyshev cell distance
// wins, ties go to the larger object, then to a fixed geometric order so the
// result never depends on annotation order.
struct CellClaim {
    int dist = -1; // -1 marks an empty cell
    double area = 0.0;
    double h = 0.0;
    double w = 0.0;
    double cx = 0.0;
    double cy = 0.0;

    bool beats(const CellClaim& other) const
    {
        if (other.dist < 0) return true;
        if (dist != other.dist) return dist < other.dist;
        if (area != other.area) return area > other.area;
        if (h != other.h) return h > other.h;
        if (w != other.w) return w > other.w;
        if (cx != other.cx) return cx < other.cx;
        return cy < other.cy;
    }
};

} // namespace

int scale_channels(ScaleMode mode)
{
    return mode == ScaleMode::height_width ? 2 : 1;
}

Tensor gaussian_mask(const std::vector<ObjectAnnotation>& annotations, int map_w, int map_h,
                     const CodecConfig& cfg)
{
    check_codec_config(cfg);
    Tensor mask(1, 1, map_h, map_w);
    for (const ObjectAnnotation& obj : annotations) {
        const double mx = obj.cx / cfg.r;
        const double my = obj.cy / cfg.r;
        const double sig_w = cfg.sigma_ratio * obj.w / cfg.r;
        const double sig_h = cfg.sigma_ratio * obj.h / cfg.r;
        for (int j = 0; j < map_h; ++j) {
            for (int i = 0; i < map_w; ++i) {
                const double dx = (i - mx) / sig_w;
                const double dy = (j - my) / sig_h;
                const double g = std::exp(-0.5 * (dx * dx + dy * dy));
                double& m = mask.at(0, 0, j, i);
                m = std::max(m, g);
            }
        }
    }
    return mask;
}

TargetMaps encode_targets(const std::vector<ObjectAnnotation>& annotations, int image_w,
                          int image_h, const CodecConfig& cfg)
{
    check_codec_config(cfg);
    if (image_w <= 0 || image_h <= 0) {
        throw std::invalid_argument("encode_targets: image dimensions must be positive");
    }
    for (std::size_t k = 0; k < annotations.size(); ++k) {
        const ObjectAnnotation& obj = annotations[k];
        if (obj.h <= 0.0 || obj.w <= 0.0) {
            throw std::invalid_argument("encode_targets: annotation " + std::to_string(k) +
                                        " has non-positive size");
        }
        if (obj.cx < 0.0 || obj.cx >= image_w || obj.cy < 0.0 || obj.cy >= image_h) {
            throw std::invalid_argument("encode_targets: annotation " + std::to_string(k) +
                                        " center (" + std::to_string(obj.cx) + ", " +
                                        std::to_string(obj.cy) + ") lies outside the " +
                                        std::to_string(image_w) + "x" + std::to_string(image_h) +
                                        " image");
        }
    }

    const int mw = map_dim(image_w, cfg.r);
    const int mh = map_dim(image_h, cfg.r);
    const int sc = scale_channels(cfg.scale_mode);

    TargetMaps maps;
    maps.r = cfg.r;
    maps.center = Tensor(1, 1, mh, mw);
    maps.scale = Tensor(1, sc, mh, mw);
    maps.scale_weight = Tensor(1, sc, mh, mw);
    maps.offset = Tensor(1, 2, mh, mw);
    maps.offset_weight = Tensor(1, 1, mh, mw);
    maps.gauss = gaussian_mask(annotations, mw, mh, cfg);

    std::vector<CellClaim> claims(static_cast<std::size_t>(mw) * mh);
    int center_collisions = 0;

    for (const ObjectAnnotation& obj : annotations) {
        if (obj.ignore) {
            continue;
        }
        const int cell_x = static_cast<int>(std::floor(obj.cx / cfg.r));
        const int cell_y = static_cast<int>(std::floor(obj.cy / cfg.r));

        if (maps.center.at(0, 0, cell_y, cell_x) == 1.0) {
            ++center_collisions;
        }
        maps.center.at(0, 0, cell_y, cell_x) = 1.0;
        maps.gauss.at(0, 0, cell_y, cell_x) = 1.0;

        const int radius = cfg.scale_at_neighbors ? cfg.neighbor_radius : 0;
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                const int x = cell_x + dx;
                const int y = cell_y + dy;
                if (x < 0 || x >= mw || y < 0 || y >= mh) {
                    continue;
                }
                CellClaim claim{std::max(std::abs(dx), std::abs(dy)), obj.h * obj.w, obj.h,
                                obj.w, obj.cx, obj.cy};
                CellClaim& slot = claims[static_cast<std::size_t>(y) * mw + x];
                if (claim.beats(slot)) {
                    slot = claim;
                }
            }
        }
    }

    if (center_collisions > 0) {
        std::cerr << "warning: encode_targets: " << center_collisions
                  << " objects share a center cell with a larger object; the larger one keeps the cell\n";
    }

    for (int y = 0; y < mh; ++y) {
        for (int x = 0; x < mw; ++x) {
            const CellClaim& slot = claims[static_cast<std::size_t>(y) * mw + x];
            if (slot.dist < 0) {
                continue;
            }
            if (cfg.scale_mode == ScaleMode::height) {
                maps.scale.at(0, 0, y, x) = std::log(slot.h);
            } else if (cfg.scale_mode == ScaleMode::width) {
                maps.scale.at(0, 0, y, x) = std::log(slot.w);
            } else {
                maps.scale.at(0, 0, y, x) = std::log(slot.h);
                maps.scale.at(0, 1, y, x) = std::log(slot.w);
            }
            for (int c = 0; c < sc; ++c) {
                maps.scale_weight.at(0, c, y, x) = 1.0;
            }
            if (slot.dist == 0) {
                maps.offset.at(0, 0, y, x) = slot.cx / cfg.r - std::floor(slot.cx / cfg.r);
                maps.offset.at(0, 1, y, x) = slot.cy / cfg.r - std::floor(slot.cy / cfg.r);
                maps.offset_weight.at(0, 0, y, x) = 1.0;
            }
        }
    }

    int positives = 0;
    for (double v : maps.center.data) {
        positives += v == 1.0 ? 1 : 0;
    }
    maps.positives = positives;
    return maps;
}

std::vector<Detection> decode_detections(const Tensor& center_heat, const Tensor& scale_map,
                                         const Tensor* offset_map, int image_w, int image_h,
                                         const CodecConfig& cfg, const AspectPolicy& policy)
{
    check_codec_config(cfg);
    const int mh = center_heat.h();
    const int mw = center_heat.w();
    if (scale_map.h() != mh || scale_map.w() != mw ||
        (offset_map && (offset_map->h() != mh || offset_map->w() != mw))) {
        throw std::invalid_argument("decode_detections: map spatial dims disagree");
    }
    if (scale_map.c() != scale_channels(cfg.scale_mode)) {
        throw std::invalid_argument("decode_detections: scale map has " +
                                    std::to_string(scale_map.c()) + " channels, expected " +
                                    std::to_string(scale_channels(cfg.scale_mode)));
    }
    if (!center_heat.all_finite() || !scale_map.all_finite() ||
        (offset_map && !offset_map->all_finite())) {
        throw std::invalid_argument("decode_detections: non-finite map values");
    }
    for (double v : center_heat.data) {
        if (v < 0.0 || v > 1.0) {
            throw std::invalid_argument("decode_detections: center heat outside [0, 1]");
        }
    }

    std::vector<Detection> dets;
    for (int j = 0; j < mh; ++j) {
        for (int i = 0; i < mw; ++i) {
            const double score = center_heat.at(0, 0, j, i);
            if (score < cfg.decode_threshold) {
                continue;
            }
            double cx, cy;
            if (offset_map) {
                cx = (i + offset_map->at(0, 0, j, i)) * cfg.r;
                cy = (j + offset_map->at(0, 1, j, i)) * cfg.r;
            } else {
                cx = (i + 0.5) * cfg.r;
                cy = (j + 0.5) * cfg.r;
            }

            BoundBox box;
            if (cfg.scale_mode == ScaleMode::height) {
                box = box_from_center_scale(cx, cy, std::exp(scale_map.at(0, 0, j, i)),
                                            std::nullopt, policy);
            } else if (cfg.scale_mode == ScaleMode::width) {
                if (policy.mode != AspectPolicy::Mode::fixed_ratio || policy.ar <= 0.0) {
                    throw std::invalid_argument(
                        "decode_detections: width-only scale mode needs a fixed aspect ratio");
                }
                const double w = std::exp(scale_map.at(0, 0, j, i));
                const double h = w / policy.ar;
                box = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
            } else {
                const double h = std::exp(scale_map.at(0, 0, j, i));
                const double w = std::exp(scale_map.at(0, 1, j, i));
                box = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
            }

            const auto clipped = clip_box(box, image_w, image_h);
            if (!clipped) {
                continue;
            }
            dets.push_back({*clipped, score, i, j});
        }
    }
    return nms(dets, cfg.nms_iou);
}

} // namespace csp
