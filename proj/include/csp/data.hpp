#pragma once

#include <random>
#include <string>
#include <vector>

#include "csp/geometry.hpp"
#include "csp/tensor.hpp"

namespace csp {

struct AspectSpec {
    enum class Mode { fixed, range };
    Mode mode = Mode::fixed;
    double ratio = 0.41;
    double lo = 0.5;
    double hi = 2.0;
};

struct BackgroundSpec {
    enum class Kind { flat, gradient, noise };
    Kind kind = Kind::gradient;
    double intensity = 0.3;   // flat level, gradient start, or noise mean
    double intensity2 = 0.55; // gradient end
    double sigma = 0.04;      // noise std
};

enum class FillStyle { rectangles, ellipses, mixed };

struct SceneSpec {
    int image_w = 64;
    int image_h = 64;
    int objects_min = 1;
    int objects_max = 4;
    double height_min = 22.0;
    double height_max = 40.0;
    AspectSpec aspect;
    double overlap_max = 0.1;
    BackgroundSpec background;
    FillStyle fill_style = FillStyle::mixed;
};

struct DatasetRecord {
    std::string image_path; // empty for inline-only records
    int width = 0;
    int height = 0;
    std::vector<ObjectAnnotation> objects;
    Tensor image; // (1, 3, h, w) in [0, 1]; empty when not loaded
};

// Renders filled shapes with exact ground truth. Pixel values are snapped to
// the 8-bit grid so a PPM round trip is lossless.
DatasetRecord generate_scene(const SceneSpec& spec, std::mt19937_64& rng);

// JSONL, one record per line:
// {"image": str, "width": int, "height": int,
//  "objects": [{"cx", "cy", "h", "w", "ignore"}]}
std::vector<DatasetRecord> load_annotations(const std::string& path);
void save_annotations(const std::vector<DatasetRecord>& records, const std::string& path);

struct AugmentParams {
    bool enabled = true;
    double hflip_prob = 0.5;
    double scale_min = 0.7;
    double scale_max = 1.4;
    int crop_w = 64;
    int crop_h = 64;
    double brightness_jitter = 0.1;
};

struct Augmented {
    Tensor image;
    std::vector<ObjectAnnotation> objects;
};

// Horizontal flip, uniform rescale, random crop (annotations kept iff their
// center stays inside, boxes clipped), brightness shift.
Augmented augment(const DatasetRecord& record, const AugmentParams& params, std::mt19937_64& rng);

Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);
void write_pgm(const std::string& path, const Tensor& map); // single-channel, values in [0, 1]

} // namespace csp
