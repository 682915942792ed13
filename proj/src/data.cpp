#include "csp/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "csp/errors.hpp"

namespace csp {

namespace {

using nlohmann::json;

double snap8(double v)
{
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

double luma(double r, double g, double b)
{
    return (r + g + b) / 3.0;
}

void paint_background(Tensor& img, const BackgroundSpec& bg, std::mt19937_64& rng)
{
    const int H = img.h(), W = img.w();
    switch (bg.kind) {
    case BackgroundSpec::Kind::flat: {
        const double v = snap8(bg.intensity);
        img.fill(v);
        break;
    }
    case BackgroundSpec::Kind::gradient: {
        const bool horizontal = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double f = horizontal ? (W > 1 ? static_cast<double>(x) / (W - 1) : 0.0)
                                            : (H > 1 ? static_cast<double>(y) / (H - 1) : 0.0);
                const double v = snap8(bg.intensity + f * (bg.intensity2 - bg.intensity));
                for (int c = 0; c < 3; ++c) {
                    img.at(0, c, y, x) = v;
                }
            }
        }
        break;
    }
    case BackgroundSpec::Kind::noise: {
        std::normal_distribution<double> noise(bg.intensity, bg.sigma);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double v = snap8(noise(rng));
                for (int c = 0; c < 3; ++c) {
                    img.at(0, c, y, x) = v;
                }
            }
        }
        break;
    }
    }
}

double background_luma(const BackgroundSpec& bg)
{
    if (bg.kind == BackgroundSpec::Kind::gradient) {
        return 0.5 * (bg.intensity + bg.intensity2);
    }
    return bg.intensity;
}

} // namespace

DatasetRecord generate_scene(const SceneSpec& spec, std::mt19937_64& rng)
{
    if (spec.image_w <= 0 || spec.image_h <= 0 || spec.objects_min < 0 ||
        spec.objects_max < spec.objects_min || spec.height_min <= 0.0 ||
        spec.height_max < spec.height_min || spec.overlap_max < 0.0 || spec.overlap_max >= 1.0) {
        throw ConfigError("generate_scene: invalid scene spec");
    }

    DatasetRecord rec;
    rec.width = spec.image_w;
    rec.height = spec.image_h;
    rec.image = Tensor(1, 3, spec.image_h, spec.image_w);
    paint_background(rec.image, spec.background, rng);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int want = std::uniform_int_distribution<int>(spec.objects_min, spec.objects_max)(rng);
    const double bg_luma = background_luma(spec.background);

    struct Placed {
        ObjectAnnotation ann;
        double r, g, b;
        bool ellipse;
    };
    std::vector<Placed> placed;

    for (int k = 0; k < want; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            const double h =
                spec.height_min + unit(rng) * (spec.height_max - spec.height_min);
            double ar = spec.aspect.ratio;
            if (spec.aspect.mode == AspectSpec::Mode::range) {
                ar = spec.aspect.lo + unit(rng) * (spec.aspect.hi - spec.aspect.lo);
            }
            const double w = ar * h;
            if (w >= spec.image_w || h >= spec.image_h) {
                continue;
            }
            const double cx = 0.5 * w + unit(rng) * (spec.image_w - w);
            const double cy = 0.5 * h + unit(rng) * (spec.image_h - h);
            ObjectAnnotation ann{cx, cy, h, w, false};

            bool overlaps = false;
            for (const Placed& p : placed) {
                if (iou(ann.box(), p.ann.box()) > spec.overlap_max) {
                    overlaps = true;
                    break;
                }
            }
            if (overlaps) {
                continue;
            }

            double r = 0.0, g = 0.0, b = 0.0;
            for (int tries = 0; tries < 20; ++tries) {
                r = snap8(0.05 + 0.9 * unit(rng));
                g = snap8(0.05 + 0.9 * unit(rng));
                b = snap8(0.05 + 0.9 * unit(rng));
                if (std::abs(luma(r, g, b) - bg_luma) >= 0.2) {
                    break;
                }
            }

            bool ellipse = false;
            if (spec.fill_style == FillStyle::ellipses) {
                ellipse = true;
            } else if (spec.fill_style == FillStyle::mixed) {
                ellipse = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
            }

            placed.push_back({ann, r, g, b, ellipse});
            ok = true;
        }
        if (!ok) {
            std::cerr << "warning: generate_scene: placed " << placed.size() << " of " << want
                      << " objects before running out of room\n";
            break;
        }
    }

    for (const Placed& p : placed) {
        const BoundBox box = p.ann.box();
        const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
        const int y1 = std::min(spec.image_h, static_cast<int>(std::ceil(box.y2)));
        const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
        const int x1 = std::min(spec.image_w, static_cast<int>(std::ceil(box.x2)));
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                bool inside;
                if (p.ellipse) {
                    const double dx = (px - p.ann.cx) / (0.5 * p.ann.w);
                    const double dy = (py - p.ann.cy) / (0.5 * p.ann.h);
                    inside = dx * dx + dy * dy <= 1.0;
                } else {
                    inside = px >= box.x1 && px < box.x2 && py >= box.y1 && py < box.y2;
                }
                if (inside) {
                    rec.image.at(0, 0, y, x) = p.r;
                    rec.image.at(0, 1, y, x) = p.g;
                    rec.image.at(0, 2, y, x) = p.b;
                }
            }
        }
        rec.objects.push_back(p.ann);
    }
    return rec;
}

std::vector<DatasetRecord> load_annotations(const std::string& path)
{
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("load_annotations: cannot open " + path);
    }
    std::vector<DatasetRecord> out;
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
            throw ConfigError("load_annotations: " + path + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
        DatasetRecord rec;
        try {
            rec.image_path = j.value("image", std::string());
            rec.width = j.at("width").get<int>();
            rec.height = j.at("height").get<int>();
            for (const json& o : j.at("objects")) {
                ObjectAnnotation ann;
                ann.cx = o.at("cx").get<double>();
                ann.cy = o.at("cy").get<double>();
                ann.h = o.at("h").get<double>();
                ann.w = o.at("w").get<double>();
                ann.ignore = o.value("ignore", false);
                rec.objects.push_back(ann);
            }
        } catch (const json::exception& e) {
            throw ConfigError("load_annotations: " + path + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
        if (rec.width <= 0 || rec.height <= 0) {
            throw ConfigError("load_annotations: " + path + ":" + std::to_string(line_no) +
                              ": non-positive image dimensions");
        }
        const double slop = 1e-6;
        for (std::size_t k = 0; k < rec.objects.size(); ++k) {
            const ObjectAnnotation& a = rec.objects[k];
            if (a.h <= 0.0 || a.w <= 0.0) {
                throw ConfigError("load_annotations: record " + std::to_string(out.size()) +
                                  ", object " + std::to_string(k) + ": non-positive size");
            }
            const BoundBox b = a.box();
            if (b.x1 < -slop || b.y1 < -slop || b.x2 > rec.width + slop ||
                b.y2 > rec.height + slop) {
                throw ConfigError("load_annotations: record " + std::to_string(out.size()) +
                                  ", object " + std::to_string(k) + ": box outside the image");
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_annotations(const std::vector<DatasetRecord>& records, const std::string& path)
{
    std::ofstream f(path);
    if (!f) {
        throw ConfigError("save_annotations: cannot open " + path);
    }
    for (const DatasetRecord& rec : records) {
        json j;
        j["image"] = rec.image_path;
        j["width"] = rec.width;
        j["height"] = rec.height;
        json objs = json::array();
        for (const ObjectAnnotation& a : rec.objects) {
            objs.push_back({{"cx", a.cx}, {"cy", a.cy}, {"h", a.h}, {"w", a.w},
                            {"ignore", a.ignore}});
        }
        j["objects"] = std::move(objs);
        f << j.dump() << "\n";
    }
}

namespace {

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w)
{
    const int H = img.h(), W = img.w(), C = img.c();
    Tensor out(1, C, out_h, out_w);
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            for (int c = 0; c < C; ++c) {
                const double top = (1.0 - wx) * img.at(0, c, y0, x0) + wx * img.at(0, c, y0, x1);
                const double bot = (1.0 - wx) * img.at(0, c, y1, x0) + wx * img.at(0, c, y1, x1);
                out.at(0, c, y, x) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

Tensor pad_replicate(const Tensor& img, int out_h, int out_w)
{
    if (img.h() >= out_h && img.w() >= out_w) {
        return img;
    }
    Tensor out(1, img.c(), std::max(img.h(), out_h), std::max(img.w(), out_w));
    for (int c = 0; c < img.c(); ++c) {
        for (int y = 0; y < out.h(); ++y) {
            const int sy = std::min(y, img.h() - 1);
            for (int x = 0; x < out.w(); ++x) {
                out.at(0, c, y, x) = img.at(0, c, sy, std::min(x, img.w() - 1));
            }
        }
    }
    return out;
}

// Re-derives (cx, cy, h, w) from a box clipped to [0,w)x[0,h); returns false
// if nothing remains.
bool reclip_annotation(ObjectAnnotation& a, double width, double height)
{
    const auto clipped = clip_box(a.box(), width, height);
    if (!clipped) {
        return false;
    }
    a.cx = clipped->cx();
    a.cy = clipped->cy();
    a.w = clipped->width();
    a.h = clipped->height();
    return a.w > 0.0 && a.h > 0.0;
}

} // namespace

Augmented augment(const DatasetRecord& record, const AugmentParams& params, std::mt19937_64& rng)
{
    if (record.image.numel() == 0) {
        throw ConfigError("augment: record has no image loaded");
    }
    Augmented out;
    out.image = record.image;
    out.objects = record.objects;

    if (!params.enabled) {
        return out;
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);

    if (unit(rng) < params.hflip_prob) {
        const int W = out.image.w();
        Tensor flipped = Tensor::zeros_like(out.image);
        for (int c = 0; c < out.image.c(); ++c) {
            for (int y = 0; y < out.image.h(); ++y) {
                for (int x = 0; x < W; ++x) {
                    flipped.at(0, c, y, x) = out.image.at(0, c, y, W - 1 - x);
                }
            }
        }
        out.image = std::move(flipped);
        for (ObjectAnnotation& a : out.objects) {
            a.cx = W - a.cx;
        }
    }

    const double s = params.scale_min + unit(rng) * (params.scale_max - params.scale_min);
    const int sw = std::max(1, static_cast<int>(std::lround(out.image.w() * s)));
    const int sh = std::max(1, static_cast<int>(std::lround(out.image.h() * s)));
    const double sx = static_cast<double>(sw) / out.image.w();
    const double sy = static_cast<double>(sh) / out.image.h();
    if (sw != out.image.w() || sh != out.image.h()) {
        out.image = resize_bilinear(out.image, sh, sw);
    }
    {
        std::vector<ObjectAnnotation> kept;
        for (ObjectAnnotation a : out.objects) {
            a.cx *= sx;
            a.cy *= sy;
            a.w *= sx;
            a.h *= sy;
            if (a.cx < 0.0 || a.cx >= sw || a.cy < 0.0 || a.cy >= sh) {
                continue;
            }
            if (reclip_annotation(a, sw, sh)) {
                kept.push_back(a);
            }
        }
        out.objects = std::move(kept);
    }

    out.image = pad_replicate(out.image, params.crop_h, params.crop_w);
    const int max_ox = out.image.w() - params.crop_w;
    const int max_oy = out.image.h() - params.crop_h;
    const int ox = max_ox > 0 ? std::uniform_int_distribution<int>(0, max_ox)(rng) : 0;
    const int oy = max_oy > 0 ? std::uniform_int_distribution<int>(0, max_oy)(rng) : 0;
    {
        Tensor crop(1, out.image.c(), params.crop_h, params.crop_w);
        for (int c = 0; c < crop.c(); ++c) {
            for (int y = 0; y < params.crop_h; ++y) {
                for (int x = 0; x < params.crop_w; ++x) {
                    crop.at(0, c, y, x) = out.image.at(0, c, y + oy, x + ox);
                }
            }
        }
        out.image = std::move(crop);

        std::vector<ObjectAnnotation> kept;
        for (ObjectAnnotation a : out.objects) {
            a.cx -= ox;
            a.cy -= oy;
            if (a.cx < 0.0 || a.cx >= params.crop_w || a.cy < 0.0 || a.cy >= params.crop_h) {
                continue;
            }
            if (reclip_annotation(a, params.crop_w, params.crop_h)) {
                kept.push_back(a);
            }
        }
        out.objects = std::move(kept);
    }

    if (params.brightness_jitter > 0.0) {
        const double shift = (2.0 * unit(rng) - 1.0) * params.brightness_jitter;
        for (double& v : out.image.data) {
            v = std::clamp(v + shift, 0.0, 1.0);
        }
    }
    return out;
}

Tensor read_ppm(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("read_ppm: cannot open " + path);
    }
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
        throw ConfigError("read_ppm: unsupported header in " + path);
    }
    f.get(); // single whitespace after header
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) {
        throw ConfigError("read_ppm: truncated pixel data in " + path);
    }
    Tensor img(1, 3, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
            for (int c = 0; c < 3; ++c) {
                img.at(0, c, y, x) = raw[i + c] / 255.0;
            }
        }
    }
    return img;
}

void write_ppm(const std::string& path, const Tensor& image)
{
    if (image.n() != 1 || image.c() != 3) {
        throw ConfigError("write_ppm: expected a (1, 3, h, w) tensor, got " + shape_str(image));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("write_ppm: cannot open " + path);
    }
    f << "P6\n" << image.w() << " " << image.h() << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(image.w()) * image.h() * 3);
    for (int y = 0; y < image.h(); ++y) {
        for (int x = 0; x < image.w(); ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * image.w() + x) * 3;
            for (int c = 0; c < 3; ++c) {
                raw[i + c] = static_cast<unsigned char>(
                    std::lround(std::clamp(image.at(0, c, y, x), 0.0, 1.0) * 255.0));
            }
        }
    }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const std::string& path, const Tensor& map)
{
    if (map.n() != 1 || map.c() != 1) {
        throw ConfigError("write_pgm: expected a (1, 1, h, w) tensor, got " + shape_str(map));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("write_pgm: cannot open " + path);
    }
    f << "P5\n" << map.w() << " " << map.h() << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(map.w()) * map.h());
    for (int y = 0; y < map.h(); ++y) {
        for (int x = 0; x < map.w(); ++x) {
            raw[static_cast<std::size_t>(y) * map.w() + x] = static_cast<unsigned char>(
                std::lround(std::clamp(map.at(0, 0, y, x), 0.0, 1.0) * 255.0));
        }
    }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

} // namespace csp
