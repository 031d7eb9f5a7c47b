#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfcollage/backbone.hpp"
#include "selfcollage/core/image.hpp"
#include "selfcollage/core/rng.hpp"
#include "selfcollage/io/image_io.hpp"

namespace selfcollage {

struct ObjectItem {
    Image image;
    std::optional<ScalarMap> mask;  // foreground weights in [0,1]
};

// Read-only, restartable object pool; get(i) is deterministic per index.
class ObjectSource {
public:
    virtual ~ObjectSource() = default;
    virtual std::size_t size() const = 0;
    virtual ObjectItem get(std::size_t i) const = 0;
};

class BackgroundSource {
public:
    virtual ~BackgroundSource() = default;
    virtual std::size_t size() const = 0;
    virtual Image get(std::size_t i) const = 0;
};

// ---------------------------------------------------------------------------
// Synthetic shapes: one centered shape per image, analytic mask.
// ---------------------------------------------------------------------------

enum class Shape { square, circle, triangle };
enum class Color { red, green, blue, yellow };

inline void color_rgb(Color c, std::uint8_t rgb[3]) {
    switch (c) {
        case Color::red: rgb[0] = 255; rgb[1] = 0; rgb[2] = 0; return;
        case Color::green: rgb[0] = 0; rgb[1] = 255; rgb[2] = 0; return;
        case Color::blue: rgb[0] = 0; rgb[1] = 0; rgb[2] = 255; return;
        case Color::yellow: rgb[0] = 255; rgb[1] = 255; rgb[2] = 0; return;
    }
}

struct ShapeParams {
    std::vector<Shape> shapes{Shape::square, Shape::circle, Shape::triangle};
    std::vector<Color> colors{Color::red, Color::green, Color::blue, Color::yellow};
    int canvas = 64;
    int size_min = 24, size_max = 48;
};

inline void validate(const ShapeParams& p) {
    if (p.shapes.empty()) throw InvalidInput("shape params: need at least one shape");
    if (p.colors.size() < 2)
        throw InvalidInput("shape params: need at least two colors (background must differ)");
    if (p.canvas < 8 || p.size_min < 2 || p.size_max < p.size_min || p.size_max > p.canvas)
        throw InvalidInput("shape params: bad canvas/size range");
}

// Rasterize a centered shape; returns the analytic mask.
inline ScalarMap rasterize_shape(Image& img, Shape shape, int size) {
    ScalarMap mask(img.h, img.w, 0.0);
    const double cx = img.w / 2.0, cy = img.h / 2.0;
    const double half = size / 2.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool inside = false;
            switch (shape) {
                case Shape::square:
                    inside = std::abs(px - cx) <= half && std::abs(py - cy) <= half;
                    break;
                case Shape::circle: {
                    const double dx = px - cx, dy = py - cy;
                    inside = dx * dx + dy * dy <= half * half;
                    break;
                }
                case Shape::triangle: {
                    // filled isoceles, apex up, width = height = size
                    const double ty = py - (cy - half);   // 0 at apex row
                    if (ty >= 0.0 && ty <= size) {
                        const double half_width = (ty / size) * half;
                        inside = std::abs(px - cx) <= half_width;
                    }
                    break;
                }
            }
            if (inside) mask.at(y, x) = 1.0;
        }
    return mask;
}

class SyntheticShapeSource : public ObjectSource {
public:
    SyntheticShapeSource(ShapeParams params, std::size_t count, std::uint64_t seed)
        : params_(std::move(params)), count_(count), seed_(seed) {
        validate(params_);
    }

    std::size_t size() const override { return count_; }

    struct Meta {
        Shape shape;
        Color color;
        int size;
    };

    Meta meta(std::size_t i) const {
        Rng rng(Rng::mix(seed_, i));
        Meta m;
        m.shape = params_.shapes[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(params_.shapes.size()) - 1))];
        m.color = params_.colors[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(params_.colors.size()) - 1))];
        m.size = static_cast<int>(rng.uniform_int(params_.size_min, params_.size_max));
        return m;
    }

    ObjectItem get(std::size_t i) const override {
        if (i >= count_) throw InvalidInput("shape source: index out of range");
        Rng rng(Rng::mix(seed_, i));
        const auto shape = params_.shapes[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(params_.shapes.size()) - 1))];
        const auto color = params_.colors[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(params_.colors.size()) - 1))];
        const int size = static_cast<int>(rng.uniform_int(params_.size_min, params_.size_max));
        // background drawn from the palette colors not used by the object
        std::vector<Color> bg_pool;
        for (auto c : params_.colors)
            if (c != color) bg_pool.push_back(c);
        const auto bg = bg_pool[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(bg_pool.size()) - 1))];

        ObjectItem item;
        item.image = Image(params_.canvas, params_.canvas);
        std::uint8_t bg_rgb[3], fg_rgb[3];
        color_rgb(bg, bg_rgb);
        color_rgb(color, fg_rgb);
        item.image.fill(bg_rgb[0], bg_rgb[1], bg_rgb[2]);
        ScalarMap mask = rasterize_shape(item.image, shape, size);
        for (int y = 0; y < item.image.h; ++y)
            for (int x = 0; x < item.image.w; ++x)
                if (mask.at(y, x) > 0.0)
                    for (int c = 0; c < 3; ++c) item.image.at(y, x, c) = fg_rgb[c];
        item.mask = std::move(mask);
        return item;
    }

private:
    ShapeParams params_;
    std::size_t count_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Procedural multi-octave value noise backgrounds: colorful clouds without a
// single salient object.
// ---------------------------------------------------------------------------
class NoiseBackgroundSource : public BackgroundSource {
public:
    NoiseBackgroundSource(std::size_t count, int canvas, std::uint64_t seed, int octaves = 3)
        : count_(count), canvas_(canvas), seed_(seed), octaves_(octaves) {
        if (canvas < 8) throw InvalidInput("noise source: canvas too small");
    }

    std::size_t size() const override { return count_; }

    Image get(std::size_t i) const override {
        if (i >= count_) throw InvalidInput("noise source: index out of range");
        Rng rng(Rng::mix(seed_ ^ 0x6e6f697365ULL, i));
        Image img(canvas_, canvas_);
        std::vector<double> acc(static_cast<std::size_t>(canvas_) * canvas_ * 3, 0.0);
        double amp = 1.0, total_amp = 0.0;
        int cells = 4;
        for (int o = 0; o < octaves_; ++o) {
            const int n = cells + 1;
            std::vector<double> lattice(static_cast<std::size_t>(n) * n * 3);
            for (auto& v : lattice) v = rng.uniform();
            for (int y = 0; y < canvas_; ++y)
                for (int x = 0; x < canvas_; ++x) {
                    const double fy = static_cast<double>(y) / canvas_ * cells;
                    const double fx = static_cast<double>(x) / canvas_ * cells;
                    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                    const double ty = smooth(fy - y0), tx = smooth(fx - x0);
                    for (int c = 0; c < 3; ++c) {
                        const double v00 = lattice[(static_cast<std::size_t>(y0) * n + x0) * 3 + c];
                        const double v01 = lattice[(static_cast<std::size_t>(y0) * n + x0 + 1) * 3 + c];
                        const double v10 = lattice[(static_cast<std::size_t>(y0 + 1) * n + x0) * 3 + c];
                        const double v11 = lattice[(static_cast<std::size_t>(y0 + 1) * n + x0 + 1) * 3 + c];
                        const double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
                        acc[(static_cast<std::size_t>(y) * canvas_ + x) * 3 + c] += amp * v;
                    }
                }
            total_amp += amp;
            amp *= 0.5;
            cells *= 2;
        }
        for (int y = 0; y < canvas_; ++y)
            for (int x = 0; x < canvas_; ++x)
                for (int c = 0; c < 3; ++c) {
                    const double v = acc[(static_cast<std::size_t>(y) * canvas_ + x) * 3 + c] / total_amp;
                    img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
                }
        return img;
    }

private:
    static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

    std::size_t count_;
    int canvas_;
    std::uint64_t seed_;
    int octaves_;
};

// ---------------------------------------------------------------------------
// Directory-backed sources.
// ---------------------------------------------------------------------------

enum class MaskPolicy { analytic_none, attention_threshold };

namespace detail {
inline std::vector<std::string> list_images(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("dataset: not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_filename(e.path().filename().string()))
            files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("dataset: no decodable images in " + dir);
    return files;
}
}  // namespace detail

// Foreground mask from backbone saliency: keep patches whose attention is at
// least half the maximum, upsampled to pixel resolution.
inline ScalarMap attention_threshold_mask(const Image& img, const Backbone& backbone) {
    const ScalarMap att = backbone.cls_attention(img);
    const double thr = 0.5 * att.max();
    ScalarMap mask(img.h, img.w, 0.0);
    const int p = backbone.patch_size();
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const int gy = std::min(y / p, att.h - 1);
            const int gx = std::min(x / p, att.w - 1);
            if (att.at(gy, gx) >= thr && thr > 0.0) mask.at(y, x) = 1.0;
        }
    return mask;
}

class DirectoryObjectSource : public ObjectSource {
public:
    DirectoryObjectSource(const std::string& dir, MaskPolicy policy, int mask_patch = 4)
        : files_(detail::list_images(dir)), policy_(policy), mask_backbone_(mask_patch) {}

    std::size_t size() const override { return files_.size(); }

    ObjectItem get(std::size_t i) const override {
        if (i >= files_.size()) throw InvalidInput("directory source: index out of range");
        ObjectItem item;
        item.image = load_image(files_[i]);
        if (policy_ == MaskPolicy::attention_threshold)
            item.mask = attention_threshold_mask(item.image, mask_backbone_);
        return item;
    }

    const std::string& path(std::size_t i) const { return files_[i]; }

private:
    std::vector<std::string> files_;
    MaskPolicy policy_;
    HandcraftedBackbone mask_backbone_;
};

class DirectoryBackgroundSource : public BackgroundSource {
public:
    explicit DirectoryBackgroundSource(const std::string& dir) : files_(detail::list_images(dir)) {}

    std::size_t size() const override { return files_.size(); }

    Image get(std::size_t i) const override {
        if (i >= files_.size()) throw InvalidInput("directory source: index out of range");
        return load_image(files_[i]);
    }

private:
    std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Evaluation records.
// ---------------------------------------------------------------------------

struct EvalRecord {
    std::string id;
    std::string image_path;
    std::vector<Box> exemplar_boxes;
    int gt_count = 0;
};

// FSC-147-style annotations: a JSON object keyed by image filename with
// "box_examples_coordinates" (4 corner points [x, y] per box; corners 0 and 2
// are the opposite ones used here) and "points" (one [x, y] per instance; the
// ground-truth count is the number of points). The split file maps split name
// to a list of filenames. Extra keys are ignored.
inline std::vector<EvalRecord> fsc147_adapter(const std::string& annotation_json,
                                              const std::string& split_file,
                                              const std::string& image_dir,
                                              const std::string& split_name = "test") {
    std::ifstream af(annotation_json);
    if (!af) throw DataError("fsc147: cannot open " + annotation_json);
    nlohmann::json ann;
    try {
        ann = nlohmann::json::parse(af);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("fsc147: cannot parse " + annotation_json + ": " + e.what());
    }
    std::ifstream sf(split_file);
    if (!sf) throw DataError("fsc147: cannot open " + split_file);
    nlohmann::json split;
    try {
        split = nlohmann::json::parse(sf);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("fsc147: cannot parse " + split_file + ": " + e.what());
    }
    if (!split.contains(split_name))
        throw DataError("fsc147: split file missing key '" + split_name + "'");

    std::vector<EvalRecord> records;
    for (const auto& name_json : split.at(split_name)) {
        const auto name = name_json.get<std::string>();
        if (!ann.contains(name)) throw DataError("fsc147: annotation missing key '" + name + "'");
        const auto& entry = ann.at(name);
        EvalRecord rec;
        rec.id = name;
        rec.image_path = image_dir.empty() ? name : image_dir + "/" + name;
        if (!entry.contains("box_examples_coordinates"))
            throw DataError("fsc147: '" + name + "' missing key 'box_examples_coordinates'");
        for (const auto& corners : entry.at("box_examples_coordinates")) {
            if (!corners.is_array() || corners.size() < 3)
                throw DataError("fsc147: '" + name + "' has a malformed box in 'box_examples_coordinates'");
            const double x1 = corners[0][0].get<double>(), y1 = corners[0][1].get<double>();
            const double x2 = corners[2][0].get<double>(), y2 = corners[2][1].get<double>();
            Box b;
            b.x = static_cast<int>(std::lround(std::min(x1, x2)));
            b.y = static_cast<int>(std::lround(std::min(y1, y2)));
            b.w = std::max(1, static_cast<int>(std::lround(std::abs(x2 - x1))));
            b.h = std::max(1, static_cast<int>(std::lround(std::abs(y2 - y1))));
            rec.exemplar_boxes.push_back(b);
        }
        if (!entry.contains("points"))
            throw DataError("fsc147: '" + name + "' missing key 'points'");
        rec.gt_count = static_cast<int>(entry.at("points").size());
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace selfcollage
