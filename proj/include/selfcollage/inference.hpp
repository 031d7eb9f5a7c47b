#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "selfcollage/core/image.hpp"
#include "selfcollage/model.hpp"

namespace selfcollage {

struct InferenceConfig {
    int target_height = 384;
    int window = 384;
    int stride = 128;
    double small_object_px = 10.0;  // tiling triggers when an exemplar is below this in both dims
    int tiling_grid = 3;
    double ttn_threshold = 1.8;
    std::optional<double> refine_count_threshold;  // v2: re-estimate via tiling above this count
};

inline void validate(const InferenceConfig& c) {
    if (c.stride < 1 || c.window < 1 || c.stride > c.window)
        throw InvalidInput("inference config: need 1 <= stride <= window");
    if (c.window != c.target_height)
        throw InvalidInput("inference config: window must equal target_height");
    if (c.small_object_px <= 0.0 || c.ttn_threshold <= 0.0 || c.tiling_grid < 1)
        throw InvalidInput("inference config: thresholds must be positive");
    if (c.refine_count_threshold && *c.refine_count_threshold <= 0.0)
        throw InvalidInput("inference config: refine threshold must be positive");
}

struct CountResult {
    double count = 0.0;        // final estimate (after test-time normalization)
    long long rounded = 0;     // nearest integer of count
    ScalarMap density;         // original image coordinates; sums to raw_count
    std::string path;          // "direct" | "tiled" | "refined"
    double raw_count = 0.0;    // density mass before normalization
    double ttn_scale = 1.0;
    bool ttn_applied = false;
};

// Aspect-preserving resize to the protocol height; the width is rounded and
// then snapped up to the next patch multiple.
inline Image resize_to_height(const Image& image, int target_height, int patch_size) {
    if (image.empty()) throw InvalidInput("resize_to_height: empty image");
    int new_w = static_cast<int>(std::lround(static_cast<double>(image.w) * target_height / image.h));
    new_w = std::max(new_w, 1);
    if (new_w % patch_size != 0) new_w += patch_size - new_w % patch_size;
    if (image.h == target_height && image.w == new_w) return image;
    return resize_image(image, target_height, new_w);
}

// Window start offsets: multiples of the stride, plus a final start flush with
// the right edge when the strided walk does not already cover it.
inline std::vector<int> window_starts(int width, int window, int stride) {
    std::vector<int> starts;
    for (int s = 0; s + window <= width; s += stride) starts.push_back(s);
    if (starts.empty() || starts.back() + window < width) starts.push_back(width - window);
    return starts;
}

// Per-pixel average of the overlapping window predictions. Images narrower
// than the window are reflect-padded on the right for a single pass.
inline ScalarMap sliding_window_density(DensityPredictor& model, const Image& image,
                                        const std::vector<Image>& exemplars, const InferenceConfig& cfg) {
    if (image.h != cfg.window)
        throw InvalidInput("sliding_window_density: image height must equal the window size");
    if (image.w < cfg.window) {
        Image padded(image.h, cfg.window);
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < cfg.window; ++x) {
                int sx = x;
                while (sx >= image.w) sx = 2 * image.w - sx - 1;  // reflect
                if (sx < 0) sx = 0;
                for (int c = 0; c < 3; ++c) padded.at(y, x, c) = image.at(y, sx, c);
            }
        const ScalarMap full = model.predict(padded, exemplars);
        ScalarMap out(image.h, image.w);
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x) out.at(y, x) = full.at(y, x);
        return out;
    }
    ScalarMap acc(image.h, image.w, 0.0);
    ScalarMap coverage(image.h, image.w, 0.0);
    for (int start : window_starts(image.w, cfg.window, cfg.stride)) {
        const Image win = crop(image, Box{start, 0, cfg.window, image.h});
        const ScalarMap d = model.predict(win, exemplars);
        if (d.h != image.h || d.w != cfg.window)
            throw InvalidInput("sliding_window_density: predictor output dims mismatch");
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < cfg.window; ++x) {
                acc.at(y, start + x) += d.at(y, x);
                coverage.at(y, start + x) += 1.0;
            }
    }
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] /= coverage.v[i];
    return acc;
}

// Small-object trigger: some exemplar box (in resized coordinates) is below
// the threshold in both width and height.
inline bool needs_tiling(const std::vector<Box>& exemplar_boxes, const InferenceConfig& cfg) {
    if (exemplar_boxes.empty()) throw InvalidInput("needs_tiling: need at least one box");
    for (const auto& b : exemplar_boxes)
        if (b.w < cfg.small_object_px && b.h < cfg.small_object_px) return true;
    return false;
}

namespace detail {

inline Box scale_box(const Box& b, double sx, double sy, int h, int w) {
    Box r;
    r.x = static_cast<int>(std::floor(b.x * sx));
    r.y = static_cast<int>(std::floor(b.y * sy));
    r.w = std::max(1, static_cast<int>(std::lround(b.w * sx)));
    r.h = std::max(1, static_cast<int>(std::lround(b.h * sy)));
    return clamp_box(r, h, w);
}

inline double box_mass(const ScalarMap& m, const Box& b) {
    double acc = 0.0;
    for (int y = b.y; y < b.y + b.h; ++y)
        for (int x = b.x; x < b.x + b.w; ++x) acc += m.at(y, x);
    return acc;
}

// Resize a density map while pinning its total mass.
inline ScalarMap resize_density(const ScalarMap& src, int out_h, int out_w, double target_mass) {
    ScalarMap dst = resize_map(src, out_h, out_w);
    const double s = dst.sum();
    if (std::abs(s) > 1e-12 * std::max(1.0, std::abs(target_mass))) {
        const double scale = target_mass / s;
        for (auto& v : dst.v) v *= scale;
    }
    return dst;
}

inline std::vector<Box> make_tiles(int h, int w, int grid) {
    std::vector<Box> tiles;
    const int th = h / grid, tw = w / grid;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            Box t;
            t.x = gx * tw;
            t.y = gy * th;
            t.w = gx == grid - 1 ? w - t.x : tw;
            t.h = gy == grid - 1 ? h - t.y : th;
            tiles.push_back(t);
        }
    return tiles;
}

}  // namespace detail

struct PredictorSpec {
    int patch_size = 16;
    int exemplar_h = 64, exemplar_w = 64;
};

namespace detail {

// 3x3 tiling path: every tile runs the window protocol independently; tile
// densities are mapped back into original coordinates and the counts summed.
inline CountResult tiled_count(DensityPredictor& model, const Image& image,
                               const std::vector<Image>& exemplar_crops,
                               const std::vector<Box>& original_boxes, const InferenceConfig& cfg,
                               const PredictorSpec& spec) {
    CountResult res;
    res.path = "tiled";
    res.density = ScalarMap(image.h, image.w, 0.0);
    for (const Box& tb : detail::make_tiles(image.h, image.w, cfg.tiling_grid)) {
        const Image tile = crop(image, tb);
        const Image tile_r = resize_to_height(tile, cfg.target_height, spec.patch_size);
        const ScalarMap td = sliding_window_density(model, tile_r, exemplar_crops, cfg);
        const double mass = td.sum();
        res.raw_count += mass;
        const ScalarMap back = detail::resize_density(td, tb.h, tb.w, mass);
        for (int y = 0; y < tb.h; ++y)
            for (int x = 0; x < tb.w; ++x) res.density.at(tb.y + y, tb.x + x) += back.at(y, x);
    }
    double mass_sum = 0.0;
    for (const auto& b : original_boxes)
        mass_sum += detail::box_mass(res.density, clamp_box(b, image.h, image.w));
    res.ttn_scale = mass_sum / static_cast<double>(original_boxes.size());
    res.count = res.raw_count;
    if (res.ttn_scale > cfg.ttn_threshold) {
        res.count /= res.ttn_scale;
        res.ttn_applied = true;
    }
    res.rounded = std::llround(res.count);
    return res;
}

}  // namespace detail

// The image-level counting protocol: aspect-preserving resize, sliding window
// with overlap averaging, the 3x3 small-object tiling, test-time
// normalization, and the optional high-count re-estimate.
inline CountResult count_image(DensityPredictor& model, const Image& image,
                               const std::vector<Box>& exemplar_boxes, const InferenceConfig& cfg,
                               const PredictorSpec& spec) {
    validate(cfg);
    if (exemplar_boxes.empty()) throw InvalidInput("count_image: need at least one exemplar box");
    const Image resized = resize_to_height(image, cfg.target_height, spec.patch_size);
    const double sx = static_cast<double>(resized.w) / image.w;
    const double sy = static_cast<double>(resized.h) / image.h;
    std::vector<Box> boxes_r;
    std::vector<Image> crops;
    for (const auto& b : exemplar_boxes) {
        const Box rb = detail::scale_box(b, sx, sy, resized.h, resized.w);
        boxes_r.push_back(rb);
        crops.push_back(resize_image(crop(resized, rb), spec.exemplar_h, spec.exemplar_w));
    }

    if (needs_tiling(boxes_r, cfg))
        return detail::tiled_count(model, image, crops, exemplar_boxes, cfg, spec);

    const ScalarMap density_r = sliding_window_density(model, resized, crops, cfg);
    CountResult res;
    res.path = "direct";
    res.raw_count = density_r.sum();
    double mass_sum = 0.0;
    for (const auto& b : boxes_r) mass_sum += detail::box_mass(density_r, b);
    res.ttn_scale = mass_sum / static_cast<double>(boxes_r.size());
    res.count = res.raw_count;
    if (res.ttn_scale > cfg.ttn_threshold) {
        res.count /= res.ttn_scale;
        res.ttn_applied = true;
    }
    if (cfg.refine_count_threshold && res.count > *cfg.refine_count_threshold) {
        CountResult refined = detail::tiled_count(model, image, crops, exemplar_boxes, cfg, spec);
        refined.path = "refined";
        return refined;
    }
    res.density = detail::resize_density(density_r, image.h, image.w, res.raw_count);
    res.rounded = std::llround(res.count);
    return res;
}

// Heatmap overlay for CLI export: density blended over the image in red.
inline Image density_overlay(const Image& image, const ScalarMap& density) {
    ScalarMap d = density.h == image.h && density.w == image.w
                      ? density
                      : resize_map(density, image.h, image.w);
    const double mx = std::max(d.max(), 1e-12);
    Image out = image;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            const double t = std::clamp(d.at(y, x) / mx, 0.0, 1.0);
            out.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(
                std::lround(image.at(y, x, 0) * (1.0 - 0.6 * t) + 255.0 * 0.6 * t), 0L, 255L));
            out.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(image.at(y, x, 1) * (1.0 - 0.6 * t)));
            out.at(y, x, 2) = static_cast<std::uint8_t>(std::lround(image.at(y, x, 2) * (1.0 - 0.6 * t)));
        }
    return out;
}

}  // namespace selfcollage
