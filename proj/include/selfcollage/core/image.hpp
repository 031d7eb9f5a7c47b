#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "selfcollage/core/error.hpp"

namespace selfcollage {

// Axis-aligned box in pixel coordinates, top-left origin.
struct Box {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
    bool intersects(const Box& o) const {
        return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
    }
};

// 8-bit RGB image, row-major, interleaved channels.
struct Image {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px;  // h*w*3

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_ * 3, 0) {}

    std::uint8_t& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }

    void fill(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        for (std::size_t i = 0; i < px.size(); i += 3) {
            px[i] = r;
            px[i + 1] = g;
            px[i + 2] = b;
        }
    }
    bool empty() const { return h == 0 || w == 0; }
};

// Single-channel scalar field (density maps, masks, attention).
struct ScalarMap {
    int h = 0, w = 0;
    std::vector<double> v;

    ScalarMap() = default;
    ScalarMap(int h_, int w_, double init = 0.0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, init) {}

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

    double sum() const {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    double max() const {
        double m = v.empty() ? 0.0 : v[0];
        for (double x : v) m = std::max(m, x);
        return m;
    }
    bool empty() const { return h == 0 || w == 0; }
};

namespace detail {

struct ResampleTaps {
    int start = 0;
    std::vector<double> w;
};

// Triangle-filter taps; support widens with the scale factor so downscaling
// averages instead of skipping pixels.
inline std::vector<ResampleTaps> linear_taps(int in, int out) {
    std::vector<ResampleTaps> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    const double support = std::max(1.0, scale);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        int lo = static_cast<int>(std::ceil(center - support));
        int hi = static_cast<int>(std::floor(center + support));
        lo = std::max(lo, 0);
        hi = std::min(hi, in - 1);
        auto& t = taps[static_cast<std::size_t>(o)];
        t.start = lo;
        t.w.resize(static_cast<std::size_t>(hi - lo + 1));
        double total = 0.0;
        for (int i = lo; i <= hi; ++i) {
            const double x = 1.0 - std::abs(i - center) / support;
            t.w[static_cast<std::size_t>(i - lo)] = x > 0.0 ? x : 0.0;
            total += t.w[static_cast<std::size_t>(i - lo)];
        }
        if (total <= 0.0) {  // degenerate: fall back to nearest
            std::fill(t.w.begin(), t.w.end(), 0.0);
            const int near = std::clamp(static_cast<int>(std::lround(center)), lo, hi);
            t.w[static_cast<std::size_t>(near - lo)] = 1.0;
            total = 1.0;
        }
        for (auto& x : t.w) x /= total;
    }
    return taps;
}

}  // namespace detail

inline Image resize_image(const Image& src, int out_h, int out_w) {
    if (src.empty() || out_h <= 0 || out_w <= 0) throw InvalidInput("resize_image: empty input or output");
    const auto tx = detail::linear_taps(src.w, out_w);
    const auto ty = detail::linear_taps(src.h, out_h);
    // horizontal pass
    std::vector<double> tmp(static_cast<std::size_t>(src.h) * out_w * 3, 0.0);
    for (int y = 0; y < src.h; ++y) {
        for (int o = 0; o < out_w; ++o) {
            const auto& t = tx[static_cast<std::size_t>(o)];
            double acc[3] = {0, 0, 0};
            for (std::size_t k = 0; k < t.w.size(); ++k) {
                const int xi = t.start + static_cast<int>(k);
                for (int c = 0; c < 3; ++c) acc[c] += t.w[k] * src.at(y, xi, c);
            }
            for (int c = 0; c < 3; ++c) tmp[(static_cast<std::size_t>(y) * out_w + o) * 3 + c] = acc[c];
        }
    }
    // vertical pass
    Image dst(out_h, out_w);
    for (int o = 0; o < out_h; ++o) {
        const auto& t = ty[static_cast<std::size_t>(o)];
        for (int x = 0; x < out_w; ++x) {
            double acc[3] = {0, 0, 0};
            for (std::size_t k = 0; k < t.w.size(); ++k) {
                const int yi = t.start + static_cast<int>(k);
                for (int c = 0; c < 3; ++c)
                    acc[c] += t.w[k] * tmp[(static_cast<std::size_t>(yi) * out_w + x) * 3 + c];
            }
            for (int c = 0; c < 3; ++c)
                dst.at(o, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
        }
    }
    return dst;
}

inline ScalarMap resize_map(const ScalarMap& src, int out_h, int out_w) {
    if (src.empty() || out_h <= 0 || out_w <= 0) throw InvalidInput("resize_map: empty input or output");
    const auto tx = detail::linear_taps(src.w, out_w);
    const auto ty = detail::linear_taps(src.h, out_h);
    ScalarMap tmp(src.h, out_w);
    for (int y = 0; y < src.h; ++y)
        for (int o = 0; o < out_w; ++o) {
            const auto& t = tx[static_cast<std::size_t>(o)];
            double acc = 0.0;
            for (std::size_t k = 0; k < t.w.size(); ++k) acc += t.w[k] * src.at(y, t.start + static_cast<int>(k));
            tmp.at(y, o) = acc;
        }
    ScalarMap dst(out_h, out_w);
    for (int o = 0; o < out_h; ++o)
        for (int x = 0; x < out_w; ++x) {
            const auto& t = ty[static_cast<std::size_t>(o)];
            double acc = 0.0;
            for (std::size_t k = 0; k < t.w.size(); ++k) acc += t.w[k] * tmp.at(t.start + static_cast<int>(k), x);
            dst.at(o, x) = acc;
        }
    return dst;
}

inline Box clamp_box(Box b, int h, int w) {
    b.x = std::clamp(b.x, 0, std::max(0, w - 1));
    b.y = std::clamp(b.y, 0, std::max(0, h - 1));
    b.w = std::clamp(b.w, 1, w - b.x);
    b.h = std::clamp(b.h, 1, h - b.y);
    return b;
}

inline Image crop(const Image& src, Box b) {
    b = clamp_box(b, src.h, src.w);
    Image out(b.h, b.w);
    for (int y = 0; y < b.h; ++y)
        for (int x = 0; x < b.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(b.y + y, b.x + x, c);
    return out;
}

inline ScalarMap crop(const ScalarMap& src, Box b) {
    b = clamp_box(b, src.h, src.w);
    ScalarMap out(b.h, b.w);
    for (int y = 0; y < b.h; ++y)
        for (int x = 0; x < b.w; ++x) out.at(y, x) = src.at(b.y + y, b.x + x);
    return out;
}

inline ScalarMap to_gray(const Image& img) {
    ScalarMap g(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            g.at(y, x) = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / (3.0 * 255.0);
    return g;
}

}  // namespace selfcollage
