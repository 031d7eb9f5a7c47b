#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "selfcollage/backbone.hpp"
#include "selfcollage/core/connected.hpp"
#include "selfcollage/core/gaussian.hpp"
#include "selfcollage/model.hpp"
#include "selfcollage/nn/layers.hpp"

namespace selfcollage {

// Plain bilinear point sampling; keeps peak magnitudes intact, unlike the
// antialiased resize used for images.
inline ScalarMap point_resize(const ScalarMap& src, int out_h, int out_w) {
    if (src.h == out_h && src.w == out_w) return src;
    Tensor t({1, src.h, src.w});
    std::copy(src.v.begin(), src.v.end(), t.data());
    nn::BilinearResize rz;
    const Tensor out = rz.forward(t, 1, src.h, src.w, out_h, out_w);
    ScalarMap m(out_h, out_w);
    std::copy(out.data(), out.data() + m.v.size(), m.v.begin());
    return m;
}

class NoSalientObject : public Error {
public:
    using Error::Error;
};

struct SemanticConfig {
    int image_size = 384;               // square working resolution
    int refine_iters = 2;
    double stop_frac = 0.2;             // stop when max attention < frac * original max
    double refine_frac = 0.2;           // density binarization fraction during refinement
    double mask_density_threshold = 0.5;
    int peak_block = 5;                 // patch block zeroed around a consumed peak
    double ttn_threshold = 1.8;
    int connectivity = 4;
    int exemplar_h = 64, exemplar_w = 64;
};

// Attention blur parameters (kernel size, sigma) used when proposing.
constexpr int kProposeBlurKernel = 3;
constexpr double kProposeBlurSigma = 1.5;

struct CandidateProposal {
    Box box;        // image coordinates in the working frame
    int peak_y = 0, peak_x = 0;  // patch coordinates of the blurred argmax
};

// Blur the attention, binarize at half its max, and return the box of the
// connected component holding the argmax.
inline CandidateProposal propose_candidate(const ScalarMap& attention, int patch_size,
                                           int image_h, int image_w, int connectivity = 4) {
    const ScalarMap blurred = gaussian_blur(attention, kProposeBlurSigma, kProposeBlurKernel);
    double mx = 0.0;
    int py = 0, px = 0;
    for (int y = 0; y < blurred.h; ++y)
        for (int x = 0; x < blurred.w; ++x)
            if (blurred.at(y, x) > mx) {
                mx = blurred.at(y, x);
                py = y;
                px = x;
            }
    if (mx <= 0.0) throw NoSalientObject("propose_candidate: attention has no positive maximum");
    std::vector<std::uint8_t> binary(blurred.v.size(), 0);
    for (std::size_t i = 0; i < blurred.v.size(); ++i)
        binary[i] = blurred.v[i] > 0.5 * mx ? 1 : 0;
    const auto labels = label_components(binary, blurred.h, blurred.w, connectivity);
    const int target = labels.labels[static_cast<std::size_t>(py) * blurred.w + px];
    int y0 = blurred.h, y1 = -1, x0 = blurred.w, x1 = -1;
    for (int y = 0; y < blurred.h; ++y)
        for (int x = 0; x < blurred.w; ++x)
            if (labels.labels[static_cast<std::size_t>(y) * blurred.w + x] == target) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    CandidateProposal out;
    out.peak_y = py;
    out.peak_x = px;
    out.box = clamp_box(Box{x0 * patch_size, y0 * patch_size, (x1 - x0 + 1) * patch_size,
                            (y1 - y0 + 1) * patch_size},
                        image_h, image_w);
    return out;
}

// One refinement pass: predict with the current exemplar, binarize at 20% of
// the max, take the second-largest component (the largest is assumed to be
// background) and center-crop its box by a factor of 0.3 per dimension.
inline Box refine_exemplar(DensityPredictor& model, const Image& image, Box candidate_box, int iters,
                           const SemanticConfig& cfg) {
    Box box = clamp_box(candidate_box, image.h, image.w);
    for (int it = 0; it < iters; ++it) {
        const Image exemplar = resize_image(crop(image, box), cfg.exemplar_h, cfg.exemplar_w);
        const ScalarMap density = model.predict(image, {exemplar});
        const double mx = density.max();
        if (mx <= 0.0) {
            std::cerr << "[selfcollage] refine_exemplar: non-positive density, keeping current box\n";
            return box;
        }
        std::vector<std::uint8_t> binary(density.v.size(), 0);
        for (std::size_t i = 0; i < density.v.size(); ++i)
            binary[i] = density.v[i] > cfg.refine_frac * mx ? 1 : 0;
        const auto labels = label_components(binary, density.h, density.w, cfg.connectivity);
        if (labels.count < 2) {
            std::cerr << "[selfcollage] refine_exemplar: fewer than two components, keeping current box\n";
            return box;
        }
        std::vector<int> order(static_cast<std::size_t>(labels.count));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return labels.sizes[static_cast<std::size_t>(a)] > labels.sizes[static_cast<std::size_t>(b)]; });
        const int second = order[1] + 1;  // labels are 1-based
        int y0 = density.h, y1 = -1, x0 = density.w, x1 = -1;
        for (int y = 0; y < density.h; ++y)
            for (int x = 0; x < density.w; ++x)
                if (labels.labels[static_cast<std::size_t>(y) * density.w + x] == second) {
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                }
        Box comp{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
        // center crop, each dimension reduced by a factor of 0.3
        const int new_w = std::max(1, static_cast<int>(std::lround(comp.w * 0.7)));
        const int new_h = std::max(1, static_cast<int>(std::lround(comp.h * 0.7)));
        comp.x += (comp.w - new_w) / 2;
        comp.y += (comp.h - new_h) / 2;
        comp.w = new_w;
        comp.h = new_h;
        box = clamp_box(comp, image.h, image.w);
    }
    return box;
}

// Zero the attention wherever either density (already at attention dims)
// reaches the threshold, plus a peak_block x peak_block patch block around the
// consumed peak.
inline ScalarMap mask_counted(const ScalarMap& attention, const ScalarMap& candidate_density,
                              const ScalarMap& refined_density, int peak_y, int peak_x,
                              const SemanticConfig& cfg) {
    if (candidate_density.h != attention.h || candidate_density.w != attention.w ||
        refined_density.h != attention.h || refined_density.w != attention.w)
        throw InvalidInput("mask_counted: densities must match attention dims");
    ScalarMap out = attention;
    for (std::size_t i = 0; i < out.v.size(); ++i)
        if (candidate_density.v[i] >= cfg.mask_density_threshold ||
            refined_density.v[i] >= cfg.mask_density_threshold)
            out.v[i] = 0.0;
    const int r = cfg.peak_block / 2;
    for (int y = peak_y - r; y <= peak_y + r; ++y)
        for (int x = peak_x - r; x <= peak_x + r; ++x)
            if (y >= 0 && y < out.h && x >= 0 && x < out.w) out.at(y, x) = 0.0;
    return out;
}

struct SemanticCategory {
    Box candidate_box;   // proposal in working-frame coordinates
    Box refined_box;
    Image refined_crop;
    ScalarMap density;   // per-category map y^(t), clamped subtraction applied
    double count = 0.0;
};

struct SemanticResult {
    std::vector<SemanticCategory> categories;
    std::string stop_reason;
    int frame_h = 0, frame_w = 0;  // working resolution the boxes/densities live in
};

// Iterative self-supervised category discovery: propose an exemplar from the
// CLS attention, refine it through the model, record the clamped-subtraction
// density, then mask the consumed attention and repeat until the remaining
// maximum falls below stop_frac of the original.
inline SemanticResult semantic_count(const Backbone& backbone, DensityPredictor& model,
                                     const Image& image, const SemanticConfig& cfg = {}) {
    const Image work = (image.h == cfg.image_size && image.w == cfg.image_size)
                           ? image
                           : resize_image(image, cfg.image_size, cfg.image_size);
    SemanticResult result;
    result.frame_h = work.h;
    result.frame_w = work.w;
    ScalarMap att = backbone.cls_attention(work);
    const double orig_max = att.max();
    if (orig_max <= 0.0) {
        result.stop_reason = "no-salient-object";
        return result;
    }
    const int cap = (att.h * att.w + 24) / 25;  // one 5x5 block consumed per round
    result.stop_reason = "iteration-cap";
    for (int t = 0; t < cap; ++t) {
        if (att.max() < cfg.stop_frac * orig_max) {
            result.stop_reason = "attention-exhausted";
            break;
        }
        CandidateProposal proposal;
        try {
            proposal = propose_candidate(att, backbone.patch_size(), work.h, work.w, cfg.connectivity);
        } catch (const NoSalientObject&) {
            result.stop_reason = "no-salient-object";
            break;
        }
        const Image cand_crop = resize_image(crop(work, proposal.box), cfg.exemplar_h, cfg.exemplar_w);
        const ScalarMap y_cand = model.predict(work, {cand_crop});
        const Box refined = refine_exemplar(model, work, proposal.box, cfg.refine_iters, cfg);
        const Image ref_crop = resize_image(crop(work, refined), cfg.exemplar_h, cfg.exemplar_w);
        const ScalarMap y_ref = model.predict(work, {ref_crop});

        SemanticCategory cat;
        cat.candidate_box = proposal.box;
        cat.refined_box = refined;
        cat.refined_crop = ref_crop;
        cat.density = ScalarMap(y_ref.h, y_ref.w);
        for (std::size_t i = 0; i < y_ref.v.size(); ++i) {
            double prev = 0.0;
            for (const auto& c : result.categories) prev += std::max(c.density.v[i], 0.0);
            cat.density.v[i] = std::max(y_ref.v[i] - prev, 0.0);
        }
        cat.count = cat.density.sum();
        // test-time normalization against the refined exemplar's region mass
        double region = 0.0;
        for (int y = refined.y; y < refined.y + refined.h; ++y)
            for (int x = refined.x; x < refined.x + refined.w; ++x) region += cat.density.at(y, x);
        if (region > cfg.ttn_threshold) cat.count /= region;
        result.categories.push_back(std::move(cat));

        const ScalarMap cand_att = point_resize(y_cand, att.h, att.w);
        const ScalarMap ref_att = point_resize(y_ref, att.h, att.w);
        att = mask_counted(att, cand_att, ref_att, proposal.peak_y, proposal.peak_x, cfg);
    }
    if (att.max() < cfg.stop_frac * orig_max && result.stop_reason == "iteration-cap")
        result.stop_reason = "attention-exhausted";
    return result;
}

}  // namespace selfcollage
