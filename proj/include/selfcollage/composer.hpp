#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selfcollage/clustering.hpp"
#include "selfcollage/core/gaussian.hpp"
#include "selfcollage/core/image.hpp"
#include "selfcollage/core/rng.hpp"
#include "selfcollage/datasets.hpp"

namespace selfcollage {

enum class PasteMode { segmented, whole_image };

struct ComposerConfig {
    int t_min = 2, t_max = 2;        // cluster count bounds
    int n_min = 3, n_max = 20;       // target / total object bounds
    int d_min = 15, d_max = 70;      // mean paste size bounds (pixels)
    double sigma = 0.3;              // per-object size spread
    bool overlap_allowed = true;
    PasteMode paste_mode = PasteMode::segmented;
    int canvas_h = 224, canvas_w = 224;
    int exemplar_h = 64, exemplar_w = 64;
    std::optional<SimilarityRange> similarity_range;
};

inline void validate(const ComposerConfig& c) {
    if (!(1 <= c.t_min && c.t_min <= c.t_max)) throw InvalidInput("composer config: bad t range");
    if (!(1 <= c.n_min && c.n_min <= c.n_max - c.t_max + 1))
        throw InvalidInput("composer config: need 1 <= n_min <= n_max - t_max + 1");
    if (!(0 < c.d_min && c.d_min <= c.d_max && c.d_max <= std::min(c.canvas_h, c.canvas_w)))
        throw InvalidInput("composer config: need 0 < d_min <= d_max <= min(H, W)");
    if (!(0.0 < c.sigma && c.sigma < 1.0)) throw InvalidInput("composer config: sigma must be in (0,1)");
    if (c.exemplar_h < 1 || c.exemplar_w < 1) throw InvalidInput("composer config: bad exemplar dims");
}

// Per-sample object counts; index 0 is the target cluster.
struct CountPlan {
    int n_clusters = 0;
    std::vector<int> counts;
};

// n_c ~ U[t_min, t_max]; counts[0] ~ U[n_min, n_max - n_c + 1]; middle
// clusters sequentially uniform with room reserved for the rest; the last
// cluster absorbs the remainder, so the total is always n_max.
inline CountPlan sample_counts(const ComposerConfig& cfg, Rng& rng) {
    CountPlan plan;
    plan.n_clusters = static_cast<int>(rng.uniform_int(cfg.t_min, cfg.t_max));
    plan.counts.resize(static_cast<std::size_t>(plan.n_clusters));
    plan.counts[0] = static_cast<int>(rng.uniform_int(cfg.n_min, cfg.n_max - plan.n_clusters + 1));
    int used = plan.counts[0];
    for (int i = 1; i < plan.n_clusters - 1; ++i) {
        const int remaining_clusters = plan.n_clusters - i - 1;
        const int hi = cfg.n_max - used - remaining_clusters;
        plan.counts[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(1, hi));
        used += plan.counts[static_cast<std::size_t>(i)];
    }
    // The last cluster absorbs the remainder so the total is always n_max.
    // With a single cluster that is the target itself.
    const int last = plan.n_clusters - 1;
    if (last == 0) {
        plan.counts[0] = cfg.n_max;
    } else {
        plan.counts[static_cast<std::size_t>(last)] = cfg.n_max - used;
    }
    return plan;
}

struct SelectedImages {
    std::vector<int> cluster_ids;                 // [n_clusters], index 0 = target
    std::vector<std::vector<std::size_t>> images;  // per cluster, indices into the object source
};

// Pick the target cluster uniformly over all K, the non-target clusters via
// the similarity window, and the required number of member images of each.
// Clusters smaller than their requirement are sampled with replacement.
inline SelectedImages select_images(const CountPlan& plan, const ClusterModel& model,
                                    const std::optional<SimilarityRange>& range, Rng& rng) {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(model.k));
    for (std::size_t i = 0; i < model.assignments.size(); ++i)
        members[static_cast<std::size_t>(model.assignments[i])].push_back(i);
    bool any = false;
    for (const auto& m : members) any = any || !m.empty();
    if (!any) throw DataError("select_images: no cluster has any member images");

    SelectedImages sel;
    sel.cluster_ids.push_back(static_cast<int>(rng.uniform_int(0, model.k - 1)));
    if (plan.n_clusters > 1) {
        const auto others =
            pick_nontarget_clusters(model, sel.cluster_ids[0], plan.n_clusters - 1, range, rng);
        sel.cluster_ids.insert(sel.cluster_ids.end(), others.begin(), others.end());
    }
    sel.images.resize(static_cast<std::size_t>(plan.n_clusters));
    for (int i = 0; i < plan.n_clusters; ++i) {
        const auto& pool = members[static_cast<std::size_t>(sel.cluster_ids[static_cast<std::size_t>(i)])];
        const int need = plan.counts[static_cast<std::size_t>(i)];
        if (pool.empty())
            throw DataError("select_images: cluster " +
                            std::to_string(sel.cluster_ids[static_cast<std::size_t>(i)]) +
                            " has no member images");
        auto& out = sel.images[static_cast<std::size_t>(i)];
        if (static_cast<int>(pool.size()) >= need) {
            const auto idx = rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(need));
            for (auto j : idx) out.push_back(pool[j]);
        } else {
            for (int j = 0; j < need; ++j)
                out.push_back(pool[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
        }
    }
    return sel;
}

// Tight crop to the nonzero mask extent; image premultiplied by the mask.
inline std::pair<Image, ScalarMap> cut_object(const Image& img, const ScalarMap& mask) {
    if (img.h != mask.h || img.w != mask.w) throw InvalidInput("cut_object: mask dims mismatch");
    int y0 = img.h, y1 = -1, x0 = img.w, x1 = -1;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            if (mask.at(y, x) != 0.0) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw InvalidInput("cut_object: mask has no nonzero entry");
    Image out(y1 - y0 + 1, x1 - x0 + 1);
    ScalarMap mout(out.h, out.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            const double m = mask.at(y0 + y, x0 + x);
            mout.at(y, x) = m;
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = static_cast<std::uint8_t>(
                    std::clamp(std::lround(m * img.at(y0 + y, x0 + x, c)), 0L, 255L));
        }
    return {std::move(out), std::move(mout)};
}

// One shared mean size per sample, then per-object sizes in
// [(1-sigma), (1+sigma)] of it, clipped to the canvas.
inline std::vector<int> sample_sizes(const ComposerConfig& cfg, int object_count, Rng& rng) {
    if (object_count < 1) throw InvalidInput("sample_sizes: need at least one object");
    const double d_mean = rng.uniform(static_cast<double>(cfg.d_min), static_cast<double>(cfg.d_max));
    const int cap = std::min(cfg.canvas_h, cfg.canvas_w);
    std::vector<int> sizes(static_cast<std::size_t>(object_count));
    for (auto& s : sizes) {
        const double d = rng.uniform((1.0 - cfg.sigma) * d_mean, (1.0 + cfg.sigma) * d_mean);
        s = std::clamp(static_cast<int>(std::lround(d)), 1, cap);
    }
    return sizes;
}

// Resize the object to the paste size and alpha-composite it at (x, y).
// Segmented mode preserves aspect (max dimension = size); whole-image mode
// stretches to size x size. Returns the realized box.
inline Box paste_object(Image& canvas, const Image& object, const ScalarMap& mask, int x, int y,
                        int size, PasteMode mode) {
    if (object.h != mask.h || object.w != mask.w) throw InvalidInput("paste_object: mask dims mismatch");
    int oh, ow;
    if (mode == PasteMode::whole_image) {
        oh = ow = size;
    } else if (object.h >= object.w) {
        oh = size;
        ow = std::max(1, static_cast<int>(std::lround(static_cast<double>(object.w) * size / object.h)));
    } else {
        ow = size;
        oh = std::max(1, static_cast<int>(std::lround(static_cast<double>(object.h) * size / object.w)));
    }
    if (x < 0 || y < 0 || x + ow > canvas.w || y + oh > canvas.h)
        throw InvalidInput("paste_object: object does not fit at the requested position");
    const Image obj_r = (oh == object.h && ow == object.w) ? object : resize_image(object, oh, ow);
    const ScalarMap mask_r = (oh == mask.h && ow == mask.w) ? mask : resize_map(mask, oh, ow);
    for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
            const double m = std::clamp(mask_r.at(yy, xx), 0.0, 1.0);
            if (m <= 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                const double v = m * obj_r.at(yy, xx, c) + (1.0 - m) * canvas.at(y + yy, x + xx, c);
                canvas.at(y + yy, x + xx, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    return Box{x, y, ow, oh};
}

// Unit impulse per box center, Gaussian blur with std = mean box size / 8,
// then renormalized so the total mass equals the box count exactly.
inline ScalarMap build_density_map(const std::vector<Box>& target_boxes, int h, int w) {
    ScalarMap map(h, w, 0.0);
    if (target_boxes.empty()) return map;
    double mean_size = 0.0;
    for (const auto& b : target_boxes) mean_size += (b.w + b.h) / 2.0;
    mean_size /= static_cast<double>(target_boxes.size());
    for (const auto& b : target_boxes) {
        const int cy = std::clamp(static_cast<int>(b.y + b.h / 2.0), 0, h - 1);
        const int cx = std::clamp(static_cast<int>(b.x + b.w / 2.0), 0, w - 1);
        map.at(cy, cx) += 1.0;
    }
    const double sigma = mean_size / 8.0;
    if (sigma > 1e-6) {
        int ksize = static_cast<int>(6.0 * sigma + 1.0);
        if (ksize % 2 == 0) ++ksize;
        map = gaussian_blur(map, sigma, ksize);
    }
    const double total = map.sum();
    if (total > 0.0) {
        const double scale = static_cast<double>(target_boxes.size()) / total;
        for (auto& v : map.v) v *= scale;
    }
    return map;
}

struct PlacedObject {
    Box box;
    int cluster_id = 0;
    bool is_target = false;
    std::size_t source_index = 0;  // index into the object source
};

struct SelfCollageSample {
    Image image;
    std::vector<PlacedObject> placed;   // paste order: non-targets first, targets last
    ScalarMap density;
    std::vector<Box> exemplar_boxes;    // candidate pool = all target boxes
    std::uint64_t seed = 0;
};

namespace detail {

struct PendingPaste {
    Image image;
    ScalarMap mask;
    int cluster_id = 0;
    bool is_target = false;
    std::size_t source_index = 0;
    int size = 0;
    int oh = 0, ow = 0;  // realized paste dims
};

inline void realized_dims(const PendingPaste& p, PasteMode mode, int& oh, int& ow) {
    if (mode == PasteMode::whole_image) {
        oh = ow = p.size;
    } else if (p.image.h >= p.image.w) {
        oh = p.size;
        ow = std::max(1, static_cast<int>(std::lround(static_cast<double>(p.image.w) * p.size / p.image.h)));
    } else {
        ow = p.size;
        oh = std::max(1, static_cast<int>(std::lround(static_cast<double>(p.image.h) * p.size / p.image.w)));
    }
}

}  // namespace detail

// The full construction step: plan counts, select images, cut, size, place and
// paste everything onto a resized background, then derive the density map.
// Pure function of (config, sources, cluster model, seed).
inline SelfCollageSample compose(const ComposerConfig& cfg, const ObjectSource& objects,
                                 const BackgroundSource& backgrounds, const ClusterModel& model,
                                 std::uint64_t seed) {
    validate(cfg);
    if (objects.size() == 0 || backgrounds.size() == 0)
        throw DataError("compose: empty object or background source");
    if (model.assignments.size() != objects.size())
        throw InvalidInput("compose: cluster model not aligned with the object source");
    Rng rng(seed);

    const CountPlan plan = sample_counts(cfg, rng);
    const SelectedImages sel = select_images(plan, model, cfg.similarity_range, rng);

    SelfCollageSample sample;
    sample.seed = seed;
    const Image bg = backgrounds.get(
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(backgrounds.size()) - 1)));
    sample.image = resize_image(bg, cfg.canvas_h, cfg.canvas_w);

    // assemble paste jobs: non-targets first, targets last (targets on top)
    std::vector<detail::PendingPaste> jobs;
    for (int ci = plan.n_clusters - 1; ci >= 0; --ci) {
        for (auto img_idx : sel.images[static_cast<std::size_t>(ci)]) {
            ObjectItem item = objects.get(img_idx);
            detail::PendingPaste job;
            job.cluster_id = sel.cluster_ids[static_cast<std::size_t>(ci)];
            job.is_target = ci == 0;
            job.source_index = img_idx;
            if (cfg.paste_mode == PasteMode::segmented) {
                ScalarMap mask = item.mask.value_or(ScalarMap(item.image.h, item.image.w, 1.0));
                auto [cut_img, cut_mask] = cut_object(item.image, mask);
                job.image = std::move(cut_img);
                job.mask = std::move(cut_mask);
            } else {
                job.image = std::move(item.image);
                job.mask = ScalarMap(job.image.h, job.image.w, 1.0);
            }
            jobs.push_back(std::move(job));
        }
    }

    const auto sizes = sample_sizes(cfg, cfg.n_max, rng);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        jobs[i].size = sizes[i];
        detail::realized_dims(jobs[i], cfg.paste_mode, jobs[i].oh, jobs[i].ow);
    }

    // placement: uniform positions keeping objects inside the canvas; in
    // no-overlap mode whole attempts are retried, overlap is allowed after 20
    // failed attempts
    std::vector<std::pair<int, int>> positions(jobs.size());
    const int max_attempts = 20, tries_per_object = 100;
    bool placed_ok = false;
    for (int attempt = 0; attempt < max_attempts && !placed_ok; ++attempt) {
        std::vector<Box> taken;
        placed_ok = true;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            bool ok = false;
            for (int t = 0; t < (cfg.overlap_allowed ? 1 : tries_per_object); ++t) {
                const int x = static_cast<int>(rng.uniform_int(0, cfg.canvas_w - jobs[i].ow));
                const int y = static_cast<int>(rng.uniform_int(0, cfg.canvas_h - jobs[i].oh));
                const Box b{x, y, jobs[i].ow, jobs[i].oh};
                bool collides = false;
                if (!cfg.overlap_allowed)
                    for (const auto& other : taken) collides = collides || b.intersects(other);
                if (!collides) {
                    positions[i] = {x, y};
                    taken.push_back(b);
                    ok = true;
                    break;
                }
            }
            if (!ok) {
                placed_ok = false;
                break;
            }
        }
        if (cfg.overlap_allowed) break;
    }
    if (!placed_ok) {
        // fall back to overlapping placement
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            positions[i] = {static_cast<int>(rng.uniform_int(0, cfg.canvas_w - jobs[i].ow)),
                            static_cast<int>(rng.uniform_int(0, cfg.canvas_h - jobs[i].oh))};
        }
    }

    std::vector<Box> target_boxes;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const Box box = paste_object(sample.image, jobs[i].image, jobs[i].mask, positions[i].first,
                                     positions[i].second, jobs[i].size, cfg.paste_mode);
        sample.placed.push_back(PlacedObject{box, jobs[i].cluster_id, jobs[i].is_target, jobs[i].source_index});
        if (jobs[i].is_target) target_boxes.push_back(box);
    }
    sample.density = build_density_map(target_boxes, cfg.canvas_h, cfg.canvas_w);
    sample.exemplar_boxes = target_boxes;
    return sample;
}

struct ExemplarSet {
    std::vector<Box> boxes;
    std::vector<Image> crops;  // exemplar_h x exemplar_w
};

// E distinct target boxes, cropped from the composed image and resized to the
// exemplar dimensions.
inline ExemplarSet select_exemplars(const SelfCollageSample& sample, int e, int exemplar_h,
                                    int exemplar_w, Rng& rng) {
    if (e < 1 || e > static_cast<int>(sample.exemplar_boxes.size()))
        throw InvalidInput("select_exemplars: E out of range");
    ExemplarSet out;
    const auto idx = rng.sample_without_replacement(sample.exemplar_boxes.size(), static_cast<std::size_t>(e));
    for (auto i : idx) {
        const Box b = sample.exemplar_boxes[i];
        out.boxes.push_back(b);
        out.crops.push_back(resize_image(crop(sample.image, b), exemplar_h, exemplar_w));
    }
    return out;
}

}  // namespace selfcollage
