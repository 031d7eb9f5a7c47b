#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "selfcollage/core/image.hpp"
#include "selfcollage/core/rng.hpp"
#include "selfcollage/core/tensor.hpp"
#include "selfcollage/io/array_store.hpp"

namespace selfcollage {

// Patch-level feature map x = Phi(I), h x w x d.
struct FeatureGrid {
    int h = 0, w = 0, d = 0;
    int patch_size = 0;
    std::vector<double> v;  // h*w*d

    double& at(int y, int x, int c) { return v[(static_cast<std::size_t>(y) * w + x) * d + c]; }
    double at(int y, int x, int c) const { return v[(static_cast<std::size_t>(y) * w + x) * d + c]; }
};

using EmbeddingVector = std::vector<double>;

enum class BackboneKind { handcrafted, tiny_vit, external_weights };

struct BackboneSpec {
    BackboneKind kind = BackboneKind::handcrafted;
    int patch_size = 16;
    int depth = 2;       // tiny-vit only
    int heads = 4;       // tiny-vit only
    int width = 96;      // tiny-vit only
    std::uint64_t init_seed = 0;
    std::string weights_path;  // external-weights only
};

inline void validate(const BackboneSpec& spec) {
    if (spec.patch_size != 4 && spec.patch_size != 8 && spec.patch_size != 14 && spec.patch_size != 16)
        throw InvalidInput("backbone: patch_size must be one of {4, 8, 14, 16}");
    if (spec.kind == BackboneKind::tiny_vit) {
        if (spec.depth < 1 || spec.heads < 1 || spec.width < 1)
            throw InvalidInput("backbone: depth/heads/width must be positive");
        if (spec.width % spec.heads != 0)
            throw InvalidInput("backbone: width must be divisible by heads");
    }
    if (spec.kind == BackboneKind::external_weights && spec.weights_path.empty())
        throw InvalidInput("backbone: external-weights requires weights_path");
}

// Everything one pass produces; lets callers grab features and attention from
// a single forward.
struct BackboneOutput {
    FeatureGrid grid;
    ScalarMap attention;                  // head-averaged CLS->patch attention
    std::vector<ScalarMap> head_attention;  // per head
    EmbeddingVector cls;
};

class Backbone {
public:
    virtual ~Backbone() = default;
    virtual int width() const = 0;
    virtual int patch_size() const = 0;
    virtual int head_count() const = 0;
    virtual BackboneOutput run(const Image& img) const = 0;
    // Parameter dump for checkpoints; empty for parameter-free backbones.
    virtual void dump_arrays(ArrayStore& store, const std::string& prefix) const { (void)store; (void)prefix; }

    FeatureGrid encode_patches(const Image& img) const { return run(img).grid; }
    ScalarMap cls_attention(const Image& img) const { return run(img).attention; }
    std::vector<ScalarMap> cls_attention_heads(const Image& img) const { return run(img).head_attention; }
    EmbeddingVector cls_embedding(const Image& img) const { return run(img).cls; }

protected:
    void check_input(const Image& img) const {
        if (img.h < patch_size() || img.w < patch_size())
            throw InvalidInput("backbone: image smaller than one patch");
    }
};

// ---------------------------------------------------------------------------
// Handcrafted backbone: training-free per-patch statistics. d = 6,
// [mean R, mean G, mean B, horizontal gradient energy, vertical gradient
// energy, gray std]. Attention is the per-patch color distance from the mean
// color of the grid's one-patch border ring, normalized to sum 1.
// ---------------------------------------------------------------------------
class HandcraftedBackbone : public Backbone {
public:
    static constexpr int kDim = 6;

    explicit HandcraftedBackbone(int patch) : patch_(patch) {}

    int width() const override { return kDim; }
    int patch_size() const override { return patch_; }
    int head_count() const override { return 1; }

    BackboneOutput run(const Image& img) const override {
        check_input(img);
        const int gh = img.h / patch_, gw = img.w / patch_;
        BackboneOutput out;
        out.grid.h = gh;
        out.grid.w = gw;
        out.grid.d = kDim;
        out.grid.patch_size = patch_;
        out.grid.v.assign(static_cast<std::size_t>(gh) * gw * kDim, 0.0);
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                double f[kDim];
                patch_features(img, gy * patch_, gx * patch_, f);
                for (int c = 0; c < kDim; ++c) out.grid.at(gy, gx, c) = f[c];
            }
        // CLS embedding: grid-wide mean of the per-patch features
        out.cls.assign(kDim, 0.0);
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx)
                for (int c = 0; c < kDim; ++c) out.cls[static_cast<std::size_t>(c)] += out.grid.at(gy, gx, c);
        for (auto& x : out.cls) x /= gh * gw;
        // attention: distance of patch color from the border-ring mean color
        double border[3] = {0, 0, 0};
        int nb = 0;
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                if (gy != 0 && gy != gh - 1 && gx != 0 && gx != gw - 1) continue;
                for (int c = 0; c < 3; ++c) border[c] += out.grid.at(gy, gx, c);
                ++nb;
            }
        for (double& c : border) c /= nb;
        out.attention = ScalarMap(gh, gw);
        double total = 0.0;
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double diff = out.grid.at(gy, gx, c) - border[c];
                    d2 += diff * diff;
                }
                out.attention.at(gy, gx) = std::sqrt(d2);
                total += out.attention.at(gy, gx);
            }
        if (total > 1e-12) {
            for (auto& a : out.attention.v) a /= total;
        } else {
            for (auto& a : out.attention.v) a = 1.0 / (gh * gw);
        }
        out.head_attention = {out.attention};
        return out;
    }

private:
    void patch_features(const Image& img, int y0, int x0, double* f) const {
        double r = 0, g = 0, b = 0;
        for (int y = 0; y < patch_; ++y)
            for (int x = 0; x < patch_; ++x) {
                r += img.at(y0 + y, x0 + x, 0);
                g += img.at(y0 + y, x0 + x, 1);
                b += img.at(y0 + y, x0 + x, 2);
            }
        const double n = static_cast<double>(patch_) * patch_;
        f[0] = r / (n * 255.0);
        f[1] = g / (n * 255.0);
        f[2] = b / (n * 255.0);
        // gray statistics
        double gsum = 0, g2sum = 0, hx = 0, vx = 0;
        int nh = 0, nv = 0;
        auto gray = [&](int y, int x) {
            return (img.at(y0 + y, x0 + x, 0) + img.at(y0 + y, x0 + x, 1) + img.at(y0 + y, x0 + x, 2)) /
                   (3.0 * 255.0);
        };
        for (int y = 0; y < patch_; ++y)
            for (int x = 0; x < patch_; ++x) {
                const double v = gray(y, x);
                gsum += v;
                g2sum += v * v;
                if (x + 1 < patch_) {
                    const double d = gray(y, x + 1) - v;
                    hx += d * d;
                    ++nh;
                }
                if (y + 1 < patch_) {
                    const double d = gray(y + 1, x) - v;
                    vx += d * d;
                    ++nv;
                }
            }
        f[3] = nh ? hx / nh : 0.0;
        f[4] = nv ? vx / nv : 0.0;
        const double mean = gsum / n;
        f[5] = std::sqrt(std::max(0.0, g2sum / n - mean * mean));
    }

    int patch_;
};

// ---------------------------------------------------------------------------
// Tiny ViT, inference only (always frozen). Pre-norm blocks, fixed sinusoidal
// position embeddings, GELU MLP with 4x expansion, final LayerNorm. The CLS
// attention is the last block's post-softmax CLS row, head-averaged, with the
// CLS self-entry dropped (no renormalization).
// ---------------------------------------------------------------------------
class VitBackbone : public Backbone {
public:
    VitBackbone(int patch, int depth, int heads, int width, std::uint64_t init_seed)
        : patch_(patch), depth_(depth), heads_(heads), width_(width) {
        allocate();
        Rng rng(init_seed);
        patch_w_.fill_trunc_normal(rng, 0.02);
        cls_token_.fill_trunc_normal(rng, 0.02);
        for (auto& blk : blocks_) {
            blk.ln1_g.fill(1.0);
            blk.ln2_g.fill(1.0);
            blk.qkv_w.fill_trunc_normal(rng, 0.02);
            blk.proj_w.fill_trunc_normal(rng, 0.02);
            blk.fc1_w.fill_trunc_normal(rng, 0.02);
            blk.fc2_w.fill_trunc_normal(rng, 0.02);
        }
        final_ln_g_.fill(1.0);
    }

    VitBackbone(const ArrayStore& store, const std::string& path) {
        patch_ = meta_int(store, "meta/patch_size", path);
        depth_ = meta_int(store, "meta/depth", path);
        heads_ = meta_int(store, "meta/heads", path);
        width_ = meta_int(store, "meta/width", path);
        if (patch_ < 1 || depth_ < 1 || heads_ < 1 || width_ < 1 || width_ % heads_ != 0)
            throw IoError("backbone weights " + path + ": inconsistent meta entries");
        allocate();
        load_tensor(store, "patch_embed/weight", patch_w_, path);
        load_tensor(store, "patch_embed/bias", patch_b_, path);
        load_tensor(store, "cls_token", cls_token_, path);
        for (int i = 0; i < depth_; ++i) {
            auto& blk = blocks_[static_cast<std::size_t>(i)];
            const std::string p = "block" + std::to_string(i) + "/";
            load_tensor(store, p + "ln1/gamma", blk.ln1_g, path);
            load_tensor(store, p + "ln1/beta", blk.ln1_b, path);
            load_tensor(store, p + "attn/qkv_weight", blk.qkv_w, path);
            load_tensor(store, p + "attn/qkv_bias", blk.qkv_b, path);
            load_tensor(store, p + "attn/proj_weight", blk.proj_w, path);
            load_tensor(store, p + "attn/proj_bias", blk.proj_b, path);
            load_tensor(store, p + "ln2/gamma", blk.ln2_g, path);
            load_tensor(store, p + "ln2/beta", blk.ln2_b, path);
            load_tensor(store, p + "mlp/fc1_weight", blk.fc1_w, path);
            load_tensor(store, p + "mlp/fc1_bias", blk.fc1_b, path);
            load_tensor(store, p + "mlp/fc2_weight", blk.fc2_w, path);
            load_tensor(store, p + "mlp/fc2_bias", blk.fc2_b, path);
        }
        load_tensor(store, "final_ln/gamma", final_ln_g_, path);
        load_tensor(store, "final_ln/beta", final_ln_b_, path);
    }

    int width() const override { return width_; }
    int patch_size() const override { return patch_; }
    int head_count() const override { return heads_; }

    BackboneOutput run(const Image& img) const override {
        check_input(img);
        const int gh = img.h / patch_, gw = img.w / patch_;
        const int n_tok = gh * gw + 1;
        Tensor tokens({n_tok, width_});
        embed_patches(img, gh, gw, tokens);
        add_position_embedding(tokens);

        Tensor last_attn;  // [heads, n_tok] CLS row of the final block
        for (int i = 0; i < depth_; ++i)
            run_block(blocks_[static_cast<std::size_t>(i)], tokens,
                      i == depth_ - 1 ? &last_attn : nullptr);
        layer_norm(tokens, final_ln_g_, final_ln_b_);

        BackboneOutput out;
        out.grid.h = gh;
        out.grid.w = gw;
        out.grid.d = width_;
        out.grid.patch_size = patch_;
        out.grid.v.assign(tokens.data() + width_, tokens.data() + tokens.numel());
        out.cls.assign(tokens.data(), tokens.data() + width_);
        out.head_attention.assign(static_cast<std::size_t>(heads_), ScalarMap(gh, gw));
        out.attention = ScalarMap(gh, gw);
        for (int hshead = 0; hshead < heads_; ++hshead)
            for (int p = 0; p < gh * gw; ++p) {
                const double a = last_attn.at2(hshead, p + 1);  // skip CLS self-entry
                out.head_attention[static_cast<std::size_t>(hshead)].v[static_cast<std::size_t>(p)] = a;
                out.attention.v[static_cast<std::size_t>(p)] += a / heads_;
            }
        return out;
    }

    void dump_arrays(ArrayStore& store, const std::string& prefix) const override {
        auto push = [&](const std::string& name, const Tensor& t) {
            ArrayF32 a;
            a.shape.assign(t.shape().begin(), t.shape().end());
            a.v.assign(t.vec().begin(), t.vec().end());
            store.emplace_back(prefix + name, std::move(a));
        };
        ArrayF32 meta;
        meta.shape = {4};
        meta.v = {static_cast<float>(patch_), static_cast<float>(depth_), static_cast<float>(heads_),
                  static_cast<float>(width_)};
        store.emplace_back(prefix + "meta/dims", meta);
        for (const std::string base : {"patch_size", "depth", "heads", "width"}) {
            ArrayF32 s;
            s.shape = {1};
            if (base == "patch_size") s.v = {static_cast<float>(patch_)};
            if (base == "depth") s.v = {static_cast<float>(depth_)};
            if (base == "heads") s.v = {static_cast<float>(heads_)};
            if (base == "width") s.v = {static_cast<float>(width_)};
            store.emplace_back(prefix + "meta/" + base, std::move(s));
        }
        push("patch_embed/weight", patch_w_);
        push("patch_embed/bias", patch_b_);
        push("cls_token", cls_token_);
        for (int i = 0; i < depth_; ++i) {
            const auto& blk = blocks_[static_cast<std::size_t>(i)];
            const std::string p = "block" + std::to_string(i) + "/";
            push(p + "ln1/gamma", blk.ln1_g);
            push(p + "ln1/beta", blk.ln1_b);
            push(p + "attn/qkv_weight", blk.qkv_w);
            push(p + "attn/qkv_bias", blk.qkv_b);
            push(p + "attn/proj_weight", blk.proj_w);
            push(p + "attn/proj_bias", blk.proj_b);
            push(p + "ln2/gamma", blk.ln2_g);
            push(p + "ln2/beta", blk.ln2_b);
            push(p + "mlp/fc1_weight", blk.fc1_w);
            push(p + "mlp/fc1_bias", blk.fc1_b);
            push(p + "mlp/fc2_weight", blk.fc2_w);
            push(p + "mlp/fc2_bias", blk.fc2_b);
        }
        push("final_ln/gamma", final_ln_g_);
        push("final_ln/beta", final_ln_b_);
    }

private:
    struct Block {
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor qkv_w, qkv_b;    // [3w, w], [3w]
        Tensor proj_w, proj_b;  // [w, w], [w]
        Tensor fc1_w, fc1_b;    // [4w, w], [4w]
        Tensor fc2_w, fc2_b;    // [w, 4w], [w]
    };

    void allocate() {
        patch_w_ = Tensor({width_, 3 * patch_ * patch_});
        patch_b_ = Tensor({width_});
        cls_token_ = Tensor({width_});
        blocks_.resize(static_cast<std::size_t>(depth_));
        for (auto& blk : blocks_) {
            blk.ln1_g = Tensor({width_});
            blk.ln1_b = Tensor({width_});
            blk.ln2_g = Tensor({width_});
            blk.ln2_b = Tensor({width_});
            blk.qkv_w = Tensor({3 * width_, width_});
            blk.qkv_b = Tensor({3 * width_});
            blk.proj_w = Tensor({width_, width_});
            blk.proj_b = Tensor({width_});
            blk.fc1_w = Tensor({4 * width_, width_});
            blk.fc1_b = Tensor({4 * width_});
            blk.fc2_w = Tensor({width_, 4 * width_});
            blk.fc2_b = Tensor({width_});
        }
        final_ln_g_ = Tensor({width_});
        final_ln_b_ = Tensor({width_});
    }

    static int meta_int(const ArrayStore& store, const std::string& name, const std::string& path) {
        const auto& a = require_array(store, name, path);
        if (a.v.empty()) throw IoError("backbone weights " + path + ": empty meta " + name);
        return static_cast<int>(a.v[0]);
    }

    static void load_tensor(const ArrayStore& store, const std::string& name, Tensor& t,
                            const std::string& path) {
        const auto& a = require_array(store, name, path);
        if (a.numel() != t.numel())
            throw IoError("backbone weights " + path + ": shape mismatch for '" + name + "'");
        std::copy(a.v.begin(), a.v.end(), t.data());
    }

    void embed_patches(const Image& img, int gh, int gw, Tensor& tokens) const {
        const int pd = 3 * patch_ * patch_;
        std::vector<double> flat(static_cast<std::size_t>(pd));
        for (int c = 0; c < width_; ++c) tokens.at2(0, c) = cls_token_[static_cast<std::size_t>(c)];
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                int k = 0;
                for (int y = 0; y < patch_; ++y)
                    for (int x = 0; x < patch_; ++x)
                        for (int c = 0; c < 3; ++c)
                            flat[static_cast<std::size_t>(k++)] =
                                img.at(gy * patch_ + y, gx * patch_ + x, c) / 255.0;
                const int row = 1 + gy * gw + gx;
                for (int o = 0; o < width_; ++o) {
                    double acc = patch_b_[static_cast<std::size_t>(o)];
                    const double* wrow = patch_w_.data() + static_cast<std::size_t>(o) * pd;
                    for (int i = 0; i < pd; ++i) acc += wrow[i] * flat[static_cast<std::size_t>(i)];
                    tokens.at2(row, o) = acc;
                }
            }
    }

    void add_position_embedding(Tensor& tokens) const {
        const int n = tokens.dim(0);
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < width_; ++c) {
                const double freq = std::pow(10000.0, -2.0 * (c / 2) / width_);
                const double angle = p * freq;
                tokens.at2(p, c) += (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
            }
    }

    static void layer_norm_row(double* row, int d, const Tensor& g, const Tensor& b) {
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += row[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-6);
        for (int i = 0; i < d; ++i) row[i] = (row[i] - mean) * inv * g[static_cast<std::size_t>(i)] + b[static_cast<std::size_t>(i)];
    }

    void layer_norm(Tensor& tokens, const Tensor& g, const Tensor& b) const {
        for (int p = 0; p < tokens.dim(0); ++p) layer_norm_row(tokens.data() + static_cast<std::size_t>(p) * width_, width_, g, b);
    }

    void run_block(const Block& blk, Tensor& tokens, Tensor* cls_attn_out) const {
        const int n = tokens.dim(0);
        const int hd = width_ / heads_;
        Tensor normed = tokens;
        layer_norm(normed, blk.ln1_g, blk.ln1_b);
        // qkv
        Tensor qkv({n, 3 * width_});
        as_mat(qkv, n, 3 * width_).noalias() = as_mat(normed, n, width_) * as_mat(blk.qkv_w, 3 * width_, width_).transpose();
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < 3 * width_; ++c) qkv.at2(p, c) += blk.qkv_b[static_cast<std::size_t>(c)];
        if (cls_attn_out) *cls_attn_out = Tensor({heads_, n});
        Tensor attn_out({n, width_});
        std::vector<double> scores(static_cast<std::size_t>(n));
        for (int head = 0; head < heads_; ++head) {
            const int qo = head * hd, ko = width_ + head * hd, vo = 2 * width_ + head * hd;
            const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
            for (int i = 0; i < n; ++i) {
                double mx = -1e300;
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int c = 0; c < hd; ++c) s += qkv.at2(i, qo + c) * qkv.at2(j, ko + c);
                    scores[static_cast<std::size_t>(j)] = s * scale;
                    mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
                }
                double denom = 0.0;
                for (int j = 0; j < n; ++j) {
                    scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                    denom += scores[static_cast<std::size_t>(j)];
                }
                for (int c = 0; c < hd; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += scores[static_cast<std::size_t>(j)] * qkv.at2(j, vo + c);
                    attn_out.at2(i, qo + c) = acc / denom;
                }
                if (cls_attn_out && i == 0)
                    for (int j = 0; j < n; ++j) cls_attn_out->at2(head, j) = scores[static_cast<std::size_t>(j)] / denom;
            }
        }
        // projection + residual
        Tensor proj({n, width_});
        as_mat(proj, n, width_).noalias() = as_mat(attn_out, n, width_) * as_mat(blk.proj_w, width_, width_).transpose();
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < width_; ++c) tokens.at2(p, c) += proj.at2(p, c) + blk.proj_b[static_cast<std::size_t>(c)];
        // mlp + residual
        Tensor normed2 = tokens;
        layer_norm(normed2, blk.ln2_g, blk.ln2_b);
        const int hidden = 4 * width_;
        Tensor h1({n, hidden});
        as_mat(h1, n, hidden).noalias() = as_mat(normed2, n, width_) * as_mat(blk.fc1_w, hidden, width_).transpose();
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < hidden; ++c) {
                const double x = h1.at2(p, c) + blk.fc1_b[static_cast<std::size_t>(c)];
                h1.at2(p, c) = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
            }
        Tensor h2({n, width_});
        as_mat(h2, n, width_).noalias() = as_mat(h1, n, hidden) * as_mat(blk.fc2_w, width_, hidden).transpose();
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < width_; ++c) tokens.at2(p, c) += h2.at2(p, c) + blk.fc2_b[static_cast<std::size_t>(c)];
    }

    int patch_ = 0, depth_ = 0, heads_ = 0, width_ = 0;
    Tensor patch_w_, patch_b_, cls_token_;
    std::vector<Block> blocks_;
    Tensor final_ln_g_, final_ln_b_;
};

inline std::unique_ptr<Backbone> load_backbone(const BackboneSpec& spec) {
    validate(spec);
    switch (spec.kind) {
        case BackboneKind::handcrafted:
            return std::make_unique<HandcraftedBackbone>(spec.patch_size);
        case BackboneKind::tiny_vit:
            return std::make_unique<VitBackbone>(spec.patch_size, spec.depth, spec.heads, spec.width,
                                                 spec.init_seed);
        case BackboneKind::external_weights: {
            const ArrayStore store = load_arrays(spec.weights_path);
            return std::make_unique<VitBackbone>(store, spec.weights_path);
        }
    }
    throw InvalidInput("load_backbone: unknown kind");
}

// Rebuild a ViT backbone from a checkpoint's array dump (prefix as passed to
// dump_arrays). Handcrafted backbones have no arrays; callers dispatch on the
// recorded spec.
inline std::unique_ptr<Backbone> backbone_from_arrays(const ArrayStore& store, const std::string& prefix,
                                                      const std::string& path) {
    ArrayStore sub;
    for (const auto& [name, arr] : store)
        if (name.rfind(prefix, 0) == 0) sub.emplace_back(name.substr(prefix.size()), arr);
    return std::make_unique<VitBackbone>(sub, path);
}

}  // namespace selfcollage
