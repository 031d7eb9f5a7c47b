#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfcollage/backbone.hpp"
#include "selfcollage/core/image.hpp"
#include "selfcollage/io/pfm.hpp"
#include "selfcollage/nn/layers.hpp"

namespace selfcollage {

struct ModelConfig {
    BackboneSpec backbone;
    int fim_dim = 512;
    int fim_blocks = 2;
    int fim_heads = 16;
    int fim_mlp_dim = 2048;
    int decoder_channels = 256;
    int decoder_blocks = 4;
    int decoder_groups = 8;
    int exemplar_h = 64, exemplar_w = 64;
    std::uint64_t init_seed = 0;
    // init scale of the two input projections into the FIM; the default keeps
    // content well below the unit-scale position embeddings, raising it gives
    // small models a stronger conditioning signal from step one
    double input_proj_std = 0.02;
};

inline void validate(const ModelConfig& c) {
    validate(c.backbone);
    if (c.fim_dim % c.fim_heads != 0) throw InvalidInput("model config: fim_dim must divide into heads");
    if (c.fim_dim % 4 != 0) throw InvalidInput("model config: fim_dim must be divisible by 4");
    if (c.decoder_blocks < 1) throw InvalidInput("model config: decoder_blocks must be >= 1");
    if (c.decoder_channels % c.decoder_groups != 0)
        throw InvalidInput("model config: decoder_channels must divide into groups");
    if (c.exemplar_h < 1 || c.exemplar_w < 1) throw InvalidInput("model config: bad exemplar dims");
}

// Anything that maps (image, exemplars) to a density map. Implemented by the
// trained model and by the diagnostic stubs.
class DensityPredictor {
public:
    virtual ~DensityPredictor() = default;
    virtual ScalarMap predict(const Image& image, const std::vector<Image>& exemplars) = 0;
};

// Attention-weighted average of the exemplar's own patch features,
// z = sum_p a_p x_p / sum_p a_p. Falls back to the unweighted mean when the
// attention mass is degenerate.
inline EmbeddingVector encode_exemplar(const Backbone& backbone, const Image& exemplar) {
    const BackboneOutput out = backbone.run(exemplar);
    const int n = out.grid.h * out.grid.w, d = out.grid.d;
    EmbeddingVector z(static_cast<std::size_t>(d), 0.0);
    double total = 0.0;
    for (double a : out.attention.v) total += a;
    if (total <= 1e-12) {
        std::cerr << "[selfcollage] encode_exemplar: degenerate attention, using unweighted mean\n";
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < d; ++c) z[static_cast<std::size_t>(c)] += out.grid.v[static_cast<std::size_t>(p) * d + c] / n;
        return z;
    }
    for (int p = 0; p < n; ++p) {
        const double a = out.attention.v[static_cast<std::size_t>(p)];
        for (int c = 0; c < d; ++c) z[static_cast<std::size_t>(c)] += a * out.grid.v[static_cast<std::size_t>(p) * d + c];
    }
    for (auto& v : z) v /= total;
    return z;
}

// The counting network: frozen backbone, linear projections into the feature
// interaction module, transformer blocks with exemplar cross-attention, and a
// convolutional upsampling decoder. Gradients flow to the FIM and decoder
// only.
class CountingModel : public DensityPredictor {
public:
    explicit CountingModel(const ModelConfig& cfg) : cfg_(cfg) {
        validate(cfg);
        backbone_ = load_backbone(cfg.backbone);
        build_layers();
        Rng rng(cfg.init_seed);
        grid_proj_.init(rng, cfg.input_proj_std);
        exemplar_proj_.init(rng, cfg.input_proj_std);
        for (auto& blk : blocks_) blk.init(rng);
        for (auto& stage : dec_) {
            stage.conv.init(rng);
        }
        final_conv_.init(rng);
    }

    CountingModel(const ModelConfig& cfg, const ArrayStore& store, const std::string& path) : cfg_(cfg) {
        validate(cfg);
        if (cfg.backbone.kind == BackboneKind::handcrafted)
            backbone_ = load_backbone(cfg.backbone);
        else
            backbone_ = backbone_from_arrays(store, "backbone/", path);
        build_layers();
        std::vector<nn::ParamRef> ps;
        collect_params(ps);
        for (auto& p : ps) {
            const auto& arr = require_array(store, "param/" + p.name, path);
            if (arr.numel() != p.value->numel())
                throw IoError("checkpoint " + path + ": shape mismatch for '" + p.name + "'");
            std::copy(arr.v.begin(), arr.v.end(), p.value->data());
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return *backbone_; }

    // Enriched patch tokens [h*w, fim_dim] for a feature grid and >= 1
    // exemplar embedding. Exemplar tokens carry no position encoding; sorting
    // them canonically makes the forward pass bitwise permutation-invariant.
    Tensor fim_forward(const FeatureGrid& grid, std::vector<EmbeddingVector> exemplars) {
        if (exemplars.empty()) throw InvalidInput("fim_forward: need at least one exemplar");
        for (const auto& z : exemplars)
            if (static_cast<int>(z.size()) != backbone_->width())
                throw InvalidInput("fim_forward: exemplar width mismatch");
        std::sort(exemplars.begin(), exemplars.end());
        grid_h_ = grid.h;
        grid_w_ = grid.w;
        const int n = grid.h * grid.w;
        Tensor tokens({n, backbone_->width()});
        std::copy(grid.v.begin(), grid.v.end(), tokens.data());
        Tensor mem_in({static_cast<int>(exemplars.size()), backbone_->width()});
        for (std::size_t e = 0; e < exemplars.size(); ++e)
            std::copy(exemplars[e].begin(), exemplars[e].end(),
                      mem_in.data() + static_cast<std::size_t>(e) * backbone_->width());

        Tensor x = grid_proj_.forward(tokens);
        const Tensor pe = nn::grid_position_embedding(grid.h, grid.w, cfg_.fim_dim);
        for (std::size_t i = 0; i < x.vec().size(); ++i) x[i] += pe[i];
        mem_ = exemplar_proj_.forward(mem_in);
        for (auto& blk : blocks_) x = blk.forward(x, mem_);
        return x;
    }

    // Decoder: conv/GN/ReLU blocks, each followed by 2x bilinear upsampling,
    // then a 1x1 convolution; resized to the requested output dims when the
    // doublings do not land exactly on them.
    ScalarMap decode(const Tensor& enriched, int grid_h, int grid_w, int out_h, int out_w) {
        // tokens [n, d] -> map [d, h, w]
        const int d = cfg_.fim_dim;
        Tensor x({d, grid_h, grid_w});
        for (int p = 0; p < grid_h * grid_w; ++p)
            for (int c = 0; c < d; ++c)
                x[static_cast<std::size_t>(c) * grid_h * grid_w + static_cast<std::size_t>(p)] =
                    enriched.at2(p, c);
        int h = grid_h, w = grid_w;
        for (auto& stage : dec_) {
            x = stage.conv.forward(x, h, w);
            x = stage.gn.forward(x, h, w);
            x = stage.relu.forward(x);
            x = stage.up.forward(x, cfg_.decoder_channels, h, w, h * 2, w * 2);
            h *= 2;
            w *= 2;
        }
        x = final_conv_.forward(x, h, w);
        raw_h_ = h;
        raw_w_ = w;
        resized_ = h != out_h || w != out_w;
        if (resized_) {
            x = final_resize_.forward(x, 1, h, w, out_h, out_w);
            h = out_h;
            w = out_w;
        }
        ScalarMap map(h, w);
        std::copy(x.data(), x.data() + map.v.size(), map.v.begin());
        return map;
    }

    // Full differentiable path; also the inference entry point.
    ScalarMap forward(const Image& image, const std::vector<Image>& exemplars) {
        if (exemplars.empty()) throw InvalidInput("forward: need at least one exemplar");
        const FeatureGrid grid = backbone_->encode_patches(image);
        std::vector<EmbeddingVector> zs;
        zs.reserve(exemplars.size());
        for (const auto& ex : exemplars) {
            const bool ok_dims = ex.h == cfg_.exemplar_h && ex.w == cfg_.exemplar_w;
            zs.push_back(encode_exemplar(*backbone_, ok_dims ? ex : resize_image(ex, cfg_.exemplar_h, cfg_.exemplar_w)));
        }
        const Tensor enriched = fim_forward(grid, std::move(zs));
        enriched_cache_ = enriched;
        return decode(enriched, grid.h, grid.w, image.h, image.w);
    }

    ScalarMap predict(const Image& image, const std::vector<Image>& exemplars) override {
        return forward(image, exemplars);
    }

    // Backward from d(loss)/d(map); accumulates parameter gradients.
    void backward(const ScalarMap& gmap) {
        Tensor gx({1, gmap.h, gmap.w});
        std::copy(gmap.v.begin(), gmap.v.end(), gx.data());
        if (resized_) gx = final_resize_.backward(gx);
        gx = final_conv_.backward(gx);
        for (auto it = dec_.rbegin(); it != dec_.rend(); ++it) {
            gx = it->up.backward(gx);
            gx = it->relu.backward(gx);
            gx = it->gn.backward(gx);
            gx = it->conv.backward(gx);
        }
        // map [d, h, w] -> tokens [n, d]
        const int n = grid_h_ * grid_w_, d = cfg_.fim_dim;
        Tensor gtok({n, d});
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < d; ++c)
                gtok.at2(p, c) = gx[static_cast<std::size_t>(c) * n + static_cast<std::size_t>(p)];
        Tensor gmem({mem_.dim(0), mem_.dim(1)});
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) gtok = it->backward(gtok, gmem);
        exemplar_proj_.backward(gmem);
        grid_proj_.backward(gtok);  // gradient into the frozen backbone is dropped
    }

    void collect_params(std::vector<nn::ParamRef>& out) {
        grid_proj_.params(out, "fim/grid_proj/");
        exemplar_proj_.params(out, "fim/exemplar_proj/");
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].params(out, "fim/block" + std::to_string(i) + "/");
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            const std::string p = "decoder/block" + std::to_string(i) + "/";
            dec_[i].conv.params(out, p + "conv/");
            dec_[i].gn.params(out, p + "gn/");
        }
        final_conv_.params(out, "decoder/final_conv/");
    }

    void zero_grads() {
        std::vector<nn::ParamRef> ps;
        collect_params(ps);
        for (auto& p : ps) p.grad->fill(0.0);
    }

    void save_checkpoint(const std::string& path) const {
        ArrayStore store;
        if (cfg_.backbone.kind != BackboneKind::handcrafted) backbone_->dump_arrays(store, "backbone/");
        std::vector<nn::ParamRef> ps;
        const_cast<CountingModel*>(this)->collect_params(ps);
        for (const auto& p : ps) {
            ArrayF32 a;
            a.shape.assign(p.value->shape().begin(), p.value->shape().end());
            a.v.assign(p.value->vec().begin(), p.value->vec().end());
            store.emplace_back("param/" + p.name, std::move(a));
        }
        save_arrays(path, store);
        std::ofstream f(path + ".json");
        if (!f) throw IoError("save_checkpoint: cannot open " + path + ".json");
        f << config_to_json(cfg_).dump(2) << "\n";
    }

    static nlohmann::json config_to_json(const ModelConfig& c) {
        const char* kind = c.backbone.kind == BackboneKind::handcrafted ? "handcrafted"
                           : c.backbone.kind == BackboneKind::tiny_vit  ? "tiny-vit"
                                                                        : "external-weights";
        return nlohmann::json{
            {"kind", "counting-model"},
            {"model",
             {{"fim_dim", c.fim_dim},
              {"fim_blocks", c.fim_blocks},
              {"fim_heads", c.fim_heads},
              {"fim_mlp_dim", c.fim_mlp_dim},
              {"decoder_channels", c.decoder_channels},
              {"decoder_blocks", c.decoder_blocks},
              {"decoder_groups", c.decoder_groups},
              {"exemplar_h", c.exemplar_h},
              {"exemplar_w", c.exemplar_w},
              {"init_seed", c.init_seed},
              {"input_proj_std", c.input_proj_std}}},
            {"backbone",
             {{"kind", kind},
              {"patch_size", c.backbone.patch_size},
              {"depth", c.backbone.depth},
              {"heads", c.backbone.heads},
              {"width", c.backbone.width},
              {"init_seed", c.backbone.init_seed},
              {"weights_path", c.backbone.weights_path}}}};
    }

    static ModelConfig config_from_json(const nlohmann::json& j) {
        ModelConfig c;
        const auto& m = j.at("model");
        c.fim_dim = m.at("fim_dim").get<int>();
        c.fim_blocks = m.at("fim_blocks").get<int>();
        c.fim_heads = m.at("fim_heads").get<int>();
        c.fim_mlp_dim = m.at("fim_mlp_dim").get<int>();
        c.decoder_channels = m.at("decoder_channels").get<int>();
        c.decoder_blocks = m.at("decoder_blocks").get<int>();
        c.decoder_groups = m.at("decoder_groups").get<int>();
        c.exemplar_h = m.at("exemplar_h").get<int>();
        c.exemplar_w = m.at("exemplar_w").get<int>();
        c.init_seed = m.at("init_seed").get<std::uint64_t>();
        c.input_proj_std = m.value("input_proj_std", 0.02);
        const auto& b = j.at("backbone");
        const auto kind = b.at("kind").get<std::string>();
        c.backbone.kind = kind == "handcrafted"  ? BackboneKind::handcrafted
                          : kind == "tiny-vit"   ? BackboneKind::tiny_vit
                                                 : BackboneKind::external_weights;
        c.backbone.patch_size = b.at("patch_size").get<int>();
        c.backbone.depth = b.at("depth").get<int>();
        c.backbone.heads = b.at("heads").get<int>();
        c.backbone.width = b.at("width").get<int>();
        c.backbone.init_seed = b.at("init_seed").get<std::uint64_t>();
        c.backbone.weights_path = b.at("weights_path").get<std::string>();
        return c;
    }

private:
    struct DecoderStage {
        nn::Conv2d conv;
        nn::GroupNorm gn;
        nn::Relu relu;
        nn::BilinearResize up;
    };

    void build_layers() {
        grid_proj_ = nn::Linear(backbone_->width(), cfg_.fim_dim);
        exemplar_proj_ = nn::Linear(backbone_->width(), cfg_.fim_dim);
        blocks_.clear();
        for (int i = 0; i < cfg_.fim_blocks; ++i)
            blocks_.emplace_back(cfg_.fim_dim, cfg_.fim_heads, cfg_.fim_mlp_dim);
        dec_.clear();
        dec_.resize(static_cast<std::size_t>(cfg_.decoder_blocks));
        int cin = cfg_.fim_dim;
        for (auto& stage : dec_) {
            stage.conv = nn::Conv2d(cin, cfg_.decoder_channels, 3);
            stage.gn = nn::GroupNorm(cfg_.decoder_groups, cfg_.decoder_channels);
            cin = cfg_.decoder_channels;
        }
        final_conv_ = nn::Conv2d(cfg_.decoder_channels, 1, 1);
    }

    ModelConfig cfg_;
    std::unique_ptr<Backbone> backbone_;
    nn::Linear grid_proj_, exemplar_proj_;
    std::vector<nn::FimBlock> blocks_;
    std::vector<DecoderStage> dec_;
    nn::Conv2d final_conv_;
    nn::BilinearResize final_resize_;
    Tensor mem_, enriched_cache_;
    int grid_h_ = 0, grid_w_ = 0, raw_h_ = 0, raw_w_ = 0;
    bool resized_ = false;
};

// ---------------------------------------------------------------------------
// Diagnostic stubs, loadable as checkpoints (see load_checkpoint). Useful for
// exercising the inference protocol without a trained model.
// ---------------------------------------------------------------------------

// Emits a fixed map regardless of input (resized when dims differ).
class StubFixedDensity : public DensityPredictor {
public:
    explicit StubFixedDensity(ScalarMap map) : map_(std::move(map)) {}
    ScalarMap predict(const Image& image, const std::vector<Image>&) override {
        if (image.h == map_.h && image.w == map_.w) return map_;
        return resize_map(map_, image.h, image.w);
    }

private:
    ScalarMap map_;
};

// Emits a constant per-pixel value.
class StubConstantDensity : public DensityPredictor {
public:
    explicit StubConstantDensity(double value) : value_(value) {}
    ScalarMap predict(const Image& image, const std::vector<Image>&) override {
        return ScalarMap(image.h, image.w, value_);
    }

private:
    double value_;
};

// Evaluates a linear field over the input's normalized coordinates,
// d(i, j) = a + b*(j+0.5)/W + c*(i+0.5)/H.
class StubFieldDensity : public DensityPredictor {
public:
    StubFieldDensity(double a, double b, double c) : a_(a), b_(b), c_(c) {}
    ScalarMap predict(const Image& image, const std::vector<Image>&) override {
        ScalarMap m(image.h, image.w);
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x)
                m.at(y, x) = a_ + b_ * (x + 0.5) / image.w + c_ * (y + 0.5) / image.h;
        return m;
    }

private:
    double a_, b_, c_;
};

struct CheckpointBundle {
    std::unique_ptr<DensityPredictor> predictor;
    CountingModel* model = nullptr;           // non-null for counting-model checkpoints
    std::unique_ptr<Backbone> stub_backbone;  // backbone for stub checkpoints
    ModelConfig config;

    const Backbone& backbone() const { return model ? model->backbone() : *stub_backbone; }
};

inline CheckpointBundle load_checkpoint(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw IoError("load_checkpoint: cannot open " + path + ".json");
    nlohmann::json j = nlohmann::json::parse(f);
    CheckpointBundle bundle;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "counting-model") {
        bundle.config = CountingModel::config_from_json(j);
        const ArrayStore store = load_arrays(path);
        auto model = std::make_unique<CountingModel>(bundle.config, store, path);
        bundle.model = model.get();
        bundle.predictor = std::move(model);
    } else if (kind == "stub-pfm") {
        bundle.predictor = std::make_unique<StubFixedDensity>(read_pfm(j.at("pfm").get<std::string>()));
    } else if (kind == "stub-constant") {
        bundle.predictor = std::make_unique<StubConstantDensity>(j.at("value").get<double>());
    } else {
        throw IoError("load_checkpoint: unknown kind '" + kind + "' in " + path + ".json");
    }
    if (!bundle.model) {
        BackboneSpec spec;
        spec.kind = BackboneKind::handcrafted;
        spec.patch_size = j.value("stub_patch_size", 8);
        bundle.stub_backbone = load_backbone(spec);
        bundle.config.backbone = spec;
    }
    return bundle;
}

// Writes a stub checkpoint (empty array container + JSON descriptor).
inline void save_stub_checkpoint(const std::string& path, const nlohmann::json& descriptor) {
    save_arrays(path, {});
    std::ofstream f(path + ".json");
    if (!f) throw IoError("save_stub_checkpoint: cannot open " + path + ".json");
    f << descriptor.dump(2) << "\n";
}

}  // namespace selfcollage
