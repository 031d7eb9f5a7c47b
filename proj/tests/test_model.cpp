#include <catch2/catch_amalgamated.hpp>

#include "selfcollage/model.hpp"
#include "selfcollage/training.hpp"

#include "helpers.hpp"

using namespace selfcollage;

namespace {

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.backbone.kind = BackboneKind::handcrafted;
    cfg.backbone.patch_size = 8;
    cfg.fim_dim = 16;
    cfg.fim_blocks = 2;
    cfg.fim_heads = 4;
    cfg.fim_mlp_dim = 32;
    cfg.decoder_channels = 8;
    cfg.decoder_groups = 4;
    cfg.decoder_blocks = 3;
    cfg.exemplar_h = cfg.exemplar_w = 16;
    cfg.init_seed = 42;
    return cfg;
}

FeatureGrid make_grid(int h, int w, int d, Rng& rng) {
    FeatureGrid g;
    g.h = h;
    g.w = w;
    g.d = d;
    g.patch_size = 8;
    g.v.resize(static_cast<std::size_t>(h) * w * d);
    for (auto& v : g.v) v = rng.normal();
    return g;
}

EmbeddingVector random_embedding(int d, Rng& rng) {
    EmbeddingVector z(static_cast<std::size_t>(d));
    for (auto& v : z) v = rng.normal();
    return z;
}

}  // namespace

TEST_CASE("encode_exemplar: uniform, one-hot and random attention") {
    Rng rng(1);
    FeatureGrid grid = make_grid(3, 4, 5, rng);

    // uniform attention -> plain mean of the grid features
    testutil::FixedBackbone uniform(grid, ScalarMap(3, 4, 1.0 / 12), 8);
    const auto z_mean = encode_exemplar(uniform, testutil::solid_image(24, 32, 0, 0, 0));
    for (int c = 0; c < 5; ++c) {
        double mean = 0.0;
        for (int p = 0; p < 12; ++p) mean += grid.v[static_cast<std::size_t>(p) * 5 + c];
        mean /= 12.0;
        REQUIRE(z_mean[static_cast<std::size_t>(c)] == Catch::Approx(mean).margin(1e-12));
    }

    // one-hot attention on patch p -> exactly x_p
    ScalarMap onehot(3, 4, 0.0);
    onehot.at(1, 2) = 1.0;
    testutil::FixedBackbone oh(grid, onehot, 8);
    const auto z_oh = encode_exemplar(oh, testutil::solid_image(24, 32, 0, 0, 0));
    for (int c = 0; c < 5; ++c)
        REQUIRE(z_oh[static_cast<std::size_t>(c)] == Catch::Approx(grid.at(1, 2, c)).margin(1e-12));

    // random attention -> matches an explicit scalar loop within 1e-5
    ScalarMap att(3, 4, 0.0);
    for (auto& v : att.v) v = rng.uniform();
    testutil::FixedBackbone rnd(grid, att, 8);
    const auto z = encode_exemplar(rnd, testutil::solid_image(24, 32, 0, 0, 0));
    double total = 0.0;
    for (double v : att.v) total += v;
    for (int c = 0; c < 5; ++c) {
        double acc = 0.0;
        for (int p = 0; p < 12; ++p) acc += att.v[static_cast<std::size_t>(p)] * grid.v[static_cast<std::size_t>(p) * 5 + c];
        REQUIRE(z[static_cast<std::size_t>(c)] == Catch::Approx(acc / total).margin(1e-5));
    }

    // degenerate all-zero attention falls back to the unweighted mean
    testutil::FixedBackbone degen(grid, ScalarMap(3, 4, 0.0), 8);
    const auto z_fallback = encode_exemplar(degen, testutil::solid_image(24, 32, 0, 0, 0));
    for (std::size_t c = 0; c < z_fallback.size(); ++c)
        REQUIRE(z_fallback[c] == Catch::Approx(z_mean[c]).margin(1e-12));
}

TEST_CASE("fim_forward output dims and exemplar token behavior") {
    ModelConfig cfg = tiny_model_config();
    CountingModel model(cfg);
    Rng rng(2);
    FeatureGrid grid = make_grid(4, 4, HandcraftedBackbone::kDim, rng);
    std::vector<EmbeddingVector> zs{random_embedding(6, rng), random_embedding(6, rng),
                                    random_embedding(6, rng)};

    const Tensor out = model.fim_forward(grid, zs);
    REQUIRE(out.dim(0) == 16);
    REQUIRE(out.dim(1) == cfg.fim_dim);

    // permutation invariance, bitwise
    std::vector<EmbeddingVector> perm{zs[2], zs[0], zs[1]};
    const Tensor out_perm = model.fim_forward(grid, perm);
    REQUIRE(out.vec() == out_perm.vec());

    // duplicating a single exemplar leaves cross-attention unchanged within 1e-6
    std::vector<EmbeddingVector> one{zs[0]};
    std::vector<EmbeddingVector> two{zs[0], zs[0]};
    const Tensor o1 = model.fim_forward(grid, one);
    const Tensor o2 = model.fim_forward(grid, two);
    for (std::size_t i = 0; i < o1.vec().size(); ++i)
        REQUIRE(o1[i] == Catch::Approx(o2[i]).margin(1e-6));

    REQUIRE_THROWS_AS(model.fim_forward(grid, {}), InvalidInput);
    REQUIRE_THROWS_AS(model.fim_forward(grid, {random_embedding(5, rng)}), InvalidInput);
}

TEST_CASE("decode doubles resolution per block and resizes on mismatch") {
    ModelConfig cfg = tiny_model_config();
    cfg.decoder_blocks = 4;
    CountingModel model(cfg);
    Rng rng(3);

    // grid 14x14, 4 doublings -> 224 exactly (patch-16 geometry)
    Tensor tokens({14 * 14, cfg.fim_dim});
    for (auto& v : tokens.vec()) v = rng.normal() * 0.1;
    const ScalarMap direct = model.decode(tokens, 14, 14, 224, 224);
    REQUIRE(direct.h == 224);
    REQUIRE(direct.w == 224);

    // patch-14 geometry: 28x28 grid -> 448 raw -> resized down to 392
    Tensor tokens28({28 * 28, cfg.fim_dim});
    for (auto& v : tokens28.vec()) v = rng.normal() * 0.1;
    const ScalarMap resized = model.decode(tokens28, 28, 28, 392, 392);
    REQUIRE(resized.h == 392);
    REQUIRE(resized.w == 392);

    // all-zero tokens with default (zero-bias) init produce an all-zero map
    Tensor zeros({4 * 4, cfg.fim_dim});
    const ScalarMap zmap = model.decode(zeros, 4, 4, 64, 64);
    for (double v : zmap.v) REQUIRE(v == 0.0);
}

TEST_CASE("forward output matches input dims and is exemplar-permutation invariant") {
    ModelConfig cfg = tiny_model_config();
    CountingModel model(cfg);
    Rng rng(4);
    const Image img = testutil::random_image(64, 64, rng);
    std::vector<Image> exemplars{testutil::random_image(16, 16, rng), testutil::random_image(16, 16, rng),
                                 testutil::random_image(16, 16, rng)};
    const ScalarMap out = model.forward(img, exemplars);
    REQUIRE(out.h == 64);
    REQUIRE(out.w == 64);
    for (double v : out.v) REQUIRE(std::isfinite(v));

    std::vector<Image> perm{exemplars[1], exemplars[2], exemplars[0]};
    const ScalarMap out_perm = model.forward(img, perm);
    REQUIRE(out.v == out_perm.v);

    // non-multiple-of-patch input still works via the floor grid + resize
    const Image odd = testutil::random_image(70, 52, rng);
    const ScalarMap out_odd = model.forward(odd, exemplars);
    REQUIRE(out_odd.h == 70);
    REQUIRE(out_odd.w == 52);

    REQUIRE_THROWS_AS(model.forward(img, {}), InvalidInput);
}

TEST_CASE("finite-difference gradient check through FIM and decoder") {
    // tiny config: grid 4x4, backbone width 16 via a fixed feature grid
    ModelConfig cfg = tiny_model_config();
    cfg.backbone.kind = BackboneKind::tiny_vit;
    cfg.backbone.patch_size = 8;
    cfg.backbone.width = 16;
    cfg.backbone.heads = 4;
    cfg.backbone.depth = 1;
    cfg.fim_dim = 16;
    cfg.fim_blocks = 2;
    cfg.fim_heads = 4;
    cfg.fim_mlp_dim = 32;
    cfg.decoder_channels = 8;
    cfg.decoder_groups = 4;
    cfg.decoder_blocks = 2;  // 4x4 -> 16x16, then resized to 32x32
    CountingModel model(cfg);

    Rng rng(5);
    const Image img = testutil::random_image(32, 32, rng);
    const std::vector<Image> exemplars{testutil::random_image(16, 16, rng),
                                       testutil::random_image(16, 16, rng)};
    ScalarMap target(32, 32);
    for (auto& v : target.v) v = rng.uniform() * 0.1;
    const std::vector<std::uint8_t> keep(target.v.size(), 1);

    auto loss_fn = [&]() {
        const ScalarMap pred = model.forward(img, exemplars);
        return masked_scaled_mse(pred, target, keep, 3000.0);
    };

    // analytic gradients
    model.zero_grads();
    const ScalarMap pred = model.forward(img, exemplars);
    const ScalarMap grad = masked_scaled_mse_grad(pred, target, keep, 3000.0);
    model.backward(grad);

    std::vector<nn::ParamRef> params;
    model.collect_params(params);
    REQUIRE(params.size() > 20);

    Rng pick(6);
    int checked = 0;
    double worst = 0.0;
    while (checked < 20) {
        const auto pi = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1));
        auto& p = params[pi];
        if (p.value->numel() == 0) continue;
        const auto ei = static_cast<std::size_t>(pick.uniform_int(0, p.value->numel() - 1));
        const double analytic = (*p.grad)[ei];
        if (std::abs(analytic) < 1e-7) continue;  // avoid 0/0 comparisons
        const double h = 1e-5 * std::max(1.0, std::abs((*p.value)[ei]));
        const double saved = (*p.value)[ei];
        (*p.value)[ei] = saved + h;
        const double up = loss_fn();
        (*p.value)[ei] = saved - h;
        const double down = loss_fn();
        (*p.value)[ei] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(numeric - analytic) / std::max(std::abs(analytic), 1e-12);
        worst = std::max(worst, rel);
        ++checked;
    }
    INFO("worst relative error " << worst);
    REQUIRE(worst <= 1e-3);
}

TEST_CASE("gradients reach FIM and decoder but not the backbone") {
    ModelConfig cfg = tiny_model_config();
    cfg.backbone.kind = BackboneKind::tiny_vit;
    cfg.backbone.patch_size = 8;
    cfg.backbone.width = 16;
    cfg.backbone.heads = 2;
    cfg.backbone.depth = 1;
    CountingModel model(cfg);
    Rng rng(7);
    const Image img = testutil::random_image(32, 32, rng);
    const std::vector<Image> ex{testutil::random_image(16, 16, rng)};

    ArrayStore before;
    model.backbone().dump_arrays(before, "");

    ScalarMap target(32, 32, 0.1);
    const std::vector<std::uint8_t> keep(target.v.size(), 1);
    model.zero_grads();
    const ScalarMap pred = model.forward(img, ex);
    model.backward(masked_scaled_mse_grad(pred, target, keep, 3000.0));

    std::vector<nn::ParamRef> params;
    model.collect_params(params);
    double grad_mass = 0.0;
    for (const auto& p : params)
        for (double g : p.grad->vec()) grad_mass += std::abs(g);
    REQUIRE(grad_mass > 0.0);
    for (const auto& p : params) REQUIRE(p.name.rfind("backbone/", 0) != 0);

    ArrayStore after;
    model.backbone().dump_arrays(after, "");
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) REQUIRE(before[i].second.v == after[i].second.v);
}

TEST_CASE("checkpoint round trip reproduces predictions") {
    const auto dir = testutil::temp_dir("ckpt");
    ModelConfig cfg = tiny_model_config();
    cfg.backbone.kind = BackboneKind::tiny_vit;
    cfg.backbone.patch_size = 8;
    cfg.backbone.width = 16;
    cfg.backbone.heads = 4;
    cfg.backbone.depth = 1;
    CountingModel model(cfg);
    Rng rng(8);
    const Image img = testutil::random_image(48, 48, rng);
    const std::vector<Image> ex{testutil::random_image(16, 16, rng)};
    const ScalarMap before = model.forward(img, ex);

    model.save_checkpoint(dir + "/model.nar");
    CheckpointBundle bundle = load_checkpoint(dir + "/model.nar");
    REQUIRE(bundle.model != nullptr);
    const ScalarMap after = bundle.predictor->predict(img, ex);
    REQUIRE(after.h == before.h);
    for (std::size_t i = 0; i < before.v.size(); ++i)
        REQUIRE(after.v[i] == Catch::Approx(before.v[i]).margin(1e-4));

    REQUIRE_THROWS_AS(load_checkpoint(dir + "/missing.nar"), IoError);
}

TEST_CASE("stub checkpoints load as predictors") {
    const auto dir = testutil::temp_dir("stubckpt");
    ScalarMap m(16, 16, 0.0);
    m.at(8, 8) = 2.5;
    write_pfm(dir + "/fixed.pfm", m);
    save_stub_checkpoint(dir + "/stub.nar",
                         nlohmann::json{{"kind", "stub-pfm"}, {"pfm", dir + "/fixed.pfm"}});
    CheckpointBundle bundle = load_checkpoint(dir + "/stub.nar");
    REQUIRE(bundle.model == nullptr);
    const ScalarMap out = bundle.predictor->predict(testutil::solid_image(16, 16, 0, 0, 0), {});
    REQUIRE(out.sum() == Catch::Approx(2.5).margin(1e-5));
    REQUIRE_NOTHROW(bundle.backbone());

    save_stub_checkpoint(dir + "/c.nar", nlohmann::json{{"kind", "stub-constant"}, {"value", 0.5}});
    CheckpointBundle cb = load_checkpoint(dir + "/c.nar");
    REQUIRE(cb.predictor->predict(testutil::solid_image(4, 4, 0, 0, 0), {}).sum() ==
            Catch::Approx(8.0).margin(1e-9));
}

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny_model_config();
    cfg.fim_dim = 18;  // not divisible by 4
    REQUIRE_THROWS_AS(validate(cfg), InvalidInput);
    cfg = tiny_model_config();
    cfg.fim_heads = 5;
    REQUIRE_THROWS_AS(validate(cfg), InvalidInput);
    cfg = tiny_model_config();
    cfg.decoder_channels = 10;  // not divisible into 4 groups
    REQUIRE_THROWS_AS(validate(cfg), InvalidInput);
}
