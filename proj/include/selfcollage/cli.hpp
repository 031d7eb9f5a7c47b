#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "selfcollage/dataset_io.hpp"
#include "selfcollage/evaluation.hpp"
#include "selfcollage/inference.hpp"
#include "selfcollage/semantic.hpp"
#include "selfcollage/training.hpp"

namespace selfcollage::cli {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Strict config parsing: unknown keys are rejected.
// ---------------------------------------------------------------------------

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
}

inline json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config: cannot parse " + path + ": " + e.what());
    }
}

inline void write_snapshot(const std::string& out_dir, const json& effective) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/run_config.json");
    if (!f) throw IoError("cannot write config snapshot in " + out_dir);
    f << effective.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Section parsers.
// ---------------------------------------------------------------------------

inline BackboneSpec parse_backbone(const json& j) {
    check_keys(j, {"kind", "patch_size", "depth", "heads", "width", "init_seed", "weights_path"},
               "backbone");
    BackboneSpec spec;
    const auto kind = get_or<std::string>(j, "kind", "handcrafted");
    if (kind == "handcrafted")
        spec.kind = BackboneKind::handcrafted;
    else if (kind == "tiny-vit")
        spec.kind = BackboneKind::tiny_vit;
    else if (kind == "external-weights")
        spec.kind = BackboneKind::external_weights;
    else
        throw ConfigError("config: unknown backbone kind '" + kind + "'");
    spec.patch_size = get_or(j, "patch_size", spec.patch_size);
    spec.depth = get_or(j, "depth", spec.depth);
    spec.heads = get_or(j, "heads", spec.heads);
    spec.width = get_or(j, "width", spec.width);
    spec.init_seed = get_or<std::uint64_t>(j, "init_seed", spec.init_seed);
    spec.weights_path = get_or<std::string>(j, "weights_path", "");
    return spec;
}

inline ComposerConfig parse_composer(const json& j) {
    check_keys(j,
               {"t_min", "t_max", "n_min", "n_max", "d_min", "d_max", "sigma", "overlap_allowed",
                "paste_mode", "canvas_h", "canvas_w", "exemplar_h", "exemplar_w", "similarity_lo",
                "similarity_hi"},
               "composer");
    ComposerConfig c;
    c.t_min = get_or(j, "t_min", c.t_min);
    c.t_max = get_or(j, "t_max", c.t_max);
    c.n_min = get_or(j, "n_min", c.n_min);
    c.n_max = get_or(j, "n_max", c.n_max);
    c.d_min = get_or(j, "d_min", c.d_min);
    c.d_max = get_or(j, "d_max", c.d_max);
    c.sigma = get_or(j, "sigma", c.sigma);
    c.overlap_allowed = get_or(j, "overlap_allowed", c.overlap_allowed);
    const auto mode = get_or<std::string>(j, "paste_mode", "segmented");
    if (mode == "segmented")
        c.paste_mode = PasteMode::segmented;
    else if (mode == "whole-image")
        c.paste_mode = PasteMode::whole_image;
    else
        throw ConfigError("config: unknown paste_mode '" + mode + "'");
    c.canvas_h = get_or(j, "canvas_h", c.canvas_h);
    c.canvas_w = get_or(j, "canvas_w", c.canvas_w);
    c.exemplar_h = get_or(j, "exemplar_h", c.exemplar_h);
    c.exemplar_w = get_or(j, "exemplar_w", c.exemplar_w);
    if (j.contains("similarity_lo") != j.contains("similarity_hi"))
        throw ConfigError("config: similarity_lo and similarity_hi must be given together");
    if (j.contains("similarity_lo"))
        c.similarity_range = SimilarityRange{j.at("similarity_lo").get<int>(), j.at("similarity_hi").get<int>()};
    return c;
}

inline std::unique_ptr<ObjectSource> parse_objects(const json& j) {
    check_keys(j,
               {"type", "count", "seed", "canvas", "size_min", "size_max", "shapes", "colors", "path",
                "mask_policy", "mask_patch"},
               "objects");
    const auto type = get_or<std::string>(j, "type", "synthetic-shapes");
    if (type == "synthetic-shapes") {
        ShapeParams p;
        p.canvas = get_or(j, "canvas", p.canvas);
        p.size_min = get_or(j, "size_min", p.size_min);
        p.size_max = get_or(j, "size_max", p.size_max);
        if (j.contains("shapes")) {
            p.shapes.clear();
            for (const auto& s : j.at("shapes")) {
                const auto name = s.get<std::string>();
                if (name == "square") p.shapes.push_back(Shape::square);
                else if (name == "circle") p.shapes.push_back(Shape::circle);
                else if (name == "triangle") p.shapes.push_back(Shape::triangle);
                else throw ConfigError("config: unknown shape '" + name + "'");
            }
        }
        if (j.contains("colors")) {
            p.colors.clear();
            for (const auto& s : j.at("colors")) {
                const auto name = s.get<std::string>();
                if (name == "red") p.colors.push_back(Color::red);
                else if (name == "green") p.colors.push_back(Color::green);
                else if (name == "blue") p.colors.push_back(Color::blue);
                else if (name == "yellow") p.colors.push_back(Color::yellow);
                else throw ConfigError("config: unknown color '" + name + "'");
            }
        }
        return std::make_unique<SyntheticShapeSource>(p, get_or<std::size_t>(j, "count", 256),
                                                      get_or<std::uint64_t>(j, "seed", 1));
    }
    if (type == "directory") {
        const auto policy = get_or<std::string>(j, "mask_policy", "attention-threshold");
        MaskPolicy mp;
        if (policy == "attention-threshold") mp = MaskPolicy::attention_threshold;
        else if (policy == "analytic-none") mp = MaskPolicy::analytic_none;
        else throw ConfigError("config: unknown mask_policy '" + policy + "'");
        return std::make_unique<DirectoryObjectSource>(get_or<std::string>(j, "path", ""), mp,
                                                       get_or(j, "mask_patch", 4));
    }
    throw ConfigError("config: unknown objects type '" + type + "'");
}

inline std::unique_ptr<BackgroundSource> parse_backgrounds(const json& j) {
    check_keys(j, {"type", "count", "canvas", "seed", "path"}, "backgrounds");
    const auto type = get_or<std::string>(j, "type", "noise");
    if (type == "noise")
        return std::make_unique<NoiseBackgroundSource>(get_or<std::size_t>(j, "count", 64),
                                                       get_or(j, "canvas", 224),
                                                       get_or<std::uint64_t>(j, "seed", 2));
    if (type == "directory")
        return std::make_unique<DirectoryBackgroundSource>(get_or<std::string>(j, "path", ""));
    throw ConfigError("config: unknown backgrounds type '" + type + "'");
}

inline ModelConfig parse_model(const json& j, const BackboneSpec& backbone) {
    check_keys(j,
               {"fim_dim", "fim_blocks", "fim_heads", "fim_mlp_dim", "decoder_channels",
                "decoder_blocks", "decoder_groups", "exemplar_h", "exemplar_w", "init_seed",
                "input_proj_std"},
               "model");
    ModelConfig c;
    c.backbone = backbone;
    c.fim_dim = get_or(j, "fim_dim", c.fim_dim);
    c.fim_blocks = get_or(j, "fim_blocks", c.fim_blocks);
    c.fim_heads = get_or(j, "fim_heads", c.fim_heads);
    c.fim_mlp_dim = get_or(j, "fim_mlp_dim", c.fim_mlp_dim);
    c.decoder_channels = get_or(j, "decoder_channels", c.decoder_channels);
    c.decoder_blocks = get_or(j, "decoder_blocks", c.decoder_blocks);
    c.decoder_groups = get_or(j, "decoder_groups", c.decoder_groups);
    c.exemplar_h = get_or(j, "exemplar_h", c.exemplar_h);
    c.exemplar_w = get_or(j, "exemplar_w", c.exemplar_w);
    c.init_seed = get_or<std::uint64_t>(j, "init_seed", c.init_seed);
    c.input_proj_std = get_or(j, "input_proj_std", c.input_proj_std);
    return c;
}

inline TrainConfig parse_train(const json& j) {
    check_keys(j,
               {"loss_scale", "drop_frac", "max_lr", "warmup_frac", "weight_decay", "beta1", "beta2",
                "adam_eps", "batch_size", "epochs", "samples_per_epoch", "exemplar_min", "exemplar_max",
                "seed"},
               "train");
    TrainConfig c;
    c.loss_scale = get_or(j, "loss_scale", c.loss_scale);
    c.drop_frac = get_or(j, "drop_frac", c.drop_frac);
    c.max_lr = get_or(j, "max_lr", c.max_lr);
    c.warmup_frac = get_or(j, "warmup_frac", c.warmup_frac);
    c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
    c.beta1 = get_or(j, "beta1", c.beta1);
    c.beta2 = get_or(j, "beta2", c.beta2);
    c.adam_eps = get_or(j, "adam_eps", c.adam_eps);
    c.batch_size = get_or(j, "batch_size", c.batch_size);
    c.epochs = get_or(j, "epochs", c.epochs);
    c.samples_per_epoch = get_or(j, "samples_per_epoch", c.samples_per_epoch);
    c.exemplar_min = get_or(j, "exemplar_min", c.exemplar_min);
    c.exemplar_max = get_or(j, "exemplar_max", c.exemplar_max);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    return c;
}

inline InferenceConfig parse_inference(const json& j) {
    check_keys(j,
               {"target_height", "window", "stride", "small_object_px", "tiling_grid", "ttn_threshold",
                "refine_count_threshold"},
               "inference");
    InferenceConfig c;
    c.target_height = get_or(j, "target_height", c.target_height);
    c.window = get_or(j, "window", c.window);
    c.stride = get_or(j, "stride", c.stride);
    c.small_object_px = get_or(j, "small_object_px", c.small_object_px);
    c.tiling_grid = get_or(j, "tiling_grid", c.tiling_grid);
    c.ttn_threshold = get_or(j, "ttn_threshold", c.ttn_threshold);
    if (j.contains("refine_count_threshold") && !j.at("refine_count_threshold").is_null())
        c.refine_count_threshold = j.at("refine_count_threshold").get<double>();
    return c;
}

// ---------------------------------------------------------------------------
// Shared pipeline assembly.
// ---------------------------------------------------------------------------

struct Pipeline {
    std::unique_ptr<ObjectSource> objects;
    std::unique_ptr<BackgroundSource> backgrounds;
    std::unique_ptr<Backbone> backbone;
    ClusterModel cluster_model;
    ComposerConfig composer;
};

inline Pipeline build_pipeline(const json& cfg) {
    Pipeline p;
    p.objects = parse_objects(cfg.value("objects", json::object()));
    p.backgrounds = parse_backgrounds(cfg.value("backgrounds", json::object()));
    const BackboneSpec spec = parse_backbone(cfg.value("backbone", json::object()));
    p.backbone = load_backbone(spec);
    p.composer = parse_composer(cfg.value("composer", json::object()));
    const json cj = cfg.value("clustering", json::object());
    check_keys(cj, {"k", "max_iters", "seed", "load"}, "clustering");
    if (cj.contains("load")) {
        p.cluster_model = load_cluster_model(cj.at("load").get<std::string>());
        if (p.cluster_model.assignments.size() != p.objects->size())
            throw DataError("clustering: loaded model not aligned with the object source");
        return p;
    }
    const int k = get_or(cj, "k", 12);
    const int max_iters = get_or(cj, "max_iters", 100);
    const auto seed = get_or<std::uint64_t>(cj, "seed", 3);
    const int n = static_cast<int>(p.objects->size());
    const int d = p.backbone->width();
    std::vector<double> embeddings(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const auto emb = p.backbone->cls_embedding(p.objects->get(static_cast<std::size_t>(i)).image);
        std::copy(emb.begin(), emb.end(), embeddings.begin() + static_cast<std::size_t>(i) * d);
    }
    p.cluster_model = fit_kmeans(embeddings, n, d, k, max_iters, seed);
    return p;
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

inline int cmd_build_dataset(const json& cfg) {
    check_keys(cfg, {"out_dir", "count", "seed", "composer", "objects", "backgrounds", "backbone",
                     "clustering"},
               "build-dataset config");
    const auto out_dir = get_or<std::string>(cfg, "out_dir", "dataset");
    const int count = get_or(cfg, "count", 10);
    const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
    Pipeline p = build_pipeline(cfg);
    validate(p.composer);
    write_snapshot(out_dir, cfg);
    std::ofstream manifest(out_dir + "/manifest.jsonl");
    if (!manifest) throw IoError("build-dataset: cannot open manifest in " + out_dir);
    for (int i = 0; i < count; ++i) {
        const std::uint64_t sample_seed = Rng::mix(seed, static_cast<std::uint64_t>(i));
        const SelfCollageSample sample =
            compose(p.composer, *p.objects, *p.backgrounds, p.cluster_model, sample_seed);
        char id[32];
        std::snprintf(id, sizeof(id), "%06d", i);
        write_sample(out_dir, id, sample);
        append_manifest(manifest, id, sample);
    }
    save_cluster_model(out_dir + "/clusters.nar", p.cluster_model);
    std::cout << "wrote " << count << " samples to " << out_dir << "\n";
    return 0;
}

inline int cmd_train(const json& cfg) {
    check_keys(cfg, {"out_dir", "composer", "objects", "backgrounds", "backbone", "clustering",
                     "model", "train"},
               "train config");
    const auto out_dir = get_or<std::string>(cfg, "out_dir", "run");
    Pipeline p = build_pipeline(cfg);
    const BackboneSpec backbone_spec = parse_backbone(cfg.value("backbone", json::object()));
    ModelConfig mc = parse_model(cfg.value("model", json::object()), backbone_spec);
    mc.exemplar_h = p.composer.exemplar_h;
    mc.exemplar_w = p.composer.exemplar_w;
    CountingModel model(mc);
    const TrainConfig tc = parse_train(cfg.value("train", json::object()));
    write_snapshot(out_dir, cfg);
    ComposerSetup setup{p.composer, p.objects.get(), p.backgrounds.get(), &p.cluster_model};
    const TrainLog log = train(model, setup, tc, out_dir);
    std::cout << "trained " << log.losses.size() << " steps; final loss "
              << (log.losses.empty() ? 0.0 : log.losses.back()) << "; checkpoint "
              << log.final_checkpoint << "\n";
    return 0;
}

inline std::vector<EvalRecord> parse_eval_dataset(const json& j) {
    check_keys(j, {"type", "dir", "annotations", "split_file", "image_dir", "split", "max_records",
                   "drop_zero_counts"},
               "dataset");
    const auto type = get_or<std::string>(j, "type", "manifest");
    std::vector<EvalRecord> records;
    if (type == "manifest") {
        records = load_manifest_records(get_or<std::string>(j, "dir", "dataset"),
                                        get_or(j, "max_records", -1));
    } else if (type == "fsc147") {
        records = fsc147_adapter(get_or<std::string>(j, "annotations", ""),
                                 get_or<std::string>(j, "split_file", ""),
                                 get_or<std::string>(j, "image_dir", ""),
                                 get_or<std::string>(j, "split", "test"));
        const int max_records = get_or(j, "max_records", -1);
        if (max_records > 0 && static_cast<int>(records.size()) > max_records)
            records.resize(static_cast<std::size_t>(max_records));
    } else {
        throw ConfigError("config: unknown dataset type '" + type + "'");
    }
    if (get_or(j, "drop_zero_counts", false)) {
        std::vector<EvalRecord> kept;
        for (auto& r : records)
            if (r.gt_count > 0) kept.push_back(std::move(r));
        records = std::move(kept);
    }
    return records;
}

inline int cmd_eval(const json& cfg) {
    check_keys(cfg, {"checkpoint", "dataset", "inference", "exemplars_per_image", "out_dir"},
               "eval config");
    const auto ckpt_path = get_or<std::string>(cfg, "checkpoint", "");
    if (ckpt_path.empty()) throw ConfigError("eval: 'checkpoint' is required");
    CheckpointBundle bundle = load_checkpoint(ckpt_path);
    const InferenceConfig icfg = parse_inference(cfg.value("inference", json::object()));
    validate(icfg);
    const int per_image = get_or(cfg, "exemplars_per_image", 3);
    const auto records = parse_eval_dataset(cfg.value("dataset", json::object()));
    const auto out_dir = get_or<std::string>(cfg, "out_dir", "eval");
    write_snapshot(out_dir, cfg);
    PredictorSpec spec{bundle.config.backbone.patch_size, bundle.config.exemplar_h,
                       bundle.config.exemplar_w};
    const EvalReport report = evaluate(
        [&](const EvalRecord& rec) -> std::optional<Prediction> {
            const Image img = load_image(rec.image_path);
            std::vector<Box> boxes = rec.exemplar_boxes;
            if (static_cast<int>(boxes.size()) > per_image) boxes.resize(static_cast<std::size_t>(per_image));
            const CountResult r = count_image(*bundle.predictor, img, boxes, icfg, spec);
            return Prediction{r.count, r.path};
        },
        records);
    write_report_json(out_dir + "/report.json", report);
    write_report_csv(out_dir + "/report.csv", report);
    std::cout << "evaluated " << report.overall.n << " images";
    if (report.overall.mae) std::cout << "; MAE " << *report.overall.mae;
    if (report.overall.rmse) std::cout << "; RMSE " << *report.overall.rmse;
    if (report.overall.tau) std::cout << "; tau " << *report.overall.tau;
    std::cout << "\n";
    return 0;
}

inline std::vector<Box> parse_boxes_arg(const std::string& arg) {
    std::vector<Box> boxes;
    std::size_t pos = 0;
    while (pos < arg.size()) {
        const auto end = arg.find(';', pos);
        const std::string part = arg.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        Box b;
        if (std::sscanf(part.c_str(), "%d,%d,%d,%d", &b.x, &b.y, &b.w, &b.h) != 4)
            throw ConfigError("count: bad box '" + part + "', expected x,y,w,h");
        boxes.push_back(b);
        if (end == std::string::npos) break;
        pos = end + 1;
    }
    if (boxes.empty()) throw ConfigError("count: no exemplar boxes given");
    return boxes;
}

inline int cmd_count(const std::string& checkpoint, const std::string& image_path,
                     const std::string& boxes_arg, const json& cfg, const std::string& out,
                     const std::string& overlay) {
    check_keys(cfg, {"inference"}, "count config");
    CheckpointBundle bundle = load_checkpoint(checkpoint);
    const InferenceConfig icfg = parse_inference(cfg.value("inference", json::object()));
    validate(icfg);
    const Image img = load_image(image_path);
    const auto boxes = parse_boxes_arg(boxes_arg);
    PredictorSpec spec{bundle.config.backbone.patch_size, bundle.config.exemplar_h,
                       bundle.config.exemplar_w};
    const CountResult r = count_image(*bundle.predictor, img, boxes, icfg, spec);
    json j{{"count", r.count},     {"rounded", r.rounded},       {"path", r.path},
           {"raw_count", r.raw_count}, {"ttn_scale", r.ttn_scale}, {"ttn_applied", r.ttn_applied}};
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("count: cannot open " + out);
        f << j.dump(2) << "\n";
    }
    if (!overlay.empty()) write_png(overlay, density_overlay(img, r.density));
    std::cout << j.dump() << "\n";
    return 0;
}

inline int cmd_semantic_count(const std::string& checkpoint, const std::string& image_path,
                              const json& cfg, const std::string& out, const std::string& overlay_dir) {
    check_keys(cfg, {"semantic"}, "semantic-count config");
    const json sj = cfg.value("semantic", json::object());
    check_keys(sj, {"image_size", "refine_iters", "stop_frac", "refine_frac",
                    "mask_density_threshold", "peak_block", "ttn_threshold", "connectivity",
                    "exemplar_h", "exemplar_w"},
               "semantic");
    SemanticConfig sc;
    sc.image_size = get_or(sj, "image_size", sc.image_size);
    sc.refine_iters = get_or(sj, "refine_iters", sc.refine_iters);
    sc.stop_frac = get_or(sj, "stop_frac", sc.stop_frac);
    sc.refine_frac = get_or(sj, "refine_frac", sc.refine_frac);
    sc.mask_density_threshold = get_or(sj, "mask_density_threshold", sc.mask_density_threshold);
    sc.peak_block = get_or(sj, "peak_block", sc.peak_block);
    sc.ttn_threshold = get_or(sj, "ttn_threshold", sc.ttn_threshold);
    sc.connectivity = get_or(sj, "connectivity", sc.connectivity);
    sc.exemplar_h = get_or(sj, "exemplar_h", sc.exemplar_h);
    sc.exemplar_w = get_or(sj, "exemplar_w", sc.exemplar_w);
    CheckpointBundle bundle = load_checkpoint(checkpoint);
    sc.exemplar_h = bundle.config.exemplar_h;
    sc.exemplar_w = bundle.config.exemplar_w;
    const Image img = load_image(image_path);
    const SemanticResult res = semantic_count(bundle.backbone(), *bundle.predictor, img, sc);
    json j{{"stop_reason", res.stop_reason},
           {"frame", {{"h", res.frame_h}, {"w", res.frame_w}}},
           {"categories", json::array()}};
    for (std::size_t i = 0; i < res.categories.size(); ++i) {
        const auto& c = res.categories[i];
        j["categories"].push_back({{"candidate_box", box_to_json(c.candidate_box)},
                                   {"refined_box", box_to_json(c.refined_box)},
                                   {"count", c.count}});
        if (!overlay_dir.empty()) {
            std::filesystem::create_directories(overlay_dir);
            const Image work = resize_image(img, res.frame_h, res.frame_w);
            write_png(overlay_dir + "/category_" + std::to_string(i) + ".png",
                      density_overlay(work, c.density));
        }
    }
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("semantic-count: cannot open " + out);
        f << j.dump(2) << "\n";
    }
    std::cout << j.dump() << "\n";
    return 0;
}

inline int cmd_cc_baseline(const json& cfg, bool grid_search) {
    check_keys(cfg, {"dataset", "backbone", "cc", "out_dir", "resize_to"}, "cc-baseline config");
    const auto records = parse_eval_dataset(cfg.value("dataset", json::object()));
    const BackboneSpec spec = parse_backbone(cfg.value("backbone", json::object()));
    auto backbone = load_backbone(spec);
    const int resize_to = get_or(cfg, "resize_to", 384);
    const auto out_dir = get_or<std::string>(cfg, "out_dir", "cc");
    write_snapshot(out_dir, cfg);

    std::vector<std::vector<ScalarMap>> heads;
    std::vector<double> gts;
    std::vector<const EvalRecord*> kept;
    for (const auto& rec : records) {
        Image img;
        try {
            img = load_image(rec.image_path);
        } catch (const IoError& e) {
            std::cerr << "[selfcollage] cc-baseline: skipping '" << rec.id << "': " << e.what() << "\n";
            continue;
        }
        heads.push_back(backbone->cls_attention_heads(resize_image(img, resize_to, resize_to)));
        gts.push_back(rec.gt_count);
        kept.push_back(&rec);
    }
    if (heads.empty()) throw DataError("cc-baseline: no usable images");

    CCConfig cc;
    const json cj = cfg.value("cc", json::object());
    check_keys(cj, {"p_att", "n_head", "p_size", "connectivity"}, "cc");
    cc.p_att = get_or(cj, "p_att", cc.p_att);
    cc.n_head = get_or(cj, "n_head", cc.n_head);
    cc.p_size = get_or(cj, "p_size", cc.p_size);
    cc.connectivity = get_or(cj, "connectivity", cc.connectivity);

    if (grid_search) {
        const CCGridResult result = grid_search_cc(heads, gts, cc.connectivity);
        write_cc_table_csv(out_dir + "/grid.csv", result);
        std::cout << "grid search over " << result.rows.size() << " configurations; best p_att "
                  << result.best.p_att << ", n_head " << result.best.n_head << ", p_size "
                  << result.best.p_size << ", MAE " << result.best_mae << "\n";
        cc = result.best;
        cc.connectivity = get_or(cj, "connectivity", 4);
    }
    validate(cc, backbone->head_count());
    EvalReport report = evaluate(
        [&](const EvalRecord& rec) -> std::optional<Prediction> {
            for (std::size_t i = 0; i < kept.size(); ++i)
                if (kept[i] == &rec)
                    return Prediction{static_cast<double>(connected_components_count(heads[i], cc)),
                                      "cc"};
            return std::nullopt;
        },
        records);
    write_report_json(out_dir + "/report.json", report);
    write_report_csv(out_dir + "/report.csv", report);
    std::cout << "cc baseline on " << report.overall.n << " images";
    if (report.overall.mae) std::cout << "; MAE " << *report.overall.mae;
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Argument surface.
// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Self-collage counting pipeline"};
    app.require_subcommand(1);

    std::string config_path, out, seed_str, image_path, checkpoint, boxes_arg, overlay, overlay_dir;
    bool grid_search = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed_str, "seed override");
        sub->add_option("--out", out, "output directory or file");
    };

    CLI::App* build = app.add_subcommand("build-dataset", "compose samples and write a dataset");
    add_common(build);
    CLI::App* train_cmd = app.add_subcommand("train", "train the counting model on streamed samples");
    add_common(train_cmd);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval_cmd);
    CLI::App* count_cmd = app.add_subcommand("count", "count objects in one image");
    add_common(count_cmd);
    count_cmd->add_option("--image", image_path, "input image")->required();
    count_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    count_cmd->add_option("--boxes", boxes_arg, "exemplar boxes x,y,w,h;...")->required();
    count_cmd->add_option("--overlay", overlay, "write density overlay PNG");
    CLI::App* sem_cmd = app.add_subcommand("semantic-count", "discover and count object types");
    add_common(sem_cmd);
    sem_cmd->add_option("--image", image_path, "input image")->required();
    sem_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    sem_cmd->add_option("--overlay-dir", overlay_dir, "write per-category overlays here");
    CLI::App* cc_cmd = app.add_subcommand("cc-baseline", "connected-components attention baseline");
    add_common(cc_cmd);
    cc_cmd->add_flag("--grid-search", grid_search, "run the full threshold grid search");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        json cfg = load_config(config_path);
        if (!cfg.is_object()) throw ConfigError("config: top level must be an object");
        if (!seed_str.empty()) {
            const auto seed = static_cast<std::uint64_t>(std::stoull(seed_str));
            if (app.got_subcommand(build)) cfg["seed"] = seed;
            if (app.got_subcommand(train_cmd)) cfg["train"]["seed"] = seed;
        }
        if (!out.empty()) cfg["out_dir"] = out;
        if (app.got_subcommand(build)) return cmd_build_dataset(cfg);
        if (app.got_subcommand(train_cmd)) return cmd_train(cfg);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(cfg);
        if (app.got_subcommand(count_cmd)) {
            cfg.erase("out_dir");
            return cmd_count(checkpoint, image_path, boxes_arg, cfg, out, overlay);
        }
        if (app.got_subcommand(sem_cmd)) {
            cfg.erase("out_dir");
            return cmd_semantic_count(checkpoint, image_path, cfg, out, overlay_dir);
        }
        if (app.got_subcommand(cc_cmd)) return cmd_cc_baseline(cfg, grid_search);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace selfcollage::cli
