#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfcollage/composer.hpp"
#include "selfcollage/datasets.hpp"
#include "selfcollage/io/image_io.hpp"
#include "selfcollage/io/pfm.hpp"

namespace selfcollage {

// On-disk sample layout: <id>.png (composed image), <id>.pfm (density map),
// <id>.json (boxes, cluster ids, seed, exemplar boxes). One manifest.jsonl
// record per sample ties a dataset directory together.

inline nlohmann::json box_to_json(const Box& b) {
    return nlohmann::json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
}

inline Box box_from_json(const nlohmann::json& j) {
    return Box{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
}

inline void write_sample(const std::string& dir, const std::string& id, const SelfCollageSample& sample) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_png(dir + "/" + id + ".png", sample.image);
    write_pfm(dir + "/" + id + ".pfm", sample.density);
    nlohmann::json meta;
    meta["id"] = id;
    meta["seed"] = sample.seed;
    meta["canvas"] = {{"h", sample.image.h}, {"w", sample.image.w}};
    meta["placed"] = nlohmann::json::array();
    for (const auto& p : sample.placed) {
        nlohmann::json pj = box_to_json(p.box);
        pj["cluster_id"] = p.cluster_id;
        pj["is_target"] = p.is_target;
        meta["placed"].push_back(pj);
    }
    meta["exemplar_boxes"] = nlohmann::json::array();
    for (const auto& b : sample.exemplar_boxes) meta["exemplar_boxes"].push_back(box_to_json(b));
    meta["target_count"] = sample.exemplar_boxes.size();
    std::ofstream f(dir + "/" + id + ".json");
    if (!f) throw IoError("write_sample: cannot open " + dir + "/" + id + ".json");
    f << meta.dump(2) << "\n";
}

inline void append_manifest(std::ofstream& manifest, const std::string& id, const SelfCollageSample& s) {
    manifest << nlohmann::json{{"id", id},
                               {"image", id + ".png"},
                               {"density", id + ".pfm"},
                               {"meta", id + ".json"},
                               {"count", s.exemplar_boxes.size()}}
                    .dump()
             << "\n";
}

// Evaluation records from a composed dataset directory; exemplar boxes come
// from the stored candidate pool.
inline std::vector<EvalRecord> load_manifest_records(const std::string& dir, int max_records = -1) {
    std::ifstream f(dir + "/manifest.jsonl");
    if (!f) throw DataError("load_manifest_records: cannot open " + dir + "/manifest.jsonl");
    std::vector<EvalRecord> records;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("load_manifest_records: bad manifest line: " + std::string(e.what()));
        }
        EvalRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.image_path = dir + "/" + j.at("image").get<std::string>();
        rec.gt_count = j.at("count").get<int>();
        std::ifstream mf(dir + "/" + j.at("meta").get<std::string>());
        if (!mf) throw DataError("load_manifest_records: cannot open meta for " + rec.id);
        const nlohmann::json meta = nlohmann::json::parse(mf);
        for (const auto& bj : meta.at("exemplar_boxes")) rec.exemplar_boxes.push_back(box_from_json(bj));
        records.push_back(std::move(rec));
        if (max_records > 0 && static_cast<int>(records.size()) >= max_records) break;
    }
    if (records.empty()) throw DataError("load_manifest_records: empty manifest in " + dir);
    return records;
}

}  // namespace selfcollage
