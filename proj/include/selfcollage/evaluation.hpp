#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfcollage/core/connected.hpp"
#include "selfcollage/core/image.hpp"
#include "selfcollage/datasets.hpp"

namespace selfcollage {

inline double mae(const std::vector<double>& preds, const std::vector<double>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw InvalidInput("mae: empty or mismatched inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - truths[i]);
    return acc / static_cast<double>(preds.size());
}

inline double rmse(const std::vector<double>& preds, const std::vector<double>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw InvalidInput("rmse: empty or mismatched inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        acc += (preds[i] - truths[i]) * (preds[i] - truths[i]);
    return std::sqrt(acc / static_cast<double>(preds.size()));
}

namespace detail {

// strict inversions (a[i] > a[j], i < j) via merge sort
inline long long count_inversions(std::vector<double>& a) {
    const std::size_t n = a.size();
    if (n < 2) return 0;
    std::vector<double> buf(n);
    long long inv = 0;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
            const std::size_t mid = lo + width, hi = std::min(lo + 2 * width, n);
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (a[i] <= a[j]) {
                    buf[k++] = a[i++];
                } else {
                    inv += static_cast<long long>(mid - i);
                    buf[k++] = a[j++];
                }
            }
            while (i < mid) buf[k++] = a[i++];
            while (j < hi) buf[k++] = a[j++];
            std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
                      a.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    }
    return inv;
}

inline long long tie_pairs(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    long long pairs = 0, run = 1;
    for (std::size_t i = 1; i <= v.size(); ++i) {
        if (i < v.size() && v[i] == v[i - 1]) {
            ++run;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    return pairs;
}

}  // namespace detail

// Kendall's tau-b (tie-corrected) via sort + inversion counting.
inline double kendall_tau(const std::vector<double>& preds, const std::vector<double>& truths) {
    const std::size_t n = preds.size();
    if (n != truths.size() || n < 2) throw InvalidInput("kendall_tau: need two equal-length vectors");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a] != preds[b]) return preds[a] < preds[b];
        return truths[a] < truths[b];
    });
    const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
    const long long n1 = detail::tie_pairs(preds);
    const long long n2 = detail::tie_pairs(truths);
    long long n3 = 0;  // pairs tied in both
    {
        long long run = 1;
        for (std::size_t i = 1; i <= n; ++i) {
            if (i < n && preds[idx[i]] == preds[idx[i - 1]] && truths[idx[i]] == truths[idx[i - 1]]) {
                ++run;
            } else {
                n3 += run * (run - 1) / 2;
                run = 1;
            }
        }
    }
    if (n1 == n0 || n2 == n0)
        throw UndefinedCorrelation("kendall_tau: correlation undefined for constant input");
    std::vector<double> y_seq(n);
    for (std::size_t i = 0; i < n; ++i) y_seq[i] = truths[idx[i]];
    const long long discordant = detail::count_inversions(y_seq);
    const long long concordant = n0 - n1 - n2 + n3 - discordant;
    const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    return static_cast<double>(concordant - discordant) / denom;
}

// Inclusive count ranges for the low/medium/high trisection.
struct SplitBounds {
    int low_lo = 8, low_hi = 16;
    int med_lo = 17, med_hi = 40;
    int high_lo = 41, high_hi = 3701;
};

inline std::string split_of_count(int count, const SplitBounds& b) {
    if (count >= b.low_lo && count <= b.low_hi) return "low";
    if (count >= b.med_lo && count <= b.med_hi) return "medium";
    if (count >= b.high_lo && count <= b.high_hi) return "high";
    return "other";
}

struct SplitLists {
    std::vector<EvalRecord> low, medium, high, other;
};

inline SplitLists split_by_count(const std::vector<EvalRecord>& records, const SplitBounds& b) {
    SplitLists out;
    for (const auto& r : records) {
        const auto s = split_of_count(r.gt_count, b);
        if (s == "low")
            out.low.push_back(r);
        else if (s == "medium")
            out.medium.push_back(r);
        else if (s == "high")
            out.high.push_back(r);
        else {
            std::cerr << "[selfcollage] split_by_count: count " << r.gt_count << " of '" << r.id
                      << "' falls outside all ranges\n";
            out.other.push_back(r);
        }
    }
    return out;
}

// Constant predictor at the training-set mean count.
inline double average_baseline(const std::vector<double>& train_counts) {
    if (train_counts.empty()) throw InvalidInput("average_baseline: need at least one record");
    double acc = 0.0;
    for (double c : train_counts) acc += c;
    return acc / static_cast<double>(train_counts.size());
}

// ---------------------------------------------------------------------------
// Connected-components baseline.
// ---------------------------------------------------------------------------

struct CCConfig {
    double p_att = 0.7;   // retained attention mass fraction, per head
    int n_head = 10;      // minimum number of heads that must retain a patch
    double p_size = 0.0;  // minimum component size as a fraction of the map
    int connectivity = 4;
};

inline void validate(const CCConfig& c, int head_count) {
    if (!(0.0 < c.p_att && c.p_att <= 1.0)) throw InvalidInput("cc config: p_att in (0,1]");
    if (!(1 <= c.n_head && c.n_head <= head_count))
        throw InvalidInput("cc config: n_head must be within the head count");
    if (!(0.0 <= c.p_size && c.p_size <= 1.0)) throw InvalidInput("cc config: p_size in [0,1]");
}

namespace detail {

// Keep the smallest set of highest-attention patches whose mass reaches
// p_att of the head's total.
inline std::vector<std::uint8_t> retain_mass(const ScalarMap& att, double p_att) {
    std::vector<std::uint8_t> kept(att.v.size(), 0);
    double total = 0.0;
    for (double v : att.v) total += v;
    if (total <= 0.0) return kept;
    std::vector<std::size_t> order(att.v.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return att.v[a] > att.v[b]; });
    double acc = 0.0;
    for (auto i : order) {
        kept[i] = 1;
        acc += att.v[i];
        if (acc >= p_att * total) break;
    }
    return kept;
}

}  // namespace detail

inline int connected_components_count(const std::vector<ScalarMap>& head_maps, const CCConfig& cfg) {
    if (head_maps.empty()) throw InvalidInput("connected_components_count: no attention maps");
    const int h = head_maps[0].h, w = head_maps[0].w;
    std::vector<int> votes(static_cast<std::size_t>(h) * w, 0);
    for (const auto& m : head_maps) {
        if (m.h != h || m.w != w) throw InvalidInput("connected_components_count: map dims mismatch");
        const auto kept = detail::retain_mass(m, cfg.p_att);
        for (std::size_t i = 0; i < kept.size(); ++i) votes[i] += kept[i];
    }
    std::vector<std::uint8_t> object(votes.size(), 0);
    for (std::size_t i = 0; i < votes.size(); ++i) object[i] = votes[i] >= cfg.n_head ? 1 : 0;
    const auto labels = label_components(object, h, w, cfg.connectivity);
    const double min_size = cfg.p_size * static_cast<double>(h) * w;
    int count = 0;
    for (int s : labels.sizes)
        if (static_cast<double>(s) > min_size) ++count;
    return count;
}

struct CCGridRow {
    CCConfig config;
    double mae = 0.0, rmse = 0.0;
};

struct CCGridResult {
    CCConfig best;
    double best_mae = 0.0;
    std::vector<CCGridRow> rows;
};

inline const std::vector<double>& cc_grid_p_att() {
    static const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
    return v;
}
inline const std::vector<int>& cc_grid_n_head() {
    static const std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    return v;
}
inline const std::vector<double>& cc_grid_p_size() {
    static const std::vector<double> v{0.0, 0.01, 0.02, 0.05, 0.1, 0.2};
    return v;
}

// Exhaustive search over the threshold grid (11 x 12 x 6 = 792 configs),
// lowest MAE wins. Component labelings are shared across the p_size axis.
inline CCGridResult grid_search_cc(const std::vector<std::vector<ScalarMap>>& per_image_heads,
                                   const std::vector<double>& gt_counts, int connectivity = 4,
                                   const std::vector<double>& p_atts = cc_grid_p_att(),
                                   const std::vector<int>& n_heads = cc_grid_n_head(),
                                   const std::vector<double>& p_sizes = cc_grid_p_size()) {
    if (per_image_heads.size() != gt_counts.size() || per_image_heads.empty())
        throw InvalidInput("grid_search_cc: empty or mismatched dataset");
    if (p_atts.empty() || n_heads.empty() || p_sizes.empty())
        throw InvalidInput("grid_search_cc: empty grid axis");
    CCGridResult result;
    result.best_mae = std::numeric_limits<double>::infinity();
    // predictions[(ip, ih)][p_size_idx][image]
    for (const double p_att : p_atts) {
        // per-image per-head retention for this p_att
        std::vector<std::vector<std::vector<std::uint8_t>>> retained(per_image_heads.size());
        for (std::size_t img = 0; img < per_image_heads.size(); ++img)
            for (const auto& m : per_image_heads[img]) retained[img].push_back(detail::retain_mass(m, p_att));
        for (const int n_head : n_heads) {
            // component sizes per image for this (p_att, n_head)
            std::vector<std::vector<int>> comp_sizes(per_image_heads.size());
            std::vector<double> map_area(per_image_heads.size());
            for (std::size_t img = 0; img < per_image_heads.size(); ++img) {
                const int h = per_image_heads[img][0].h, w = per_image_heads[img][0].w;
                map_area[img] = static_cast<double>(h) * w;
                std::vector<std::uint8_t> object(static_cast<std::size_t>(h) * w, 0);
                for (std::size_t i = 0; i < object.size(); ++i) {
                    int votes = 0;
                    for (const auto& kept : retained[img]) votes += kept[i];
                    object[i] = votes >= n_head ? 1 : 0;
                }
                comp_sizes[img] = label_components(object, h, w, connectivity).sizes;
            }
            for (const double p_size : p_sizes) {
                std::vector<double> preds(per_image_heads.size(), 0.0);
                for (std::size_t img = 0; img < per_image_heads.size(); ++img) {
                    int count = 0;
                    for (int s : comp_sizes[img])
                        if (static_cast<double>(s) > p_size * map_area[img]) ++count;
                    preds[img] = count;
                }
                CCGridRow row;
                row.config = CCConfig{p_att, n_head, p_size, connectivity};
                row.mae = mae(preds, gt_counts);
                row.rmse = rmse(preds, gt_counts);
                if (row.mae < result.best_mae) {
                    result.best_mae = row.mae;
                    result.best = row.config;
                }
                result.rows.push_back(row);
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation.
// ---------------------------------------------------------------------------

struct SplitMetrics {
    int n = 0;
    std::optional<double> mae, rmse, tau;
};

struct PerImageRow {
    std::string id;
    double gt = 0.0;
    double pred = 0.0;
    std::string path;   // inference path taken
    std::string split;
};

struct EvalReport {
    SplitMetrics overall, low, medium, high, other;
    std::vector<PerImageRow> rows;
    int skipped = 0;
};

struct Prediction {
    double count = 0.0;
    std::string path = "direct";
};

namespace detail {

inline SplitMetrics metrics_for(const std::vector<PerImageRow>& rows) {
    SplitMetrics m;
    m.n = static_cast<int>(rows.size());
    if (rows.empty()) return m;
    std::vector<double> preds, gts;
    for (const auto& r : rows) {
        preds.push_back(r.pred);
        gts.push_back(r.gt);
    }
    m.mae = mae(preds, gts);
    m.rmse = rmse(preds, gts);
    if (rows.size() >= 2) {
        try {
            m.tau = kendall_tau(preds, gts);
        } catch (const UndefinedCorrelation&) {
            m.tau.reset();  // reported as null, like the constant baseline
        }
    }
    return m;
}

}  // namespace detail

// Runs the predictor over every record; unreadable records are skipped with a
// warning and excluded from n.
inline EvalReport evaluate(const std::function<std::optional<Prediction>(const EvalRecord&)>& predict,
                           const std::vector<EvalRecord>& records, const SplitBounds& bounds = {}) {
    if (records.empty()) throw InvalidInput("evaluate: no records");
    EvalReport report;
    for (const auto& rec : records) {
        std::optional<Prediction> pred;
        try {
            pred = predict(rec);
        } catch (const IoError& e) {
            std::cerr << "[selfcollage] evaluate: skipping '" << rec.id << "': " << e.what() << "\n";
            pred.reset();
        }
        if (!pred) {
            ++report.skipped;
            continue;
        }
        PerImageRow row;
        row.id = rec.id;
        row.gt = rec.gt_count;
        row.pred = pred->count;
        row.path = pred->path;
        row.split = split_of_count(rec.gt_count, bounds);
        report.rows.push_back(std::move(row));
    }
    std::vector<PerImageRow> low, medium, high, other;
    for (const auto& r : report.rows) {
        if (r.split == "low") low.push_back(r);
        else if (r.split == "medium") medium.push_back(r);
        else if (r.split == "high") high.push_back(r);
        else other.push_back(r);
    }
    report.overall = detail::metrics_for(report.rows);
    report.low = detail::metrics_for(low);
    report.medium = detail::metrics_for(medium);
    report.high = detail::metrics_for(high);
    report.other = detail::metrics_for(other);
    return report;
}

namespace detail {
inline nlohmann::json metrics_json(const SplitMetrics& m) {
    nlohmann::json j{{"n", m.n}};
    j["mae"] = m.mae ? nlohmann::json(*m.mae) : nlohmann::json(nullptr);
    j["rmse"] = m.rmse ? nlohmann::json(*m.rmse) : nlohmann::json(nullptr);
    j["tau"] = m.tau ? nlohmann::json(*m.tau) : nlohmann::json(nullptr);
    return j;
}
}  // namespace detail

inline void write_report_json(const std::string& path, const EvalReport& report) {
    nlohmann::json j;
    j["overall"] = detail::metrics_json(report.overall);
    j["low"] = detail::metrics_json(report.low);
    j["medium"] = detail::metrics_json(report.medium);
    j["high"] = detail::metrics_json(report.high);
    j["other"] = detail::metrics_json(report.other);
    j["skipped"] = report.skipped;
    j["images"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        j["images"].push_back({{"id", r.id},
                               {"gt", r.gt},
                               {"pred", r.pred},
                               {"rounded", std::llround(r.pred)},
                               {"path", r.path},
                               {"split", r.split}});
    std::ofstream f(path);
    if (!f) throw IoError("write_report_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

inline void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path);
    if (!f) throw IoError("write_report_csv: cannot open " + path);
    f << "id,gt,pred,rounded,path,split\n";
    for (const auto& r : report.rows)
        f << r.id << "," << r.gt << "," << r.pred << "," << std::llround(r.pred) << "," << r.path << ","
          << r.split << "\n";
}

inline void write_cc_table_csv(const std::string& path, const CCGridResult& result) {
    std::ofstream f(path);
    if (!f) throw IoError("write_cc_table_csv: cannot open " + path);
    f << "p_att,n_head,p_size,mae,rmse\n";
    for (const auto& row : result.rows)
        f << row.config.p_att << "," << row.config.n_head << "," << row.config.p_size << "," << row.mae
          << "," << row.rmse << "\n";
}

}  // namespace selfcollage
