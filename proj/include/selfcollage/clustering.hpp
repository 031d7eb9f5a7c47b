#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfcollage/core/error.hpp"
#include "selfcollage/core/rng.hpp"
#include "selfcollage/io/array_store.hpp"

namespace selfcollage {

struct ClusterModel {
    int k = 0, d = 0;
    std::vector<double> centroids;  // k*d
    std::vector<int> assignments;   // per training embedding
    double inertia = 0.0;
    std::uint64_t seed = 0;

    const double* centroid(int j) const { return centroids.data() + static_cast<std::size_t>(j) * d; }
};

// Rank window over similarity order (1 = most similar cluster).
struct SimilarityRange {
    int lo = 1, hi = 1;
};

inline void validate(const SimilarityRange& r, int k) {
    if (!(1 <= r.lo && r.lo < r.hi && r.hi <= k - 1))
        throw InvalidInput("similarity range: need 1 <= lo < hi <= K-1");
}

namespace detail {
inline double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}
}  // namespace detail

// Nearest centroid, ties broken by lowest id.
inline int assign(const ClusterModel& model, const std::vector<double>& emb) {
    if (static_cast<int>(emb.size()) != model.d)
        throw InvalidInput("assign: embedding dimension mismatch");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < model.k; ++j) {
        const double dd = detail::sq_dist(emb.data(), model.centroid(j), model.d);
        if (dd < best_d) {
            best_d = dd;
            best = j;
        }
    }
    return best;
}

// Lloyd's algorithm from k-means++ seeds. Stops when assignments are stable
// or after max_iters. Empty clusters are reseeded at the point farthest from
// its assigned centroid.
inline ClusterModel fit_kmeans(const std::vector<double>& embeddings, int n, int d, int k,
                               int max_iters, std::uint64_t seed,
                               std::vector<double>* inertia_trace = nullptr) {
    if (n < k || k < 1) throw InvalidInput("fit_kmeans: need N >= K >= 1");
    if (static_cast<std::size_t>(n) * d != embeddings.size())
        throw InvalidInput("fit_kmeans: embedding buffer size mismatch");
    Rng rng(seed);
    ClusterModel model;
    model.k = k;
    model.d = d;
    model.seed = seed;
    model.centroids.assign(static_cast<std::size_t>(k) * d, 0.0);
    const auto point = [&](int i) { return embeddings.data() + static_cast<std::size_t>(i) * d; };

    // k-means++ seeding
    std::vector<double> min_d(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.uniform_int(0, n - 1));
    std::copy_n(point(first), d, model.centroids.begin());
    for (int j = 1; j < k; ++j) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            min_d[static_cast<std::size_t>(i)] = std::min(
                min_d[static_cast<std::size_t>(i)], detail::sq_dist(point(i), model.centroid(j - 1), d));
            total += min_d[static_cast<std::size_t>(i)];
        }
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.uniform_int(0, n - 1));
        } else {
            const double r = rng.uniform() * total;
            double cum = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                cum += min_d[static_cast<std::size_t>(i)];
                if (r < cum) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy_n(point(pick), d, model.centroids.begin() + static_cast<std::size_t>(j) * d);
    }

    model.assignments.assign(static_cast<std::size_t>(n), -1);
    std::vector<double> sums(static_cast<std::size_t>(k) * d);
    std::vector<int> counts(static_cast<std::size_t>(k));
    for (int iter = 0; iter < max_iters; ++iter) {
        // assignment step
        bool changed = false;
        model.inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                const double dd = detail::sq_dist(point(i), model.centroid(j), d);
                if (dd < best_d) {
                    best_d = dd;
                    best = j;
                }
            }
            model.inertia += best_d;
            if (model.assignments[static_cast<std::size_t>(i)] != best) {
                model.assignments[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (inertia_trace) inertia_trace->push_back(model.inertia);
        if (!changed) break;
        // update step
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int j = model.assignments[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(j)];
            for (int c = 0; c < d; ++c) sums[static_cast<std::size_t>(j) * d + c] += point(i)[c];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) {
                for (int c = 0; c < d; ++c)
                    model.centroids[static_cast<std::size_t>(j) * d + c] =
                        sums[static_cast<std::size_t>(j) * d + c] / counts[static_cast<std::size_t>(j)];
            } else {
                // reseed at the point farthest from its assigned centroid
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double dd = detail::sq_dist(
                        point(i), model.centroid(model.assignments[static_cast<std::size_t>(i)]), d);
                    if (dd > far_d) {
                        far_d = dd;
                        far = i;
                    }
                }
                std::copy_n(point(far), d, model.centroids.begin() + static_cast<std::size_t>(j) * d);
            }
        }
    }
    // final stable assignment (also covers the max_iters exit)
    model.inertia = 0.0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            const double dd = detail::sq_dist(point(i), model.centroid(j), d);
            if (dd < best_d) {
                best_d = dd;
                best = j;
            }
        }
        model.assignments[static_cast<std::size_t>(i)] = best;
        model.inertia += best_d;
    }
    return model;
}

// Similarity ranks of all clusters w.r.t. the target (most similar first,
// target excluded, ties by lowest id). Similarity is negative Euclidean
// distance between centroids.
inline std::vector<int> similarity_order(const ClusterModel& model, int target_id) {
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(model.k) - 1);
    for (int j = 0; j < model.k; ++j)
        if (j != target_id) ids.push_back(j);
    std::vector<double> dist(static_cast<std::size_t>(model.k), 0.0);
    for (int j : ids)
        dist[static_cast<std::size_t>(j)] =
            detail::sq_dist(model.centroid(target_id), model.centroid(j), model.d);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (dist[static_cast<std::size_t>(a)] != dist[static_cast<std::size_t>(b)])
            return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
        return a < b;
    });
    return ids;
}

inline std::vector<int> pick_nontarget_clusters(const ClusterModel& model, int target_id, int count,
                                                const std::optional<SimilarityRange>& range, Rng& rng) {
    if (target_id < 0 || target_id >= model.k) throw InvalidInput("pick_nontarget_clusters: bad target id");
    std::vector<int> pool;
    if (range) {
        validate(*range, model.k);
        const auto order = similarity_order(model, target_id);
        for (int r = range->lo; r <= range->hi; ++r)
            pool.push_back(order[static_cast<std::size_t>(r - 1)]);
    } else {
        for (int j = 0; j < model.k; ++j)
            if (j != target_id) pool.push_back(j);
    }
    if (count > static_cast<int>(pool.size()))
        throw InvalidInput("pick_nontarget_clusters: candidate pool smaller than requested count");
    const auto idx = rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(count));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    for (auto i : idx) out.push_back(pool[i]);
    return out;
}

// Persistence: centroids + assignments in the shared array container, scalars
// in a JSON sidecar next to it.
inline void save_cluster_model(const std::string& path, const ClusterModel& model) {
    ArrayStore store;
    ArrayF32 cents;
    cents.shape = {model.k, model.d};
    cents.v.assign(model.centroids.begin(), model.centroids.end());
    store.emplace_back("centroids", std::move(cents));
    ArrayF32 assign_arr;
    assign_arr.shape = {static_cast<std::int64_t>(model.assignments.size())};
    assign_arr.v.assign(model.assignments.begin(), model.assignments.end());
    store.emplace_back("assignments", std::move(assign_arr));
    save_arrays(path, store);
    nlohmann::json meta{{"k", model.k}, {"d", model.d}, {"seed", model.seed}, {"inertia", model.inertia}};
    std::ofstream f(path + ".json");
    if (!f) throw IoError("save_cluster_model: cannot open " + path + ".json");
    f << meta.dump(2) << "\n";
}

inline ClusterModel load_cluster_model(const std::string& path) {
    const auto store = load_arrays(path);
    std::ifstream f(path + ".json");
    if (!f) throw IoError("load_cluster_model: cannot open " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(f);
    ClusterModel model;
    model.k = meta.at("k").get<int>();
    model.d = meta.at("d").get<int>();
    model.seed = meta.at("seed").get<std::uint64_t>();
    model.inertia = meta.at("inertia").get<double>();
    const auto& cents = require_array(store, "centroids", path);
    if (cents.numel() != static_cast<std::int64_t>(model.k) * model.d)
        throw IoError("load_cluster_model: centroid shape mismatch in " + path);
    model.centroids.assign(cents.v.begin(), cents.v.end());
    const auto& assigns = require_array(store, "assignments", path);
    model.assignments.resize(assigns.v.size());
    for (std::size_t i = 0; i < assigns.v.size(); ++i)
        model.assignments[i] = static_cast<int>(assigns.v[i]);
    return model;
}

}  // namespace selfcollage
