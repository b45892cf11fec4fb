#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "immunocast/errors.hpp"
#include "immunocast/rng.hpp"
#include "immunocast/series.hpp"
#include "immunocast/threading.hpp"

namespace immu {

/// Crisp assignment of each series to one cluster (indices 0..c-1).
struct Partition {
    std::vector<int> assignment;
    int c = 0;

    std::vector<std::size_t> members(int r) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == r) out.push_back(i);
        return out;
    }
};

/// Cluster centroids plus the objective they achieve.
struct ClusterModelSet {
    std::vector<std::vector<double>> centroids;
    double objective = 0;
    int iterations_used = 0;
};

enum class KMeansInit { random_partition, plusplus };

struct KMeansConfig {
    int c = 1;
    double epsilon = 1e-9;
    int max_iterations = 300;
    int restarts = 10;
    std::uint64_t seed = 0;
    KMeansInit init = KMeansInit::plusplus;
};

/// Recency-weighted distance: sqrt(sum_j (j/n) * (v_j - t_j)^2), j = 1..n.
/// A late-epoch difference counts more than the same early-epoch one.
inline double weighted_distance(std::span<const double> v, std::span<const double> t) {
    if (v.size() != t.size())
        throw Error("weighted_distance: length mismatch (" + std::to_string(v.size()) +
                    " vs " + std::to_string(t.size()) + ")");
    const double n = static_cast<double>(v.size());
    double sum = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        const double d = v[j] - t[j];
        sum += (static_cast<double>(j + 1) / n) * d * d;
    }
    return std::sqrt(sum);
}

inline double weighted_distance_sq(std::span<const double> v, std::span<const double> t) {
    const double d = weighted_distance(v, t);
    return d * d;
}

/// Objective J(U, V): sum of squared weighted distances of every series to
/// its cluster centroid.
inline double objective(const Dataset& ds, const Partition& p,
                        const std::vector<std::vector<double>>& centroids) {
    double j = 0;
    for (std::size_t i = 0; i < ds.series.size(); ++i)
        j += weighted_distance_sq(centroids[static_cast<std::size_t>(p.assignment[i])],
                                  ds.series[i].values);
    return j;
}

/// Per-cluster elementwise mean. Every cluster must be non-empty.
inline std::vector<std::vector<double>> update_centroids(const Dataset& ds,
                                                         const Partition& p) {
    const std::size_t n = ds.length();
    std::vector<std::vector<double>> centroids(static_cast<std::size_t>(p.c),
                                               std::vector<double>(n, 0.0));
    std::vector<int> counts(static_cast<std::size_t>(p.c), 0);
    for (std::size_t i = 0; i < ds.series.size(); ++i) {
        const auto r = static_cast<std::size_t>(p.assignment[i]);
        ++counts[r];
        for (std::size_t j = 0; j < n; ++j) centroids[r][j] += ds.series[i].values[j];
    }
    for (std::size_t r = 0; r < centroids.size(); ++r) {
        if (counts[r] == 0)
            throw Error("update_centroids: cluster " + std::to_string(r + 1) + " is empty");
        for (double& x : centroids[r]) x /= counts[r];
    }
    return centroids;
}

namespace detail {

/// Nearest centroid under the weighted metric; ties go to the lowest index.
inline int nearest_centroid(std::span<const double> values,
                            const std::vector<std::vector<double>>& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < centroids.size(); ++r) {
        const double d = weighted_distance_sq(centroids[r], values);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(r);
        }
    }
    return best;
}

/// If the assignment left clusters empty, donate the series farthest from
/// its current centroid (from a cluster with 2+ members).
inline void repair_empty_clusters(const Dataset& ds, Partition& p,
                                  const std::vector<std::vector<double>>& centroids) {
    const int c = p.c;
    std::vector<int> counts(static_cast<std::size_t>(c), 0);
    for (int a : p.assignment) ++counts[static_cast<std::size_t>(a)];
    for (int r = 0; r < c; ++r) {
        if (counts[static_cast<std::size_t>(r)] > 0) continue;
        std::size_t donor = 0;
        double far_d = -1;
        for (std::size_t i = 0; i < p.assignment.size(); ++i) {
            const auto cur = static_cast<std::size_t>(p.assignment[i]);
            if (counts[cur] < 2) continue;
            const double d = weighted_distance_sq(centroids[cur], ds.series[i].values);
            if (d > far_d) {
                far_d = d;
                donor = i;
            }
        }
        if (far_d < 0) throw Error("kmeans: cannot repair empty cluster");
        --counts[static_cast<std::size_t>(p.assignment[donor])];
        p.assignment[donor] = r;
        ++counts[static_cast<std::size_t>(r)];
    }
}

inline std::vector<std::vector<double>> plusplus_seeds(const Dataset& ds, int c, Rng& rng) {
    const std::size_t m = ds.count();
    std::vector<std::vector<double>> seeds;
    std::vector<bool> chosen(m, false);
    std::size_t first = rng.uniform_index(m);
    seeds.push_back(ds.series[first].values);
    chosen[first] = true;
    while (seeds.size() < static_cast<std::size_t>(c)) {
        std::vector<double> d2(m, 0.0);
        double total = 0;
        for (std::size_t i = 0; i < m; ++i) {
            if (chosen[i]) continue;
            double best = std::numeric_limits<double>::infinity();
            for (const auto& s : seeds)
                best = std::min(best, weighted_distance_sq(s, ds.series[i].values));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = m;
        if (total > 0) {
            double u = rng.uniform01() * total;
            double acc = 0;
            for (std::size_t i = 0; i < m; ++i) {
                if (chosen[i]) continue;
                acc += d2[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        }
        if (pick == m) { // all remaining points coincide with seeds
            for (std::size_t i = 0; i < m; ++i)
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
        }
        chosen[pick] = true;
        seeds.push_back(ds.series[pick].values);
    }
    return seeds;
}

inline std::pair<Partition, ClusterModelSet> kmeans_single(const Dataset& ds,
                                                           const KMeansConfig& cfg,
                                                           std::uint64_t seed,
                                                           std::vector<double>* j_trace) {
    const std::size_t m = ds.count();
    Rng rng(seed);

    Partition p;
    p.c = cfg.c;
    p.assignment.assign(m, 0);
    std::vector<std::vector<double>> centroids;

    if (cfg.init == KMeansInit::plusplus) {
        centroids = plusplus_seeds(ds, cfg.c, rng);
        for (std::size_t i = 0; i < m; ++i)
            p.assignment[i] = nearest_centroid(ds.series[i].values, centroids);
        repair_empty_clusters(ds, p, centroids);
    } else {
        // Random partition with every cluster seeded once.
        for (std::size_t i = 0; i < m; ++i)
            p.assignment[i] = rng.uniform_int(0, cfg.c - 1);
        std::vector<std::size_t> order(m);
        for (std::size_t i = 0; i < m; ++i) order[i] = i;
        for (std::size_t i = m; i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        for (int r = 0; r < cfg.c; ++r) p.assignment[order[static_cast<std::size_t>(r)]] = r;
    }

    centroids = update_centroids(ds, p);
    double j = objective(ds, p, centroids);
    if (j_trace) j_trace->push_back(j);
    int iterations = 0;

    for (int it = 0; it < cfg.max_iterations; ++it) {
        ++iterations;
        for (std::size_t i = 0; i < m; ++i)
            p.assignment[i] = nearest_centroid(ds.series[i].values, centroids);
        repair_empty_clusters(ds, p, centroids);
        centroids = update_centroids(ds, p);
        const double j_next = objective(ds, p, centroids);
        // Both half-steps lower J; anything else is a bug.
        if (j_next > j * (1 + 1e-9) + 1e-12)
            throw Error("kmeans: objective increased between iterations");
        if (j_trace) j_trace->push_back(j_next);
        const double delta = std::abs(j - j_next);
        j = j_next;
        if (delta <= cfg.epsilon) break;
    }

    ClusterModelSet models;
    models.centroids = std::move(centroids);
    models.objective = j;
    models.iterations_used = iterations;
    return {std::move(p), std::move(models)};
}

} // namespace detail

/// K-means over the group under the recency-weighted metric. Runs
/// cfg.restarts independent seeded starts (in parallel) and returns the one
/// with the lowest objective. Deterministic given cfg.seed. When j_traces is
/// given it receives the per-iteration objective of every restart.
inline std::pair<Partition, ClusterModelSet>
kmeans(const Dataset& ds, const KMeansConfig& cfg,
       std::vector<std::vector<double>>* j_traces = nullptr) {
    validate(ds);
    const std::size_t m = ds.count();
    if (cfg.c < 1) throw Error("kmeans: cluster count must be at least 1");
    if (static_cast<std::size_t>(cfg.c) > m)
        throw Error("kmeans: cluster count " + std::to_string(cfg.c) + " exceeds " +
                    std::to_string(m) + " series");
    if (cfg.epsilon < 0) throw Error("kmeans: epsilon must be non-negative");
    if (cfg.max_iterations < 1) throw Error("kmeans: max_iterations must be at least 1");
    if (cfg.restarts < 1) throw Error("kmeans: restarts must be at least 1");
    if (cfg.c > 1) {
        bool all_identical = true;
        for (std::size_t i = 1; i < m && all_identical; ++i)
            all_identical = ds.series[i].values == ds.series[0].values;
        if (all_identical)
            throw Error("kmeans: all series identical, no valid partition for c > 1");
    }

    std::vector<std::pair<Partition, ClusterModelSet>> runs(
        static_cast<std::size_t>(cfg.restarts));
    std::vector<std::vector<double>> traces(runs.size());
    parallel_for(runs.size(), [&](std::size_t r) {
        runs[r] = detail::kmeans_single(ds, cfg, derive_seed(cfg.seed, r),
                                        j_traces ? &traces[r] : nullptr);
    });
    if (j_traces) *j_traces = std::move(traces);

    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r)
        if (runs[r].second.objective < runs[best].second.objective) best = r;
    return std::move(runs[best]);
}

struct SweepRow {
    int c = 0;
    double objective = 0;
    Partition partition;
};

/// Run kmeans for every c in [c_lo, c_hi] and report the objectives.
/// Choosing c is left to the operator.
inline std::vector<SweepRow> sweep_clusters(const Dataset& ds, int c_lo, int c_hi,
                                            const KMeansConfig& base) {
    if (c_lo < 1 || c_hi < c_lo || static_cast<std::size_t>(c_hi) > ds.count())
        throw Error("sweep_clusters: range must lie within [1, m]");
    std::vector<SweepRow> rows;
    for (int c = c_lo; c <= c_hi; ++c) {
        KMeansConfig cfg = base;
        cfg.c = c;
        auto [p, models] = kmeans(ds, cfg);
        rows.push_back({c, models.objective, std::move(p)});
    }
    return rows;
}

/// Label-insensitive canonical form: clusters renumbered by their smallest
/// member index. Two partitions describing the same set-of-sets compare equal.
inline std::vector<int> canonical_assignment(const Partition& p) {
    std::vector<int> remap(static_cast<std::size_t>(p.c), -1);
    std::vector<int> out(p.assignment.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < p.assignment.size(); ++i) {
        auto& slot = remap[static_cast<std::size_t>(p.assignment[i])];
        if (slot < 0) slot = next++;
        out[i] = slot;
    }
    return out;
}

} // namespace immu
