#pragma once

// Exhaustive clustering oracle: enumerate every partition of m items into
// exactly c non-empty blocks (restricted growth strings) and take the best
// objective. Uses its own copy of the weighted metric on purpose.

#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

inline double weighted_sq(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double sum = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        sum += (static_cast<double>(j + 1) / n) * d * d;
    }
    return sum;
}

inline double partition_objective(const std::vector<std::vector<double>>& points,
                                  const std::vector<int>& labels, int c) {
    const std::size_t n = points.front().size();
    std::vector<std::vector<double>> centroid(static_cast<std::size_t>(c),
                                              std::vector<double>(n, 0.0));
    std::vector<int> count(static_cast<std::size_t>(c), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        ++count[static_cast<std::size_t>(labels[i])];
        for (std::size_t j = 0; j < n; ++j)
            centroid[static_cast<std::size_t>(labels[i])][j] += points[i][j];
    }
    for (int r = 0; r < c; ++r)
        for (std::size_t j = 0; j < n; ++j)
            centroid[static_cast<std::size_t>(r)][j] /= count[static_cast<std::size_t>(r)];
    double total = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
        total += weighted_sq(centroid[static_cast<std::size_t>(labels[i])], points[i]);
    return total;
}

inline void enumerate(std::vector<int>& labels, std::size_t i, int used, int c,
                      const std::vector<std::vector<double>>& points, double& best) {
    const std::size_t m = points.size();
    if (i == m) {
        if (used == c) best = std::min(best, partition_objective(points, labels, c));
        return;
    }
    // Restricted growth: item i may join blocks 0..used, opening at most one
    // new block; prune when the remaining items cannot open enough blocks.
    const int remaining = static_cast<int>(m - i);
    if (used + remaining < c) return;
    for (int r = 0; r <= used && r < c; ++r) {
        labels[i] = r;
        enumerate(labels, i + 1, used + (r == used ? 1 : 0), c, points, best);
    }
}

/// Global minimum of the weighted k-means objective over all partitions of
/// the points into exactly c non-empty blocks.
inline double best_objective(const std::vector<std::vector<double>>& points, int c) {
    std::vector<int> labels(points.size(), 0);
    double best = std::numeric_limits<double>::infinity();
    enumerate(labels, 0, 0, c, points, best);
    return best;
}

} // namespace oracle
