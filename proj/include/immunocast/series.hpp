#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "immunocast/errors.hpp"

namespace immu {

/// One observed series: ordered values aligned to integer epoch labels
/// (typically years).
struct TimeSeries {
    std::string id;
    std::string label;
    std::string unit;
    std::vector<double> values;
    std::vector<int> epochs;

    std::size_t size() const { return values.size(); }
};

/// A group of series sharing one epoch axis.
struct Dataset {
    std::vector<TimeSeries> series;
    std::vector<int> epochs;

    std::size_t count() const { return series.size(); }
    std::size_t length() const { return epochs.size(); }

    const TimeSeries* find(const std::string& id) const {
        for (const auto& s : series)
            if (s.id == id) return &s;
        return nullptr;
    }
};

/// Elementwise mean of the whole group.
struct GroupCentroid {
    std::vector<double> values;
};

enum class Orientation { paper, corrected };

inline const char* to_string(Orientation o) {
    return o == Orientation::paper ? "paper" : "corrected";
}

inline Orientation orientation_from_string(const std::string& s) {
    if (s == "paper") return Orientation::paper;
    if (s == "corrected") return Orientation::corrected;
    throw Error("unknown orientation '" + s + "' (expected 'paper' or 'corrected')");
}

/// Per-series affine coefficients recorded by normalize so the transform
/// can be inverted exactly.
struct NormalizationParams {
    struct SeriesParams {
        double h_centroid = 0; // average step of the group centroid
        double h_series = 0;   // average step of this series
        double centroid_mean = 0;
        double series_mean = 0;

        double to_normalized(double x, Orientation o) const {
            double delta = (o == Orientation::paper) ? (series_mean - x) / h_series
                                                     : (x - series_mean) / h_series;
            return centroid_mean + delta * h_centroid;
        }

        double to_original(double y, Orientation o) const {
            double delta = (y - centroid_mean) / h_centroid;
            return (o == Orientation::paper) ? series_mean - delta * h_series
                                             : series_mean + delta * h_series;
        }
    };

    Orientation orientation = Orientation::corrected;
    std::map<std::string, SeriesParams> per_series;

    const SeriesParams& at(const std::string& id) const {
        auto it = per_series.find(id);
        if (it == per_series.end())
            throw Error("no normalization params for series '" + id + "'");
        return it->second;
    }
};

namespace detail {

inline double mean_of(std::span<const double> v) {
    double sum = 0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

inline double range_of(std::span<const double> v) {
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
}

} // namespace detail

/// Hard invariants; throws on violation. Length warnings are reported
/// separately by collect_warnings.
inline void validate(const TimeSeries& s) {
    if (s.values.size() < 2)
        throw Error("series '" + s.id + "': fewer than 2 values");
    if (s.values.size() != s.epochs.size())
        throw Error("series '" + s.id + "': values/epochs length mismatch");
    for (double x : s.values)
        if (!std::isfinite(x))
            throw Error("series '" + s.id + "': non-finite value");
    for (std::size_t j = 1; j < s.epochs.size(); ++j)
        if (s.epochs[j] <= s.epochs[j - 1])
            throw Error("series '" + s.id + "': epochs not strictly increasing");
}

inline void validate(const Dataset& ds) {
    if (ds.series.empty()) throw Error("dataset: no series");
    for (const auto& s : ds.series) {
        validate(s);
        if (s.epochs != ds.epochs)
            throw Error("series '" + s.id + "': epochs differ from dataset epochs");
    }
    for (std::size_t i = 0; i < ds.series.size(); ++i)
        for (std::size_t j = i + 1; j < ds.series.size(); ++j)
            if (ds.series[i].id == ds.series[j].id)
                throw Error("duplicate series id '" + ds.series[i].id + "'");
}

/// Soft diagnostics: series lengths outside the method's working range
/// of 10..30 elements.
inline std::vector<std::string> collect_warnings(const Dataset& ds) {
    std::vector<std::string> out;
    for (const auto& s : ds.series) {
        std::size_t n = s.values.size();
        if (n < 10 || n > 30)
            out.push_back("series '" + s.id + "': length " + std::to_string(n) +
                          " is outside the working range [10, 30]");
    }
    return out;
}

/// Elementwise arithmetic mean over the group.
inline GroupCentroid group_centroid(const Dataset& ds) {
    validate(ds);
    const std::size_t n = ds.length();
    GroupCentroid c;
    c.values.assign(n, 0.0);
    for (const auto& s : ds.series)
        for (std::size_t j = 0; j < n; ++j) c.values[j] += s.values[j];
    for (std::size_t j = 0; j < n; ++j)
        c.values[j] /= static_cast<double>(ds.count());
    return c;
}

/// Centroid-referenced normalization. Each series is mapped by the affine
/// transform built from its average step and mean against the group
/// centroid's. Orientation `paper` keeps the published delta sign, which
/// reflects each series about its mean; `corrected` (default) flips it so
/// trends are preserved.
inline std::pair<Dataset, NormalizationParams>
normalize(const Dataset& ds, const GroupCentroid& centroid, Orientation orientation) {
    validate(ds);
    const std::size_t n = ds.length();
    if (centroid.values.size() != n)
        throw Error("centroid length does not match dataset");

    const double n_d = static_cast<double>(n);
    const double h_centroid = detail::range_of(centroid.values) / n_d;
    if (h_centroid <= 0.0)
        throw DegenerateSeriesError("group centroid is constant");
    const double centroid_mean = detail::mean_of(centroid.values);

    Dataset out = ds;
    NormalizationParams params;
    params.orientation = orientation;

    for (auto& s : out.series) {
        const double h_series = detail::range_of(s.values) / n_d;
        if (h_series <= 0.0)
            throw DegenerateSeriesError("series '" + s.id + "' is constant");
        NormalizationParams::SeriesParams p;
        p.h_centroid = h_centroid;
        p.h_series = h_series;
        p.centroid_mean = centroid_mean;
        p.series_mean = detail::mean_of(s.values);
        for (double& x : s.values) x = p.to_normalized(x, orientation);
        params.per_series.emplace(s.id, p);
    }
    return {std::move(out), std::move(params)};
}

inline std::pair<Dataset, NormalizationParams> normalize(const Dataset& ds,
                                                         Orientation orientation) {
    return normalize(ds, group_centroid(ds), orientation);
}

/// Exact algebraic inverse of normalize, per series id.
inline Dataset denormalize(const Dataset& ds, const NormalizationParams& params) {
    Dataset out = ds;
    for (auto& s : out.series) {
        const auto& p = params.at(s.id);
        for (double& x : s.values) x = p.to_original(x, params.orientation);
    }
    return out;
}

} // namespace immu
