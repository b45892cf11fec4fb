#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "immunocast/clustering.hpp"
#include "immunocast/errors.hpp"
#include "immunocast/mcsa.hpp"
#include "immunocast/series.hpp"
#include "immunocast/threading.hpp"

namespace immu {

struct PipelineConfig {
    KMeansConfig kmeans;
    McsaConfig mcsa;
    Orientation orientation = Orientation::corrected;
    int horizon = 3;
    double refine_threshold = 2.0; // AFER percent that triggers an individual model
    int train_cutoff = 0;          // last epoch used for fitting
    double epsilon_shift = 0.0;    // constant offset against zero denominators
    std::uint64_t seed = 0;
    std::string config_digest;     // stamped into every artifact

    void validate(const Dataset& ds) const {
        if (horizon < 1) throw Error("pipeline: horizon must be at least 1");
        if (!(refine_threshold > 0)) throw Error("pipeline: refine_threshold must be positive");
        if (ds.epochs.empty() || train_cutoff < ds.epochs.front())
            throw Error("pipeline: train_cutoff " + std::to_string(train_cutoff) +
                        " precedes the dataset epochs");
        std::size_t train_len = 0;
        for (int e : ds.epochs)
            if (e <= train_cutoff) ++train_len;
        const std::size_t needed = static_cast<std::size_t>(mcsa.tmpl.max_order()) + 2;
        if (train_len < needed)
            throw Error("pipeline: train_cutoff leaves " + std::to_string(train_len) +
                        " training points, need at least " + std::to_string(needed));
    }
};

namespace detail {

/// Per-stage child seeds so stages stay independent of each other.
enum : std::uint64_t {
    kSeedKMeans = 11,
    kSeedGeneralFit = 22,
    kSeedRefineFit = 33,
    kSeedRefineVariant = 44,
};

inline Dataset slice_epochs(const Dataset& ds, int cutoff) {
    Dataset out;
    for (std::size_t j = 0; j < ds.epochs.size(); ++j)
        if (ds.epochs[j] <= cutoff) out.epochs.push_back(ds.epochs[j]);
    for (const auto& s : ds.series) {
        TimeSeries t;
        t.id = s.id;
        t.label = s.label;
        t.unit = s.unit;
        t.epochs = out.epochs;
        for (std::size_t j = 0; j < ds.epochs.size(); ++j)
            if (ds.epochs[j] <= cutoff) t.values.push_back(s.values[j]);
        out.series.push_back(std::move(t));
    }
    return out;
}

inline Dataset shift_dataset(const Dataset& ds, double offset) {
    if (offset == 0) return ds;
    Dataset out = ds;
    for (auto& s : out.series)
        for (double& x : s.values) x += offset;
    return out;
}

template <class Fn>
auto with_context(const std::string& context, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ZeroDenominatorError& e) {
        throw ZeroDenominatorError(context + ": " + e.what());
    } catch (const DegenerateSeriesError& e) {
        throw DegenerateSeriesError(context + ": " + e.what());
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw Error(context + ": " + e.what());
    }
}

} // namespace detail

/// Output of the general stage: normalization, clustering, and one MCSA
/// model per cluster centroid.
struct GeneralFitResult {
    Dataset train;       // training-range slice in (shifted) original units
    Dataset normalized;  // training-range slice, normalized
    NormalizationParams params;
    Partition partition;
    ClusterModelSet clusters;
    std::vector<FittedModel> models; // one per cluster
};

/// Steps 1-3 of the method: normalize the training range of the group,
/// cluster the normalized series, and fit a model to every cluster centroid.
inline GeneralFitResult fit_general_models(const Dataset& ds, const PipelineConfig& cfg,
                                           std::vector<McsaLog>* logs = nullptr) {
    validate(ds);
    cfg.validate(ds);

    GeneralFitResult out;
    out.train = detail::slice_epochs(detail::shift_dataset(ds, cfg.epsilon_shift),
                                     cfg.train_cutoff);
    std::tie(out.normalized, out.params) = normalize(out.train, cfg.orientation);

    KMeansConfig kcfg = cfg.kmeans;
    kcfg.seed = derive_seed(cfg.seed, detail::kSeedKMeans);
    std::tie(out.partition, out.clusters) = detail::with_context(
        "cluster", [&] { return kmeans(out.normalized, kcfg); });

    const std::size_t c = out.clusters.centroids.size();
    out.models.resize(c);
    if (logs) logs->resize(c);
    parallel_for(c, [&](std::size_t r) {
        McsaConfig mcfg = cfg.mcsa;
        mcfg.seed = derive_seed(cfg.seed, detail::kSeedGeneralFit, r);
        out.models[r] = detail::with_context(
            "fit cluster " + std::to_string(r + 1), [&] {
                return mcsa_run(out.clusters.centroids[r], mcfg, {},
                                logs ? &(*logs)[r] : nullptr);
            });
    });
    return out;
}

/// Forecast values for one series, with the step that went invalid (1-based)
/// when evaluation left the model's domain.
struct ForecastOutcome {
    std::vector<double> values; // original units
    int invalid_step = 0;       // 0 = all steps valid
};

/// Iterated one-step-ahead forecasting in normalized space: each step's
/// output joins the lag window for the next. Results are mapped back to the
/// series' original units through its affine normalization record.
inline ForecastOutcome forecast_series(const TimeSeries& series, const FittedModel& model,
                                       const NormalizationParams& params, int horizon) {
    const int k = model.order();
    if (series.values.size() < static_cast<std::size_t>(k))
        throw Error("forecast: series '" + series.id + "' is shorter than model order " +
                    std::to_string(k));
    const auto& p = params.at(series.id);
    const ExpressionTree tree = build_tree(model.antibody);

    std::vector<double> window(static_cast<std::size_t>(k));
    for (int q = 0; q < k; ++q)
        window[static_cast<std::size_t>(q)] = p.to_normalized(
            series.values[series.values.size() - 1 - static_cast<std::size_t>(q)],
            params.orientation);

    ForecastOutcome out;
    for (int step = 1; step <= horizon; ++step) {
        const std::optional<double> f = evaluate(tree, window);
        if (!f) {
            out.invalid_step = step;
            break;
        }
        out.values.push_back(p.to_original(*f, params.orientation));
        for (std::size_t q = window.size(); q-- > 1;) window[q] = window[q - 1];
        window[0] = *f;
    }
    return out;
}

struct SeriesReport {
    std::string id;
    int cluster = 0; // 0-based
    bool refined = false;
    double general_train_afer = std::numeric_limits<double>::infinity();
    double train_afer = std::numeric_limits<double>::infinity(); // active model
    std::optional<FittedModel> refined_model;
    std::vector<double> forecasts; // original units
    int invalid_step = 0;
    std::optional<double> horizon_error; // percent, when holdout facts exist
};

struct ForecastReport {
    std::string config_digest;
    int train_cutoff = 0;
    int horizon = 0;
    std::vector<int> epochs; // full dataset epochs
    Partition partition;
    ClusterModelSet clusters;
    std::vector<FittedModel> models; // general, one per cluster
    std::vector<SeriesReport> series;

    int refined_count() const {
        int n = 0;
        for (const auto& s : series) n += s.refined ? 1 : 0;
        return n;
    }
};

/// Total MCSA runs behind a report: one per cluster plus one per refined
/// series. The method's cost advantage is exactly this count staying below m.
inline int count_model_fits(const ForecastReport& report) {
    return report.partition.c + report.refined_count();
}

namespace detail {

inline std::optional<double> mean_relative_error(std::span<const double> facts,
                                                 std::span<const double> forecasts) {
    const std::size_t n = std::min(facts.size(), forecasts.size());
    if (n == 0) return std::nullopt;
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs((forecasts[i] - facts[i]) / facts[i]);
    return sum * 100.0 / static_cast<double>(n);
}

} // namespace detail

/// Step 4 plus the improvement pass: score every private series under its
/// cluster model, refit the ones above the threshold (warm-started from the
/// general antibody), and assemble the report with forecasts and holdout
/// errors in true original units.
inline ForecastReport refine(const Dataset& ds, const GeneralFitResult& general,
                             const PipelineConfig& cfg,
                             std::vector<McsaLog>* refine_logs = nullptr) {
    const std::size_t m = ds.count();
    ForecastReport report;
    report.config_digest = cfg.config_digest;
    report.train_cutoff = cfg.train_cutoff;
    report.horizon = cfg.horizon;
    report.epochs = ds.epochs;
    report.partition = general.partition;
    report.clusters = general.clusters;
    report.models = general.models;
    report.series.resize(m);
    if (refine_logs) refine_logs->resize(m);

    const int n_sel = cfg.mcsa.selection_count();

    parallel_for(m, [&](std::size_t i) {
        const TimeSeries& train_series = general.train.series[i];
        const TimeSeries& norm_series = general.normalized.series[i];
        const auto r = static_cast<std::size_t>(general.partition.assignment[i]);
        const FittedModel& general_model = general.models[r];

        SeriesReport row;
        row.id = train_series.id;
        row.cluster = static_cast<int>(r);
        row.general_train_afer = detail::with_context(
            "score series '" + train_series.id + "'", [&] {
                return antibody_affinity(general_model.antibody, norm_series.values);
            });
        row.train_afer = row.general_train_afer;

        const FittedModel* active = &general_model;
        if (row.general_train_afer > cfg.refine_threshold) {
            McsaConfig mcfg = cfg.mcsa;
            mcfg.seed = derive_seed(cfg.seed, detail::kSeedRefineFit, i);
            std::vector<Antibody> seeds;
            seeds.push_back(general_model.antibody);
            for (int v = 1; v < mcfg.population_size; ++v) {
                Rng rng = derive_rng(cfg.seed, detail::kSeedRefineVariant, i,
                                     static_cast<std::uint64_t>(v));
                seeds.push_back(hypermutate(general_model.antibody, (v - 1) % n_sel + 1,
                                            n_sel, mcfg, rng));
            }
            FittedModel refit = detail::with_context(
                "refine series '" + train_series.id + "'", [&] {
                    return mcsa_run(norm_series.values, mcfg, seeds,
                                    refine_logs ? &(*refine_logs)[i] : nullptr);
                });
            // Only a strict improvement replaces the general model.
            if (refit.train_afer < row.general_train_afer) {
                row.refined = true;
                row.train_afer = refit.train_afer;
                row.refined_model = std::move(refit);
                active = &*row.refined_model;
            }
        }

        const ForecastOutcome outcome = detail::with_context(
            "forecast series '" + train_series.id + "'", [&] {
                return forecast_series(train_series, *active, general.params, cfg.horizon);
            });
        row.invalid_step = outcome.invalid_step;
        row.forecasts = outcome.values;
        for (double& f : row.forecasts) f -= cfg.epsilon_shift;

        // Holdout facts in true original units (the input was never shifted).
        std::vector<double> facts;
        const TimeSeries& full = ds.series[i];
        for (std::size_t j = 0; j < ds.epochs.size() && facts.size() <
                                    static_cast<std::size_t>(cfg.horizon); ++j)
            if (ds.epochs[j] > cfg.train_cutoff) facts.push_back(full.values[j]);
        row.horizon_error = detail::mean_relative_error(facts, row.forecasts);

        report.series[i] = std::move(row);
    });
    return report;
}

/// Convenience wrapper: the whole method in one call.
inline ForecastReport run_pipeline(const Dataset& ds, const PipelineConfig& cfg,
                                   GeneralFitResult* general_out = nullptr,
                                   std::vector<McsaLog>* fit_logs = nullptr,
                                   std::vector<McsaLog>* refine_logs = nullptr) {
    GeneralFitResult general = fit_general_models(ds, cfg, fit_logs);
    ForecastReport report = refine(ds, general, cfg, refine_logs);
    if (general_out) *general_out = std::move(general);
    return report;
}

} // namespace immu
