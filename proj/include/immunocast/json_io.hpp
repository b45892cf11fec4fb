#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "immunocast/errors.hpp"
#include "immunocast/genome.hpp"
#include "immunocast/mcsa.hpp"
#include "immunocast/pipeline.hpp"
#include "immunocast/series.hpp"

namespace immu {

using ojson = nlohmann::ordered_json;

namespace detail {

// JSON has no infinity; AFER of an all-invalid model round-trips as null.
inline ojson number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

inline double number_from(const ojson& j) {
    if (j.is_null()) return std::numeric_limits<double>::infinity();
    return j.get<double>();
}

} // namespace detail

inline ojson read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    ojson j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("'" + path + "': invalid JSON: " + e.what());
    }
    return j;
}

inline void write_json(const std::string& path, const ojson& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

inline ojson dataset_to_json(const Dataset& ds) {
    ojson j;
    j["epochs"] = ds.epochs;
    ojson list = ojson::array();
    for (const auto& s : ds.series) {
        ojson row;
        row["id"] = s.id;
        row["label"] = s.label;
        row["unit"] = s.unit;
        row["values"] = s.values;
        list.push_back(std::move(row));
    }
    j["series"] = std::move(list);
    return j;
}

inline Dataset dataset_from_json(const ojson& j) {
    Dataset ds;
    ds.epochs = j.at("epochs").get<std::vector<int>>();
    for (const auto& row : j.at("series")) {
        TimeSeries s;
        s.id = row.at("id").get<std::string>();
        s.label = row.value("label", s.id);
        s.unit = row.value("unit", std::string{});
        s.values = row.at("values").get<std::vector<double>>();
        s.epochs = ds.epochs;
        ds.series.push_back(std::move(s));
    }
    validate(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// Normalization params
// ---------------------------------------------------------------------------

inline ojson params_to_json(const NormalizationParams& params) {
    ojson j;
    j["orientation"] = to_string(params.orientation);
    ojson per = ojson::object();
    for (const auto& [id, p] : params.per_series) {
        ojson rec;
        rec["hS"] = p.h_centroid;
        rec["ht"] = p.h_series;
        rec["S_bar"] = p.centroid_mean;
        rec["t_bar"] = p.series_mean;
        per[id] = std::move(rec);
    }
    j["series"] = std::move(per);
    return j;
}

inline NormalizationParams params_from_json(const ojson& j) {
    NormalizationParams params;
    params.orientation = orientation_from_string(j.at("orientation").get<std::string>());
    for (const auto& [id, rec] : j.at("series").items()) {
        NormalizationParams::SeriesParams p;
        p.h_centroid = rec.at("hS").get<double>();
        p.h_series = rec.at("ht").get<double>();
        p.centroid_mean = rec.at("S_bar").get<double>();
        p.series_mean = rec.at("t_bar").get<double>();
        params.per_series.emplace(id, p);
    }
    return params;
}

// ---------------------------------------------------------------------------
// Partition
// ---------------------------------------------------------------------------

inline ojson partition_to_json(const Partition& p, const ClusterModelSet& models,
                               const std::vector<std::string>& ids) {
    ojson j;
    j["c"] = p.c;
    j["objective"] = models.objective;
    ojson assignment = ojson::object();
    for (std::size_t i = 0; i < ids.size(); ++i)
        assignment[ids[i]] = p.assignment[i] + 1; // 1-based in artifacts
    j["assignment"] = std::move(assignment);
    j["centroids"] = models.centroids;
    j["iterations_used"] = models.iterations_used;
    return j;
}

inline std::pair<Partition, ClusterModelSet>
partition_from_json(const ojson& j, const std::vector<std::string>& ids) {
    Partition p;
    p.c = j.at("c").get<int>();
    const auto& assignment = j.at("assignment");
    for (const auto& id : ids) {
        if (!assignment.contains(id))
            throw Error("partition: no assignment for series '" + id + "'");
        p.assignment.push_back(assignment.at(id).get<int>() - 1);
    }
    ClusterModelSet models;
    models.objective = j.at("objective").get<double>();
    models.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    models.iterations_used = j.value("iterations_used", 0);
    return {std::move(p), std::move(models)};
}

// ---------------------------------------------------------------------------
// Fitted models
// ---------------------------------------------------------------------------

inline ojson model_to_json(const FittedModel& model, const std::string& digest,
                           std::pair<int, int> train_range) {
    ojson j;
    j["template"] = ojson{{"spine_count", model.antibody.tmpl.spine_count}};
    j["string"] = encode(model.antibody);
    j["constants"] = model.antibody.constants;
    j["analytic"] = model.analytic();
    j["order_k"] = model.order();
    j["train_afer"] = detail::number_or_null(model.train_afer);
    j["seed"] = model.seed;
    j["config_digest"] = digest;
    j["train_range"] = ojson{{"from", train_range.first}, {"to", train_range.second}};
    return j;
}

inline FittedModel model_from_json(const ojson& j) {
    FittedModel model;
    model.antibody = antibody_from_string(j.at("string").get<std::string>(),
                                          j.at("constants").get<std::vector<double>>());
    model.train_afer = detail::number_from(j.at("train_afer"));
    model.seed = j.value("seed", std::uint64_t{0});
    return model;
}

// ---------------------------------------------------------------------------
// Forecast report
// ---------------------------------------------------------------------------

inline ojson report_to_json(const ForecastReport& report,
                            const std::vector<std::string>& ids) {
    ojson j;
    j["config_digest"] = report.config_digest;
    j["train_cutoff"] = report.train_cutoff;
    j["horizon"] = report.horizon;
    j["epochs"] = report.epochs;
    j["partition"] = partition_to_json(report.partition, report.clusters, ids);

    const std::pair<int, int> train_range{report.epochs.empty() ? 0 : report.epochs.front(),
                                          report.train_cutoff};
    ojson models = ojson::array();
    for (const auto& m : report.models)
        models.push_back(model_to_json(m, report.config_digest, train_range));
    j["models"] = std::move(models);

    ojson series = ojson::array();
    for (const auto& s : report.series) {
        ojson row;
        row["id"] = s.id;
        row["cluster"] = s.cluster + 1;
        row["model_source"] = s.refined ? "refined" : "general";
        row["train_afer"] = detail::number_or_null(s.train_afer);
        row["general_train_afer"] = detail::number_or_null(s.general_train_afer);
        row["forecasts"] = s.forecasts;
        if (s.invalid_step > 0) row["invalid_step"] = s.invalid_step;
        row["horizon_error"] =
            s.horizon_error ? detail::number_or_null(*s.horizon_error) : ojson(nullptr);
        if (s.refined_model)
            row["model"] = model_to_json(*s.refined_model, report.config_digest, train_range);
        series.push_back(std::move(row));
    }
    j["series"] = std::move(series);
    return j;
}

inline ForecastReport report_from_json(const ojson& j) {
    ForecastReport report;
    report.config_digest = j.value("config_digest", std::string{});
    report.train_cutoff = j.at("train_cutoff").get<int>();
    report.horizon = j.at("horizon").get<int>();
    report.epochs = j.at("epochs").get<std::vector<int>>();

    std::vector<std::string> ids;
    for (const auto& row : j.at("series")) ids.push_back(row.at("id").get<std::string>());
    std::tie(report.partition, report.clusters) = partition_from_json(j.at("partition"), ids);

    for (const auto& m : j.at("models")) report.models.push_back(model_from_json(m));
    for (const auto& row : j.at("series")) {
        SeriesReport s;
        s.id = row.at("id").get<std::string>();
        s.cluster = row.at("cluster").get<int>() - 1;
        s.refined = row.at("model_source").get<std::string>() == "refined";
        s.train_afer = detail::number_from(row.at("train_afer"));
        s.general_train_afer = detail::number_from(row.at("general_train_afer"));
        s.forecasts = row.at("forecasts").get<std::vector<double>>();
        s.invalid_step = row.value("invalid_step", 0);
        if (!row.at("horizon_error").is_null())
            s.horizon_error = row.at("horizon_error").get<double>();
        if (row.contains("model")) s.refined_model = model_from_json(row.at("model"));
        report.series.push_back(std::move(s));
    }
    return report;
}

} // namespace immu
