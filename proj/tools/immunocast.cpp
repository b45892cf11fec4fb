// immunocast: forecasting for groups of related time series.
// Ingests a wide CSV, normalizes against the group centroid, clusters with a
// recency-weighted k-means, evolves one symbolic model per cluster centroid,
// forecasts every series and refines the under-performers.

#include <cctype>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "immunocast/csv.hpp"
#include "immunocast/json_io.hpp"
#include "immunocast/pipeline.hpp"

namespace fs = std::filesystem;
using namespace immu;

namespace {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string input;
    std::string workspace = "workspace";
    std::string orientation = "corrected";
    std::string interpolate = "none"; // none | linear
    int clusters = 4;
    int horizon = 3;
    int train_cutoff = 0; // 0 = use the last epoch (no holdout)
    double refine_threshold = 2.0;
    double epsilon_shift = 0.0;
    std::uint64_t seed = 0;

    double kmeans_epsilon = 1e-9;
    int kmeans_max_iterations = 300;
    int kmeans_restarts = 10;
    std::string kmeans_init = "plusplus"; // plusplus | random_partition

    int mcsa_population = 20;
    int mcsa_iterations = 600;
    double mcsa_cloning = 0.3;
    double mcsa_reproduction = 0.8;
    double mcsa_mutation_min = 0.05;
    double mcsa_mutation_max = 0.4;
    double mcsa_constant_sigma = 0.1;
    double mcsa_similarity_tol = 1e-3;
    int mcsa_stagnation_window = 0;
    int spine_count = 3;
    double constant_min = -250.0;
    double constant_max = 250.0;

    bool fit_logs = false;
    bool verbose = false;
    bool force = false;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Canonical key=value rendering of everything that affects results.
/// Workspace location and output toggles are deliberately left out.
std::string canonical_config(const RunConfig& c) {
    std::ostringstream os;
    os << "clusters=" << c.clusters << '\n'
       << "constant_max=" << format_double(c.constant_max) << '\n'
       << "constant_min=" << format_double(c.constant_min) << '\n'
       << "epsilon_shift=" << format_double(c.epsilon_shift) << '\n'
       << "horizon=" << c.horizon << '\n'
       << "input=" << c.input << '\n'
       << "interpolate=" << c.interpolate << '\n'
       << "kmeans_epsilon=" << format_double(c.kmeans_epsilon) << '\n'
       << "kmeans_init=" << c.kmeans_init << '\n'
       << "kmeans_max_iterations=" << c.kmeans_max_iterations << '\n'
       << "kmeans_restarts=" << c.kmeans_restarts << '\n'
       << "mcsa_cloning=" << format_double(c.mcsa_cloning) << '\n'
       << "mcsa_constant_sigma=" << format_double(c.mcsa_constant_sigma) << '\n'
       << "mcsa_iterations=" << c.mcsa_iterations << '\n'
       << "mcsa_mutation_max=" << format_double(c.mcsa_mutation_max) << '\n'
       << "mcsa_mutation_min=" << format_double(c.mcsa_mutation_min) << '\n'
       << "mcsa_population=" << c.mcsa_population << '\n'
       << "mcsa_reproduction=" << format_double(c.mcsa_reproduction) << '\n'
       << "mcsa_similarity_tol=" << format_double(c.mcsa_similarity_tol) << '\n'
       << "mcsa_stagnation_window=" << c.mcsa_stagnation_window << '\n'
       << "orientation=" << c.orientation << '\n'
       << "refine_threshold=" << format_double(c.refine_threshold) << '\n'
       << "seed=" << c.seed << '\n'
       << "spine_count=" << c.spine_count << '\n'
       << "train_cutoff=" << c.train_cutoff << '\n';
    return os.str();
}

std::string fnv1a64_hex(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::string config_digest(const RunConfig& c) { return fnv1a64_hex(canonical_config(c)); }

// ---------------------------------------------------------------------------
// Config file (flat key = value lines, # comments)
// ---------------------------------------------------------------------------

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string trimmed = immu::detail::trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError(
                "--config", path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = immu::detail::trim(trimmed.substr(0, eq));
        std::string value = immu::detail::trim(trimmed.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        kv[key] = value;
    }
    return kv;
}

template <class T>
T parse_value(const std::string& key, const std::string& value);

template <>
int parse_value<int>(const std::string& key, const std::string& value) {
    auto v = immu::detail::parse_int(value);
    if (!v) throw CLI::ValidationError("--config", key + ": '" + value + "' is not an integer");
    return *v;
}

template <>
double parse_value<double>(const std::string& key, const std::string& value) {
    auto v = immu::detail::parse_double(value);
    if (!v) throw CLI::ValidationError("--config", key + ": '" + value + "' is not a number");
    return *v;
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (...) {
        throw CLI::ValidationError("--config", key + ": '" + value + "' is not an integer");
    }
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw CLI::ValidationError("--config", key + ": '" + value + "' is not a boolean");
}

void apply_config_file(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "input") cfg.input = value;
        else if (key == "workspace") cfg.workspace = value;
        else if (key == "orientation") cfg.orientation = value;
        else if (key == "interpolate") cfg.interpolate = value;
        else if (key == "clusters") cfg.clusters = parse_value<int>(key, value);
        else if (key == "horizon") cfg.horizon = parse_value<int>(key, value);
        else if (key == "train_cutoff") cfg.train_cutoff = parse_value<int>(key, value);
        else if (key == "refine_threshold") cfg.refine_threshold = parse_value<double>(key, value);
        else if (key == "epsilon_shift") cfg.epsilon_shift = parse_value<double>(key, value);
        else if (key == "seed") cfg.seed = parse_value<std::uint64_t>(key, value);
        else if (key == "kmeans_epsilon") cfg.kmeans_epsilon = parse_value<double>(key, value);
        else if (key == "kmeans_max_iterations")
            cfg.kmeans_max_iterations = parse_value<int>(key, value);
        else if (key == "kmeans_restarts") cfg.kmeans_restarts = parse_value<int>(key, value);
        else if (key == "kmeans_init") cfg.kmeans_init = value;
        else if (key == "mcsa_population") cfg.mcsa_population = parse_value<int>(key, value);
        else if (key == "mcsa_iterations") cfg.mcsa_iterations = parse_value<int>(key, value);
        else if (key == "mcsa_cloning") cfg.mcsa_cloning = parse_value<double>(key, value);
        else if (key == "mcsa_reproduction")
            cfg.mcsa_reproduction = parse_value<double>(key, value);
        else if (key == "mcsa_mutation_min")
            cfg.mcsa_mutation_min = parse_value<double>(key, value);
        else if (key == "mcsa_mutation_max")
            cfg.mcsa_mutation_max = parse_value<double>(key, value);
        else if (key == "mcsa_constant_sigma")
            cfg.mcsa_constant_sigma = parse_value<double>(key, value);
        else if (key == "mcsa_similarity_tol")
            cfg.mcsa_similarity_tol = parse_value<double>(key, value);
        else if (key == "mcsa_stagnation_window")
            cfg.mcsa_stagnation_window = parse_value<int>(key, value);
        else if (key == "spine_count") cfg.spine_count = parse_value<int>(key, value);
        else if (key == "constant_min") cfg.constant_min = parse_value<double>(key, value);
        else if (key == "constant_max") cfg.constant_max = parse_value<double>(key, value);
        else if (key == "fit_logs") cfg.fit_logs = parse_value<bool>(key, value);
        else if (key == "verbose") cfg.verbose = parse_value<bool>(key, value);
        else throw CLI::ValidationError("--config", "unknown key '" + key + "'");
    }
}

// ---------------------------------------------------------------------------
// CLI option plumbing
// ---------------------------------------------------------------------------

/// Everything the flags may override; optionals so the config file keeps
/// precedence only where no flag was given.
struct CliValues {
    std::optional<std::string> config;
    std::optional<std::string> input, workspace, orientation, interpolate, kmeans_init;
    std::optional<int> clusters, horizon, train_cutoff;
    std::optional<int> kmeans_max_iterations, kmeans_restarts;
    std::optional<int> mcsa_population, mcsa_iterations, mcsa_stagnation_window, spine_count;
    std::optional<double> refine_threshold, epsilon_shift, kmeans_epsilon;
    std::optional<double> mcsa_cloning, mcsa_reproduction, mcsa_mutation_min,
        mcsa_mutation_max, mcsa_constant_sigma, mcsa_similarity_tol;
    std::optional<double> constant_min, constant_max;
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    bool force = false;
    bool fit_logs = false;

    // eval-expr
    std::string expr;
    std::string constants_csv;
    std::string window_csv;

    // sweep
    int sweep_min = 1;
    int sweep_max = 0;
};

void add_common_options(CLI::App* cmd, CliValues& v) {
    cmd->add_option("--config", v.config, "Key = value config file");
    cmd->add_option("--seed", v.seed, "Master RNG seed");
    cmd->add_option("--workspace", v.workspace, "Workspace directory for artifacts");
    cmd->add_flag("--verbose", v.verbose, "Chatty progress on stderr");
    cmd->add_flag("--force", v.force, "Ignore config-digest mismatches in the workspace");
}

void add_pipeline_options(CLI::App* cmd, CliValues& v) {
    cmd->add_option("--input", v.input, "Input wide CSV");
    cmd->add_option("--interpolate", v.interpolate, "Missing cells: none or linear");
    cmd->add_option("--orientation", v.orientation, "Normalization: corrected or paper");
    cmd->add_option("--clusters", v.clusters, "Cluster count c");
    cmd->add_option("--horizon", v.horizon, "Forecast steps");
    cmd->add_option("--train-cutoff", v.train_cutoff, "Last epoch used for fitting");
    cmd->add_option("--refine-threshold", v.refine_threshold,
                    "AFER percent that triggers an individual model");
    cmd->add_option("--epsilon-shift", v.epsilon_shift,
                    "Constant offset added before fitting (removed on report) to "
                    "avoid zero denominators");
    cmd->add_option("--kmeans-epsilon", v.kmeans_epsilon, "k-means convergence tolerance");
    cmd->add_option("--kmeans-max-iterations", v.kmeans_max_iterations, "k-means iteration cap");
    cmd->add_option("--kmeans-restarts", v.kmeans_restarts, "k-means restarts");
    cmd->add_option("--kmeans-init", v.kmeans_init, "k-means init: plusplus or random_partition");
    cmd->add_option("--population", v.mcsa_population, "MCSA population size");
    cmd->add_option("--iterations", v.mcsa_iterations, "MCSA iterations");
    cmd->add_option("--cloning", v.mcsa_cloning, "MCSA cloning coefficient");
    cmd->add_option("--reproduction", v.mcsa_reproduction, "MCSA reproduction coefficient");
    cmd->add_option("--mutation-min", v.mcsa_mutation_min, "Per-locus mutation floor");
    cmd->add_option("--mutation-max", v.mcsa_mutation_max, "Per-locus mutation ceiling");
    cmd->add_option("--constant-sigma", v.mcsa_constant_sigma, "Relative constant step");
    cmd->add_option("--similarity-tol", v.mcsa_similarity_tol,
                    "Relative constant tolerance for suppression");
    cmd->add_option("--stagnation-window", v.mcsa_stagnation_window,
                    "Early stop after this many iterations without improvement (0 = off)");
    cmd->add_option("--spine-count", v.spine_count, "Template spine size s");
    cmd->add_option("--constant-min", v.constant_min, "Constant range lower bound");
    cmd->add_option("--constant-max", v.constant_max, "Constant range upper bound");
    cmd->add_flag("--fit-logs", v.fit_logs, "Write per-iteration fit logs");
}

RunConfig resolve_config(const CliValues& v) {
    RunConfig cfg;
    if (v.config) apply_config_file(cfg, parse_config_file(*v.config));
    if (v.input) cfg.input = *v.input;
    if (v.workspace) cfg.workspace = *v.workspace;
    if (v.orientation) cfg.orientation = *v.orientation;
    if (v.interpolate) cfg.interpolate = *v.interpolate;
    if (v.clusters) cfg.clusters = *v.clusters;
    if (v.horizon) cfg.horizon = *v.horizon;
    if (v.train_cutoff) cfg.train_cutoff = *v.train_cutoff;
    if (v.refine_threshold) cfg.refine_threshold = *v.refine_threshold;
    if (v.epsilon_shift) cfg.epsilon_shift = *v.epsilon_shift;
    if (v.seed) cfg.seed = *v.seed;
    if (v.kmeans_epsilon) cfg.kmeans_epsilon = *v.kmeans_epsilon;
    if (v.kmeans_max_iterations) cfg.kmeans_max_iterations = *v.kmeans_max_iterations;
    if (v.kmeans_restarts) cfg.kmeans_restarts = *v.kmeans_restarts;
    if (v.kmeans_init) cfg.kmeans_init = *v.kmeans_init;
    if (v.mcsa_population) cfg.mcsa_population = *v.mcsa_population;
    if (v.mcsa_iterations) cfg.mcsa_iterations = *v.mcsa_iterations;
    if (v.mcsa_cloning) cfg.mcsa_cloning = *v.mcsa_cloning;
    if (v.mcsa_reproduction) cfg.mcsa_reproduction = *v.mcsa_reproduction;
    if (v.mcsa_mutation_min) cfg.mcsa_mutation_min = *v.mcsa_mutation_min;
    if (v.mcsa_mutation_max) cfg.mcsa_mutation_max = *v.mcsa_mutation_max;
    if (v.mcsa_constant_sigma) cfg.mcsa_constant_sigma = *v.mcsa_constant_sigma;
    if (v.mcsa_similarity_tol) cfg.mcsa_similarity_tol = *v.mcsa_similarity_tol;
    if (v.mcsa_stagnation_window) cfg.mcsa_stagnation_window = *v.mcsa_stagnation_window;
    if (v.spine_count) cfg.spine_count = *v.spine_count;
    if (v.constant_min) cfg.constant_min = *v.constant_min;
    if (v.constant_max) cfg.constant_max = *v.constant_max;
    if (v.verbose) cfg.verbose = true;
    if (v.force) cfg.force = true;
    if (v.fit_logs) cfg.fit_logs = true;
    if (cfg.interpolate != "none" && cfg.interpolate != "linear")
        throw CLI::ValidationError("--interpolate", "must be 'none' or 'linear'");
    if (cfg.kmeans_init != "plusplus" && cfg.kmeans_init != "random_partition")
        throw CLI::ValidationError("--kmeans-init", "must be 'plusplus' or 'random_partition'");
    orientation_from_string(cfg.orientation); // validates
    return cfg;
}

// ---------------------------------------------------------------------------
// Workspace
// ---------------------------------------------------------------------------

struct Workspace {
    fs::path root;

    fs::path dataset() const { return root / "dataset.json"; }
    fs::path normalized() const { return root / "normalized.json"; }
    fs::path params() const { return root / "norm_params.json"; }
    fs::path partition() const { return root / "partition.json"; }
    fs::path models_dir() const { return root / "models"; }
    fs::path general_model(std::size_t r) const {
        return models_dir() / ("general_" + std::to_string(r + 1) + ".json");
    }
    fs::path report() const { return root / "report.json"; }
    fs::path plots_dir() const { return root / "plots"; }
    fs::path fitlogs_dir() const { return root / "fitlogs"; }
};

std::string sanitize_filename(const std::string& id) {
    std::string out;
    for (char ch : id)
        out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ||
                ch == '_')
                   ? ch
                   : '_';
    return out;
}

void save_artifact(const fs::path& path, const ojson& body, const std::string& digest) {
    fs::create_directories(path.parent_path());
    ojson out;
    out["config_digest"] = digest;
    for (const auto& [key, value] : body.items()) out[key] = value;
    write_json(path.string(), out);
}

ojson load_artifact(const fs::path& path, const std::string& digest, bool force,
                    const std::string& hint) {
    if (!fs::exists(path))
        throw Error("missing artifact '" + path.string() + "' (run `" + hint + "` first)");
    ojson j = read_json(path.string());
    const std::string found = j.value("config_digest", std::string{});
    if (!force && !found.empty() && found != digest)
        throw Error("artifact '" + path.string() + "' carries config digest " + found +
                    " but the current config digest is " + digest +
                    " (rerun earlier stages or pass --force)");
    return j;
}

void refuse_mixed_workspace(const Workspace& ws, const std::string& digest, bool force) {
    if (force) return;
    for (const fs::path& p : {ws.dataset(), ws.normalized(), ws.params(), ws.partition(),
                              ws.report()}) {
        if (!fs::exists(p)) continue;
        ojson j = read_json(p.string());
        const std::string found = j.value("config_digest", std::string{});
        if (!found.empty() && found != digest)
            throw Error("workspace '" + ws.root.string() + "' holds artifacts from config " +
                        found + ", current config is " + digest +
                        " (pass --force to overwrite)");
    }
}

// ---------------------------------------------------------------------------
// Shared stage helpers
// ---------------------------------------------------------------------------

int resolve_cutoff(const RunConfig& cfg, const Dataset& ds) {
    return cfg.train_cutoff == 0 ? ds.epochs.back() : cfg.train_cutoff;
}

PipelineConfig make_pipeline_config(const RunConfig& cfg, int cutoff) {
    PipelineConfig p;
    p.kmeans.c = cfg.clusters;
    p.kmeans.epsilon = cfg.kmeans_epsilon;
    p.kmeans.max_iterations = cfg.kmeans_max_iterations;
    p.kmeans.restarts = cfg.kmeans_restarts;
    p.kmeans.init = cfg.kmeans_init == "plusplus" ? KMeansInit::plusplus
                                                  : KMeansInit::random_partition;
    p.mcsa.population_size = cfg.mcsa_population;
    p.mcsa.iterations = cfg.mcsa_iterations;
    p.mcsa.cloning_coefficient = cfg.mcsa_cloning;
    p.mcsa.reproduction_coefficient = cfg.mcsa_reproduction;
    p.mcsa.mutation_min = cfg.mcsa_mutation_min;
    p.mcsa.mutation_max = cfg.mcsa_mutation_max;
    p.mcsa.constant_sigma = cfg.mcsa_constant_sigma;
    p.mcsa.similarity_constant_tol = cfg.mcsa_similarity_tol;
    p.mcsa.stagnation_window = cfg.mcsa_stagnation_window;
    p.mcsa.tmpl.spine_count = cfg.spine_count;
    p.mcsa.constant_range = {cfg.constant_min, cfg.constant_max};
    p.orientation = orientation_from_string(cfg.orientation);
    p.horizon = cfg.horizon;
    p.refine_threshold = cfg.refine_threshold;
    p.train_cutoff = cutoff;
    p.epsilon_shift = cfg.epsilon_shift;
    p.seed = cfg.seed;
    p.config_digest = config_digest(cfg);
    return p;
}

Dataset load_dataset(const Workspace& ws, const std::string& digest, bool force) {
    return dataset_from_json(load_artifact(ws.dataset(), digest, force, "immunocast ingest"));
}

void print_warnings(const Dataset& ds) {
    for (const std::string& w : collect_warnings(ds)) std::cerr << "warning: " << w << "\n";
}

void write_fit_logs(const fs::path& dir, const std::string& stem, const McsaLog& log) {
    fs::create_directories(dir);
    std::ofstream out(dir / (stem + ".csv"));
    out << "iteration,best_afer,mean_afer,invalid_count\n";
    for (const auto& row : log)
        out << row.iteration << ',' << format_double(row.best_afer) << ','
            << format_double(row.mean_afer) << ',' << row.invalid_count << "\n";
}

void write_plot_csvs(const Workspace& ws, const Dataset& ds, const ForecastReport& report) {
    fs::create_directories(ws.plots_dir());
    // Epoch labels for forecast steps: holdout epochs first, then extrapolate
    // with the trailing epoch spacing.
    const auto& epochs = ds.epochs;
    const int spacing = epochs.size() >= 2
                            ? epochs[epochs.size() - 1] - epochs[epochs.size() - 2]
                            : 1;
    for (std::size_t i = 0; i < report.series.size(); ++i) {
        const SeriesReport& row = report.series[i];
        const TimeSeries& s = ds.series[i];
        std::ofstream out(ws.plots_dir() / (sanitize_filename(row.id) + ".csv"));
        out << "epoch,fact,forecast\n";
        std::size_t step = 0; // index into row.forecasts
        for (std::size_t j = 0; j < epochs.size(); ++j) {
            out << epochs[j] << ',' << format_double(s.values[j]) << ',';
            if (epochs[j] > report.train_cutoff && step < row.forecasts.size())
                out << format_double(row.forecasts[step++]);
            out << "\n";
        }
        int next_epoch = epochs.back();
        while (step < row.forecasts.size()) {
            next_epoch += spacing;
            out << next_epoch << ",," << format_double(row.forecasts[step++]) << "\n";
        }
    }
}

void print_report_summary(const ForecastReport& report) {
    std::printf("id,cluster,model_source,train_afer,horizon_error\n");
    for (const auto& s : report.series) {
        std::printf("%s,%d,%s,%s,%s\n", s.id.c_str(), s.cluster + 1,
                    s.refined ? "refined" : "general", format_double(s.train_afer).c_str(),
                    s.horizon_error ? format_double(*s.horizon_error).c_str() : "");
    }
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    if (csv.empty()) return out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto v = immu::detail::parse_double(immu::detail::trim(item));
        if (!v) throw CLI::ValidationError(what, "'" + item + "' is not a number");
        out.push_back(*v);
    }
    return out;
}

/// Rebuild the general stage from workspace artifacts.
GeneralFitResult load_general(const Workspace& ws, const RunConfig& cfg,
                              const std::string& digest, const Dataset& ds,
                              const PipelineConfig& pcfg) {
    GeneralFitResult general;
    general.train = immu::detail::slice_epochs(
        immu::detail::shift_dataset(ds, pcfg.epsilon_shift), pcfg.train_cutoff);
    general.normalized = dataset_from_json(
        load_artifact(ws.normalized(), digest, cfg.force, "immunocast normalize"));
    general.params = params_from_json(
        load_artifact(ws.params(), digest, cfg.force, "immunocast normalize"));
    std::vector<std::string> ids;
    for (const auto& s : ds.series) ids.push_back(s.id);
    std::tie(general.partition, general.clusters) = partition_from_json(
        load_artifact(ws.partition(), digest, cfg.force, "immunocast cluster"), ids);
    for (std::size_t r = 0; r < general.clusters.centroids.size(); ++r)
        general.models.push_back(model_from_json(
            load_artifact(ws.general_model(r), digest, cfg.force, "immunocast fit")));
    return general;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_ingest(const RunConfig& cfg) {
    if (cfg.input.empty()) throw Error("ingest: no --input CSV given");
    IngestOptions opts;
    opts.interpolate_linear = cfg.interpolate == "linear";
    const Dataset ds = ingest_csv(cfg.input, opts);
    print_warnings(ds);
    const Workspace ws{cfg.workspace};
    refuse_mixed_workspace(ws, config_digest(cfg), cfg.force);
    save_artifact(ws.dataset(), dataset_to_json(ds), config_digest(cfg));
    if (cfg.verbose)
        std::cerr << "ingested " << ds.count() << " series x " << ds.length() << " epochs\n";
}

void cmd_normalize(const RunConfig& cfg) {
    const Workspace ws{cfg.workspace};
    const std::string digest = config_digest(cfg);
    const Dataset ds = load_dataset(ws, digest, cfg.force);
    const int cutoff = resolve_cutoff(cfg, ds);
    const PipelineConfig pcfg = make_pipeline_config(cfg, cutoff);
    pcfg.validate(ds);
    const Dataset train = immu::detail::slice_epochs(
        immu::detail::shift_dataset(ds, pcfg.epsilon_shift), cutoff);
    auto [normalized, params] = normalize(train, pcfg.orientation);
    save_artifact(ws.normalized(), dataset_to_json(normalized), digest);
    save_artifact(ws.params(), params_to_json(params), digest);
}

void cmd_cluster(const RunConfig& cfg) {
    const Workspace ws{cfg.workspace};
    const std::string digest = config_digest(cfg);
    const Dataset normalized = dataset_from_json(
        load_artifact(ws.normalized(), digest, cfg.force, "immunocast normalize"));
    const PipelineConfig pcfg = make_pipeline_config(cfg, 0);
    KMeansConfig kcfg = pcfg.kmeans;
    kcfg.seed = derive_seed(pcfg.seed, immu::detail::kSeedKMeans);
    auto [partition, clusters] = kmeans(normalized, kcfg);
    std::vector<std::string> ids;
    for (const auto& s : normalized.series) ids.push_back(s.id);
    save_artifact(ws.partition(), partition_to_json(partition, clusters, ids), digest);
}

void cmd_sweep(const RunConfig& cfg, int c_lo, int c_hi) {
    const Workspace ws{cfg.workspace};
    const std::string digest = config_digest(cfg);
    Dataset normalized;
    if (fs::exists(ws.normalized())) {
        normalized = dataset_from_json(
            load_artifact(ws.normalized(), digest, cfg.force, "immunocast normalize"));
    } else {
        const Dataset ds = load_dataset(ws, digest, cfg.force);
        const int cutoff = resolve_cutoff(cfg, ds);
        const Dataset train = immu::detail::slice_epochs(
            immu::detail::shift_dataset(ds, cfg.epsilon_shift), cutoff);
        normalized = normalize(train, orientation_from_string(cfg.orientation)).first;
    }
    if (c_hi == 0) c_hi = static_cast<int>(normalized.count());
    KMeansConfig kcfg = make_pipeline_config(cfg, 0).kmeans;
    kcfg.seed = derive_seed(cfg.seed, immu::detail::kSeedKMeans);
    const auto rows = sweep_clusters(normalized, c_lo, c_hi, kcfg);
    std::printf("c,objective,assignment_digest\n");
    for (const auto& row : rows) {
        std::string canon;
        const auto assignment = canonical_assignment(row.partition);
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            canon += normalized.series[i].id;
            canon += ':';
            canon += std::to_string(assignment[i]);
            canon += ';';
        }
        std::printf("%d,%s,%s\n", row.c, format_double(row.objective).c_str(),
                    fnv1a64_hex(canon).c_str());
    }
}

void cmd_fit(const RunConfig& cfg) {
    const Workspace ws{cfg.workspace};
    const std::string digest = config_digest(cfg);
    const Dataset ds = load_dataset(ws, digest, cfg.force);
    const int cutoff = resolve_cutoff(cfg, ds);
    const PipelineConfig pcfg = make_pipeline_config(cfg, cutoff);
    const Dataset normalized = dataset_from_json(
        load_artifact(ws.normalized(), digest, cfg.force, "immunocast normalize"));
    std::vector<std::string> ids;
    for (const auto& s : normalized.series) ids.push_back(s.id);
    auto [partition, clusters] = partition_from_json(
        load_artifact(ws.partition(), digest, cfg.force, "immunocast cluster"), ids);

    std::vector<FittedModel> models(clusters.centroids.size());
    std::vector<McsaLog> logs(clusters.centroids.size());
    parallel_for(models.size(), [&](std::size_t r) {
        McsaConfig mcfg = pcfg.mcsa;
        mcfg.seed = derive_seed(pcfg.seed, immu::detail::kSeedGeneralFit, r);
        models[r] = immu::detail::with_context(
            "fit cluster " + std::to_string(r + 1), [&] {
                return mcsa_run(clusters.centroids[r], mcfg, {},
                                cfg.fit_logs ? &logs[r] : nullptr);
            });
    });
    for (std::size_t r = 0; r < models.size(); ++r) {
        save_artifact(ws.general_model(r),
                      model_to_json(models[r], digest, {ds.epochs.front(), cutoff}), digest);
        if (cfg.fit_logs)
            write_fit_logs(ws.fitlogs_dir(), "general_" + std::to_string(r + 1), logs[r]);
    }
}

void run_refine_stage(const RunConfig& cfg, double threshold, bool write_refined_models) {
    const Workspace ws{cfg.workspace};
    const std::string digest = config_digest(cfg);
    const Dataset ds = load_dataset(ws, digest, cfg.force);
    const int cutoff = resolve_cutoff(cfg, ds);
    PipelineConfig pcfg = make_pipeline_config(cfg, cutoff);
    pcfg.refine_threshold = threshold;
    pcfg.validate(ds);
    const GeneralFitResult general = load_general(ws, cfg, digest, ds, pcfg);

    std::vector<McsaLog> refine_logs;
    const ForecastReport report =
        refine(ds, general, pcfg, cfg.fit_logs ? &refine_logs : nullptr);

    std::vector<std::string> ids;
    for (const auto& s : ds.series) ids.push_back(s.id);
    write_json(ws.report().string(), report_to_json(report, ids));
    write_plot_csvs(ws, ds, report);
    if (write_refined_models)
        for (const auto& row : report.series)
            if (row.refined_model)
                save_artifact(ws.models_dir() / ("refined_" + sanitize_filename(row.id) +
                                                 ".json"),
                              model_to_json(*row.refined_model, digest,
                                            {ds.epochs.front(), cutoff}),
                              digest);
    if (cfg.fit_logs)
        for (std::size_t i = 0; i < refine_logs.size(); ++i)
            if (!refine_logs[i].empty())
                write_fit_logs(ws.fitlogs_dir(),
                               "refined_" + sanitize_filename(ds.series[i].id),
                               refine_logs[i]);
    print_report_summary(report);
}

void cmd_forecast(const RunConfig& cfg) {
    run_refine_stage(cfg, std::numeric_limits<double>::infinity(), false);
}

void cmd_refine(const RunConfig& cfg) {
    run_refine_stage(cfg, cfg.refine_threshold, true);
}

void cmd_report(const RunConfig& cfg) {
    const Workspace ws{cfg.workspace};
    const ojson j = load_artifact(ws.report(), config_digest(cfg), cfg.force,
                                  "immunocast run");
    print_report_summary(report_from_json(j));
}

void cmd_run(const RunConfig& cfg) {
    if (cfg.input.empty()) throw Error("run: no --input CSV given");
    const Workspace ws{cfg.workspace};
    const std::string digest = config_digest(cfg);
    refuse_mixed_workspace(ws, digest, cfg.force);

    IngestOptions opts;
    opts.interpolate_linear = cfg.interpolate == "linear";
    const Dataset ds = ingest_csv(cfg.input, opts);
    print_warnings(ds);
    const int cutoff = resolve_cutoff(cfg, ds);
    const PipelineConfig pcfg = make_pipeline_config(cfg, cutoff);

    GeneralFitResult general;
    std::vector<McsaLog> fit_logs, refine_logs;
    const ForecastReport report =
        run_pipeline(ds, pcfg, &general, cfg.fit_logs ? &fit_logs : nullptr,
                     cfg.fit_logs ? &refine_logs : nullptr);

    std::vector<std::string> ids;
    for (const auto& s : ds.series) ids.push_back(s.id);
    save_artifact(ws.dataset(), dataset_to_json(ds), digest);
    save_artifact(ws.normalized(), dataset_to_json(general.normalized), digest);
    save_artifact(ws.params(), params_to_json(general.params), digest);
    save_artifact(ws.partition(),
                  partition_to_json(general.partition, general.clusters, ids), digest);
    for (std::size_t r = 0; r < general.models.size(); ++r) {
        save_artifact(ws.general_model(r),
                      model_to_json(general.models[r], digest, {ds.epochs.front(), cutoff}),
                      digest);
        if (cfg.fit_logs)
            write_fit_logs(ws.fitlogs_dir(), "general_" + std::to_string(r + 1), fit_logs[r]);
    }
    for (const auto& row : report.series)
        if (row.refined_model)
            save_artifact(
                ws.models_dir() / ("refined_" + sanitize_filename(row.id) + ".json"),
                model_to_json(*row.refined_model, digest, {ds.epochs.front(), cutoff}),
                digest);
    if (cfg.fit_logs)
        for (std::size_t i = 0; i < refine_logs.size(); ++i)
            if (!refine_logs[i].empty())
                write_fit_logs(ws.fitlogs_dir(), "refined_" + sanitize_filename(ids[i]),
                               refine_logs[i]);
    write_json(ws.report().string(), report_to_json(report, ids));
    write_plot_csvs(ws, ds, report);
    if (cfg.verbose)
        std::cerr << "fits: " << count_model_fits(report) << " (" << report.partition.c
                  << " general + " << report.refined_count() << " refined)\n";
    print_report_summary(report);
}

void cmd_eval_expr(const CliValues& v) {
    const std::vector<double> constants = parse_double_list(v.constants_csv, "--constants");
    const ExpressionTree tree = decode(v.expr, constants);
    std::printf("%s\n", to_analytic_string(tree).c_str());
    if (!v.window_csv.empty()) {
        const std::vector<double> window = parse_double_list(v.window_csv, "--window");
        const std::optional<double> value = evaluate(tree, window);
        if (value)
            std::printf("%s\n", format_double(*value).c_str());
        else
            std::printf("invalid\n");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grouped time-series forecasting with recency-weighted k-means "
                 "clustering and immune-inspired symbolic models"};
    app.require_subcommand(1);

    CliValues v;

    CLI::App* ingest = app.add_subcommand("ingest", "Read the input CSV into the workspace");
    CLI::App* normalize_cmd =
        app.add_subcommand("normalize", "Normalize the training range against the centroid");
    CLI::App* cluster = app.add_subcommand("cluster", "Cluster the normalized series");
    CLI::App* sweep = app.add_subcommand("sweep", "Print the (c, objective) table");
    CLI::App* fit = app.add_subcommand("fit", "Fit one model per cluster centroid");
    CLI::App* forecast =
        app.add_subcommand("forecast", "Forecast every series with its cluster model");
    CLI::App* refine_cmd =
        app.add_subcommand("refine", "Forecast and refine series above the threshold");
    CLI::App* report = app.add_subcommand("report", "Print the report summary table");
    CLI::App* run = app.add_subcommand("run", "Full pipeline: ingest through refine");
    CLI::App* eval_expr =
        app.add_subcommand("eval-expr", "Decode an antibody string, optionally evaluate it");

    for (CLI::App* cmd : {ingest, normalize_cmd, cluster, sweep, fit, forecast, refine_cmd,
                          report, run})
        add_common_options(cmd, v);
    for (CLI::App* cmd : {ingest, normalize_cmd, cluster, sweep, fit, forecast, refine_cmd,
                          run})
        add_pipeline_options(cmd, v);

    sweep->add_option("--min", v.sweep_min, "Smallest cluster count");
    sweep->add_option("--max", v.sweep_max, "Largest cluster count (default m)");

    eval_expr->add_option("string", v.expr, "Antibody sign string")->required();
    eval_expr->add_option("--constants", v.constants_csv, "Comma-separated '?' constants");
    eval_expr->add_option("--window", v.window_csv,
                          "Comma-separated lag window d[j-1],d[j-2],...");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        if (eval_expr->parsed()) {
            cmd_eval_expr(v);
            return 0;
        }
        const RunConfig cfg = resolve_config(v);
        if (ingest->parsed()) cmd_ingest(cfg);
        else if (normalize_cmd->parsed()) cmd_normalize(cfg);
        else if (cluster->parsed()) cmd_cluster(cfg);
        else if (sweep->parsed()) cmd_sweep(cfg, v.sweep_min, v.sweep_max);
        else if (fit->parsed()) cmd_fit(cfg);
        else if (forecast->parsed()) cmd_forecast(cfg);
        else if (refine_cmd->parsed()) cmd_refine(cfg);
        else if (report->parsed()) cmd_report(cfg);
        else if (run->parsed()) cmd_run(cfg);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error [" << stage << "]: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error [" << stage << "]: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error [" << stage << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error [" << stage << "]: " << e.what() << "\n";
        return 1;
    }
}
