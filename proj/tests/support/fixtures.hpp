#pragma once

// Shared fixture builders and a tiny subprocess runner for CLI tests.

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "immunocast/rng.hpp"
#include "immunocast/series.hpp"

namespace fixtures {

inline immu::Dataset make_dataset(const std::vector<std::vector<double>>& rows,
                                  int first_epoch = 2000) {
    immu::Dataset ds;
    for (std::size_t j = 0; j < rows.front().size(); ++j)
        ds.epochs.push_back(first_epoch + static_cast<int>(j));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        immu::TimeSeries s;
        s.id = "s" + std::to_string(i + 1);
        s.label = s.id;
        s.values = rows[i];
        s.epochs = ds.epochs;
        ds.series.push_back(std::move(s));
    }
    return ds;
}

/// Random non-degenerate dataset: smooth-ish positive series.
inline immu::Dataset random_dataset(immu::Rng& rng, std::size_t m, std::size_t n) {
    std::vector<std::vector<double>> rows(m);
    for (auto& row : rows) {
        double level = rng.uniform(5.0, 100.0);
        const double drift = rng.uniform(-2.0, 2.0);
        for (std::size_t j = 0; j < n; ++j) {
            row.push_back(level);
            level += drift + rng.uniform(-1.0, 1.0);
        }
    }
    return make_dataset(rows);
}

/// Planted groups: `per_cluster` series around each base trend plus small
/// deterministic offsets and noise.
inline immu::Dataset planted_clusters(const std::vector<std::vector<double>>& bases,
                                      std::size_t per_cluster, double noise,
                                      std::uint64_t seed, int first_epoch = 2000) {
    immu::Rng rng(seed);
    std::vector<std::vector<double>> rows;
    for (const auto& base : bases) {
        for (std::size_t i = 0; i < per_cluster; ++i) {
            std::vector<double> row;
            const double offset = rng.uniform(-noise, noise);
            for (double v : base) row.push_back(v + offset + rng.uniform(-noise, noise));
            rows.push_back(std::move(row));
        }
    }
    return make_dataset(rows, first_epoch);
}

inline void write_csv(const std::filesystem::path& path, const immu::Dataset& ds) {
    std::ofstream out(path);
    out << "id";
    for (int e : ds.epochs) out << ',' << e;
    out << "\n";
    for (const auto& s : ds.series) {
        out << s.id;
        char buf[64];
        for (double v : s.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << "\n";
    }
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("immu_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct CommandResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

inline std::string cli_path() {
    const char* env = std::getenv("IMMU_CLI");
    return env ? env : "";
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Run the CLI binary through the shell; env_prefix can set variables, e.g.
/// "IMMUNOCAST_THREADS=1".
inline CommandResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    const auto dir = std::filesystem::temp_directory_path();
    static int counter = 0;
    const auto out_path = dir / ("immu_out_" + std::to_string(++counter));
    const auto err_path = dir / ("immu_err_" + std::to_string(counter));
    std::string cmd = env_prefix.empty() ? "" : env_prefix + " ";
    cmd += "'" + cli_path() + "' " + args + " > '" + out_path.string() + "' 2> '" +
           err_path.string() + "'";
    const int status = std::system(cmd.c_str());
    CommandResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = read_file(out_path);
    result.err = read_file(err_path);
    std::filesystem::remove(out_path);
    std::filesystem::remove(err_path);
    return result;
}

/// Minimal CSV structural check: every line has the same field count and the
/// file parses without stray quotes.
inline bool is_valid_csv(const std::string& text, std::size_t* rows = nullptr) {
    std::istringstream in(text);
    std::string line;
    std::size_t fields = 0, count = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t commas = 0;
        for (char ch : line) {
            if (ch == '"') return false; // plain CSV only in our outputs
            if (ch == ',') ++commas;
        }
        if (count == 0) fields = commas;
        else if (commas != fields) return false;
        ++count;
    }
    if (rows) *rows = count;
    return count > 0;
}

} // namespace fixtures
