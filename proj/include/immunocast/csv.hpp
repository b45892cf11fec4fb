#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "immunocast/errors.hpp"
#include "immunocast/series.hpp"

namespace immu {

struct IngestOptions {
    /// Fill interior missing cells by linear interpolation over the epoch
    /// axis. Leading/trailing gaps are an error either way.
    bool interpolate_linear = false;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell += ch;
        }
    }
    cells.push_back(cell);
    return cells;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool is_missing_cell(const std::string& s) {
    return s.empty() || s == ".." || s == "...";
}

inline std::optional<int> parse_int(const std::string& s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<double> parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

} // namespace detail

/// Read a wide CSV: header `id[,unit],<epoch1>,<epoch2>,...`, one series per
/// data row in epoch order. Missing cells are empty, `..` or `...`.
inline Dataset ingest_csv(const std::string& path, const IngestOptions& options = {}) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw Error("'" + path + "': empty file");
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    if (header.empty() || detail::trim(header[0]) != "id")
        throw Error("'" + path + "': header must start with an 'id' column");
    std::size_t first_epoch_col = 1;
    if (header.size() > 1 && header[1] == "unit") first_epoch_col = 2;

    std::vector<int> epochs;
    for (std::size_t c = first_epoch_col; c < header.size(); ++c) {
        auto e = detail::parse_int(header[c]);
        if (!e)
            throw Error("'" + path + "': header column " + std::to_string(c + 1) +
                        " ('" + header[c] + "') is not an integer epoch");
        epochs.push_back(*e);
    }
    if (epochs.size() < 2)
        throw Error("'" + path + "': fewer than 2 epoch columns");
    for (std::size_t j = 1; j < epochs.size(); ++j)
        if (epochs[j] <= epochs[j - 1])
            throw Error("'" + path + "': epoch columns not strictly increasing");

    Dataset ds;
    ds.epochs = epochs;

    std::size_t row = 1; // header was row 1
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw Error(path + " row " + std::to_string(row) + ": expected " +
                        std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));

        TimeSeries s;
        s.id = detail::trim(cells[0]);
        if (s.id.empty())
            throw Error(path + " row " + std::to_string(row) + ": empty id");
        s.label = s.id;
        if (first_epoch_col == 2) s.unit = detail::trim(cells[1]);
        s.epochs = epochs;

        std::vector<bool> missing(epochs.size(), false);
        s.values.assign(epochs.size(), 0.0);
        for (std::size_t j = 0; j < epochs.size(); ++j) {
            const std::string cell = detail::trim(cells[first_epoch_col + j]);
            const std::string col_name = header[first_epoch_col + j];
            if (detail::is_missing_cell(cell)) {
                if (!options.interpolate_linear)
                    throw Error(path + " row " + std::to_string(row) + " (id '" + s.id +
                                "'), column " + col_name + ": missing cell");
                missing[j] = true;
                continue;
            }
            auto v = detail::parse_double(cell);
            if (!v || !std::isfinite(*v))
                throw Error(path + " row " + std::to_string(row) + " (id '" + s.id +
                            "'), column " + col_name + ": unparseable cell '" + cell + "'");
            s.values[j] = *v;
        }

        if (options.interpolate_linear) {
            for (std::size_t j = 0; j < epochs.size(); ++j) {
                if (!missing[j]) continue;
                // Interior gaps only: need a known value on both sides.
                std::size_t lo = j;
                while (lo > 0 && missing[lo - 1]) --lo;
                std::size_t hi = j;
                while (hi + 1 < epochs.size() && missing[hi + 1]) ++hi;
                if (lo == 0 || hi + 1 == epochs.size())
                    throw Error(path + " row " + std::to_string(row) + " (id '" + s.id +
                                "'), column " + header[first_epoch_col + j] +
                                ": missing cell at series edge cannot be interpolated");
                const std::size_t a = lo - 1, b = hi + 1;
                const double t = static_cast<double>(epochs[j] - epochs[a]) /
                                 static_cast<double>(epochs[b] - epochs[a]);
                s.values[j] = s.values[a] + t * (s.values[b] - s.values[a]);
            }
        }

        for (const auto& other : ds.series)
            if (other.id == s.id)
                throw Error(path + " row " + std::to_string(row) + ": duplicate id '" +
                            s.id + "'");
        ds.series.push_back(std::move(s));
    }

    validate(ds);
    return ds;
}

} // namespace immu
