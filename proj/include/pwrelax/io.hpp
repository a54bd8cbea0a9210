#pragma once

// File formats: JSON phase documents, text density fields with a JSON header
// line, 8-bit PGM heatmaps, and CSV series/trace tables.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "pwrelax/analysis.hpp"
#include "pwrelax/confinement.hpp"
#include "pwrelax/density.hpp"
#include "pwrelax/errors.hpp"
#include "pwrelax/wavefunction.hpp"

namespace pwrelax::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Shortest decimal text that reads back to the same double.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline double parse_double(std::string_view s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("malformed number '" + std::string(s) + "'");
    return v;
}

/// Writes through a temporary file and renames, so readers never see a partial file.
inline void write_atomically(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- phases

struct PhaseDocument {
    SuperpositionSpec spec;
    std::optional<std::uint64_t> seed;
};

inline json phases_to_json(const SuperpositionSpec& spec, std::optional<std::uint64_t> seed = {}) {
    json j;
    j["modes_per_axis"] = spec.modes_per_axis();
    j["phases"] = spec.phase_matrix();
    if (seed) j["seed"] = *seed;
    return j;
}

inline PhaseDocument phases_from_json(const json& j) {
    try {
        if (!j.is_object()) throw ConfigError("phase document must be a JSON object");
        const int k = j.at("modes_per_axis").get<int>();
        const auto rows = j.at("phases").get<std::vector<std::vector<double>>>();
        if (k < 1 || rows.size() != static_cast<std::size_t>(k))
            throw ConfigError("phase matrix side does not match modes_per_axis");
        for (const auto& r : rows)
            for (double th : r)
                if (!(th >= 0.0 && th < kTwoPi)) throw ConfigError("phases must lie in [0, 2pi)");
        PhaseDocument doc{SuperpositionSpec::from_matrix(rows), std::nullopt};
        if (j.contains("seed") && !j["seed"].is_null()) doc.seed = j["seed"].get<std::uint64_t>();
        return doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid phase document: ") + e.what());
    }
}

inline void write_phase_file(const fs::path& path, const SuperpositionSpec& spec,
                             std::optional<std::uint64_t> seed = {}) {
    write_atomically(path, phases_to_json(spec, seed).dump(2) + "\n");
}

inline PhaseDocument read_phase_file(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("phase file " + path.string() + " is not valid JSON: " + e.what());
    }
    return phases_from_json(j);
}

// ---------------------------------------------------------------- fields

inline json partition_to_json(const CellPartition& p) {
    return {{"box_side", p.box_side}, {"cells_per_axis", p.cells_per_axis},
            {"points_per_cell_axis", p.points_per_cell_axis}};
}

inline CellPartition partition_from_json(const json& j) {
    CellPartition p;
    p.box_side = j.value("box_side", p.box_side);
    p.cells_per_axis = j.value("cells_per_axis", p.cells_per_axis);
    p.points_per_cell_axis = j.value("points_per_cell_axis", p.points_per_cell_axis);
    p.validate();
    return p;
}

namespace detail {

template <class Get>
void write_matrix(std::string& out, std::string_view name, int rows, int cols, Get get) {
    out += "# ";
    out += name;
    out += '\n';
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (j) out += ' ';
            out += get(i, j);
        }
        out += '\n';
    }
}

inline std::vector<double> read_matrix(std::istream& in, std::string_view name, std::size_t count) {
    std::string line;
    if (!std::getline(in, line) || line != "# " + std::string(name))
        throw ConfigError("expected block '# " + std::string(name) + "'");
    std::vector<double> values;
    values.reserve(count);
    std::string tok;
    while (values.size() < count && in >> tok) values.push_back(parse_double(tok));
    if (values.size() != count) throw ConfigError("block '" + std::string(name) + "' is truncated");
    std::getline(in, line);  // rest of last row
    return values;
}

}  // namespace detail

/// Whitespace-delimited matrices (row i = q1 index, column j = q2 index)
/// for rho, rho_qt and the 0/1 validity flags, after one JSON header line.
inline std::string field_to_text(const DensityField& f, const json& meta = json::object()) {
    const int n = f.n();
    json header{{"format", "pwrelax-density-field"},
                {"version", 1},
                {"time", f.time},
                {"periods", f.time / kTwoPi},
                {"partition", partition_to_json(f.partition)},
                {"accuracy_fraction", f.accuracy_fraction},
                {"rows", n},
                {"cols", n},
                {"layout", "row index = q1 grid index, column index = q2 grid index"},
                {"blocks", {"rho", "rho_qt", "valid"}},
                {"meta", meta}};
    std::string out = header.dump() + "\n";
    out.reserve(f.rho.size() * 48);
    detail::write_matrix(out, "rho", n, n, [&](int i, int j) {
        const auto idx = f.index(i, j);
        return f.valid[idx] ? fmt(f.rho[idx]) : std::string("nan");
    });
    detail::write_matrix(out, "rho_qt", n, n, [&](int i, int j) { return fmt(f.rho_qt[f.index(i, j)]); });
    detail::write_matrix(out, "valid", n, n, [&](int i, int j) { return std::string(f.valid[f.index(i, j)] ? "1" : "0"); });
    return out;
}

inline void write_field(const fs::path& path, const DensityField& f, const json& meta = json::object()) {
    write_atomically(path, field_to_text(f, meta));
}

inline DensityField field_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty density field file");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("density field header is not JSON: ") + e.what());
    }
    if (header.value("format", "") != "pwrelax-density-field") throw ConfigError("not a density field file");
    DensityField f;
    f.time = header.at("time").get<double>();
    f.partition = partition_from_json(header.at("partition"));
    const std::size_t total = f.partition.grid_size();
    f.rho = detail::read_matrix(in, "rho", total);
    f.rho_qt = detail::read_matrix(in, "rho_qt", total);
    const auto valid = detail::read_matrix(in, "valid", total);
    f.valid.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
        f.valid[i] = valid[i] != 0.0 ? 1 : 0;
        if (!f.valid[i]) f.rho[i] = 0.0;
    }
    f.recount();
    return f;
}

inline DensityField read_field(const fs::path& path) { return field_from_text(read_file(path)); }

/// Checkpoint store keeping one field file per (time index, grid) in dir.
inline FieldStore directory_store(const fs::path& dir, json meta = json::object()) {
    auto name = [dir](std::size_t ti, int g) {
        std::ostringstream ss;
        ss << "field_t" << std::setw(4) << std::setfill('0') << ti << "_g" << g << ".txt";
        return dir / ss.str();
    };
    FieldStore store;
    store.load = [name](std::size_t ti, int g) -> std::optional<DensityField> {
        const fs::path p = name(ti, g);
        if (!fs::exists(p)) return std::nullopt;
        try {
            return read_field(p);
        } catch (const ConfigError&) {
            return std::nullopt;
        }
    };
    store.save = [name, meta](std::size_t ti, int g, const DensityField& f) { write_field(name(ti, g), f, meta); };
    return store;
}

inline std::string smoothed_to_text(const SmoothedField& s, const json& meta = json::object()) {
    const int m = s.lattice.cells_per_axis;
    json header{{"format", "pwrelax-smoothed-field"},
                {"version", 1},
                {"time", s.time},
                {"periods", s.time / kTwoPi},
                {"lattice",
                 {{"cell_side", s.lattice.cell_side},
                  {"shift", s.lattice.shift},
                  {"cells_per_axis", m},
                  {"first_centre", s.lattice.first_centre}}},
                {"rows", m},
                {"cols", m},
                {"layout", "row index = q1 lattice index, column index = q2 lattice index"},
                {"blocks", {"rho", "rho_qt"}},
                {"meta", meta}};
    std::string out = header.dump() + "\n";
    detail::write_matrix(out, "rho", m, m, [&](int a, int b) { return fmt(s.rho[s.index(a, b)]); });
    detail::write_matrix(out, "rho_qt", m, m, [&](int a, int b) { return fmt(s.rho_qt[s.index(a, b)]); });
    return out;
}

inline void write_smoothed(const fs::path& path, const SmoothedField& s, const json& meta = json::object()) {
    write_atomically(path, smoothed_to_text(s, meta));
}

/// Binary 8-bit PGM of a square lattice. Image rows run from the largest q2
/// down, columns along q1. Pixel = round(255 * value / scale_max), clamped.
/// Returns the scale used (max value unless given).
inline double write_pgm(const fs::path& path, const std::vector<double>& values, int side,
                        std::optional<double> scale_max = {}) {
    if (values.size() != static_cast<std::size_t>(side) * side) throw DomainError("PGM data size mismatch");
    double scale = 0.0;
    if (scale_max) {
        scale = *scale_max;
    } else {
        for (double v : values) scale = std::max(scale, v);
    }
    std::string out = "P5\n# scale_max " + fmt(scale) + "\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
    for (int row = 0; row < side; ++row) {
        const int b = side - 1 - row;
        for (int a = 0; a < side; ++a) {
            const double v = values[static_cast<std::size_t>(a) * side + b];
            const double x = scale > 0.0 ? std::clamp(v / scale, 0.0, 1.0) : 0.0;
            out += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * x)));
        }
    }
    write_atomically(path, out);
    return scale;
}

// ---------------------------------------------------------------- CSV

inline std::string hbar_csv(const HBarSeries& s, std::string_view comment = {}) {
    std::string out;
    if (!comment.empty()) {
        out += "# ";
        out += comment;
        out += '\n';
    }
    out += "time,periods";
    for (int g : s.grids) out += ",hbar_grid" + std::to_string(g);
    out += ",hbar_mean,hbar_min,hbar_max,accuracy_min\n";
    for (const auto& e : s.entries) {
        out += fmt(e.time) + "," + fmt(e.periods);
        for (double v : e.values) out += "," + fmt(v);
        out += "," + fmt(e.mean) + "," + fmt(e.min) + "," + fmt(e.max) + "," + fmt(e.accuracy_min) + "\n";
    }
    return out;
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
}
}  // namespace detail

/// Reads a series written by hbar_csv; mean/min/max are recomputed from the grid columns.
inline HBarSeries parse_hbar_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> header;
    HBarSeries s;
    std::vector<int> grid_cols;
    int acc_col = -1;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto cells = detail::split_csv(line);
        if (header.empty()) {
            header = cells;
            for (std::size_t c = 0; c < header.size(); ++c) {
                if (header[c].rfind("hbar_grid", 0) == 0) {
                    grid_cols.push_back(static_cast<int>(c));
                    s.grids.push_back(std::stoi(header[c].substr(9)));
                }
                if (header[c] == "accuracy_min") acc_col = static_cast<int>(c);
            }
            if (header.empty() || header[0] != "time" || grid_cols.empty())
                throw ConfigError("H-bar CSV header must start with time and contain hbar_grid columns");
            continue;
        }
        if (cells.size() != header.size()) throw ConfigError("H-bar CSV row has wrong column count");
        std::vector<double> values;
        for (int c : grid_cols) values.push_back(parse_double(cells[c]));
        const double acc = acc_col >= 0 ? parse_double(cells[acc_col]) : 1.0;
        s.add(parse_double(cells[0]), std::move(values), acc);
    }
    if (header.empty()) throw ConfigError("H-bar CSV has no header");
    return s;
}

inline std::string log_csv(const LogSeries& ls, std::string_view comment = {}) {
    std::string out;
    if (!comment.empty()) out += "# " + std::string(comment) + "\n";
    if (ls.warning) out += "# warning: " + *ls.warning + "\n";
    out += "time,ln_mean,ln_min,ln_max\n";
    for (const auto& e : ls.entries)
        out += fmt(e.time) + "," + fmt(e.ln_mean) + "," + fmt(e.ln_min) + "," + fmt(e.ln_max) + "\n";
    return out;
}

inline std::string traces_csv(const std::vector<TrajectoryTrace>& traces, std::string_view comment = {}) {
    std::string out;
    if (!comment.empty()) out += "# " + std::string(comment) + "\n";
    out += "id,time,q1,q2,status\n";
    for (std::size_t id = 0; id < traces.size(); ++id) {
        const auto& tr = traces[id];
        for (std::size_t k = 0; k < tr.points.size(); ++k) {
            const bool last = k + 1 == tr.points.size();
            const std::string_view st = last ? to_string(tr.status) : "ok";
            out += std::to_string(id) + "," + fmt(tr.times[k]) + "," + fmt(tr.points[k].q1) + "," +
                   fmt(tr.points[k].q2) + "," + std::string(st) + "\n";
        }
    }
    return out;
}

/// Initial (time 0) and final positions of every square point; id is "square:point".
inline std::string scatters_csv(const std::vector<SquareFate>& fates, double t_end, std::string_view comment = {}) {
    std::string out;
    if (!comment.empty()) out += "# " + std::string(comment) + "\n";
    out += "id,time,q1,q2,status\n";
    for (std::size_t s = 0; s < fates.size(); ++s) {
        const auto& f = fates[s];
        for (std::size_t k = 0; k < f.initial.size(); ++k) {
            const std::string id = std::to_string(s) + ":" + std::to_string(k);
            out += id + ",0," + fmt(f.initial[k].q1) + "," + fmt(f.initial[k].q2) + ",initial\n";
            out += id + "," + fmt(t_end) + "," + fmt(f.final[k].q1) + "," + fmt(f.final[k].q2) + "," +
                   std::string(to_string(f.status[k])) + "\n";
        }
    }
    return out;
}

}  // namespace pwrelax::io
