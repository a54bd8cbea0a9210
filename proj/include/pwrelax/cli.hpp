#pragma once

// Batch front end: run configuration, the six commands and their outputs.
// Exit codes: 0 success, 1 failure, 2 configuration error, 3 run aborted on
// accuracy, 4 a self-check failed.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pwrelax/analysis.hpp"
#include "pwrelax/confinement.hpp"
#include "pwrelax/density.hpp"
#include "pwrelax/integrator.hpp"
#include "pwrelax/io.hpp"
#include "pwrelax/parallel.hpp"
#include "pwrelax/wavefunction.hpp"

namespace pwrelax::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kAborted = 3, kCheckFailed = 4 };

struct RunConfig {
    // Phase source: a preset, a phase file, or a seed. Nothing at all means m4-paper.
    std::string preset;
    std::string phase_file;
    std::optional<std::uint64_t> seed;
    int modes_per_axis = 5;

    fs::path out_dir = "pwrelax-out";
    bool resume = false;
    std::optional<std::vector<double>> periods;  // command default when unset
    std::vector<int> grids{29, 30, 31};
    CellPartition partition;
    IntegratorConfig integrator;
    bool equilibrium_start = false;
    std::vector<double> snapshot_periods;

    double stride_periods = 0.01;
    double square_side = 0.2;
    int square_points = 10;
    std::vector<Point2> start_points = standard_start_points();
    ConfinementThresholds thresholds;

    std::int64_t crosscheck_particles = 40'000;
    fs::path input;   // fit: series CSV
    fs::path output;  // phases: target file
};

/// Explicit comma list, or a single integer N meaning 0, 1, ..., N.
inline std::vector<double> parse_periods(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        out.push_back(io::parse_double(item));
    }
    if (out.empty()) throw ConfigError("empty period list");
    for (double p : out)
        if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("periods must be finite and >= 0");
    if (out.size() == 1 && text.find('.') == std::string::npos && out[0] == std::floor(out[0])) {
        const int n = static_cast<int>(out[0]);
        out.clear();
        for (int k = 0; k <= n; ++k) out.push_back(k);
    }
    return out;
}

inline std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("malformed integer list '" + text + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty integer list");
    return out;
}

namespace detail {

template <class T>
void take(const json& j, const char* key, T& value) {
    if (j.contains(key)) value = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

}  // namespace detail

/// Overlays a JSON config document onto cfg. Every key is optional.
inline void apply_json(RunConfig& cfg, const json& j) {
    using detail::take;
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        detail::reject_unknown(j,
                               {"preset", "phase_file", "seed", "modes_per_axis", "out_dir", "resume", "periods",
                                "grids", "partition", "integrator", "equilibrium_start", "snapshot_periods",
                                "confine", "crosscheck_particles"},
                               "config");
        take(j, "preset", cfg.preset);
        take(j, "phase_file", cfg.phase_file);
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        take(j, "modes_per_axis", cfg.modes_per_axis);
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
        take(j, "resume", cfg.resume);
        if (j.contains("periods")) {
            const auto& p = j.at("periods");
            cfg.periods = p.is_array() ? p.get<std::vector<double>>() : parse_periods(io::fmt(p.get<double>()));
        }
        take(j, "grids", cfg.grids);
        if (j.contains("partition")) {
            const auto& p = j.at("partition");
            detail::reject_unknown(p, {"box_side", "cells_per_axis"}, "partition");
            take(p, "box_side", cfg.partition.box_side);
            take(p, "cells_per_axis", cfg.partition.cells_per_axis);
        }
        if (j.contains("integrator")) {
            const auto& g = j.at("integrator");
            detail::reject_unknown(g,
                                   {"position_tolerance", "local_error_tolerance", "max_steps_total", "sub_intervals",
                                    "max_steps_per_sub_interval", "min_step", "initial_step", "node_threshold"},
                                   "integrator");
            auto& c = cfg.integrator;
            take(g, "position_tolerance", c.position_tolerance);
            take(g, "local_error_tolerance", c.local_error_tolerance);
            take(g, "max_steps_total", c.max_steps_total);
            take(g, "sub_intervals", c.sub_intervals);
            take(g, "max_steps_per_sub_interval", c.max_steps_per_sub_interval);
            take(g, "min_step", c.min_step);
            take(g, "initial_step", c.initial_step);
            take(g, "node_threshold", c.node_threshold);
        }
        take(j, "equilibrium_start", cfg.equilibrium_start);
        take(j, "snapshot_periods", cfg.snapshot_periods);
        if (j.contains("confine")) {
            const auto& c = j.at("confine");
            detail::reject_unknown(c, {"stride_periods", "square_side", "square_points", "points", "thresholds"},
                                   "confine");
            take(c, "stride_periods", cfg.stride_periods);
            take(c, "square_side", cfg.square_side);
            take(c, "square_points", cfg.square_points);
            if (c.contains("points")) {
                cfg.start_points.clear();
                for (const auto& p : c.at("points")) {
                    const auto xy = p.get<std::vector<double>>();
                    if (xy.size() != 2) throw ConfigError("confinement points must be [q1, q2] pairs");
                    cfg.start_points.push_back({xy[0], xy[1]});
                }
            }
            if (c.contains("thresholds")) {
                const auto& t = c.at("thresholds");
                detail::reject_unknown(t, {"negligible", "mild", "clustered"}, "thresholds");
                take(t, "negligible", cfg.thresholds.negligible);
                take(t, "mild", cfg.thresholds.mild);
                take(t, "clustered", cfg.thresholds.clustered);
            }
        }
        take(j, "crosscheck_particles", cfg.crosscheck_particles);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

inline SuperpositionSpec resolve_spec(const RunConfig& cfg) {
    if (!cfg.phase_file.empty()) {
        if (!cfg.preset.empty() || cfg.seed)
            throw ConfigError("give exactly one phase source: a phase file, a preset, or a seed");
        return io::read_phase_file(cfg.phase_file).spec;
    }
    if (cfg.preset == "m4-paper" || cfg.preset == "m4-alt") {
        if (cfg.seed) throw ConfigError("preset " + cfg.preset + " has fixed phases and takes no seed");
        return cfg.preset == "m4-paper" ? SuperpositionSpec::m4_paper() : SuperpositionSpec::m4_alternate();
    }
    if (cfg.preset == "m25-random") return SuperpositionSpec::random(cfg.seed.value_or(2), 5);
    if (!cfg.preset.empty()) throw ConfigError("unknown preset '" + cfg.preset + "'");
    if (cfg.seed) {
        if (cfg.modes_per_axis < 1) throw ConfigError("modes_per_axis must be >= 1");
        return SuperpositionSpec::random(*cfg.seed, cfg.modes_per_axis);
    }
    return SuperpositionSpec::m4_paper();
}

inline void validate(const RunConfig& cfg) {
    cfg.integrator.validate();
    CellPartition p = cfg.partition;
    if (cfg.grids.empty()) throw ConfigError("at least one sampling grid is required");
    for (int g : cfg.grids) {
        p.points_per_cell_axis = g;
        p.validate();
    }
    if (!(cfg.stride_periods > 0.0) || !(cfg.square_side > 0.0) || cfg.square_points < 1)
        throw ConfigError("confinement stride, square side and square points must be positive");
    if (cfg.start_points.empty()) throw ConfigError("at least one confinement start point is required");
    if (cfg.crosscheck_particles < 10'000) throw ConfigError("crosscheck_particles must be >= 10000");
}

inline json integrator_json(const IntegratorConfig& c) {
    return {{"position_tolerance", c.position_tolerance},
            {"local_error_tolerance", c.local_error_tolerance},
            {"max_steps_total", c.max_steps_total},
            {"sub_intervals", c.sub_intervals},
            {"max_steps_per_sub_interval", c.max_steps_per_sub_interval},
            {"min_step", c.min_step},
            {"initial_step", c.initial_step},
            {"node_threshold", c.node_threshold}};
}

/// Fully resolved configuration, including the phase matrix actually used.
inline json effective_config(const RunConfig& cfg, const SuperpositionSpec& spec, const std::vector<double>& periods) {
    json points = json::array();
    for (const auto& p : cfg.start_points) points.push_back({p.q1, p.q2});
    json j{{"preset", cfg.preset},
           {"phase_file", cfg.phase_file},
           {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
           {"modes_per_axis", spec.modes_per_axis()},
           {"phases", spec.phase_matrix()},
           {"out_dir", cfg.out_dir.string()},
           {"periods", periods},
           {"grids", cfg.grids},
           {"partition", {{"box_side", cfg.partition.box_side}, {"cells_per_axis", cfg.partition.cells_per_axis}}},
           {"integrator", integrator_json(cfg.integrator)},
           {"equilibrium_start", cfg.equilibrium_start},
           {"snapshot_periods", cfg.snapshot_periods},
           {"confine",
            {{"stride_periods", cfg.stride_periods},
             {"square_side", cfg.square_side},
             {"square_points", cfg.square_points},
             {"points", points},
             {"thresholds",
              {{"negligible", cfg.thresholds.negligible},
               {"mild", cfg.thresholds.mild},
               {"clustered", cfg.thresholds.clustered}}}}},
           {"crosscheck_particles", cfg.crosscheck_particles}};
    return j;
}

/// Collects the per-run metadata document and writes it on every update, so
/// an interrupted run still leaves a description of what it did.
class Metadata {
public:
    Metadata(std::string command, fs::path path, std::string version)
        : path_(std::move(path)), start_(std::chrono::steady_clock::now()) {
        const std::time_t now = std::time(nullptr);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        doc_ = {{"tool", "pwrelax"},
                {"version", std::move(version)},
                {"command", std::move(command)},
                {"started_utc", stamp},
                {"threads", thread_count()},
                {"status", "running"}};
    }

    json& operator[](const char* key) { return doc_[key]; }

    void write(const std::string& status) {
        doc_["status"] = status;
        doc_["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        io::write_atomically(path_, doc_.dump(2) + "\n");
    }

    std::string file_name() const { return path_.filename().string(); }

private:
    fs::path path_;
    std::chrono::steady_clock::time_point start_;
    json doc_;
};

namespace detail {

inline std::vector<double> to_times(const std::vector<double>& periods) {
    std::vector<double> t;
    for (double p : periods) t.push_back(p * kTwoPi);
    return t;
}

inline int middle_grid(const std::vector<int>& grids) { return grids[grids.size() / 2]; }

inline json fit_json(const HBarSeries& series) {
    try {
        FitResult fit = fit_exponential(series);
        fit.t_sat = saturation_time(series, fit);
        return {{"model", "a*exp(-b*periods)+c, a+c = hbar(0)"},
                {"a", fit.a},
                {"b", fit.b},
                {"c", fit.c},
                {"rms_residual", fit.rms_residual},
                {"t_sat", fit.t_sat ? json(*fit.t_sat) : json(nullptr)},
                {"t_sat_periods", fit.t_sat ? json(*fit.t_sat / kTwoPi) : json(nullptr)},
                {"final_mean", series.entries.back().mean},
                {"final_spread", series.entries.back().spread()}};
    } catch (const DegenerateSeries& e) {
        return {{"model", "a*exp(-b*periods)+c, a+c = hbar(0)"}, {"error", e.what()}};
    }
}

inline std::string hbar_plot_script(const std::string& csv) {
    return "# gnuplot script: H-bar series with grid min/max bars and its logarithm\n"
           "set datafile separator ','\n"
           "set key autotitle columnhead\n"
           "set xlabel 'periods'\n"
           "set terminal pngcairo size 900,600\n"
           "set output 'hbar.png'\n"
           "plot '" + csv + "' using 2:6:7:8 with yerrorbars title 'H-bar'\n"
           "set output 'hbar_log.png'\n"
           "set ylabel 'ln H-bar'\n"
           "plot 'hbar_log.csv' using ($1/(2*pi)):2 with linespoints title 'ln H-bar'\n";
}

inline std::string confine_plot_script() {
    return "# gnuplot script: trajectories and square scatters\n"
           "set datafile separator ','\n"
           "set size square\n"
           "set xrange [-5:5]\nset yrange [-5:5]\n"
           "set terminal pngcairo size 800,800\n"
           "set output 'traces.png'\n"
           "plot 'traces.csv' every ::1 using 3:4 with dots notitle\n"
           "set output 'scatters.png'\n"
           "plot 'scatters.csv' every 2::2 using 3:4 with points pt 7 ps 0.3 notitle\n";
}

}  // namespace detail

struct Context {
    std::string version = "unknown";
    std::ostream* out = &std::cout;
};

inline int cmd_phases(const RunConfig& cfg, const Context& ctx) {
    if (cfg.modes_per_axis < 1) throw ConfigError("modes_per_axis must be >= 1");
    const std::uint64_t seed = cfg.seed.value_or(1);
    const auto spec = SuperpositionSpec::random(seed, cfg.modes_per_axis);
    const fs::path target = cfg.output.empty() ? cfg.out_dir / "phases.json" : cfg.output;
    io::write_phase_file(target, spec, seed);
    *ctx.out << "wrote " << target.string() << "\n";
    return kOk;
}

inline int cmd_hbar(const RunConfig& cfg, const Context& ctx) {
    const auto spec = resolve_spec(cfg);
    validate(cfg);
    std::vector<double> periods = cfg.periods.value_or(std::vector<double>{});
    if (periods.empty()) {
        for (int k = 0; k <= 15; ++k) periods.push_back(k);
        for (int k : {20, 30, 40, 50}) periods.push_back(k);
    }
    const json effective = effective_config(cfg, spec, periods);
    Metadata meta("hbar", cfg.out_dir / "hbar_metadata.json", ctx.version);
    meta["config"] = effective;
    meta["outputs"] = {"hbar.csv", "hbar_log.csv", "fit.json", "hbar.gp", "fields/"};
    meta.write("running");

    json field_meta = effective;
    field_meta.erase("out_dir");
    SeriesOptions opts;
    opts.partition = cfg.partition;
    opts.grids = cfg.grids;
    opts.initial = cfg.equilibrium_start ? InitialDensity::Equilibrium : InitialDensity::GroundState;
    FieldStore store = io::directory_store(cfg.out_dir / "fields", field_meta);
    if (!cfg.resume) store.load = nullptr;
    opts.store = store;

    const std::string comment = "metadata: " + meta.file_name();
    const int snap_grid = detail::middle_grid(cfg.grids);
    opts.on_field = [&](std::size_t ti, int g, const DensityField& f) {
        if (g != snap_grid) return;
        for (double p : cfg.snapshot_periods) {
            if (std::abs(p - periods[ti]) > 1e-9) continue;
            if (!f.usable()) return;
            const auto s = smooth_density(f);
            const fs::path dir = cfg.out_dir / "snapshots";
            const std::string stem = "smoothed_p" + io::fmt(periods[ti]);
            io::write_smoothed(dir / (stem + ".txt"), s, field_meta);
            const double scale = std::max(*std::max_element(s.rho.begin(), s.rho.end()),
                                          *std::max_element(s.rho_qt.begin(), s.rho_qt.end()));
            io::write_pgm(dir / (stem + "_rho.pgm"), s.rho, s.lattice.cells_per_axis, scale);
            io::write_pgm(dir / (stem + "_rho_qt.pgm"), s.rho_qt, s.lattice.cells_per_axis, scale);
        }
    };
    opts.on_progress = [&](const HBarSeries& s) {
        io::write_atomically(cfg.out_dir / "hbar.csv", io::hbar_csv(s, comment));
        const auto& e = s.entries.back();
        *ctx.out << "periods " << io::fmt(e.periods) << "  hbar " << io::fmt(e.mean) << "  [" << io::fmt(e.min)
                 << ", " << io::fmt(e.max) << "]  accuracy " << io::fmt(e.accuracy_min) << std::endl;
        json acc = json::array();
        for (const auto& x : s.entries) acc.push_back({{"periods", x.periods}, {"accuracy_min", x.accuracy_min}});
        meta["accuracy"] = acc;
        meta["completed_times"] = s.entries.size();
        meta.write("running");
    };
    io::write_atomically(cfg.out_dir / "hbar.gp", detail::hbar_plot_script("hbar.csv"));

    HBarSeries series;
    try {
        series = hbar_series(spec, detail::to_times(periods), cfg.integrator, opts);
    } catch (const AbortedRun& e) {
        meta["error"] = e.what();
        meta["aborted_accuracy"] = e.accuracy_fraction;
        meta.write("aborted");
        throw;
    }
    io::write_atomically(cfg.out_dir / "hbar_log.csv", io::log_csv(log_series(series), comment));
    const json fit = detail::fit_json(series);
    io::write_atomically(cfg.out_dir / "fit.json", fit.dump(2) + "\n");
    meta["fit"] = fit;
    meta.write("completed");
    *ctx.out << "fit: " << fit.dump() << "\n";
    return kOk;
}

inline int cmd_density(const RunConfig& cfg, const Context& ctx) {
    const auto spec = resolve_spec(cfg);
    validate(cfg);
    std::vector<double> periods = cfg.periods.value_or(std::vector<double>{});
    if (periods.empty())
        periods = spec.modes_per_axis() == 2 ? std::vector<double>{0, 25, 50} : std::vector<double>{0, 2.5, 5};
    const json effective = effective_config(cfg, spec, periods);
    Metadata meta("density", cfg.out_dir / "density_metadata.json", ctx.version);
    meta["config"] = effective;
    meta.write("running");

    CellPartition part = cfg.partition;
    part.points_per_cell_axis = detail::middle_grid(cfg.grids);
    const auto initial = cfg.equilibrium_start ? InitialDensity::Equilibrium : InitialDensity::GroundState;
    json results = json::array();
    for (double p : periods) {
        DensityField f = compute_density(spec, p * kTwoPi, part, cfg.integrator, initial);
        if (!f.usable()) {
            meta["results"] = results;
            meta["error"] = "accuracy " + io::fmt(f.accuracy_fraction) + " below 0.95 at " + io::fmt(p) + " periods";
            meta.write("aborted");
            require_usable(f);
        }
        const auto s = smooth_density(f);
        const std::string stem = "density_p" + io::fmt(p);
        io::write_smoothed(cfg.out_dir / (stem + ".txt"), s, effective);
        const double scale = std::max(*std::max_element(s.rho.begin(), s.rho.end()),
                                      *std::max_element(s.rho_qt.begin(), s.rho_qt.end()));
        io::write_pgm(cfg.out_dir / (stem + "_rho.pgm"), s.rho, s.lattice.cells_per_axis, scale);
        io::write_pgm(cfg.out_dir / (stem + "_rho_qt.pgm"), s.rho_qt, s.lattice.cells_per_axis, scale);
        const double l1 = relative_l1(s.rho_qt, s.rho);
        results.push_back({{"periods", p},
                           {"accuracy_fraction", f.accuracy_fraction},
                           {"relative_l1_to_equilibrium", l1},
                           {"scale_max", scale},
                           {"files", {stem + ".txt", stem + "_rho.pgm", stem + "_rho_qt.pgm"}}});
        meta["results"] = results;
        meta.write("running");
        *ctx.out << "periods " << io::fmt(p) << "  accuracy " << io::fmt(f.accuracy_fraction)
                 << "  relative L1 to rho_qt " << io::fmt(l1) << std::endl;
    }
    meta.write("completed");
    return kOk;
}

inline int cmd_confine(const RunConfig& cfg, const Context& ctx) {
    const auto spec = resolve_spec(cfg);
    validate(cfg);
    double duration = spec.modes_per_axis() == 2 ? 25.0 : 5.0;
    if (cfg.periods) duration = *std::max_element(cfg.periods->begin(), cfg.periods->end());
    const json effective = effective_config(cfg, spec, {duration});
    Metadata meta("confine", cfg.out_dir / "confine_metadata.json", ctx.version);
    meta["config"] = effective;
    meta.write("running");

    const double t_end = duration * kTwoPi;
    const GuidanceField field(spec, cfg.integrator.node_threshold);
    std::vector<TrajectoryTrace> traces(cfg.start_points.size());
    parallel_for(traces.size(), [&](std::size_t i) {
        traces[i] = trace(field, cfg.start_points[i], t_end, cfg.stride_periods * kTwoPi, cfg.integrator);
    });
    std::vector<SquareFate> fates;
    for (const auto& p : cfg.start_points)
        fates.push_back(square_fate(spec, p, cfg.square_side, t_end, cfg.integrator, cfg.square_points));

    const std::string comment = "metadata: " + meta.file_name();
    io::write_atomically(cfg.out_dir / "traces.csv", io::traces_csv(traces, comment));
    io::write_atomically(cfg.out_dir / "scatters.csv", io::scatters_csv(fates, t_end, comment));
    io::write_atomically(cfg.out_dir / "confine.gp", detail::confine_plot_script());

    const auto mass = equilibrium_cell_mass(spec, cfg.partition);
    const double cov = coverage(traces, cfg.partition, mass);
    json squares = json::array();
    double mean_scatter = 0.0;
    int trace_failures = 0, point_failures = 0;
    for (const auto& tr : traces) trace_failures += tr.status != TrajectoryStatus::Succeeded;
    for (const auto& f : fates) {
        const double sc = scatter_coverage(f, cfg.partition, mass);
        mean_scatter += sc / static_cast<double>(fates.size());
        for (auto st : f.status) point_failures += st != TrajectoryStatus::Succeeded;
        squares.push_back({{"centre", {f.centre.q1, f.centre.q2}},
                           {"scatter_coverage", sc},
                           {"clustered", sc < cfg.thresholds.clustered}});
    }
    meta["coverage"] = cov;
    meta["grade"] = std::string(to_string(grade(cov, cfg.thresholds)));
    meta["squares"] = squares;
    meta["mean_scatter_coverage"] = mean_scatter;
    meta["trace_failures"] = trace_failures;
    meta["square_point_failures"] = point_failures;
    meta["outputs"] = {"traces.csv", "scatters.csv", "confine.gp"};
    meta.write("completed");
    *ctx.out << "coverage " << io::fmt(cov) << " (" << to_string(grade(cov, cfg.thresholds))
             << " confinement), mean scatter coverage " << io::fmt(mean_scatter) << "\n";
    return kOk;
}

inline int cmd_fit(const RunConfig& cfg, const Context& ctx) {
    if (cfg.input.empty()) throw ConfigError("fit needs --input <hbar.csv>");
    const auto series = io::parse_hbar_csv(io::read_file(cfg.input));
    const json fit = detail::fit_json(series);
    io::write_atomically(cfg.out_dir / "fit.json", fit.dump(2) + "\n");
    io::write_atomically(cfg.out_dir / "hbar_log.csv",
                         io::log_csv(log_series(series), "source: " + cfg.input.filename().string()));
    *ctx.out << "fit: " << fit.dump() << "\n";
    if (fit.contains("error")) throw DegenerateSeries(fit["error"].get<std::string>());
    return kOk;
}

struct CheckItem {
    std::string name;
    double measured = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

/// Fast self-validation of the configured state.
inline std::vector<CheckItem> run_checks(const SuperpositionSpec& spec, const RunConfig& cfg) {
    std::vector<CheckItem> items;
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const GuidanceField field(spec, cfg.integrator.node_threshold);

    {   // analytic velocity against central differences of psi
        double worst = 0.0;
        const double h = 1e-5;
        for (int i = 0; i < 200; ++i) {
            const Point2 p{u(rng), u(rng)};
            const double t = 0.37 * i;
            const auto c = psi(spec, p, t);
            if (std::norm(c) < 1e-6) continue;
            const auto d1 = (psi(spec, {p.q1 + h, p.q2}, t) - psi(spec, {p.q1 - h, p.q2}, t)) / (2 * h);
            const auto d2 = (psi(spec, {p.q1, p.q2 + h}, t) - psi(spec, {p.q1, p.q2 - h}, t)) / (2 * h);
            Velocity v;
            if (!field.velocity(p, t, v)) continue;
            const double scale = 1.0 + std::abs(v.v1) + std::abs(v.v2);
            worst = std::max(worst, std::abs(v.v1 - (d1 / c).imag()) / scale);
            worst = std::max(worst, std::abs(v.v2 - (d2 / c).imag()) / scale);
        }
        items.push_back({"velocity gradient consistency", worst, 1e-5, worst <= 1e-5});
    }
    {   // norm of |psi|^2 over the plane
        const double half = 9.0;
        const int n = 360;
        const double h = 2 * half / n;
        CompensatedSum s;
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j) {
                const double w = (i == 0 || i == n ? 0.5 : 1.0) * (j == 0 || j == n ? 0.5 : 1.0);
                s.add(w * rho_qt(spec, {-half + i * h, -half + j * h}, 0.7));
            }
        const double err = std::abs(s.value() * h * h - 1.0);
        items.push_back({"norm of |psi|^2", err, 1e-8, err <= 1e-8});
    }
    {   // period 2 pi
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const Point2 p{u(rng), u(rng)};
            const double t = 0.01 * i;
            const auto a = psi(spec, p, t), b = psi(spec, p, t + kTwoPi);
            worst = std::max(worst, std::abs(a - b) / std::max(1e-300, std::abs(a) + 1e-12));
        }
        items.push_back({"periodicity of psi", worst, 1e-9, worst <= 1e-9});
    }
    {   // equilibrium start stays at equilibrium
        CellPartition part = cfg.partition;
        part.points_per_cell_axis = 6;
        const auto f = build_density(spec, kTwoPi, part, cfg.integrator, InitialDensity::Equilibrium);
        const double h = std::abs(hbar(coarse_grain(f)));
        items.push_back({"equilibrium null at one period", h, 0.01, h <= 0.01});
    }
    {   // forward then back
        std::vector<Point2> pts(100);
        for (auto& p : pts) p = {u(rng), u(rng)};
        IntegratorConfig tight = cfg.integrator;
        tight.local_error_tolerance /= 10;
        std::vector<double> loose_d(pts.size()), tight_d(pts.size());
        parallel_for(pts.size(), [&](std::size_t i) {
            loose_d[i] = validate_precision(field, pts[i], kTwoPi, cfg.integrator);
            tight_d[i] = validate_precision(field, pts[i], kTwoPi, tight);
        });
        const double bound = 2 * cfg.integrator.position_tolerance;
        const double worst = *std::max_element(loose_d.begin(), loose_d.end());
        items.push_back({"round-trip displacement (max)", worst, bound, worst <= bound});
        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return 0.5 * (v[(v.size() - 1) / 2] + v[v.size() / 2]);
        };
        const double ml = median(loose_d), mt = median(tight_d);
        items.push_back({"tightened tolerance median (vs loose median)", mt, ml, mt <= ml});
    }
    {   // independent forward evolution against backtracking
        CellPartition part = cfg.partition;
        part.points_per_cell_axis = 30;
        const auto back = smooth_density(build_density(spec, kTwoPi, part, cfg.integrator));
        const auto fwd = forward_crosscheck(spec, kTwoPi, cfg.crosscheck_particles, cfg.integrator, part);
        const double l1 = relative_l1(back.rho, fwd.rho);
        items.push_back({"forward cross-check at one period (relative L1)", l1, 0.05, l1 <= 0.05});
    }
    return items;
}

inline int cmd_check(const RunConfig& cfg, const Context& ctx) {
    const auto spec = resolve_spec(cfg);
    validate(cfg);
    Metadata meta("check", cfg.out_dir / "check_metadata.json", ctx.version);
    meta["config"] = effective_config(cfg, spec, {});
    const auto items = run_checks(spec, cfg);
    json report = json::array();
    bool all = true;
    for (const auto& it : items) {
        *ctx.out << (it.passed ? "PASS " : "FAIL ") << it.name << ": measured " << io::fmt(it.measured)
                 << ", threshold " << io::fmt(it.threshold) << "\n";
        report.push_back({{"name", it.name}, {"measured", it.measured}, {"threshold", it.threshold},
                          {"passed", it.passed}});
        all = all && it.passed;
    }
    meta["checks"] = report;
    meta.write(all ? "passed" : "failed");
    return all ? kOk : kCheckFailed;
}

/// Parses the command line and runs one command. Returns the process exit code.
inline int run(int argc, const char* const* argv, const Context& ctx = {}, std::ostream& err = std::cerr) {
    CLI::App app{"Pilot-wave relaxation simulator for the two-dimensional harmonic oscillator"};
    app.set_version_flag("--version", ctx.version);
    app.require_subcommand(1, 1);

    std::string config_file, out_dir, preset, phase_file, periods, grids, input, output;
    std::uint64_t seed = 0;
    int modes = 0;
    bool resume = false, equilibrium = false;
    auto* o_config = app.add_option("--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
    auto* o_out = app.add_option("--out-dir", out_dir, "output directory");
    app.add_flag("--resume", resume, "reuse completed density fields from the output directory");
    auto* o_preset =
        app.add_option("--preset", preset, "phase preset")->check(CLI::IsMember({"m4-paper", "m4-alt", "m25-random"}));
    auto* o_phase = app.add_option("--phase-file", phase_file, "JSON phase document");
    auto* o_seed = app.add_option("--seed", seed, "seed for random phases");
    auto* o_modes = app.add_option("--modes", modes, "modes per axis for random phases");
    auto* o_periods = app.add_option("--periods", periods, "comma list of periods, or N for 0..N");
    auto* o_grids = app.add_option("--points-per-cell", grids, "comma list of sample points per cell axis");
    app.add_flag("--equilibrium-start", equilibrium, "start from |psi|^2 instead of the ground state");
    auto* o_input = app.add_option("--input", input, "series CSV for the fit command");
    auto* o_output = app.add_option("--output", output, "target file for the phases command");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"phases", "write a random phase document"},
        {"hbar", "coarse-grained H-function series with fit"},
        {"density", "smoothed densities and heatmaps"},
        {"confine", "trajectory traces, square fates and coverage"},
        {"fit", "re-fit an existing series CSV"},
        {"check", "fast self-validation suite"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, *ctx.out, err);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        RunConfig cfg;
        if (*o_config) {
            json j;
            try {
                j = json::parse(io::read_file(config_file));
            } catch (const json::exception& e) {
                throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
            }
            apply_json(cfg, j);
        }
        if (*o_out) cfg.out_dir = out_dir;
        if (resume) cfg.resume = true;
        if (*o_preset) cfg.preset = preset;
        if (*o_phase) cfg.phase_file = phase_file;
        if (*o_seed) cfg.seed = seed;
        if (*o_modes) cfg.modes_per_axis = modes;
        if (*o_periods) cfg.periods = parse_periods(periods);
        if (*o_grids) cfg.grids = parse_int_list(grids);
        if (equilibrium) cfg.equilibrium_start = true;
        if (*o_input) cfg.input = input;
        if (*o_output) cfg.output = output;
        if (!cfg.phase_file.empty() && !fs::exists(cfg.phase_file))
            throw ConfigError("phase file " + cfg.phase_file + " does not exist");

        if (command == "phases") return cmd_phases(cfg, ctx);
        if (command == "hbar") return cmd_hbar(cfg, ctx);
        if (command == "density") return cmd_density(cfg, ctx);
        if (command == "confine") return cmd_confine(cfg, ctx);
        if (command == "fit") return cmd_fit(cfg, ctx);
        return cmd_check(cfg, ctx);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kConfigError;
    } catch (const AbortedRun& e) {
        err << "run aborted: " << e.what() << "\n";
        return kAborted;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace pwrelax::cli
