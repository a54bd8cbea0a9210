#pragma once

// Confinement diagnostics: long forward traces, the fate of small squares,
// and a mass-weighted coverage metric over the coarse-graining cells.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pwrelax/density.hpp"
#include "pwrelax/integrator.hpp"
#include "pwrelax/parallel.hpp"
#include "pwrelax/wavefunction.hpp"

namespace pwrelax {

/// Standard starting points for traces and square centres.
inline const std::vector<Point2>& standard_start_points() {
    static const std::vector<Point2> pts{{1.5, 1.5},  {1.5, -1.5}, {-1.5, 1.5}, {-1.5, -1.5}, {0.5, 0.0},
                                         {0.0, -0.5}, {-0.5, 0.0}, {0.0, 0.5},  {0.25, 0.25}, {-0.25, 0.25}};
    return pts;
}

struct TrajectoryTrace {
    Point2 start;
    double stride = 0.0;
    std::vector<double> times;
    std::vector<Point2> points;
    TrajectoryStatus status = TrajectoryStatus::Succeeded;
    std::int64_t steps_used = 0;
};

/// Forward trace sampled at t = k * stride for k = 0..floor(t_end / stride).
/// A failure truncates the trace and is recorded in status.
inline TrajectoryTrace trace(const GuidanceField& field, Point2 start, double t_end, double stride,
                             const IntegratorConfig& cfg) {
    if (!(stride > 0.0)) throw DomainError("trace stride must be positive");
    if (t_end < 0.0) throw DomainError("trace end time must be >= 0");
    TrajectoryTrace tr;
    tr.start = start;
    tr.stride = stride;
    const auto samples = static_cast<std::int64_t>(std::floor(t_end / stride * (1.0 + 1e-12)));
    tr.times.push_back(0.0);
    tr.points.push_back(start);
    const AdaptiveStepper stepper(field, cfg);
    Point2 q = start;
    double h = 0.0;
    for (std::int64_t k = 1; k <= samples; ++k) {
        const double t0 = static_cast<double>(k - 1) * stride;
        const double t1 = static_cast<double>(k) * stride;
        std::int64_t used = 0;
        const std::int64_t cap = std::min(cfg.max_steps_per_sub_interval, cfg.max_steps_total - tr.steps_used);
        const TrajectoryStatus st = stepper.advance(q, t0, t1, h, cap, used);
        tr.steps_used += used;
        if (st != TrajectoryStatus::Succeeded) {
            tr.status = st;
            break;
        }
        tr.times.push_back(t1);
        tr.points.push_back(q);
    }
    return tr;
}

inline TrajectoryTrace trace(const SuperpositionSpec& spec, Point2 start, double t_end, double stride,
                             const IntegratorConfig& cfg) {
    const GuidanceField field(spec, cfg.node_threshold);
    return trace(field, start, t_end, stride, cfg);
}

struct SquareFate {
    Point2 centre;
    double side = 0.0;
    int points_per_axis = 10;
    std::vector<Point2> initial;
    std::vector<Point2> final;
    std::vector<TrajectoryStatus> status;

    std::vector<Point2> valid_final() const {
        std::vector<Point2> out;
        for (std::size_t i = 0; i < final.size(); ++i)
            if (status[i] == TrajectoryStatus::Succeeded) out.push_back(final[i]);
        return out;
    }
};

/// Forward-evolves an n x n cell-centred lattice filling the square.
inline SquareFate square_fate(const SuperpositionSpec& spec, Point2 centre, double side, double t_end,
                              const IntegratorConfig& cfg, int points_per_axis = 10) {
    if (!(side > 0.0)) throw DomainError("square side must be positive");
    if (points_per_axis < 1) throw DomainError("square lattice needs at least one point per axis");
    const GuidanceField field(spec, cfg.node_threshold);
    SquareFate fate;
    fate.centre = centre;
    fate.side = side;
    fate.points_per_axis = points_per_axis;
    const double h = side / points_per_axis;
    for (int i = 0; i < points_per_axis; ++i)
        for (int j = 0; j < points_per_axis; ++j)
            fate.initial.push_back({centre.q1 - 0.5 * side + (i + 0.5) * h, centre.q2 - 0.5 * side + (j + 0.5) * h});
    fate.final.resize(fate.initial.size());
    fate.status.resize(fate.initial.size());
    parallel_for(fate.initial.size(), [&](std::size_t k) {
        const TrajectoryOutcome out = integrate(field, fate.initial[k], 0.0, t_end, cfg);
        fate.status[k] = out.status;
        fate.final[k] = out.ok() ? out.endpoint : fate.initial[k];
    });
    return fate;
}

/// Period-averaged |psi|^2 mass of each coarse cell (midpoint rule in space,
/// uniform samples over one period in time, which is exact for the
/// trigonometric time dependence when time_samples exceeds 2 (K - 1)).
inline std::vector<double> equilibrium_cell_mass(const SuperpositionSpec& spec, const CellPartition& partition,
                                                 int samples_per_cell_axis = 8, int time_samples = 32) {
    const int c = partition.cells_per_axis;
    const double eps = partition.cell_side();
    const double h = eps / samples_per_cell_axis;
    std::vector<double> mass(partition.cell_count(), 0.0);
    parallel_for(mass.size(), [&](std::size_t idx) {
        const int a = static_cast<int>(idx / c);
        const int b = static_cast<int>(idx % c);
        const double lo1 = partition.lower() + a * eps, lo2 = partition.lower() + b * eps;
        CompensatedSum s;
        for (int k = 0; k < time_samples; ++k) {
            const double t = kTwoPi * k / time_samples;
            for (int i = 0; i < samples_per_cell_axis; ++i)
                for (int j = 0; j < samples_per_cell_axis; ++j)
                    s.add(rho_qt(spec, {lo1 + (i + 0.5) * h, lo2 + (j + 0.5) * h}, t));
        }
        mass[idx] = s.value() * h * h / time_samples;
    });
    return mass;
}

inline constexpr double kSignificantCellMass = 1e-4;

/// Fraction of the significant equilibrium mass lying in cells visited by at
/// least one point. Cells whose period-averaged mass is at most 1e-4 are
/// ignored in both numerator and denominator, so the result is in [0, 1].
inline double coverage_of_points(std::span<const Point2> points, const CellPartition& partition,
                                 const std::vector<double>& cell_mass) {
    std::vector<std::uint8_t> visited(partition.cell_count(), 0);
    for (const Point2& p : points) {
        const int a = partition.cell_at(p.q1);
        const int b = partition.cell_at(p.q2);
        if (a < 0 || b < 0) continue;
        visited[static_cast<std::size_t>(a) * partition.cells_per_axis + b] = 1;
    }
    CompensatedSum hit, total;
    for (std::size_t c = 0; c < cell_mass.size(); ++c) {
        if (!(cell_mass[c] > kSignificantCellMass)) continue;
        total.add(cell_mass[c]);
        if (visited[c]) hit.add(cell_mass[c]);
    }
    return total.value() > 0.0 ? hit.value() / total.value() : 0.0;
}

inline double coverage(std::span<const TrajectoryTrace> traces, const CellPartition& partition,
                       const std::vector<double>& cell_mass) {
    if (traces.empty()) throw DomainError("coverage needs at least one trace");
    std::vector<Point2> all;
    for (const auto& tr : traces) all.insert(all.end(), tr.points.begin(), tr.points.end());
    return coverage_of_points(all, partition, cell_mass);
}

inline double coverage(std::span<const TrajectoryTrace> traces, const CellPartition& partition,
                       const SuperpositionSpec& spec) {
    return coverage(traces, partition, equilibrium_cell_mass(spec, partition));
}

/// Spread of a final scatter: coverage of the cells holding its points.
/// Clustered streaks occupy few cells and score low.
inline double scatter_coverage(const SquareFate& fate, const CellPartition& partition,
                               const std::vector<double>& cell_mass) {
    const auto pts = fate.valid_final();
    return coverage_of_points(pts, partition, cell_mass);
}

struct ConfinementThresholds {
    double negligible = 0.8;  // coverage at or above: negligible confinement
    double mild = 0.4;        // [mild, negligible): mild; below: strong
    double clustered = 0.1;   // scatter coverage below: clustered streak
};

enum class ConfinementGrade { Negligible, Mild, Strong };

inline ConfinementGrade grade(double coverage_value, const ConfinementThresholds& th = {}) {
    if (coverage_value >= th.negligible) return ConfinementGrade::Negligible;
    if (coverage_value >= th.mild) return ConfinementGrade::Mild;
    return ConfinementGrade::Strong;
}

inline std::string_view to_string(ConfinementGrade g) {
    switch (g) {
        case ConfinementGrade::Negligible: return "negligible";
        case ConfinementGrade::Mild: return "mild";
        case ConfinementGrade::Strong: return "strong";
    }
    return "unknown";
}

}  // namespace pwrelax
