#pragma once

// Nonequilibrium densities by backtracking, coarse-graining, the
// coarse-grained H-function, overlapping-cell smoothing, and the
// forward-evolution cross-check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pwrelax/analysis.hpp"
#include "pwrelax/errors.hpp"
#include "pwrelax/integrator.hpp"
#include "pwrelax/parallel.hpp"
#include "pwrelax/wavefunction.hpp"

namespace pwrelax {

inline constexpr double kMinAccuracy = 0.95;

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Square box centred on the origin, split into cells_per_axis^2 coarse cells,
/// each sampled by a cell-centred points_per_cell_axis^2 sub-lattice.
struct CellPartition {
    double box_side = 10.0;
    int cells_per_axis = 16;
    int points_per_cell_axis = 30;

    double cell_side() const noexcept { return box_side / cells_per_axis; }
    int grid_points_per_axis() const noexcept { return cells_per_axis * points_per_cell_axis; }
    std::size_t grid_size() const noexcept {
        const auto n = static_cast<std::size_t>(grid_points_per_axis());
        return n * n;
    }
    std::size_t cell_count() const noexcept {
        return static_cast<std::size_t>(cells_per_axis) * static_cast<std::size_t>(cells_per_axis);
    }
    double spacing() const noexcept { return box_side / grid_points_per_axis(); }
    double lower() const noexcept { return -0.5 * box_side; }
    /// Coordinate of grid index k (strictly inside its cell).
    double coordinate(int k) const noexcept { return lower() + (k + 0.5) * spacing(); }
    int cell_of(int k) const noexcept { return k / points_per_cell_axis; }
    /// Coarse cell containing coordinate x, or -1 outside the box.
    int cell_at(double x) const noexcept {
        const double u = (x - lower()) / cell_side();
        if (!(u >= 0.0) || u >= cells_per_axis) return -1;
        return std::min(cells_per_axis - 1, static_cast<int>(u));
    }
    double cell_centre(int c) const noexcept { return lower() + (c + 0.5) * cell_side(); }

    void validate() const {
        if (!(box_side > 0.0) || cells_per_axis < 1 || points_per_cell_axis < 1)
            throw ConfigError("cell partition needs positive box side, cell count and points per cell");
    }

    friend bool operator==(const CellPartition&, const CellPartition&) = default;
};

/// Point-sampled densities at one time. Flat index i * N + j with i along q1
/// and j along q2.
struct DensityField {
    double time = 0.0;
    CellPartition partition;
    std::vector<double> rho;
    std::vector<double> rho_qt;
    std::vector<std::uint8_t> valid;
    double accuracy_fraction = 0.0;

    int n() const noexcept { return partition.grid_points_per_axis(); }
    std::size_t index(int i, int j) const noexcept { return static_cast<std::size_t>(i) * n() + j; }
    Point2 point(int i, int j) const noexcept { return {partition.coordinate(i), partition.coordinate(j)}; }
    bool usable(double min_accuracy = kMinAccuracy) const noexcept { return accuracy_fraction >= min_accuracy; }

    void recount() {
        std::size_t good = 0;
        for (auto v : valid) good += v ? 1 : 0;
        accuracy_fraction = valid.empty() ? 0.0 : static_cast<double>(good) / static_cast<double>(valid.size());
    }
};

struct CoarseField {
    CellPartition partition;
    std::vector<double> rho_bar;
    std::vector<double> rho_qt_bar;
    std::vector<int> counts;  // valid sample points per cell

    std::size_t index(int a, int b) const noexcept {
        return static_cast<std::size_t>(a) * partition.cells_per_axis + b;
    }
};

/// Overlapping cells of side cell_side whose centres form a lattice with the
/// given shift, starting half a cell inside the lower box edge.
struct SmoothingLattice {
    double cell_side = 0.625;
    double shift = 0.125;
    int cells_per_axis = 76;
    double first_centre = -5.0 + 0.3125;

    /// Default lattice for a partition: shift of 20% of the cell side, spanning the box.
    static SmoothingLattice for_partition(const CellPartition& p, double shift_fraction = 0.2) {
        SmoothingLattice s;
        s.cell_side = p.cell_side();
        s.shift = shift_fraction * s.cell_side;
        s.cells_per_axis = static_cast<int>(std::lround((p.box_side - s.cell_side) / s.shift)) + 1;
        s.first_centre = p.lower() + 0.5 * s.cell_side;
        return s;
    }

    double centre(int k) const noexcept { return first_centre + k * shift; }
    std::size_t size() const noexcept {
        return static_cast<std::size_t>(cells_per_axis) * static_cast<std::size_t>(cells_per_axis);
    }
};

struct SmoothedField {
    double time = 0.0;
    SmoothingLattice lattice;
    std::vector<double> rho;     // indexed a * cells_per_axis + b, a along q1
    std::vector<double> rho_qt;

    std::size_t index(int a, int b) const noexcept {
        return static_cast<std::size_t>(a) * lattice.cells_per_axis + b;
    }
};

/// Which initial density is transported.
enum class InitialDensity {
    GroundState,  // |phi_0(q1) phi_0(q2)|^2, far from equilibrium
    Equilibrium,  // |psi(q, 0)|^2, the null test: H-bar must stay at zero
};

inline double initial_density(InitialDensity kind, const SuperpositionSpec& spec, Point2 p) {
    return kind == InitialDensity::GroundState ? rho_initial(p) : rho_qt(spec, p, 0.0);
}

/// Backtracks every grid point to t = 0 and transports rho/rho_QT. Never
/// throws on low accuracy; see build_density.
inline DensityField compute_density(const SuperpositionSpec& spec, double t, const CellPartition& partition,
                                    const IntegratorConfig& cfg,
                                    InitialDensity initial = InitialDensity::GroundState) {
    if (t < 0.0) throw DomainError("density time must be >= 0");
    partition.validate();
    cfg.validate();
    const GuidanceField field(spec, cfg.node_threshold);
    DensityField out;
    out.time = t;
    out.partition = partition;
    const std::size_t total = partition.grid_size();
    out.rho.assign(total, 0.0);
    out.rho_qt.assign(total, 0.0);
    out.valid.assign(total, 0);
    const int n = partition.grid_points_per_axis();

    parallel_for(total, [&](std::size_t idx) {
        const int i = static_cast<int>(idx / n);
        const int j = static_cast<int>(idx % n);
        const Point2 g{partition.coordinate(i), partition.coordinate(j)};
        const double qt_now = rho_qt(spec, g, t);
        out.rho_qt[idx] = qt_now;
        const TrajectoryOutcome back = backtrack(field, g, t, cfg);
        if (!back.ok()) return;
        const double qt_origin = rho_qt(spec, back.endpoint, 0.0);
        if (!(qt_origin > 0.0)) return;
        out.rho[idx] = initial_density(initial, spec, back.endpoint) * (qt_now / qt_origin);
        out.valid[idx] = std::isfinite(out.rho[idx]) ? 1 : 0;
        if (!out.valid[idx]) out.rho[idx] = 0.0;
    });
    out.recount();
    return out;
}

inline void require_usable(const DensityField& field, double min_accuracy = kMinAccuracy) {
    if (!field.usable(min_accuracy))
        throw AbortedRun("accuracy fraction " + std::to_string(field.accuracy_fraction) + " at t = " +
                             std::to_string(field.time) + " is below " + std::to_string(min_accuracy),
                         field.accuracy_fraction);
}

/// compute_density followed by the accuracy check (AbortedRun below 95%).
inline DensityField build_density(const SuperpositionSpec& spec, double t, const CellPartition& partition,
                                  const IntegratorConfig& cfg,
                                  InitialDensity initial = InitialDensity::GroundState) {
    DensityField f = compute_density(spec, t, partition, cfg, initial);
    require_usable(f);
    return f;
}

/// Per-cell means of the valid samples. Throws CellStarved for an empty cell.
inline CoarseField coarse_grain(const DensityField& field) {
    const CellPartition& p = field.partition;
    CoarseField out;
    out.partition = p;
    const std::size_t cells = p.cell_count();
    std::vector<CompensatedSum> sr(cells), sq(cells);
    out.counts.assign(cells, 0);
    const int n = field.n();
    for (int i = 0; i < n; ++i) {
        const int a = p.cell_of(i);
        for (int j = 0; j < n; ++j) {
            const std::size_t idx = field.index(i, j);
            if (!field.valid[idx]) continue;
            const std::size_t c = out.index(a, p.cell_of(j));
            sr[c].add(field.rho[idx]);
            sq[c].add(field.rho_qt[idx]);
            ++out.counts[c];
        }
    }
    out.rho_bar.resize(cells);
    out.rho_qt_bar.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        if (out.counts[c] == 0)
            throw CellStarved("coarse cell " + std::to_string(c) + " has no valid sample points");
        out.rho_bar[c] = sr[c].value() / out.counts[c];
        out.rho_qt_bar[c] = sq[c].value() / out.counts[c];
    }
    return out;
}

/// Coarse-grained H-function: sum over cells of rho_bar ln(rho_bar / rho_qt_bar) times the cell area.
inline double hbar(const CoarseField& coarse) {
    CompensatedSum sum;
    for (std::size_t c = 0; c < coarse.rho_bar.size(); ++c) {
        const double r = coarse.rho_bar[c];
        const double q = coarse.rho_qt_bar[c];
        if (r == 0.0) continue;
        if (!(q > 0.0)) throw InfiniteHBar("cell " + std::to_string(c) + " has rho_bar > 0 but rho_qt_bar = 0");
        sum.add(r * std::log(r / q));
    }
    const double eps = coarse.partition.cell_side();
    return sum.value() * eps * eps;
}

namespace detail {

// Grid indices k with lo <= coordinate(k) < hi, as a half-open range.
inline std::pair<int, int> grid_range(const CellPartition& p, double lo, double hi) {
    const double h = p.spacing();
    constexpr double kSlack = 1e-9;
    auto first_at_or_above = [&](double x) {
        return static_cast<int>(std::ceil((x - p.lower()) / h - 0.5 - kSlack));
    };
    const int n = p.grid_points_per_axis();
    return {std::clamp(first_at_or_above(lo), 0, n), std::clamp(first_at_or_above(hi), 0, n)};
}

}  // namespace detail

/// Means of rho and rho_QT over each overlapping cell of the smoothing lattice.
inline SmoothedField smooth_density(const DensityField& field, std::optional<SmoothingLattice> lattice = {}) {
    const CellPartition& p = field.partition;
    SmoothedField out;
    out.time = field.time;
    out.lattice = lattice.value_or(SmoothingLattice::for_partition(p));
    const int m = out.lattice.cells_per_axis;
    std::vector<std::pair<int, int>> ranges(m);
    for (int a = 0; a < m; ++a) {
        const double c = out.lattice.centre(a);
        ranges[a] = detail::grid_range(p, c - 0.5 * out.lattice.cell_side, c + 0.5 * out.lattice.cell_side);
    }
    out.rho.assign(out.lattice.size(), 0.0);
    out.rho_qt.assign(out.lattice.size(), 0.0);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
            CompensatedSum sr, sq;
            int count = 0;
            for (int i = ranges[a].first; i < ranges[a].second; ++i)
                for (int j = ranges[b].first; j < ranges[b].second; ++j) {
                    const std::size_t idx = field.index(i, j);
                    if (!field.valid[idx]) continue;
                    sr.add(field.rho[idx]);
                    sq.add(field.rho_qt[idx]);
                    ++count;
                }
            if (count == 0)
                throw CellStarved("smoothing cell (" + std::to_string(a) + ", " + std::to_string(b) +
                                  ") has no valid sample points");
            out.rho[out.index(a, b)] = sr.value() / count;
            out.rho_qt[out.index(a, b)] = sq.value() / count;
        }
    return out;
}

/// Sum |x - y| / sum |x| over two equally sized value arrays.
inline double relative_l1(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DomainError("relative_l1 needs equal sizes");
    CompensatedSum diff, mass;
    for (std::size_t i = 0; i < x.size(); ++i) {
        diff.add(std::abs(x[i] - y[i]));
        mass.add(std::abs(x[i]));
    }
    return mass.value() > 0.0 ? diff.value() / mass.value() : 0.0;
}

/// Independent forward-evolution estimate of the smoothed density at time t.
/// A uniform lattice of about n_particles particles over the box carries
/// mass rho_initial * area; each surviving particle is deposited onto the
/// overlapping cells in proportion to the overlap of its own square with the
/// cell. rho_qt is the cell average of |psi|^2 from a 30x30 midpoint rule.
inline SmoothedField forward_crosscheck(const SuperpositionSpec& spec, double t, std::int64_t n_particles,
                                        const IntegratorConfig& cfg, const CellPartition& partition = {},
                                        InitialDensity initial = InitialDensity::GroundState) {
    if (n_particles < 10'000) throw DomainError("forward cross-check needs at least 1e4 particles");
    partition.validate();
    cfg.validate();
    const GuidanceField field(spec, cfg.node_threshold);
    const int per_axis = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_particles))));
    const double hp = partition.box_side / per_axis;
    const std::size_t total = static_cast<std::size_t>(per_axis) * per_axis;

    std::vector<Point2> final_pos(total);
    std::vector<double> mass(total, 0.0);
    std::vector<std::uint8_t> alive(total, 0);
    parallel_for(total, [&](std::size_t idx) {
        const int i = static_cast<int>(idx / per_axis);
        const int j = static_cast<int>(idx % per_axis);
        const Point2 start{partition.lower() + (i + 0.5) * hp, partition.lower() + (j + 0.5) * hp};
        mass[idx] = initial_density(initial, spec, start) * hp * hp;
        const TrajectoryOutcome out = integrate(field, start, 0.0, t, cfg);
        if (out.ok()) {
            final_pos[idx] = out.endpoint;
            alive[idx] = 1;
        }
    });
    std::size_t survivors = 0;
    for (auto a : alive) survivors += a;
    const double survival = static_cast<double>(survivors) / static_cast<double>(total);
    if (survival < kMinAccuracy)
        throw AbortedRun("forward cross-check survival " + std::to_string(survival) + " below 0.95", survival);

    SmoothedField out;
    out.time = t;
    out.lattice = SmoothingLattice::for_partition(partition);
    const SmoothingLattice& lat = out.lattice;
    const int m = lat.cells_per_axis;
    out.rho.assign(lat.size(), 0.0);
    out.rho_qt.assign(lat.size(), 0.0);

    auto overlap = [](double a0, double a1, double b0, double b1) {
        return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
    };
    const double half_cell = 0.5 * lat.cell_side;
    std::vector<CompensatedSum> acc(lat.size());
    for (std::size_t idx = 0; idx < total; ++idx) {
        if (!alive[idx]) continue;
        const Point2 q = final_pos[idx];
        const double x0 = q.q1 - 0.5 * hp, x1 = q.q1 + 0.5 * hp;
        const double y0 = q.q2 - 0.5 * hp, y1 = q.q2 + 0.5 * hp;
        // Lattice cells whose extent can touch the particle square.
        const int a_lo = std::max(0, static_cast<int>(std::floor((x0 - half_cell - lat.first_centre) / lat.shift)));
        const int a_hi = std::min(m - 1, static_cast<int>(std::ceil((x1 + half_cell - lat.first_centre) / lat.shift)));
        const int b_lo = std::max(0, static_cast<int>(std::floor((y0 - half_cell - lat.first_centre) / lat.shift)));
        const int b_hi = std::min(m - 1, static_cast<int>(std::ceil((y1 + half_cell - lat.first_centre) / lat.shift)));
        for (int a = a_lo; a <= a_hi; ++a) {
            const double c1 = lat.centre(a);
            const double ox = overlap(x0, x1, c1 - half_cell, c1 + half_cell);
            if (ox <= 0.0) continue;
            for (int b = b_lo; b <= b_hi; ++b) {
                const double c2 = lat.centre(b);
                const double oy = overlap(y0, y1, c2 - half_cell, c2 + half_cell);
                if (oy <= 0.0) continue;
                acc[out.index(a, b)].add(mass[idx] * (ox * oy) / (hp * hp));
            }
        }
    }
    const double cell_area = lat.cell_side * lat.cell_side;
    for (std::size_t c = 0; c < lat.size(); ++c) out.rho[c] = acc[c].value() / cell_area;

    constexpr int kQuad = 30;
    parallel_for(lat.size(), [&](std::size_t c) {
        const int a = static_cast<int>(c / m);
        const int b = static_cast<int>(c % m);
        const double lo1 = lat.centre(a) - half_cell, lo2 = lat.centre(b) - half_cell;
        const double h = lat.cell_side / kQuad;
        CompensatedSum s;
        for (int i = 0; i < kQuad; ++i)
            for (int j = 0; j < kQuad; ++j) s.add(rho_qt(spec, {lo1 + (i + 0.5) * h, lo2 + (j + 0.5) * h}, t));
        out.rho_qt[c] = s.value() / (kQuad * kQuad);
    });
    return out;
}

/// Persistence hook for hbar_series: load returns a previously completed field
/// for (time index, grid), save stores one.
struct FieldStore {
    std::function<std::optional<DensityField>(std::size_t, int)> load;
    std::function<void(std::size_t, int, const DensityField&)> save;
};

struct SeriesOptions {
    CellPartition partition;  // points_per_cell_axis is overridden per grid
    std::vector<int> grids{29, 30, 31};
    InitialDensity initial = InitialDensity::GroundState;
    std::optional<FieldStore> store;
    /// Called after each completed time with the series so far.
    std::function<void(const HBarSeries&)> on_progress;
    /// Called for every field (computed or loaded), e.g. for snapshots.
    std::function<void(std::size_t, int, const DensityField&)> on_field;
};

/// H-bar at each time for every sampling grid. Stops with AbortedRun when a
/// field falls below 95% accuracy; on_progress has seen every completed time.
inline HBarSeries hbar_series(const SuperpositionSpec& spec, const std::vector<double>& times,
                              const IntegratorConfig& cfg, const SeriesOptions& opts = {}) {
    if (times.empty() || times.front() != 0.0) throw DomainError("series times must start at 0");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw DomainError("series times must be strictly increasing");
    if (opts.grids.empty()) throw DomainError("series needs at least one sampling grid");

    HBarSeries series;
    series.grids = opts.grids;
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
        std::vector<double> values;
        double acc_min = 1.0;
        for (int g : opts.grids) {
            CellPartition part = opts.partition;
            part.points_per_cell_axis = g;
            std::optional<DensityField> field;
            if (opts.store && opts.store->load) {
                field = opts.store->load(ti, g);
                if (field && (field->time != times[ti] || !(field->partition == part))) field.reset();
            }
            if (!field) {
                field = compute_density(spec, times[ti], part, cfg, opts.initial);
                if (opts.store && opts.store->save) opts.store->save(ti, g, *field);
            }
            if (opts.on_field) opts.on_field(ti, g, *field);
            require_usable(*field);
            values.push_back(hbar(coarse_grain(*field)));
            acc_min = std::min(acc_min, field->accuracy_fraction);
        }
        series.add(times[ti], std::move(values), acc_min);
        if (opts.on_progress) opts.on_progress(series);
    }
    return series;
}

}  // namespace pwrelax
