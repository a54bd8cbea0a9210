#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "pwrelax/density.hpp"

using namespace pwrelax;

namespace {

CellPartition small_partition(int ppc = 4) {
    CellPartition p;
    p.points_per_cell_axis = ppc;
    return p;
}

std::vector<double> phases_of(const SuperpositionSpec& s) { return {s.phases().begin(), s.phases().end()}; }

}  // namespace

TEST_CASE("partition geometry", "[density]") {
    for (int g : {29, 30, 31}) {
        CellPartition p;
        p.points_per_cell_axis = g;
        REQUIRE_NOTHROW(p.validate());
        CHECK(p.cell_side() == 0.625);
        CHECK(p.grid_points_per_axis() == 16 * g);
        CHECK(p.grid_size() == static_cast<std::size_t>(16 * g) * (16 * g));
        // Sample points sit strictly inside their cells, symmetric about the origin.
        for (int k = 0; k < p.grid_points_per_axis(); ++k) {
            const int c = p.cell_of(k);
            CHECK(p.cell_at(p.coordinate(k)) == c);
            CHECK(p.coordinate(k) == Catch::Approx(-p.coordinate(p.grid_points_per_axis() - 1 - k)).margin(1e-12));
        }
    }
    CellPartition p;
    CHECK(p.cell_at(-5.01) == -1);
    CHECK(p.cell_at(5.0) == -1);
    CHECK(p.cell_at(-5.0) == 0);
    CHECK(p.cell_centre(0) == Catch::Approx(-4.6875));
    p.points_per_cell_axis = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("density at t = 0 is the initial density", "[density]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    const auto f = build_density(m4, 0.0, small_partition(6), IntegratorConfig{});
    CHECK(f.accuracy_fraction == 1.0);
    for (int i = 0; i < f.n(); i += 7)
        for (int j = 0; j < f.n(); j += 5) {
            const Point2 g = f.point(i, j);
            CHECK(f.rho[f.index(i, j)] == Catch::Approx(oracle::phi_low(0, g.q1) * oracle::phi_low(0, g.q2) *
                                                          oracle::phi_low(0, g.q1) * oracle::phi_low(0, g.q2))
                                               .epsilon(1e-12));
            CHECK(f.rho_qt[f.index(i, j)] ==
                  Catch::Approx(std::norm(oracle::psi_low(2, phases_of(m4), g.q1, g.q2, 0.0))).epsilon(1e-10));
        }
    CHECK_THROWS_AS(compute_density(m4, -1.0, small_partition(), IntegratorConfig{}), DomainError);
}

TEST_CASE("ground state density is static", "[density]") {
    const auto g = SuperpositionSpec::ground_state();
    const auto f = build_density(g, 3 * kTwoPi, small_partition(), IntegratorConfig{});
    for (std::size_t k = 0; k < f.rho.size(); ++k) {
        CHECK(f.valid[k] == 1);
        CHECK(f.rho[k] == Catch::Approx(f.rho_qt[k]).epsilon(1e-12));
    }
    CHECK(hbar(coarse_grain(f)) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("coarse graining", "[density]") {
    DensityField f;
    f.partition = small_partition(3);
    const auto n = f.partition.grid_size();
    f.rho.assign(n, 0.25);
    f.rho_qt.assign(n, 0.5);
    f.valid.assign(n, 1);
    f.recount();
    const auto c = coarse_grain(f);
    for (std::size_t k = 0; k < c.rho_bar.size(); ++k) {
        CHECK(c.rho_bar[k] == 0.25);
        CHECK(c.rho_qt_bar[k] == 0.5);
        CHECK(c.counts[k] == 9);
    }
    CHECK(hbar(c) == Catch::Approx(0.25 * std::log(0.5) * 100.0));

    // Invalid samples are ignored; a cell with none left is starved.
    f.rho[f.index(0, 0)] = 100.0;
    f.valid[f.index(0, 0)] = 0;
    CHECK(coarse_grain(f).rho_bar[0] == 0.25);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) f.valid[f.index(i, j)] = 0;
    f.recount();
    CHECK_THROWS_AS(coarse_grain(f), CellStarved);
}

TEST_CASE("cell averages agree with Gauss-Legendre quadrature", "[density][oracle]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    const auto ph = phases_of(m4);
    const auto f = build_density(m4, 0.0, CellPartition{}, IntegratorConfig{});
    const auto c = coarse_grain(f);
    const double eps = 0.625;
    for (int a = 2; a < 14; a += 3)
        for (int b = 1; b < 15; b += 4) {
            const double x0 = -5 + a * eps, y0 = -5 + b * eps;
            const double q = oracle::cell_average(
                [&](double x, double y) { return std::norm(oracle::psi_low(2, ph, x, y, 0.0)); }, x0, y0, eps);
            const double r = oracle::cell_average(
                [](double x, double y) { return std::pow(oracle::phi_low(0, x) * oracle::phi_low(0, y), 2); }, x0,
                y0, eps);
            INFO("cell " << a << "," << b);
            CHECK(c.rho_qt_bar[c.index(a, b)] == Catch::Approx(q).epsilon(0.01));
            CHECK(c.rho_bar[c.index(a, b)] == Catch::Approx(r).epsilon(0.01));
        }
}

TEST_CASE("H-bar vanishes at equilibrium and diverges on empty support", "[density]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    const auto eq = build_density(m4, 0.0, small_partition(), IntegratorConfig{}, InitialDensity::Equilibrium);
    CHECK(hbar(coarse_grain(eq)) == Catch::Approx(0.0).margin(1e-14));

    CoarseField bad;
    bad.partition = small_partition();
    bad.rho_bar.assign(bad.partition.cell_count(), 0.0);
    bad.rho_qt_bar.assign(bad.partition.cell_count(), 0.0);
    bad.rho_bar[3] = 0.1;
    CHECK_THROWS_AS(hbar(bad), InfiniteHBar);
    bad.rho_bar[3] = 0.0;
    CHECK(hbar(bad) == 0.0);
}

TEST_CASE("initial H-bar of the four-mode state", "[density]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    const auto ph = phases_of(m4);
    for (int g : {29, 30, 31}) {
        CellPartition p;
        p.points_per_cell_axis = g;
        const double h = hbar(coarse_grain(build_density(m4, 0.0, p, IntegratorConfig{})));
        CHECK(h == Catch::Approx(0.49).margin(0.05));
    }
    const double ref = oracle::hbar_quadrature(
        [](double x, double y) { return std::pow(oracle::phi_low(0, x) * oracle::phi_low(0, y), 2); },
        [&](double x, double y) { return std::norm(oracle::psi_low(2, ph, x, y, 0.0)); });
    CHECK(hbar(coarse_grain(build_density(m4, 0.0, CellPartition{}, IntegratorConfig{}))) ==
          Catch::Approx(ref).epsilon(0.01));
}

TEST_CASE("initial H-bar of a 25-mode state matches quadrature", "[density][oracle]") {
    const auto spec = SuperpositionSpec::random(2, 5);
    const auto ph = phases_of(spec);
    const double ref = oracle::hbar_quadrature(
        [](double x, double y) { return std::pow(oracle::phi_low(0, x) * oracle::phi_low(0, y), 2); },
        [&](double x, double y) { return std::norm(oracle::psi_low(5, ph, x, y, 0.0)); });
    const double h = hbar(coarse_grain(build_density(spec, 0.0, CellPartition{}, IntegratorConfig{})));
    CHECK(h == Catch::Approx(ref).epsilon(0.01));
    CHECK(h > 0.0);
}

TEST_CASE("equilibrium start stays at zero", "[density][property]") {
    SeriesOptions opts;
    opts.partition = small_partition();
    opts.grids = {4, 5};
    opts.initial = InitialDensity::Equilibrium;
    const auto s = hbar_series(SuperpositionSpec::m4_paper(), {0.0, kTwoPi, 2 * kTwoPi}, IntegratorConfig{}, opts);
    REQUIRE(s.entries.size() == 3);
    for (const auto& e : s.entries)
        for (double v : e.values) CHECK(std::abs(v) <= 1e-3);
}

TEST_CASE("series resumes from stored fields", "[density]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    const std::vector<double> times{0.0, 0.5 * kTwoPi, kTwoPi};
    std::map<std::pair<std::size_t, int>, DensityField> saved;
    int computed = 0;
    SeriesOptions opts;
    opts.partition = small_partition();
    opts.grids = {4};
    opts.store = FieldStore{
        [&](std::size_t ti, int g) -> std::optional<DensityField> {
            auto it = saved.find({ti, g});
            if (it == saved.end()) return std::nullopt;
            return it->second;
        },
        [&](std::size_t ti, int g, const DensityField& f) {
            ++computed;
            saved[{ti, g}] = f;
        }};
    const auto first = hbar_series(m4, times, IntegratorConfig{}, opts);
    CHECK(computed == 3);
    const auto second = hbar_series(m4, times, IntegratorConfig{}, opts);
    CHECK(computed == 3);
    for (std::size_t i = 0; i < times.size(); ++i) CHECK(first.entries[i].values == second.entries[i].values);

    // A stored field for a different time is recomputed rather than trusted.
    saved.at({1, 4}).time = 99.0;
    hbar_series(m4, times, IntegratorConfig{}, opts);
    CHECK(computed == 4);
}

TEST_CASE("series rejects bad schedules and aborts on low accuracy", "[density][errors]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    SeriesOptions opts;
    opts.partition = small_partition();
    opts.grids = {4};
    CHECK_THROWS_AS(hbar_series(m4, {1.0, 2.0}, IntegratorConfig{}, opts), DomainError);
    CHECK_THROWS_AS(hbar_series(m4, {0.0, 2.0, 2.0}, IntegratorConfig{}, opts), DomainError);

    IntegratorConfig starved;
    starved.max_steps_per_sub_interval = 3;
    std::size_t seen = 0;
    opts.on_progress = [&](const HBarSeries& s) { seen = s.entries.size(); };
    try {
        hbar_series(m4, {0.0, 20.0}, starved, opts);
        FAIL("expected AbortedRun");
    } catch (const AbortedRun& e) {
        CHECK(e.accuracy_fraction < kMinAccuracy);
    }
    CHECK(seen == 1);
}

TEST_CASE("smoothing lattice", "[density]") {
    const auto lat = SmoothingLattice::for_partition(CellPartition{});
    CHECK(lat.cells_per_axis == 76);
    CHECK(lat.centre(0) == Catch::Approx(-4.6875));
    CHECK(lat.centre(75) == Catch::Approx(4.6875));
    CHECK(lat.size() == 76u * 76u);

    DensityField f;
    f.partition = CellPartition{};
    const auto n = f.partition.grid_size();
    f.rho.assign(n, 1.0);
    f.rho_qt.assign(n, 1.0);
    f.valid.assign(n, 1);
    f.recount();
    // Each overlapping cell covers exactly 30 x 30 sample points.
    for (int a : {0, 1, 37, 75}) {
        const double c = lat.centre(a);
        const auto r = detail::grid_range(f.partition, c - 0.3125, c + 0.3125);
        CHECK(r.second - r.first == 30);
    }
    const auto s = smooth_density(f);
    for (double v : s.rho) CHECK(v == 1.0);

    const auto m4 = SuperpositionSpec::m4_paper();
    const auto eq = build_density(m4, 0.0, CellPartition{}, IntegratorConfig{}, InitialDensity::Equilibrium);
    const auto se = smooth_density(eq);
    CHECK(relative_l1(se.rho_qt, se.rho) == Catch::Approx(0.0).margin(1e-14));
    CHECK(relative_l1({1.0, 1.0}, {1.0, 0.0}) == 0.5);
    CHECK_THROWS_AS(relative_l1({1.0}, {}), DomainError);
}

TEST_CASE("forward cross-check", "[density][oracle]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    CHECK_THROWS_AS(forward_crosscheck(m4, 0.0, 9999, IntegratorConfig{}), DomainError);

    // At t = 0 deposition alone must reproduce the smoothed backward density.
    const auto fwd0 = forward_crosscheck(m4, 0.0, 40'000, IntegratorConfig{});
    const auto back0 = smooth_density(build_density(m4, 0.0, CellPartition{}, IntegratorConfig{}));
    CHECK(relative_l1(back0.rho, fwd0.rho) <= 0.02);
    CHECK(relative_l1(back0.rho_qt, fwd0.rho_qt) <= 0.02);

    const auto g = SuperpositionSpec::ground_state();
    const auto fg = forward_crosscheck(g, kTwoPi, 10'000, IntegratorConfig{});
    CHECK(relative_l1(fg.rho_qt, fg.rho) <= 0.02);
}

TEST_CASE("forward and backward densities agree after one period", "[density][oracle]") {
    const auto m4 = SuperpositionSpec::m4_paper();
    const CellPartition p;
    const auto back = smooth_density(build_density(m4, kTwoPi, p, IntegratorConfig{}));
    const auto fwd = forward_crosscheck(m4, kTwoPi, 40'000, IntegratorConfig{}, p);
    CHECK(relative_l1(back.rho_qt, fwd.rho_qt) <= 1e-3);
    const double l1 = relative_l1(back.rho, fwd.rho);
    INFO("relative L1 = " << l1);
    CHECK(l1 <= 0.05);
}
