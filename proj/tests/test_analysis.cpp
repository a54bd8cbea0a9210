#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pwrelax/analysis.hpp"

using namespace pwrelax;

namespace {

HBarSeries synthetic(double a, double b, double c, int periods, double spread = 0.0) {
    HBarSeries s;
    s.grids = {29, 30, 31};
    for (int k = 0; k <= periods; ++k) {
        const double v = a * std::exp(-b * k) + c;
        s.add(k * kTwoPi, {v - spread / 2, v, v + spread / 2});
    }
    return s;
}

}  // namespace

TEST_CASE("exact model recovery", "[analysis]") {
    const auto fit = fit_exponential(synthetic(0.5, 0.3, 0.07, 20));
    CHECK(std::abs(fit.a - 0.5) <= 1e-6);
    CHECK(std::abs(fit.b - 0.3) <= 1e-6);
    CHECK(std::abs(fit.c - 0.07) <= 1e-6);
    CHECK(fit.rms_residual < 1e-9);
}

TEST_CASE("exact recovery across random draws", "[analysis][property]") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ua(0.05, 2.0), ub(0.05, 2.0), uc(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const double a = ua(rng), b = ub(rng), c = uc(rng) * a;
        const auto series = synthetic(a, b, c, 20);
        const auto fit = fit_exponential(series);
        INFO("a=" << a << " b=" << b << " c=" << c);
        CHECK(std::abs(fit.a - a) <= 1e-6);
        CHECK(std::abs(fit.b - b) <= 1e-6);
        CHECK(std::abs(fit.c - c) <= 1e-6);
        CHECK(std::abs((fit.a + fit.c) - series.entries.front().mean) <= 1e-12);
    }
}

TEST_CASE("fit is a local optimum and honours the constraint", "[analysis][property]") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 0.01);
    HBarSeries s;
    s.grids = {30};
    for (int k = 0; k <= 30; ++k) s.add(k * kTwoPi, {0.45 * std::exp(-0.2 * k) + 0.06 + (k ? noise(rng) : 0.0)});
    const auto fit = fit_exponential(s);
    CHECK(std::abs(fit.a + fit.c - s.entries.front().mean) <= 1e-12);
    CHECK(fit.b >= 0.0);
    CHECK(fit.c >= 0.0);
    CHECK(fit.rms_residual == Catch::Approx(fit_rms(s, fit.b, fit.c)).epsilon(1e-12));

    std::uniform_int_distribution<int> sign(0, 1);
    for (int i = 0; i < 20; ++i) {
        const double db = sign(rng) ? 1.01 : 0.99;
        const double dc = sign(rng) ? 1.01 : 0.99;
        CHECK(fit_rms(s, fit.b * db, fit.c * dc) >= fit.rms_residual);
    }
}

TEST_CASE("monotone data gives a nonnegative rate", "[analysis][property]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> drop(0.0, 0.05);
    for (int trial = 0; trial < 20; ++trial) {
        HBarSeries s;
        s.grids = {30};
        double v = 0.6;
        for (int k = 0; k <= 12; ++k) {
            s.add(k * kTwoPi, {v});
            v = std::max(0.0, v - drop(rng));
        }
        const auto fit = fit_exponential(s);
        CHECK(fit.b >= 0.0);
    }
}

TEST_CASE("residue is clamped at zero", "[analysis]") {
    HBarSeries s;
    s.grids = {30};
    for (int k = 0; k <= 10; ++k) s.add(k * kTwoPi, {0.5 * std::exp(-0.4 * k) - 0.05});
    const auto fit = fit_exponential(s);
    CHECK(fit.c == 0.0);
    CHECK(fit.a == s.entries.front().mean);
}

TEST_CASE("degenerate series are rejected", "[analysis][errors]") {
    CHECK_THROWS_AS(fit_exponential(synthetic(0.5, 0.3, 0.0, 2)), DegenerateSeries);
    HBarSeries flat;
    flat.grids = {30};
    for (int k = 0; k < 6; ++k) flat.add(k * kTwoPi, {0.2});
    CHECK_THROWS_AS(fit_exponential(flat), DegenerateSeries);
    HBarSeries zero;
    zero.grids = {30};
    for (int k = 0; k < 6; ++k) zero.add(k * kTwoPi, {k == 0 ? 0.0 : 0.1});
    CHECK_THROWS_AS(fit_exponential(zero), DegenerateSeries);
    HBarSeries late;
    late.grids = {30};
    for (int k = 1; k < 6; ++k) late.add(k * kTwoPi, {1.0 / k});
    CHECK_THROWS_AS(fit_exponential(late), DegenerateSeries);

    HBarSeries s;
    s.add(1.0, {0.1});
    CHECK_THROWS_AS(s.add(1.0, {0.1}), DomainError);
}

TEST_CASE("saturation time", "[analysis]") {
    HBarSeries flat;
    flat.grids = {30};
    for (int k = 0; k < 8; ++k) flat.add(k * kTwoPi, {0.07});
    FitResult f;
    f.c = 0.07;
    CHECK(saturation_time(flat, f) == 0.0);

    // Band floor 0.02 around c = 0: first k with 0.5 e^{-0.3k} < 0.02 is k = 11.
    FitResult pure;
    pure.a = 0.5;
    pure.b = 0.3;
    pure.c = 0.0;
    const auto long_series = synthetic(0.5, 0.3, 0.0, 20);
    const auto ts = saturation_time(long_series, pure);
    REQUIRE(ts.has_value());
    CHECK(*ts == Catch::Approx(11 * kTwoPi));
    CHECK(std::abs(0.5 * std::exp(-0.3 * 11) - 0.0) < 0.02);
    CHECK(std::abs(0.5 * std::exp(-0.3 * 10) - 0.0) > 0.02);

    // Three time constants (k = 0..10) never enter the band.
    CHECK_FALSE(saturation_time(synthetic(0.5, 0.3, 0.0, 10), pure).has_value());

    // A wide grid spread widens the band.
    const auto spread = synthetic(0.5, 0.3, 0.0, 10, 0.1);
    CHECK(saturation_time(spread, pure).value() < 11 * kTwoPi);
}

TEST_CASE("log series", "[analysis]") {
    HBarSeries ones;
    ones.grids = {30};
    ones.add(0.0, {1.0});
    CHECK(log_series(ones).entries.front().ln_mean == 0.0);

    HBarSeries ex;
    ex.grids = {30};
    std::vector<double> x, y;
    for (int k = 0; k <= 10; ++k) ex.add(k * kTwoPi, {std::exp(-static_cast<double>(k))});
    for (const auto& e : log_series(ex).entries) {
        x.push_back(e.time / kTwoPi);
        y.push_back(e.ln_mean);
    }
    const auto line = fit_line(x, y);
    CHECK(line.slope == Catch::Approx(-1.0).epsilon(1e-12));
    CHECK(line.r_squared == Catch::Approx(1.0).epsilon(1e-12));

    HBarSeries bad;
    bad.grids = {29, 30};
    bad.add(0.0, {0.4, 0.5});
    bad.add(1.0, {0.1, 0.2});
    bad.add(2.0, {-0.01, 0.0});
    bad.add(3.0, {0.02, 0.03});
    const auto ls = log_series(bad);
    CHECK(ls.entries.size() == 2);
    CHECK(ls.warning.has_value());
    CHECK_THROWS_AS(log_series(bad, true), NonPositiveValue);

    HBarSeries half;
    half.grids = {29, 30};
    half.add(0.0, {-0.001, 0.01});
    const auto hl = log_series(half);
    REQUIRE(hl.entries.size() == 1);
    CHECK(std::isinf(hl.entries[0].ln_min));
}

TEST_CASE("series bookkeeping", "[analysis]") {
    HBarSeries s;
    s.add(0.0, {0.3, 0.1, 0.2});
    const auto& e = s.entries.front();
    CHECK(e.min == 0.1);
    CHECK(e.max == 0.3);
    CHECK(e.mean == Catch::Approx(0.2));
    CHECK(e.min <= e.mean);
    CHECK(e.mean <= e.max);
    CHECK(e.spread() == Catch::Approx(0.2));
    CHECK_THROWS_AS(fit_line({1.0, 1.0}, {2.0, 3.0}), DomainError);
}
