#pragma once

// Decay analysis of the coarse-grained H-function: constrained fit of
// a exp(-b t/2pi) + c, saturation time, and log-scale series.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pwrelax/errors.hpp"
#include "pwrelax/wavefunction.hpp"

namespace pwrelax {

struct HBarEntry {
    double time = 0.0;
    double periods = 0.0;  // time / 2pi
    std::vector<double> values;  // one per sampling grid
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double accuracy_min = 1.0;

    double spread() const noexcept { return max - min; }
};

struct HBarSeries {
    std::vector<int> grids;  // points per cell axis of each sampling grid
    std::vector<HBarEntry> entries;

    /// Appends an entry built from per-grid values, filling mean/min/max.
    void add(double time, std::vector<double> values, double accuracy_min = 1.0) {
        if (values.empty()) throw DomainError("H-bar entry needs at least one value");
        if (!entries.empty() && !(time > entries.back().time))
            throw DomainError("H-bar series times must be strictly increasing");
        HBarEntry e;
        e.time = time;
        e.periods = time / kTwoPi;
        double sum = 0.0;
        for (double v : values) sum += v;
        e.mean = sum / static_cast<double>(values.size());
        e.min = *std::min_element(values.begin(), values.end());
        e.max = *std::max_element(values.begin(), values.end());
        e.values = std::move(values);
        e.accuracy_min = accuracy_min;
        entries.push_back(std::move(e));
    }

    std::size_t size() const noexcept { return entries.size(); }
};

struct FitResult {
    double a = 0.0;
    double b = 0.0;  // decay rate per period
    double c = 0.0;  // residue
    double rms_residual = 0.0;
    std::optional<double> t_sat;

    double operator()(double periods) const { return a * std::exp(-b * periods) + c; }
};

namespace detail {

struct ConditionalFit {
    double c = 0.0;
    double rss = 0.0;
};

// For fixed b the constrained model y = c + (y0 - c) e^{-b k} is linear in c.
inline ConditionalFit fit_given_rate(const std::vector<double>& k, const std::vector<double>& y, double b) {
    const double y0 = y.front();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double e = std::exp(-b * k[i]);
        const double u = 1.0 - e;
        num += u * (y[i] - y0 * e);
        den += u * u;
    }
    ConditionalFit f;
    f.c = den > 0.0 ? std::max(0.0, num / den) : 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double r = y[i] - (f.c + (y0 - f.c) * std::exp(-b * k[i]));
        f.rss += r * r;
    }
    return f;
}

}  // namespace detail

/// Residual RMS of the model (y0 - c) e^{-b k} + c against the series means.
inline double fit_rms(const HBarSeries& series, double b, double c) {
    const double y0 = series.entries.front().mean;
    double rss = 0.0;
    for (const auto& e : series.entries) {
        const double r = e.mean - (c + (y0 - c) * std::exp(-b * e.periods));
        rss += r * r;
    }
    return std::sqrt(rss / static_cast<double>(series.size()));
}

/// Least-squares fit of the three-grid means to a exp(-b periods) + c with
/// a + c pinned to the value at t = 0. Deterministic: a logarithmic scan of b
/// over [1e-4, 1e2] followed by golden-section refinement to relative width 1e-9.
inline FitResult fit_exponential(const HBarSeries& series) {
    if (series.size() < 4) throw DegenerateSeries("fit needs at least 4 entries");
    if (series.entries.front().time != 0.0) throw DegenerateSeries("fit needs the first entry at t = 0");
    std::vector<double> k, y;
    for (const auto& e : series.entries) {
        k.push_back(e.periods);
        y.push_back(e.mean);
    }
    const double y0 = y.front();
    if (!(y0 > 0.0)) throw DegenerateSeries("H-bar(0) must be positive");
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y0; }))
        throw DegenerateSeries("all series values are equal");

    constexpr int kScan = 601;
    const double log_lo = std::log(1e-4), log_hi = std::log(1e2);
    std::vector<double> grid(kScan);
    int best = 0;
    double best_rss = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kScan; ++i) {
        grid[i] = std::exp(log_lo + (log_hi - log_lo) * i / (kScan - 1));
        const double rss = detail::fit_given_rate(k, y, grid[i]).rss;
        if (rss < best_rss) {
            best_rss = rss;
            best = i;
        }
    }

    double lo = grid[std::max(0, best - 1)];
    double hi = grid[std::min(kScan - 1, best + 1)];
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = detail::fit_given_rate(k, y, x1).rss;
    double f2 = detail::fit_given_rate(k, y, x2).rss;
    while ((hi - lo) > 1e-9 * 0.5 * (hi + lo)) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = detail::fit_given_rate(k, y, x1).rss;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = detail::fit_given_rate(k, y, x2).rss;
        }
    }
    double b = 0.5 * (lo + hi);
    auto cond = detail::fit_given_rate(k, y, b);
    // The scan endpoints may beat the interior refinement.
    for (double cand : {grid[best], lo, hi}) {
        const auto f = detail::fit_given_rate(k, y, cand);
        if (f.rss < cond.rss) {
            cond = f;
            b = cand;
        }
    }

    FitResult out;
    out.b = b;
    out.c = cond.c;
    out.a = y0 - cond.c;
    out.rms_residual = std::sqrt(cond.rss / static_cast<double>(k.size()));
    return out;
}

/// Earliest series time after which every mean stays within
/// max(2 x grid spread, floor) of the fitted residue; nullopt if never.
inline std::optional<double> saturation_time(const HBarSeries& series, const FitResult& fit,
                                             double band_floor = 0.02) {
    std::optional<double> start;
    for (const auto& e : series.entries) {
        const double band = std::max(2.0 * e.spread(), band_floor);
        if (std::abs(e.mean - fit.c) <= band) {
            if (!start) start = e.time;
        } else {
            start.reset();
        }
    }
    return start;
}

struct LogEntry {
    double time = 0.0;
    double ln_mean = 0.0;
    double ln_min = 0.0;  // -inf when the grid minimum is not positive
    double ln_max = 0.0;
};

struct LogSeries {
    std::vector<LogEntry> entries;
    std::optional<std::string> warning;  // set when the series was truncated
};

/// Natural logs of mean/min/max. Stops at the first non-positive mean and
/// records a warning, or throws NonPositiveValue when strict.
inline LogSeries log_series(const HBarSeries& series, bool strict = false) {
    LogSeries out;
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (const auto& e : series.entries) {
        if (!(e.mean > 0.0)) {
            const std::string msg = "non-positive mean H-bar at t = " + std::to_string(e.time) +
                                    "; log series truncated";
            if (strict) throw NonPositiveValue(msg);
            out.warning = msg;
            break;
        }
        out.entries.push_back({e.time, std::log(e.mean), e.min > 0.0 ? std::log(e.min) : neg_inf,
                               e.max > 0.0 ? std::log(e.max) : neg_inf});
    }
    return out;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Ordinary least-squares line with coefficient of determination.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("line fit needs >= 2 paired points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw DomainError("line fit needs distinct abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

}  // namespace pwrelax
