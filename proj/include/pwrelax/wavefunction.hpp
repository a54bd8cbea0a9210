#pragma once

// Two-dimensional harmonic oscillator in units hbar = m = omega = 1: the
// normalized eigenbasis, equal-weight superpositions of the first M product
// states, and the de Broglie guidance field they induce.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pwrelax/errors.hpp"

namespace pwrelax {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr int kDefaultMaxOrder = 64;
inline constexpr double kDefaultNodeThreshold = 1e-30;

struct Point2 {
    double q1 = 0.0;
    double q2 = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.q1 - b.q1, a.q2 - b.q2); }

struct Velocity {
    double v1 = 0.0;
    double v2 = 0.0;
};

/// Equal-weight superposition of the product states phi_m(q1) phi_n(q2),
/// 0 <= m, n < modes_per_axis, with phase exp(i theta_mn). Immutable.
class SuperpositionSpec {
public:
    SuperpositionSpec(int modes_per_axis, std::vector<double> phases_row_major)
        : modes_(modes_per_axis), phases_(std::move(phases_row_major)) {
        if (modes_ < 1) throw ConfigError("modes_per_axis must be >= 1");
        if (modes_ > kDefaultMaxOrder + 1)
            throw ConfigError("modes_per_axis exceeds supported eigenfunction order");
        if (phases_.size() != static_cast<std::size_t>(modes_) * static_cast<std::size_t>(modes_))
            throw ConfigError("phase matrix must be square with side modes_per_axis");
        for (double th : phases_)
            if (!std::isfinite(th)) throw ConfigError("phase values must be finite");
    }

    static SuperpositionSpec from_matrix(const std::vector<std::vector<double>>& rows) {
        std::vector<double> flat;
        for (const auto& r : rows) {
            if (r.size() != rows.size()) throw ConfigError("phase matrix must be square");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return {static_cast<int>(rows.size()), std::move(flat)};
    }

    /// Phases uniform on [0, 2pi) drawn from mt19937_64. The mapping from raw
    /// 64-bit output to [0,1) is done by hand so files are portable across
    /// standard library implementations.
    static SuperpositionSpec random(std::uint64_t seed, int modes_per_axis) {
        if (modes_per_axis < 1) throw ConfigError("modes_per_axis must be >= 1");
        std::mt19937_64 rng(seed);
        std::vector<double> ph(static_cast<std::size_t>(modes_per_axis) * modes_per_axis);
        for (double& th : ph) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            th = kTwoPi * u;
        }
        return {modes_per_axis, std::move(ph)};
    }

    static SuperpositionSpec ground_state() { return {1, {0.0}}; }

    /// M = 4 phases listed in row-major (m, n) order.
    static SuperpositionSpec m4_paper() { return {2, {0.5442, 2.3099, 5.6703, 4.5333}}; }

    /// M = 4 low-confinement phases. The published labels theta_11, theta_21,
    /// theta_12, theta_22 are 1-based (m, n) and map to (0,0), (1,0), (0,1), (1,1).
    static SuperpositionSpec m4_alternate() {
        const double t11 = 0.0, t21 = 6.2782, t12 = 2.0865, t22 = 0.2582;
        return {2, {t11, t12, t21, t22}};
    }

    int modes_per_axis() const noexcept { return modes_; }
    int mode_count() const noexcept { return modes_ * modes_; }
    double phase(int m, int n) const { return phases_[static_cast<std::size_t>(m) * modes_ + n]; }
    std::span<const double> phases() const noexcept { return phases_; }

    std::vector<std::vector<double>> phase_matrix() const {
        std::vector<std::vector<double>> rows(modes_);
        for (int m = 0; m < modes_; ++m)
            rows[m].assign(phases_.begin() + m * modes_, phases_.begin() + (m + 1) * modes_);
        return rows;
    }

private:
    int modes_;
    std::vector<double> phases_;
};

namespace detail {

inline const double kPiQuarterInv = std::pow(std::numbers::pi, -0.25);

/// Fills out[0..count) with phi_k(x) / exp(-x^2/2) when with_gaussian is
/// false, or phi_k(x) itself otherwise. Uses the normalized three-term
/// recurrence so no factorials or raw Hermite values appear.
inline void eigen_table(double x, std::span<double> out, bool with_gaussian) {
    if (out.empty()) return;
    out[0] = kPiQuarterInv * (with_gaussian ? std::exp(-0.5 * x * x) : 1.0);
    if (out.size() == 1) return;
    out[1] = std::numbers::sqrt2 * x * out[0];
    for (std::size_t k = 1; k + 1 < out.size(); ++k) {
        const double kd = static_cast<double>(k);
        out[k + 1] = std::sqrt(2.0 / (kd + 1.0)) * x * out[k] - std::sqrt(kd / (kd + 1.0)) * out[k - 1];
    }
}

inline void check_order(int m, int max_order) {
    if (m < 0 || m > max_order)
        throw DomainError("eigenfunction order " + std::to_string(m) + " outside [0, " +
                          std::to_string(max_order) + "]");
}

}  // namespace detail

/// Normalized oscillator eigenfunction phi_m(x).
inline double eigenfunction(int m, double x, int max_order = kDefaultMaxOrder) {
    detail::check_order(m, max_order);
    std::array<double, kDefaultMaxOrder + 2> buf{};
    std::vector<double> big;
    std::span<double> tab(buf.data(), static_cast<std::size_t>(m) + 1);
    if (m + 1 > static_cast<int>(buf.size())) {
        big.resize(static_cast<std::size_t>(m) + 1);
        tab = big;
    }
    detail::eigen_table(x, tab, true);
    return tab[static_cast<std::size_t>(m)];
}

/// d phi_m / dx via the ladder identity sqrt(m/2) phi_{m-1} - sqrt((m+1)/2) phi_{m+1}.
inline double eigenfunction_derivative(int m, double x, int max_order = kDefaultMaxOrder) {
    detail::check_order(m, max_order);
    std::vector<double> tab(static_cast<std::size_t>(m) + 2);
    detail::eigen_table(x, tab, true);
    const double md = static_cast<double>(m);
    const double lower = m > 0 ? std::sqrt(md / 2.0) * tab[m - 1] : 0.0;
    return lower - std::sqrt((md + 1.0) / 2.0) * tab[m + 1];
}

/// Evaluates psi and its guidance velocity for one superposition. The
/// Gaussian envelope exp(-(q1^2+q2^2)/2) is real and cancels from Im(d psi / psi),
/// so the velocity is computed from the polynomial parts only. The global
/// phase exp(-i t) likewise cancels.
class GuidanceField {
public:
    explicit GuidanceField(const SuperpositionSpec& spec, double node_threshold = kDefaultNodeThreshold)
        : k_(spec.modes_per_axis()),
          norm2_(1.0 / spec.mode_count()),
          node_threshold_(node_threshold),
          coeff_(static_cast<std::size_t>(k_) * k_) {
        for (int m = 0; m < k_; ++m)
            for (int n = 0; n < k_; ++n) coeff_[m * k_ + n] = std::polar(1.0, spec.phase(m, n));
    }

    int modes_per_axis() const noexcept { return k_; }
    double node_threshold() const noexcept { return node_threshold_; }

    /// Returns false at (near-)nodes, where |psi|^2 < node_threshold.
    bool velocity(Point2 p, double t, Velocity& v) const noexcept {
        constexpr int kMax = kDefaultMaxOrder + 2;
        std::array<double, kMax> px{}, py{}, dx{}, dy{};
        std::array<std::complex<double>, 2 * kMax> wpow{};
        polynomial_tables(p.q1, px, dx);
        polynomial_tables(p.q2, py, dy);

        const std::complex<double> w = std::polar(1.0, -t);
        wpow[0] = 1.0;
        for (int e = 1; e <= 2 * (k_ - 1); ++e) wpow[e] = wpow[e - 1] * w;

        std::complex<double> s{}, s1{}, s2{};
        for (int m = 0; m < k_; ++m) {
            std::complex<double> row_p{}, row_d{};
            for (int n = 0; n < k_; ++n) {
                const std::complex<double> c = coeff_[m * k_ + n] * wpow[m + n];
                row_p += c * py[n];
                row_d += c * dy[n];
            }
            s += px[m] * row_p;
            s1 += dx[m] * row_p;
            s2 += px[m] * row_d;
        }
        const double mod2 = std::norm(s);
        if (is_node(mod2, p)) return false;
        v.v1 = (s1.imag() * s.real() - s1.real() * s.imag()) / mod2;
        v.v2 = (s2.imag() * s.real() - s2.real() * s.imag()) / mod2;
        return true;
    }

private:
    // px[m] = phi_m(x) e^{x^2/2}; dx[m] = phi_m'(x) e^{x^2/2} from the ladder identity.
    void polynomial_tables(double x, std::array<double, kDefaultMaxOrder + 2>& px,
                           std::array<double, kDefaultMaxOrder + 2>& dx) const noexcept {
        detail::eigen_table(x, std::span<double>(px.data(), static_cast<std::size_t>(k_) + 1), false);
        for (int m = 0; m < k_; ++m) {
            const double md = static_cast<double>(m);
            const double lower = m > 0 ? std::sqrt(md / 2.0) * px[m - 1] : 0.0;
            dx[m] = lower - std::sqrt((md + 1.0) / 2.0) * px[m + 1];
        }
    }

    bool is_node(double poly_mod2, Point2 p) const noexcept {
        // |psi|^2 = poly_mod2 * exp(-r^2) / M. Skip the exp when clearly away from a node.
        const double r2 = p.q1 * p.q1 + p.q2 * p.q2;
        if (!(poly_mod2 > 0.0)) return true;
        const double density = poly_mod2 * norm2_ * std::exp(-r2);
        return density < node_threshold_;
    }

    int k_;
    double norm2_;
    double node_threshold_;
    std::vector<std::complex<double>> coeff_;
};

/// psi(q1, q2, t) including the energy phase exp(-i(m+n+1)t).
inline std::complex<double> psi(const SuperpositionSpec& spec, Point2 p, double t) {
    const int k = spec.modes_per_axis();
    std::vector<double> fx(k), fy(k);
    detail::eigen_table(p.q1, fx, true);
    detail::eigen_table(p.q2, fy, true);
    std::complex<double> sum{};
    for (int m = 0; m < k; ++m)
        for (int n = 0; n < k; ++n) {
            const double phase = spec.phase(m, n) - static_cast<double>(m + n + 1) * t;
            sum += std::polar(fx[m] * fy[n], phase);
        }
    return sum / std::sqrt(static_cast<double>(spec.mode_count()));
}

/// Guidance velocity Im(d_r psi / psi). Throws NodeError at nodes.
inline Velocity velocity(const SuperpositionSpec& spec, Point2 p, double t,
                         double node_threshold = kDefaultNodeThreshold) {
    Velocity v;
    if (!GuidanceField(spec, node_threshold).velocity(p, t, v))
        throw NodeError("velocity requested at a node of psi");
    return v;
}

/// Equilibrium density |psi|^2.
inline double rho_qt(const SuperpositionSpec& spec, Point2 p, double t) { return std::norm(psi(spec, p, t)); }

/// Initial nonequilibrium density |phi_0(q1) phi_0(q2)|^2 = exp(-q1^2 - q2^2) / pi.
inline double rho_initial(Point2 p) {
    return std::exp(-(p.q1 * p.q1 + p.q2 * p.q2)) * std::numbers::inv_pi;
}

}  // namespace pwrelax
