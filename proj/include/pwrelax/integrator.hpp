#pragma once

// Adaptive Runge-Kutta-Fehlberg 4(5) integration of de Broglie trajectories,
// forwards or backwards in time, with per-sub-interval step budgets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "pwrelax/errors.hpp"
#include "pwrelax/wavefunction.hpp"

namespace pwrelax {

struct IntegratorConfig {
    double position_tolerance = 0.025;      // end-to-end trajectory precision
    double local_error_tolerance = 1e-8;    // embedded error per unit time
    std::int64_t max_steps_total = 10'000'000;
    int sub_intervals = 10;
    std::int64_t max_steps_per_sub_interval = 1'000'000;
    double min_step = 1e-12;
    double initial_step = 1e-3;
    double node_threshold = kDefaultNodeThreshold;

    void validate() const {
        if (!(position_tolerance > 0.0) || !(local_error_tolerance > 0.0) || !(min_step > 0.0) ||
            !(initial_step > 0.0) || !(node_threshold > 0.0))
            throw ConfigError("integrator tolerances and steps must be strictly positive");
        if (!(min_step < initial_step)) throw ConfigError("min_step must be smaller than initial_step");
        if (sub_intervals < 1 || max_steps_per_sub_interval < 1 || max_steps_total < 1)
            throw ConfigError("integrator step budgets must be positive");
    }
};

enum class TrajectoryStatus { Succeeded, StepBudgetExceeded, NodeEncountered, StepUnderflow };

inline std::string_view to_string(TrajectoryStatus s) {
    switch (s) {
        case TrajectoryStatus::Succeeded: return "succeeded";
        case TrajectoryStatus::StepBudgetExceeded: return "step_budget_exceeded";
        case TrajectoryStatus::NodeEncountered: return "node_encountered";
        case TrajectoryStatus::StepUnderflow: return "step_underflow";
    }
    return "unknown";
}

struct TrajectoryOutcome {
    TrajectoryStatus status = TrajectoryStatus::Succeeded;
    Point2 endpoint;  // meaningful only when status == Succeeded
    std::int64_t steps_used = 0;

    bool ok() const noexcept { return status == TrajectoryStatus::Succeeded; }
};

/// Single-trajectory RKF45 stepper. The step is accepted when the embedded
/// error estimate is at most local_error_tolerance * |h|; a rejected step is
/// halved, an accepted one grows by min(2, 0.9 (tol/err)^(1/5)). Negative h
/// integrates backwards with the true (decreasing) time passed to the field.
class AdaptiveStepper {
public:
    AdaptiveStepper(const GuidanceField& field, const IntegratorConfig& cfg) : field_(field), cfg_(cfg) {}

    /// Advances q from t to t_end. h carries the signed trial step between
    /// calls; pass 0 to start from cfg.initial_step. steps counts attempted steps
    /// and the call fails once steps reaches max_steps.
    TrajectoryStatus advance(Point2& q, double t, double t_end, double& h, std::int64_t max_steps,
                             std::int64_t& steps) const {
        if (t == t_end) return TrajectoryStatus::Succeeded;
        const double dir = t_end > t ? 1.0 : -1.0;
        if (h == 0.0 || (h > 0.0) != (dir > 0.0)) h = dir * cfg_.initial_step;

        while (t != t_end) {
            if (steps >= max_steps) return TrajectoryStatus::StepBudgetExceeded;
            const double remaining = t_end - t;
            const bool last = std::abs(h) >= std::abs(remaining);
            const double step = last ? remaining : h;
            ++steps;

            Point2 next;
            double err = 0.0;
            if (!attempt(q, t, step, next, err)) return TrajectoryStatus::NodeEncountered;

            const double allowed = cfg_.local_error_tolerance * std::abs(step);
            if (err <= allowed) {
                q = next;
                t = last ? t_end : t + step;
                if (!last) {
                    const double factor = err == 0.0 ? 2.0 : std::min(2.0, 0.9 * std::pow(allowed / err, 0.2));
                    h = step * factor;
                }
            } else {
                h = 0.5 * step;
                if (std::abs(h) < cfg_.min_step) return TrajectoryStatus::StepUnderflow;
            }
        }
        return TrajectoryStatus::Succeeded;
    }

private:
    bool eval(Point2 p, double t, Velocity& v) const noexcept { return field_.velocity(p, t, v); }

    bool attempt(Point2 q, double t, double h, Point2& out, double& err) const noexcept {
        // Fehlberg coefficients.
        constexpr double a21 = 1.0 / 4.0;
        constexpr double a31 = 3.0 / 32.0, a32 = 9.0 / 32.0;
        constexpr double a41 = 1932.0 / 2197.0, a42 = -7200.0 / 2197.0, a43 = 7296.0 / 2197.0;
        constexpr double a51 = 439.0 / 216.0, a52 = -8.0, a53 = 3680.0 / 513.0, a54 = -845.0 / 4104.0;
        constexpr double a61 = -8.0 / 27.0, a62 = 2.0, a63 = -3544.0 / 2565.0, a64 = 1859.0 / 4104.0,
                         a65 = -11.0 / 40.0;
        constexpr double b1 = 16.0 / 135.0, b3 = 6656.0 / 12825.0, b4 = 28561.0 / 56430.0, b5 = -9.0 / 50.0,
                         b6 = 2.0 / 55.0;
        constexpr double e1 = 1.0 / 360.0, e3 = -128.0 / 4275.0, e4 = -2197.0 / 75240.0, e5 = 1.0 / 50.0,
                         e6 = 2.0 / 55.0;

        Velocity k1, k2, k3, k4, k5, k6;
        if (!eval(q, t, k1)) return false;
        if (!eval({q.q1 + h * a21 * k1.v1, q.q2 + h * a21 * k1.v2}, t + h / 4.0, k2)) return false;
        if (!eval({q.q1 + h * (a31 * k1.v1 + a32 * k2.v1), q.q2 + h * (a31 * k1.v2 + a32 * k2.v2)},
                  t + 3.0 * h / 8.0, k3))
            return false;
        if (!eval({q.q1 + h * (a41 * k1.v1 + a42 * k2.v1 + a43 * k3.v1),
                   q.q2 + h * (a41 * k1.v2 + a42 * k2.v2 + a43 * k3.v2)},
                  t + 12.0 * h / 13.0, k4))
            return false;
        if (!eval({q.q1 + h * (a51 * k1.v1 + a52 * k2.v1 + a53 * k3.v1 + a54 * k4.v1),
                   q.q2 + h * (a51 * k1.v2 + a52 * k2.v2 + a53 * k3.v2 + a54 * k4.v2)},
                  t + h, k5))
            return false;
        if (!eval({q.q1 + h * (a61 * k1.v1 + a62 * k2.v1 + a63 * k3.v1 + a64 * k4.v1 + a65 * k5.v1),
                   q.q2 + h * (a61 * k1.v2 + a62 * k2.v2 + a63 * k3.v2 + a64 * k4.v2 + a65 * k5.v2)},
                  t + h / 2.0, k6))
            return false;

        out.q1 = q.q1 + h * (b1 * k1.v1 + b3 * k3.v1 + b4 * k4.v1 + b5 * k5.v1 + b6 * k6.v1);
        out.q2 = q.q2 + h * (b1 * k1.v2 + b3 * k3.v2 + b4 * k4.v2 + b5 * k5.v2 + b6 * k6.v2);
        const double err1 = h * (e1 * k1.v1 + e3 * k3.v1 + e4 * k4.v1 + e5 * k5.v1 + e6 * k6.v1);
        const double err2 = h * (e1 * k1.v2 + e3 * k3.v2 + e4 * k4.v2 + e5 * k5.v2 + e6 * k6.v2);
        err = std::hypot(err1, err2);
        if (!std::isfinite(out.q1) || !std::isfinite(out.q2) || !std::isfinite(err)) err = HUGE_VAL;
        return true;
    }

    const GuidanceField& field_;
    const IntegratorConfig& cfg_;
};

/// Integrates dq/dt = v(q, t) from t_from to t_to (either order). The span is
/// split into cfg.sub_intervals equal pieces, each with its own step cap.
inline TrajectoryOutcome integrate(const GuidanceField& field, Point2 start, double t_from, double t_to,
                                   const IntegratorConfig& cfg) {
    TrajectoryOutcome out{TrajectoryStatus::Succeeded, start, 0};
    if (t_from == t_to) return out;
    const AdaptiveStepper stepper(field, cfg);
    const double span = t_to - t_from;
    double h = 0.0;
    Point2 q = start;
    for (int i = 0; i < cfg.sub_intervals; ++i) {
        const double a = i == 0 ? t_from : t_from + span * i / cfg.sub_intervals;
        const double b = i + 1 == cfg.sub_intervals ? t_to : t_from + span * (i + 1) / cfg.sub_intervals;
        const std::int64_t cap = std::min(cfg.max_steps_per_sub_interval, cfg.max_steps_total - out.steps_used);
        std::int64_t used = 0;
        const TrajectoryStatus st = stepper.advance(q, a, b, h, cap, used);
        out.steps_used += used;
        if (st != TrajectoryStatus::Succeeded) {
            out.status = st;
            return out;
        }
    }
    out.endpoint = q;
    return out;
}

inline TrajectoryOutcome integrate(const SuperpositionSpec& spec, Point2 start, double t_from, double t_to,
                                   const IntegratorConfig& cfg) {
    const GuidanceField field(spec, cfg.node_threshold);
    return integrate(field, start, t_from, t_to, cfg);
}

/// Follows the trajectory through p at time t back to t = 0.
inline TrajectoryOutcome backtrack(const GuidanceField& field, Point2 p_at_t, double t, const IntegratorConfig& cfg) {
    if (t < 0.0) throw DomainError("backtrack requires t >= 0");
    return integrate(field, p_at_t, t, 0.0, cfg);
}

inline TrajectoryOutcome backtrack(const SuperpositionSpec& spec, Point2 p_at_t, double t,
                                   const IntegratorConfig& cfg) {
    const GuidanceField field(spec, cfg.node_threshold);
    return backtrack(field, p_at_t, t, cfg);
}

/// Round-trip displacement |forward(backtrack(p, t -> 0), 0 -> t) - p|.
inline double validate_precision(const GuidanceField& field, Point2 p, double t, const IntegratorConfig& cfg) {
    if (!(t > 0.0)) throw DomainError("validate_precision requires t > 0");
    const TrajectoryOutcome back = backtrack(field, p, t, cfg);
    if (!back.ok())
        throw IntegrationFailure("backward leg failed: " + std::string(to_string(back.status)));
    const TrajectoryOutcome fwd = integrate(field, back.endpoint, 0.0, t, cfg);
    if (!fwd.ok()) throw IntegrationFailure("forward leg failed: " + std::string(to_string(fwd.status)));
    return distance(fwd.endpoint, p);
}

inline double validate_precision(const SuperpositionSpec& spec, Point2 p, double t, const IntegratorConfig& cfg) {
    const GuidanceField field(spec, cfg.node_threshold);
    return validate_precision(field, p, t, cfg);
}

}  // namespace pwrelax
