#pragma once

// CBF safety command governor. The safe set is four half-planes in
// (V_y, omega_r); each step the governor expands the discrete barrier
// condition h_j(x_{k+1}) >= (1 - a_j) h_j(x_k) through a one-step predictor
// into affine constraints p_j T + q_j >= 0 on the total torque (steering is
// passed through untouched) and solves the one-variable QP closest to the
// nominal torque. Constraints are always expressed in physical Nm; the
// Koopman build folds the normalization into p and q.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "koopsafe/baselines.hpp"
#include "koopsafe/dataset.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/koopman.hpp"
#include "koopsafe/vehicle.hpp"

namespace koopsafe {

struct HalfPlane {
    double c_y = 0.0;  // coefficient on V_y
    double c_r = 0.0;  // coefficient on omega_r
    double b = 0.0;
};

struct SafeSet {
    std::array<HalfPlane, 4> planes;
    std::array<double, 4> alphas{0.2, 0.2, 0.2, 0.2};

    // Sideslip band |1.3 V_y + omega_r| <= 0.55 plus the yaw-rate band
    // |omega_r| <= 0.4 rad/s, scaled so every h_j is 0.55 at the origin.
    static SafeSet default_set() {
        SafeSet s;
        s.planes[0] = {1.3, 1.0, 0.55};
        s.planes[1] = {-1.3, -1.0, 0.55};
        s.planes[2] = {0.0, 1.375, 0.55};
        s.planes[3] = {0.0, -1.375, 0.55};
        return s;
    }
};

inline std::array<double, 4> h_values(const VehicleState& x, const SafeSet& set) {
    std::array<double, 4> h;
    for (int j = 0; j < 4; ++j)
        h[j] = set.planes[j].c_y * x.v_y + set.planes[j].c_r * x.omega_r + set.planes[j].b;
    return h;
}

// The admissible region must be a non-empty bounded polygon: bounded iff the
// recession cone {d : c_j . d >= 0 for all j} is {0} (checked on the
// candidate extreme rays, which are perpendicular to some normal), non-empty
// iff some pairwise boundary vertex satisfies every plane.
inline void validate_safe_set(const SafeSet& set) {
    double scale = 0.0;
    for (const HalfPlane& pl : set.planes) {
        if (pl.c_y == 0.0 && pl.c_r == 0.0)
            throw ConfigError("safe set: a plane needs a nonzero normal");
        scale = std::max({scale, std::abs(pl.c_y), std::abs(pl.c_r)});
    }
    for (double a : set.alphas)
        if (!(a >= 0.0) || a > 1.0)
            throw ConfigError("safe set: alphas must lie in [0, 1]");

    for (const HalfPlane& pl : set.planes) {
        for (const double sign : {1.0, -1.0}) {
            const double dy = -sign * pl.c_r, dr = sign * pl.c_y;
            bool recedes = true;
            for (const HalfPlane& other : set.planes)
                if (other.c_y * dy + other.c_r * dr < -1e-12 * scale * scale) {
                    recedes = false;
                    break;
                }
            if (recedes) throw ConfigError("safe set: region is unbounded");
        }
    }

    bool nonempty = false;
    for (int i = 0; i < 4 && !nonempty; ++i) {
        for (int j = i + 1; j < 4 && !nonempty; ++j) {
            const HalfPlane &a = set.planes[i], &b = set.planes[j];
            const double det = a.c_y * b.c_r - a.c_r * b.c_y;
            if (std::abs(det) < 1e-12 * scale * scale) continue;
            const VehicleState v{0.0, (-a.b * b.c_r + b.b * a.c_r) / det,
                                 (-b.b * a.c_y + a.b * b.c_y) / det};
            const std::array<double, 4> h = h_values(v, set);
            nonempty = *std::min_element(h.begin(), h.end()) >= -1e-9;
        }
    }
    if (!nonempty) throw ConfigError("safe set: region is empty");
}

// ---- constraint build -------------------------------------------------------

struct ConstraintSet {
    std::array<double, 4> p{};  // dh_j/dT through the predictor
    std::array<double, 4> q{};  // residual at T = 0
};

// Analytic build through the lifted linear model: the predicted next state is
// affine in the torque, so p and q are exact.
inline ConstraintSet build_constraints(const VehicleState& x, const ControlInput& u_bar,
                                       const KoopmanModel& model, const SafeSet& set) {
    if (!model.valid()) throw ModelMissingError("build_constraints: no model attached");
    const Eigen::Vector3d xn = normalize_state(model.norm, x);
    const Eigen::VectorXd z = lift(model, xn);
    const Eigen::Vector2d un0 =
        normalize_input(model.norm, ControlInput{0.0, u_bar.steer_front});
    const Eigen::Vector3d base_n =
        model.a.topRows(3) * z + model.b.topRows(3) * un0;
    const Eigen::Vector3d slope_n = model.b.topRows(3).col(0) / model.norm.span(3);
    const VehicleState base = denormalize_state(model.norm, base_n);
    const double dvy_dt = model.norm.span(1) * slope_n(1);
    const double dwr_dt = model.norm.span(2) * slope_n(2);

    const std::array<double, 4> h0 = h_values(x, set);
    ConstraintSet c;
    for (int j = 0; j < 4; ++j) {
        const HalfPlane& pl = set.planes[j];
        c.p[j] = pl.c_y * dvy_dt + pl.c_r * dwr_dt;
        c.q[j] = pl.c_y * base.v_y + pl.c_r * base.omega_r + pl.b -
                 (1.0 - set.alphas[j]) * h0[j];
    }
    return c;
}

// Central-difference build for predictors without an affine structure (the
// physics baseline); linearized around the nominal torque.
inline ConstraintSet build_constraints_fd(const VehicleState& x, const ControlInput& u_bar,
                                          const OneStepPredictor& predictor,
                                          const SafeSet& set, double torque_step = 1.0) {
    const auto h_next = [&](double torque) {
        return h_values(predictor(x, ControlInput{torque, u_bar.steer_front}), set);
    };
    const std::array<double, 4> plus = h_next(u_bar.torque_total + torque_step);
    const std::array<double, 4> minus = h_next(u_bar.torque_total - torque_step);
    const std::array<double, 4> mid = h_next(u_bar.torque_total);
    const std::array<double, 4> h0 = h_values(x, set);
    ConstraintSet c;
    for (int j = 0; j < 4; ++j) {
        c.p[j] = (plus[j] - minus[j]) / (2.0 * torque_step);
        c.q[j] = mid[j] - (1.0 - set.alphas[j]) * h0[j] - c.p[j] * u_bar.torque_total;
    }
    return c;
}

// ---- the one-variable QP ------------------------------------------------------

inline constexpr double kGovernorRho = 1e6;

struct TorqueBounds {
    double t_min = -3000.0;
    double t_max = 1000.0;
};

struct QpSolution {
    double t = 0.0;
    bool hard_feasible = false;
    double interval_lo = 0.0;  // meaningful only when hard_feasible
    double interval_hi = 0.0;
    std::array<double, 4> slack{};
};

// min (T - t_bar)^2 s.t. p_j T + q_j >= 0, T in bounds. Hard path: interval
// intersection and clamp (pass-through is bit-exact when t_bar is feasible).
// Soft fallback: min (T - t_bar)^2 + rho * sum max(0, -(p_j T + q_j))^2 by
// exact minimization on each piece between constraint roots; pieces are
// scanned in ascending order with strict improvement, so ties prefer the
// lower (decelerating) torque.
inline QpSolution solve_torque_qp(const ConstraintSet& c, double t_bar,
                                  const TorqueBounds& bounds, double rho = kGovernorRho) {
    if (!(bounds.t_min < bounds.t_max))
        throw ConfigError("torque bounds: need t_min < t_max");
    if (!std::isfinite(t_bar)) throw InfeasibleError("nominal torque is not finite");
    for (int j = 0; j < 4; ++j)
        if (!std::isfinite(c.p[j]) || !std::isfinite(c.q[j]))
            throw InfeasibleError("constraint coefficients are not finite");

    double lo = bounds.t_min, hi = bounds.t_max;
    bool unsatisfiable = false;
    for (int j = 0; j < 4; ++j) {
        if (c.p[j] > 0.0)
            lo = std::max(lo, -c.q[j] / c.p[j]);
        else if (c.p[j] < 0.0)
            hi = std::min(hi, -c.q[j] / c.p[j]);
        else if (c.q[j] < 0.0)
            unsatisfiable = true;  // 0 * T + q >= 0 can never hold
    }

    QpSolution sol;
    if (!unsatisfiable && lo <= hi) {
        sol.hard_feasible = true;
        sol.interval_lo = lo;
        sol.interval_hi = hi;
        sol.t = std::clamp(t_bar, lo, hi);
        return sol;
    }

    std::vector<double> knots{bounds.t_min, bounds.t_max};
    for (int j = 0; j < 4; ++j)
        if (c.p[j] != 0.0) {
            const double root = -c.q[j] / c.p[j];
            if (root > bounds.t_min && root < bounds.t_max) knots.push_back(root);
        }
    std::sort(knots.begin(), knots.end());

    const auto objective = [&](double t) {
        double f = (t - t_bar) * (t - t_bar);
        for (int j = 0; j < 4; ++j) {
            const double v = c.p[j] * t + c.q[j];
            if (v < 0.0) f += rho * v * v;
        }
        return f;
    };

    double best_f = 0.0;
    bool have = false;
    for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
        const double a = knots[s], b = knots[s + 1];
        const double mid = 0.5 * (a + b);
        double sum_pp = 0.0, sum_pq = 0.0;
        for (int j = 0; j < 4; ++j)
            if (c.p[j] * mid + c.q[j] < 0.0) {
                sum_pp += c.p[j] * c.p[j];
                sum_pq += c.p[j] * c.q[j];
            }
        const double vertex = (t_bar - rho * sum_pq) / (1.0 + rho * sum_pp);
        const double t = std::clamp(vertex, a, b);
        const double f = objective(t);
        if (!have || f < best_f) {
            have = true;
            best_f = f;
            sol.t = t;
        }
    }
    for (int j = 0; j < 4; ++j)
        sol.slack[j] = std::max(0.0, -(c.p[j] * sol.t + c.q[j]));
    return sol;
}

// ---- governor front end -------------------------------------------------------

struct GovernorResult {
    double torque_nominal = 0.0;
    double torque_applied = 0.0;
    std::array<double, 4> h_before{};
    std::array<double, 4> h_after_pred{};
    bool interval_empty = true;
    double interval_lo = 0.0;
    double interval_hi = 0.0;
    std::array<double, 4> slack_used{};
    double solve_time = 0.0;  // seconds, wall clock; excluded from determinism
};

namespace detail {

inline GovernorResult govern_with(const ConstraintSet& c, const VehicleState& x,
                                  const ControlInput& u_bar, const SafeSet& set,
                                  const TorqueBounds& bounds) {
    GovernorResult r;
    r.torque_nominal = u_bar.torque_total;
    r.h_before = h_values(x, set);
    const QpSolution sol = solve_torque_qp(c, u_bar.torque_total, bounds);
    r.torque_applied = sol.t;
    r.interval_empty = !sol.hard_feasible;
    r.interval_lo = sol.interval_lo;
    r.interval_hi = sol.interval_hi;
    r.slack_used = sol.slack;
    for (int j = 0; j < 4; ++j)
        r.h_after_pred[j] =
            c.p[j] * sol.t + c.q[j] + (1.0 - set.alphas[j]) * r.h_before[j];
    return r;
}

}  // namespace detail

inline GovernorResult solve_governor(const VehicleState& x, const ControlInput& u_bar,
                                     const KoopmanModel& model, const SafeSet& set,
                                     const TorqueBounds& bounds) {
    const auto start = std::chrono::steady_clock::now();
    const ConstraintSet c = build_constraints(x, u_bar, model, set);
    GovernorResult r = detail::govern_with(c, x, u_bar, set, bounds);
    r.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                       .count();
    return r;
}

inline GovernorResult solve_governor_fd(const VehicleState& x, const ControlInput& u_bar,
                                        const OneStepPredictor& predictor,
                                        const SafeSet& set, const TorqueBounds& bounds) {
    const auto start = std::chrono::steady_clock::now();
    const ConstraintSet c = build_constraints_fd(x, u_bar, predictor, set);
    GovernorResult r = detail::govern_with(c, x, u_bar, set, bounds);
    r.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                       .count();
    return r;
}

// ---- closed loop ---------------------------------------------------------------

using PrimaryController = std::function<ControlInput(double t, const VehicleState&)>;

enum class GovernorVariant { off, koopman, physics };

inline const char* variant_name(GovernorVariant v) {
    switch (v) {
        case GovernorVariant::off: return "no_scg";
        case GovernorVariant::koopman: return "dk_scg";
        case GovernorVariant::physics: return "mf_scg";
    }
    return "unknown";
}

struct GovernedRunSpec {
    double duration = 10.0;
    double dt = 0.05;
    VehicleState x0{15.0, 0.0, 0.0};
    TorqueBounds bounds;
};

struct ClosedLoopResult {
    Trajectory trajectory;  // records the APPLIED inputs
    std::vector<GovernorResult> log;
};

// One simulated timeline at the control rate. The primary controller sees the
// true state; the governor (if any) modifies only the torque. Steering is
// clamped to the actuator range either way.
inline ClosedLoopResult closed_loop_run(const VehicleParams& params,
                                        const PrimaryController& primary,
                                        GovernorVariant variant, const KoopmanModel* model,
                                        const OneStepPredictor* mf_predictor,
                                        const SafeSet& set, const GovernedRunSpec& spec) {
    validate_params(params);
    validate_safe_set(set);
    if (variant == GovernorVariant::koopman && (model == nullptr || !model->valid()))
        throw ModelMissingError("closed_loop_run: DK variant needs a trained model");
    if (variant == GovernorVariant::physics && mf_predictor == nullptr)
        throw ModelMissingError("closed_loop_run: MF variant needs a predictor");

    ClosedLoopResult out;
    out.trajectory.dt = spec.dt;
    out.trajectory.scenario_id = variant_name(variant);
    out.trajectory.mu = params.friction;

    const int steps = static_cast<int>(std::llround(spec.duration / spec.dt));
    VehicleState x = spec.x0;
    for (int k = 0; k < steps; ++k) {
        const double t = k * spec.dt;
        const ControlInput u_bar = primary(t, x);

        GovernorResult r;
        switch (variant) {
            case GovernorVariant::off:
                r.torque_nominal = u_bar.torque_total;
                r.torque_applied =
                    std::clamp(u_bar.torque_total, spec.bounds.t_min, spec.bounds.t_max);
                r.h_before = h_values(x, set);
                r.h_after_pred = r.h_before;
                r.interval_empty = false;
                r.interval_lo = spec.bounds.t_min;
                r.interval_hi = spec.bounds.t_max;
                break;
            case GovernorVariant::koopman:
                r = solve_governor(x, u_bar, *model, set, spec.bounds);
                break;
            case GovernorVariant::physics:
                r = solve_governor_fd(x, u_bar, *mf_predictor, set, spec.bounds);
                break;
        }

        const ControlInput applied{
            r.torque_applied, std::clamp(u_bar.steer_front, -kSteerLimit, kSteerLimit)};
        TrajectorySample sample;
        sample.t = t;
        sample.state = x;
        sample.input = applied;
        out.trajectory.samples.push_back(sample);
        out.log.push_back(r);

        x = advance(x, applied, params, spec.dt);
    }
    return out;
}

}  // namespace koopsafe
