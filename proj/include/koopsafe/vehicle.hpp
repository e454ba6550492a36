#pragma once

// Planar four-wheel vehicle plant: rigid-body Newton-Euler motion in the body
// frame with a magic-formula tire model and static vertical loads. This is
// the ground-truth simulator the data pipeline and the governor close their
// loops against.
//
// Conventions: y is left-positive, yaw is CCW-positive, steering acts on the
// front axle only. Wheel indexing everywhere: 0 = front-left, 1 = front-right,
// 2 = rear-left, 3 = rear-right.

#include <algorithm>
#include <array>
#include <cmath>

#include "koopsafe/errors.hpp"

namespace koopsafe {

struct VehicleState {
    double v_x = 0.0;      // longitudinal velocity, m/s
    double v_y = 0.0;      // lateral velocity, m/s
    double omega_r = 0.0;  // yaw rate, rad/s

    bool finite() const {
        return std::isfinite(v_x) && std::isfinite(v_y) && std::isfinite(omega_r);
    }
};

struct ControlInput {
    double torque_total = 0.0;  // sum of the four in-wheel torques, Nm
    double steer_front = 0.0;   // front steering angle, rad
};

struct VehicleParams {
    double mass = 1500.0;         // kg
    double yaw_inertia = 2500.0;  // kg m^2
    double dist_front = 1.2;      // front axle to c.g., m
    double dist_rear = 1.4;       // rear axle to c.g., m
    double track_width = 1.6;     // m
    double wheel_radius = 0.32;   // m
    double friction = 0.85;       // road friction coefficient
    double rolling_coeff = 0.01;  // rolling resistance coefficient
    double gravity = 9.81;        // m/s^2
    double tire_b = 10.0;         // magic formula stiffness factor
    double tire_c = 1.9;          // magic formula shape factor
    double tire_e = 0.97;         // magic formula curvature factor
    double drive_efficiency = 1.0;
    double torque_min = -3000.0;  // Nm, total
    double torque_max = 1000.0;   // Nm, total
};

struct TireForces {
    std::array<double, 4> fx{};          // longitudinal, wheel frame, N
    std::array<double, 4> fy{};          // lateral, wheel frame, N
    std::array<double, 4> fz{};          // vertical load, N
    std::array<double, 4> slip_angle{};  // rad
};

// Below this wheel-center longitudinal speed the slip angle is ill-defined
// and is zeroed instead of blowing up.
inline constexpr double kSlipSpeedEps = 0.5;  // m/s

// Hard kinematic limit on the front steering angle.
inline constexpr double kSteerLimit = 0.15;  // rad

// Internal integration step used when advancing one control interval.
inline constexpr double kPlantSubstep = 0.005;  // s

inline void validate_params(const VehicleParams& p) {
    auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!pos(p.mass) || !pos(p.yaw_inertia) || !pos(p.dist_front) ||
        !pos(p.dist_rear) || !pos(p.track_width) || !pos(p.wheel_radius) ||
        !pos(p.gravity) || !pos(p.tire_b) || !pos(p.tire_c))
        throw ConfigError("vehicle params: geometry, inertia, and tire factors must be positive");
    if (!std::isfinite(p.friction) || p.friction <= 0.0 || p.friction > 1.5)
        throw ConfigError("vehicle params: friction must be in (0, 1.5]");
    if (!std::isfinite(p.rolling_coeff) || p.rolling_coeff < 0.0)
        throw ConfigError("vehicle params: rolling_coeff must be >= 0");
    if (!(p.torque_min < p.torque_max))
        throw ConfigError("vehicle params: torque_min must be below torque_max");
}

// Static loads; no longitudinal or lateral weight transfer in this model.
inline std::array<double, 4> vertical_loads(const VehicleParams& p) {
    const double wheelbase = p.dist_front + p.dist_rear;
    const double front = p.mass * p.gravity * p.dist_rear / (2.0 * wheelbase);
    const double rear = p.mass * p.gravity * p.dist_front / (2.0 * wheelbase);
    return {front, front, rear, rear};
}

inline std::array<double, 4> slip_angles(const VehicleState& x, double steer_front,
                                         const VehicleParams& p) {
    const double half_track = 0.5 * p.track_width;
    const double vx_left = x.v_x - half_track * x.omega_r;
    const double vx_right = x.v_x + half_track * x.omega_r;
    const double vy_front = x.v_y + p.dist_front * x.omega_r;
    const double vy_rear = x.v_y - p.dist_rear * x.omega_r;

    auto angle = [](double steer, double vy, double vx) {
        if (std::abs(vx) < kSlipSpeedEps) return 0.0;
        return steer - std::atan(vy / vx);
    };
    return {angle(steer_front, vy_front, vx_left),
            angle(steer_front, vy_front, vx_right),
            angle(0.0, vy_rear, vx_left),
            angle(0.0, vy_rear, vx_right)};
}

// Magic formula, pure lateral slip. Peak force is mu*fz, so |result| <= mu*fz.
inline double lateral_force(double alpha, double fz, double mu, const VehicleParams& p) {
    const double peak = mu * fz;
    const double ba = p.tire_b * alpha;
    const double arg = ba - p.tire_e * (ba - std::atan(ba));
    return peak * std::sin(p.tire_c * std::atan(arg));
}

// Quasi-static drive force minus rolling resistance, clamped into the part of
// the friction circle the concurrent lateral force leaves available.
inline double longitudinal_force(double torque_wheel, double v_x, double fz, double mu,
                                 const VehicleParams& p, double fy_concurrent = 0.0) {
    const double sign_v = (v_x > 0.0) ? 1.0 : ((v_x < 0.0) ? -1.0 : 0.0);
    const double fx = torque_wheel / p.wheel_radius - p.rolling_coeff * fz * sign_v;
    const double peak = mu * fz;
    const double budget = peak * peak - fy_concurrent * fy_concurrent;
    const double fx_max = budget > 0.0 ? std::sqrt(budget) : 0.0;
    return std::clamp(fx, -fx_max, fx_max);
}

// Total torque splits evenly over the four in-wheel motors. Lateral force is
// computed first; the drive force gets whatever friction budget remains.
inline TireForces tire_forces(const VehicleState& x, const ControlInput& u,
                              const VehicleParams& p) {
    TireForces f;
    f.fz = vertical_loads(p);
    f.slip_angle = slip_angles(x, u.steer_front, p);
    const double torque_wheel = 0.25 * u.torque_total;
    for (int i = 0; i < 4; ++i) {
        f.fy[i] = lateral_force(f.slip_angle[i], f.fz[i], p.friction, p);
        f.fx[i] = longitudinal_force(torque_wheel, x.v_x, f.fz[i], p.friction, p, f.fy[i]);
    }
    return f;
}

// Body-frame accelerations. The yaw balance carries three contributions: the
// left/right drive-force split over the track width, the front-axle lever on
// the steered forces, and the rear-axle lever on the rear lateral forces.
inline VehicleState derivatives(const VehicleState& x, const ControlInput& u,
                                const VehicleParams& p) {
    const TireForces f = tire_forces(x, u, p);
    const double cd = std::cos(u.steer_front);
    const double sd = std::sin(u.steer_front);
    const double fx_front = f.fx[0] + f.fx[1];
    const double fy_front = f.fy[0] + f.fy[1];
    const double fx_rear = f.fx[2] + f.fx[3];
    const double fy_rear = f.fy[2] + f.fy[3];

    VehicleState d;
    d.v_x = (fx_front * cd - fy_front * sd + fx_rear) / p.mass + x.v_y * x.omega_r;
    d.v_y = (fx_front * sd + fy_front * cd + fy_rear) / p.mass - x.v_x * x.omega_r;

    const double half_track = 0.5 * p.track_width;
    const double right = (f.fx[1] * cd - f.fy[1] * sd) + f.fx[3];
    const double left = (f.fx[0] * cd - f.fy[0] * sd) + f.fx[2];
    d.omega_r = (p.drive_efficiency * half_track * right - half_track * left +
                 p.dist_front * (fx_front * sd + fy_front * cd) -
                 p.dist_rear * fy_rear) /
                p.yaw_inertia;
    return d;
}

// One RK4 step with zero-order-hold inputs. v_x is clamped at zero; the model
// has no reverse regime.
inline VehicleState step(const VehicleState& x0, const ControlInput& u,
                         const VehicleParams& p, double dt) {
    auto blend = [](const VehicleState& a, const VehicleState& b, double s) {
        return VehicleState{a.v_x + s * b.v_x, a.v_y + s * b.v_y, a.omega_r + s * b.omega_r};
    };
    const VehicleState k1 = derivatives(x0, u, p);
    const VehicleState k2 = derivatives(blend(x0, k1, 0.5 * dt), u, p);
    const VehicleState k3 = derivatives(blend(x0, k2, 0.5 * dt), u, p);
    const VehicleState k4 = derivatives(blend(x0, k3, dt), u, p);

    VehicleState x1;
    x1.v_x = x0.v_x + dt / 6.0 * (k1.v_x + 2.0 * k2.v_x + 2.0 * k3.v_x + k4.v_x);
    x1.v_y = x0.v_y + dt / 6.0 * (k1.v_y + 2.0 * k2.v_y + 2.0 * k3.v_y + k4.v_y);
    x1.omega_r = x0.omega_r + dt / 6.0 * (k1.omega_r + 2.0 * k2.omega_r + 2.0 * k3.omega_r + k4.omega_r);
    if (x1.v_x < 0.0) x1.v_x = 0.0;
    if (!x1.finite()) throw NonFiniteError("vehicle step produced a non-finite state");
    return x1;
}

// Advance one control interval with the input held, integrating internally at
// `substep` resolution.
inline VehicleState advance(VehicleState x, const ControlInput& u, const VehicleParams& p,
                            double dt, double substep = kPlantSubstep) {
    const int n = std::max(1, static_cast<int>(std::lround(dt / substep)));
    const double h = dt / n;
    for (int i = 0; i < n; ++i) x = step(x, u, p, h);
    return x;
}

}  // namespace koopsafe
