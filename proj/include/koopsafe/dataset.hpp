#pragma once

// Data pipeline: drives the plant through seeded excitation scenarios,
// collects fixed-rate trajectories, and turns them into the windowed,
// normalized datasets the trainers consume.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "koopsafe/csv.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/normalize.hpp"
#include "koopsafe/rng.hpp"
#include "koopsafe/vehicle.hpp"

namespace koopsafe {

struct TrajectorySample {
    double t = 0.0;
    VehicleState state;
    ControlInput input;  // held over [t, t + dt)
};

struct Trajectory {
    double dt = 0.05;
    std::string scenario_id;
    std::uint64_t seed = 0;
    double mu = 0.85;
    double radius = 0.0;  // 0 = straight segment
    std::vector<TrajectorySample> samples;
};

// Random torque steps with occasional linear ramps between levels. The speed
// band is a dead-banded proportional takeover that keeps v_x from running
// away on long braking holds; inside the band the profile passes through.
struct TorqueExcitation {
    double step_min = -2850.0;  // Nm
    double step_max = 950.0;    // Nm
    double hold_min = 1.0;      // s
    double hold_max = 3.0;      // s
    double ramp_fraction = 0.5;
    double ramp_min = 0.2;  // s
    double ramp_max = 1.0;  // s
    double speed_hold_gain = 400.0;  // Nm per m/s outside the band
    double v_band_lo = 8.5;          // m/s
    double v_band_hi = 19.5;         // m/s
};

struct SteeringExcitation {
    enum class Kind { sine_sweep, curve_follow };
    Kind kind = Kind::sine_sweep;
    double amplitude = 0.12;         // rad, sine sweep
    double freq_lo = 0.1;            // Hz
    double freq_hi = 0.5;            // Hz
    double follow_gain = 0.5;        // rad per rad/s of yaw error, curve follow
    double dither_amplitude = 0.02;  // rad, slow dither on top of the follower
};

struct ExcitationSpec {
    TorqueExcitation torque;
    SteeringExcitation steering;
    double initial_speed = 15.0;  // m/s
    std::uint64_t seed = 0;
};

struct ScenarioSpec {
    std::string id;
    double radius = 0.0;  // m, 0 = straight
    double mu = 0.85;
    double duration = 60.0;  // s
    double dt = 0.05;        // s
    ExcitationSpec excitation;
};

namespace detail {

// Piecewise torque profile: level knots with per-transition ramp times.
struct TorqueProfile {
    std::vector<double> t_start;  // segment begin
    std::vector<double> level;    // segment level
    std::vector<double> ramp;     // seconds spent ramping from previous level

    double eval(double t) const {
        std::size_t i = 0;
        while (i + 1 < t_start.size() && t >= t_start[i + 1]) ++i;
        if (i > 0 && ramp[i] > 0.0) {
            const double into = t - t_start[i];
            if (into < ramp[i]) {
                const double f = into / ramp[i];
                return level[i - 1] + f * (level[i] - level[i - 1]);
            }
        }
        return level[i];
    }
};

inline TorqueProfile build_torque_profile(const TorqueExcitation& spec, double duration,
                                          Rng& rng) {
    TorqueProfile p;
    double t = 0.0;
    while (t < duration) {
        p.t_start.push_back(t);
        p.level.push_back(uniform(rng, spec.step_min, spec.step_max));
        p.ramp.push_back(p.level.size() > 1 && uniform01(rng) < spec.ramp_fraction
                             ? uniform(rng, spec.ramp_min, spec.ramp_max)
                             : 0.0);
        t += uniform(rng, spec.hold_min, spec.hold_max);
    }
    return p;
}

}  // namespace detail

inline void validate_scenario(const ScenarioSpec& s) {
    if (!(s.dt > 0.0) || !(s.duration >= s.dt))
        throw ConfigError("scenario '" + s.id + "': need dt > 0 and duration >= dt");
    if (s.radius < 0.0)
        throw ConfigError("scenario '" + s.id + "': radius must be 0 (straight) or positive");
    if (!(s.mu > 0.0))
        throw ConfigError("scenario '" + s.id + "': mu must be positive");
    if (s.excitation.steering.amplitude < 0.0 ||
        s.excitation.steering.amplitude > kSteerLimit)
        throw ConfigError("scenario '" + s.id + "': steering amplitude exceeds the limit");
    if (!(s.excitation.initial_speed >= 0.0))
        throw ConfigError("scenario '" + s.id + "': initial speed must be >= 0");
}

// Drive the plant through one scenario. Sample i records the state at t_i and
// the input held over [t_i, t_i + dt); the plant integrates between samples
// at its internal substep.
inline Trajectory run_scenario(const ScenarioSpec& spec, const VehicleParams& base) {
    validate_scenario(spec);
    VehicleParams p = base;
    p.friction = spec.mu;
    validate_params(p);

    Rng rng = make_rng(spec.excitation.seed);
    const detail::TorqueProfile torque =
        detail::build_torque_profile(spec.excitation.torque, spec.duration, rng);
    const double chirp_phase = uniform(rng, 0.0, 2.0 * M_PI);
    const double curve_dir = uniform01(rng) < 0.5 ? 1.0 : -1.0;
    const double dither_phase = uniform(rng, 0.0, 2.0 * M_PI);

    const SteeringExcitation& st = spec.excitation.steering;
    const TorqueExcitation& tq = spec.excitation.torque;
    const double wheelbase = p.dist_front + p.dist_rear;

    Trajectory out;
    out.dt = spec.dt;
    out.scenario_id = spec.id;
    out.seed = spec.excitation.seed;
    out.mu = spec.mu;
    out.radius = spec.radius;

    VehicleState x{spec.excitation.initial_speed, 0.0, 0.0};
    const int n = static_cast<int>(std::lround(spec.duration / spec.dt));
    out.samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double t = i * spec.dt;

        double torque_cmd = torque.eval(t);
        if (x.v_x < tq.v_band_lo)
            torque_cmd = std::max(torque_cmd, tq.speed_hold_gain * (tq.v_band_lo - x.v_x));
        else if (x.v_x > tq.v_band_hi)
            torque_cmd = std::min(torque_cmd, tq.speed_hold_gain * (tq.v_band_hi - x.v_x));
        torque_cmd = std::clamp(torque_cmd, p.torque_min, p.torque_max);

        double steer_cmd;
        if (spec.radius > 0.0 && st.kind == SteeringExcitation::Kind::curve_follow) {
            const double omega_des = curve_dir * x.v_x / spec.radius;
            steer_cmd = curve_dir * wheelbase / spec.radius +
                        st.follow_gain * (omega_des - x.omega_r) +
                        st.dither_amplitude * std::sin(2.0 * M_PI * 0.25 * t + dither_phase);
        } else {
            const double sweep_rate = (st.freq_hi - st.freq_lo) / (2.0 * spec.duration);
            const double phase =
                2.0 * M_PI * (st.freq_lo * t + sweep_rate * t * t) + chirp_phase;
            steer_cmd = st.amplitude * std::sin(phase);
        }
        steer_cmd = std::clamp(steer_cmd, -kSteerLimit, kSteerLimit);

        out.samples.push_back({t, x, {torque_cmd, steer_cmd}});
        try {
            x = advance(x, {torque_cmd, steer_cmd}, p, spec.dt);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("scenario '" + spec.id + "': " + e.what());
        }
    }
    return out;
}

inline NormalizationSpec fit_normalization(const std::vector<Trajectory>& trajs) {
    NormalizationSpec n;
    n.mins.fill(1e300);
    n.maxs.fill(-1e300);
    for (const Trajectory& tr : trajs)
        for (const TrajectorySample& s : tr.samples) {
            const double v[kNumChannels] = {s.state.v_x, s.state.v_y, s.state.omega_r,
                                            s.input.torque_total, s.input.steer_front};
            for (int ch = 0; ch < kNumChannels; ++ch) {
                n.mins[ch] = std::min(n.mins[ch], v[ch]);
                n.maxs[ch] = std::max(n.maxs[ch], v[ch]);
            }
        }
    n.check();
    return n;
}

// Length-(K+1) state window with its K held inputs, stride 1, never crossing
// a trajectory boundary. A trajectory of length L yields L - K windows.
struct Window {
    Eigen::Matrix3Xd x;  // 3 x (K+1), physical units
    Eigen::Matrix2Xd u;  // 2 x K
    int source = 0;      // index of the originating trajectory
};

inline std::vector<Window> window(const std::vector<Trajectory>& trajs, int k) {
    if (k < 1) throw DimensionError("window length K must be >= 1");
    std::vector<Window> out;
    for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
        const auto& s = trajs[ti].samples;
        const int len = static_cast<int>(s.size());
        for (int start = 0; start + k < len; ++start) {
            Window w;
            w.x.resize(3, k + 1);
            w.u.resize(2, k);
            for (int i = 0; i <= k; ++i) {
                w.x(0, i) = s[start + i].state.v_x;
                w.x(1, i) = s[start + i].state.v_y;
                w.x(2, i) = s[start + i].state.omega_r;
                if (i < k) {
                    w.u(0, i) = s[start + i].input.torque_total;
                    w.u(1, i) = s[start + i].input.steer_front;
                }
            }
            w.source = static_cast<int>(ti);
            out.push_back(std::move(w));
        }
    }
    return out;
}

struct TrajectorySplit {
    std::vector<Trajectory> train, val, test;
};

// Split at trajectory granularity so no window ever straddles two splits.
inline TrajectorySplit split(const std::vector<Trajectory>& trajs,
                             const std::array<double, 3>& ratios, std::uint64_t seed) {
    for (double r : ratios)
        if (!(r >= 0.0) || !(r <= 1.0))
            throw ConfigError("split ratios must lie in [0, 1]");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1");

    const int n = static_cast<int>(trajs.size());
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    Rng rng = make_rng(seed);
    shuffle(idx, rng);

    const int n_train = static_cast<int>(std::floor(n * ratios[0]));
    const int n_val = static_cast<int>(std::floor(n * (ratios[0] + ratios[1]))) - n_train;
    const int n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw TooFewTrajectoriesError("split of " + std::to_string(n) +
                                      " trajectories leaves an empty subset");

    TrajectorySplit out;
    auto take = [&](int begin, int count, std::vector<Trajectory>& dst) {
        std::vector<int> part(idx.begin() + begin, idx.begin() + begin + count);
        std::sort(part.begin(), part.end());
        for (int i : part) dst.push_back(trajs[i]);
    };
    take(0, n_train, out.train);
    take(n_train, n_val, out.val);
    take(n_train + n_val, n_test, out.test);
    return out;
}

// Everything a trainer needs: split trajectories, their stride-1 windows, and
// the normalization frozen from the training split only.
struct SplitDataset {
    TrajectorySplit trajs;
    std::vector<Window> train, val, test;
    NormalizationSpec norm;
};

inline SplitDataset prepare_dataset(const std::vector<Trajectory>& trajs, int k,
                                    const std::array<double, 3>& ratios,
                                    std::uint64_t seed) {
    SplitDataset d;
    d.trajs = split(trajs, ratios, seed);
    d.norm = fit_normalization(d.trajs.train);
    d.train = window(d.trajs.train, k);
    d.val = window(d.trajs.val, k);
    d.test = window(d.trajs.test, k);
    if (d.train.empty() || d.val.empty())
        throw TooFewTrajectoriesError("trajectories are too short for K-step windows");
    return d;
}

// ---- trajectory CSV files -------------------------------------------------

inline const std::vector<std::string>& trajectory_csv_header() {
    static const std::vector<std::string> h{"scenario_id", "seed",  "t",  "v_x", "v_y",
                                            "omega_r",     "torque", "steer", "mu", "radius"};
    return h;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& tr,
                                 const std::vector<std::string>& meta = {}) {
    CsvWriter w(path);
    for (const std::string& m : meta) w.comment(m);
    w.row(trajectory_csv_header());
    const std::string radius = tr.radius > 0.0 ? csv_num(tr.radius) : std::string();
    for (const TrajectorySample& s : tr.samples)
        w.row({tr.scenario_id, csv_int(static_cast<long long>(tr.seed)), csv_num(s.t),
               csv_num(s.state.v_x), csv_num(s.state.v_y), csv_num(s.state.omega_r),
               csv_num(s.input.torque_total), csv_num(s.input.steer_front), csv_num(tr.mu),
               radius});
}

inline Trajectory read_trajectory_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    if (t.header != trajectory_csv_header())
        throw FormatError("'" + path + "': unexpected trajectory csv header");
    if (t.rows.empty()) throw FormatError("'" + path + "': trajectory has no samples");

    Trajectory tr;
    tr.scenario_id = t.rows[0][0];
    tr.seed = static_cast<std::uint64_t>(csv_to_double(t.rows[0][1], "seed"));
    tr.mu = csv_to_double(t.rows[0][8], "mu");
    tr.radius = csv_to_double(t.rows[0][9], "radius");
    for (const auto& row : t.rows) {
        if (row[0] != tr.scenario_id)
            throw FormatError("'" + path + "': mixed scenario ids in one file");
        TrajectorySample s;
        s.t = csv_to_double(row[2], "t");
        s.state = {csv_to_double(row[3], "v_x"), csv_to_double(row[4], "v_y"),
                   csv_to_double(row[5], "omega_r")};
        s.input = {csv_to_double(row[6], "torque"), csv_to_double(row[7], "steer")};
        if (!s.state.finite())
            throw FormatError("'" + path + "': non-finite state sample");
        tr.samples.push_back(s);
    }
    if (tr.samples.size() > 1) {
        tr.dt = tr.samples[1].t - tr.samples[0].t;
        for (std::size_t i = 1; i < tr.samples.size(); ++i) {
            const double gap = tr.samples[i].t - tr.samples[i - 1].t;
            if (!(gap > 0.0) || std::abs(gap - tr.dt) > 1e-9)
                throw FormatError("'" + path + "': timestamps are not uniformly spaced");
        }
    }
    return tr;
}

// Per-channel min/max actually visited, for coverage reporting.
struct ChannelRanges {
    std::array<double, kNumChannels> lo{}, hi{};
};

inline ChannelRanges collected_ranges(const std::vector<Trajectory>& trajs) {
    ChannelRanges r;
    r.lo.fill(1e300);
    r.hi.fill(-1e300);
    for (const Trajectory& tr : trajs)
        for (const TrajectorySample& s : tr.samples) {
            const double v[kNumChannels] = {s.state.v_x, s.state.v_y, s.state.omega_r,
                                            s.input.torque_total, s.input.steer_front};
            for (int ch = 0; ch < kNumChannels; ++ch) {
                r.lo[ch] = std::min(r.lo[ch], v[ch]);
                r.hi[ch] = std::max(r.hi[ch], v[ch]);
            }
        }
    return r;
}

}  // namespace koopsafe
