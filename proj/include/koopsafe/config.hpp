#pragma once

// Experiment configuration: one JSON document covering plant, corpus,
// training, evaluation, and governed-run settings. Unknown keys are errors so
// a typo cannot silently fall back to a default. Every field has a default;
// an empty document {} is the reference experiment.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopsafe/baselines.hpp"
#include "koopsafe/dataset.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/governor.hpp"
#include "koopsafe/koopman.hpp"
#include "koopsafe/vehicle.hpp"
#include "koopsafe/version.hpp"

namespace koopsafe {

// Corpus generation: the cross product of road segments and frictions, each
// run seeds_per_scenario times with derived excitation seeds.
struct CollectConfig {
    std::vector<double> radii{0.0, 50.0, 75.0, 100.0};  // 0 = straight
    std::vector<double> mus{0.85, 0.7, 0.5, 0.2};
    int seeds_per_scenario = 3;
    double duration = 60.0;  // s
    double dt = 0.05;        // s
    double initial_speed = 15.0;
    TorqueExcitation torque;
    SteeringExcitation steering;
};

struct EvalConfig {
    std::vector<double> mass_deltas{-150.0, 150.0};  // kg, on top of dm = 0
};

// Scripted driver for governed runs: proportional speed hold plus a
// piecewise-linear steering schedule.
struct GovernConfig {
    std::vector<std::string> variants{"no_scg", "mf_scg", "dk_scg"};
    double mu = 0.2;
    double duration = 14.2;  // s
    double dt = 0.05;        // s
    double initial_speed = 10.5;
    double v_ref = 10.5;        // m/s
    double speed_gain = 600.0;  // Nm per m/s of speed error
    // Double turn sized to the mu above: the first sweep demands slightly more
    // lateral force than the surface provides so the unassisted car drifts
    // through the sideslip boundary; the second sweep stays below saturation.
    std::vector<std::array<double, 2>> steer_knots{
        {0.0, 0.0},  {2.0, 0.0},    {3.5, 0.045},  {6.5, 0.045},
        {7.7, -0.03}, {10.7, -0.03}, {12.2, 0.0}};
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    VehicleParams vehicle;
    CollectConfig collect;
    std::array<double, 3> split{0.7, 0.15, 0.15};
    TrainConfig train;
    MlpConfig mlp;
    EvalConfig eval;
    SafeSet safe_set = SafeSet::default_set();
    GovernConfig govern;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const std::string& k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
    }
}

inline void parse_vehicle(const json& j, VehicleParams& p) {
    check_keys(j, {"mass", "yaw_inertia", "dist_front", "dist_rear", "track_width",
                   "wheel_radius", "friction", "rolling_coeff", "gravity", "tire_b",
                   "tire_c", "tire_e", "drive_efficiency", "torque_min", "torque_max"},
               "vehicle");
    get_to(j, "mass", p.mass, "vehicle");
    get_to(j, "yaw_inertia", p.yaw_inertia, "vehicle");
    get_to(j, "dist_front", p.dist_front, "vehicle");
    get_to(j, "dist_rear", p.dist_rear, "vehicle");
    get_to(j, "track_width", p.track_width, "vehicle");
    get_to(j, "wheel_radius", p.wheel_radius, "vehicle");
    get_to(j, "friction", p.friction, "vehicle");
    get_to(j, "rolling_coeff", p.rolling_coeff, "vehicle");
    get_to(j, "gravity", p.gravity, "vehicle");
    get_to(j, "tire_b", p.tire_b, "vehicle");
    get_to(j, "tire_c", p.tire_c, "vehicle");
    get_to(j, "tire_e", p.tire_e, "vehicle");
    get_to(j, "drive_efficiency", p.drive_efficiency, "vehicle");
    get_to(j, "torque_min", p.torque_min, "vehicle");
    get_to(j, "torque_max", p.torque_max, "vehicle");
}

inline void parse_collect(const json& j, CollectConfig& c) {
    check_keys(j, {"radii", "mus", "seeds_per_scenario", "duration", "dt",
                   "initial_speed", "torque", "steering"},
               "collect");
    get_to(j, "radii", c.radii, "collect");
    get_to(j, "mus", c.mus, "collect");
    get_to(j, "seeds_per_scenario", c.seeds_per_scenario, "collect");
    get_to(j, "duration", c.duration, "collect");
    get_to(j, "dt", c.dt, "collect");
    get_to(j, "initial_speed", c.initial_speed, "collect");
    if (j.contains("torque")) {
        const json& t = j.at("torque");
        check_keys(t, {"step_min", "step_max", "hold_min", "hold_max", "ramp_fraction",
                       "ramp_min", "ramp_max", "speed_hold_gain", "v_band_lo", "v_band_hi"},
                   "collect.torque");
        get_to(t, "step_min", c.torque.step_min, "collect.torque");
        get_to(t, "step_max", c.torque.step_max, "collect.torque");
        get_to(t, "hold_min", c.torque.hold_min, "collect.torque");
        get_to(t, "hold_max", c.torque.hold_max, "collect.torque");
        get_to(t, "ramp_fraction", c.torque.ramp_fraction, "collect.torque");
        get_to(t, "ramp_min", c.torque.ramp_min, "collect.torque");
        get_to(t, "ramp_max", c.torque.ramp_max, "collect.torque");
        get_to(t, "speed_hold_gain", c.torque.speed_hold_gain, "collect.torque");
        get_to(t, "v_band_lo", c.torque.v_band_lo, "collect.torque");
        get_to(t, "v_band_hi", c.torque.v_band_hi, "collect.torque");
    }
    if (j.contains("steering")) {
        const json& s = j.at("steering");
        check_keys(s, {"amplitude", "freq_lo", "freq_hi", "follow_gain",
                       "dither_amplitude"},
                   "collect.steering");
        get_to(s, "amplitude", c.steering.amplitude, "collect.steering");
        get_to(s, "freq_lo", c.steering.freq_lo, "collect.steering");
        get_to(s, "freq_hi", c.steering.freq_hi, "collect.steering");
        get_to(s, "follow_gain", c.steering.follow_gain, "collect.steering");
        get_to(s, "dither_amplitude", c.steering.dither_amplitude, "collect.steering");
    }
}

inline void parse_train(const json& j, TrainConfig& t) {
    check_keys(j, {"epochs", "seq_len", "batch_size", "lr", "gamma", "loss_w1",
                   "loss_w2", "momentum", "embedding_dim", "encoder_hidden",
                   "decoder_hidden", "val_patience"},
               "train");
    get_to(j, "epochs", t.epochs, "train");
    get_to(j, "seq_len", t.seq_len, "train");
    get_to(j, "batch_size", t.batch_size, "train");
    get_to(j, "lr", t.lr, "train");
    get_to(j, "gamma", t.gamma, "train");
    get_to(j, "loss_w1", t.loss_w1, "train");
    get_to(j, "loss_w2", t.loss_w2, "train");
    get_to(j, "momentum", t.momentum, "train");
    get_to(j, "embedding_dim", t.embedding_dim, "train");
    get_to(j, "encoder_hidden", t.encoder_hidden, "train");
    get_to(j, "decoder_hidden", t.decoder_hidden, "train");
    get_to(j, "val_patience", t.val_patience, "train");
}

inline void parse_mlp(const json& j, MlpConfig& m) {
    check_keys(j, {"epochs", "lr", "batch_size", "hidden", "val_patience"}, "mlp");
    get_to(j, "epochs", m.epochs, "mlp");
    get_to(j, "lr", m.lr, "mlp");
    get_to(j, "batch_size", m.batch_size, "mlp");
    get_to(j, "hidden", m.hidden, "mlp");
    get_to(j, "val_patience", m.val_patience, "mlp");
}

inline void parse_safe_set(const json& j, SafeSet& s) {
    check_keys(j, {"planes", "alphas"}, "safe_set");
    if (j.contains("planes")) {
        std::vector<std::array<double, 3>> rows;
        get_to(j, "planes", rows, "safe_set");
        if (rows.size() != 4)
            throw ConfigError("config: safe_set.planes must hold exactly 4 rows");
        for (int k = 0; k < 4; ++k) s.planes[k] = {rows[k][0], rows[k][1], rows[k][2]};
    }
    if (j.contains("alphas")) {
        std::vector<double> a;
        get_to(j, "alphas", a, "safe_set");
        if (a.size() != 4)
            throw ConfigError("config: safe_set.alphas must hold exactly 4 values");
        for (int k = 0; k < 4; ++k) s.alphas[k] = a[k];
    }
}

inline void parse_govern(const json& j, GovernConfig& g) {
    check_keys(j, {"variants", "mu", "duration", "dt", "initial_speed", "v_ref",
                   "speed_gain", "steer_knots"},
               "govern");
    get_to(j, "variants", g.variants, "govern");
    get_to(j, "mu", g.mu, "govern");
    get_to(j, "duration", g.duration, "govern");
    get_to(j, "dt", g.dt, "govern");
    get_to(j, "initial_speed", g.initial_speed, "govern");
    get_to(j, "v_ref", g.v_ref, "govern");
    get_to(j, "speed_gain", g.speed_gain, "govern");
    get_to(j, "steer_knots", g.steer_knots, "govern");
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
    validate_params(cfg.vehicle);
    validate_train_config(cfg.train);
    validate_safe_set(cfg.safe_set);
    if (cfg.collect.radii.empty() || cfg.collect.mus.empty())
        throw ConfigError("config: collect needs at least one radius and one mu");
    for (double r : cfg.collect.radii)
        if (r < 0.0) throw ConfigError("config: radii must be 0 (straight) or positive");
    for (double mu : cfg.collect.mus)
        if (!(mu > 0.0)) throw ConfigError("config: friction must be > 0");
    if (cfg.collect.seeds_per_scenario < 1)
        throw ConfigError("config: seeds_per_scenario must be >= 1");
    for (double r : cfg.split)
        if (!(r >= 0.0) || !(r <= 1.0))
            throw ConfigError("config: split ratios must lie in [0, 1]");
    if (std::abs(cfg.split[0] + cfg.split[1] + cfg.split[2] - 1.0) > 1e-9)
        throw ConfigError("config: split ratios must sum to 1");
    if (!(cfg.collect.dt > 0.0) || !(cfg.collect.duration >= cfg.collect.dt))
        throw ConfigError("config: collect needs dt > 0 and duration >= dt");
    if (cfg.govern.variants.empty())
        throw ConfigError("config: govern.variants must not be empty");
    for (const std::string& v : cfg.govern.variants)
        if (v != "no_scg" && v != "mf_scg" && v != "dk_scg")
            throw ConfigError("config: unknown governor variant '" + v + "'");
    if (!(cfg.govern.mu > 0.0)) throw ConfigError("config: govern.mu must be > 0");
    if (!(cfg.govern.dt > 0.0) || !(cfg.govern.duration >= cfg.govern.dt))
        throw ConfigError("config: govern needs dt > 0 and duration >= dt");
    if (cfg.govern.steer_knots.empty())
        throw ConfigError("config: govern.steer_knots must not be empty");
    for (std::size_t i = 1; i < cfg.govern.steer_knots.size(); ++i)
        if (!(cfg.govern.steer_knots[i][0] >= cfg.govern.steer_knots[i - 1][0]))
            throw ConfigError("config: govern.steer_knots times must be non-decreasing");
    for (const auto& knot : cfg.govern.steer_knots)
        if (std::abs(knot[1]) > kSteerLimit)
            throw ConfigError("config: govern.steer_knots exceed the steering limit");
}

inline ExperimentConfig parse_config(const std::string& text) {
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const detail::json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    detail::check_keys(j, {"seed", "out_dir", "vehicle", "collect", "split", "train",
                           "mlp", "eval", "safe_set", "govern"},
                       "top level");

    ExperimentConfig cfg;
    detail::get_to(j, "seed", cfg.seed, "top level");
    detail::get_to(j, "out_dir", cfg.out_dir, "top level");
    if (j.contains("vehicle")) detail::parse_vehicle(j.at("vehicle"), cfg.vehicle);
    if (j.contains("collect")) detail::parse_collect(j.at("collect"), cfg.collect);
    if (j.contains("split")) {
        std::vector<double> r;
        detail::get_to(j, "split", r, "top level");
        if (r.size() != 3)
            throw ConfigError("config: split must be [train, val, test]");
        cfg.split = {r[0], r[1], r[2]};
    }
    if (j.contains("train")) detail::parse_train(j.at("train"), cfg.train);
    if (j.contains("mlp")) detail::parse_mlp(j.at("mlp"), cfg.mlp);
    if (j.contains("eval")) {
        detail::check_keys(j.at("eval"), {"mass_deltas"}, "eval");
        detail::get_to(j.at("eval"), "mass_deltas", cfg.eval.mass_deltas, "eval");
    }
    if (j.contains("safe_set")) detail::parse_safe_set(j.at("safe_set"), cfg.safe_set);
    if (j.contains("govern")) detail::parse_govern(j.at("govern"), cfg.govern);
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

// Canonical re-serialization of every experiment-relevant field. The hash of
// this string is stamped into all outputs; out_dir is deliberately absent so
// relocating a workspace does not change what the experiment claims to be.
inline std::string canonical_config(const ExperimentConfig& cfg) {
    detail::json j;
    j["seed"] = cfg.seed;
    const VehicleParams& p = cfg.vehicle;
    j["vehicle"] = {{"mass", p.mass},
                    {"yaw_inertia", p.yaw_inertia},
                    {"dist_front", p.dist_front},
                    {"dist_rear", p.dist_rear},
                    {"track_width", p.track_width},
                    {"wheel_radius", p.wheel_radius},
                    {"friction", p.friction},
                    {"rolling_coeff", p.rolling_coeff},
                    {"gravity", p.gravity},
                    {"tire_b", p.tire_b},
                    {"tire_c", p.tire_c},
                    {"tire_e", p.tire_e},
                    {"drive_efficiency", p.drive_efficiency},
                    {"torque_min", p.torque_min},
                    {"torque_max", p.torque_max}};
    const CollectConfig& c = cfg.collect;
    j["collect"] = {{"radii", c.radii},
                    {"mus", c.mus},
                    {"seeds_per_scenario", c.seeds_per_scenario},
                    {"duration", c.duration},
                    {"dt", c.dt},
                    {"initial_speed", c.initial_speed},
                    {"torque",
                     {{"step_min", c.torque.step_min},
                      {"step_max", c.torque.step_max},
                      {"hold_min", c.torque.hold_min},
                      {"hold_max", c.torque.hold_max},
                      {"ramp_fraction", c.torque.ramp_fraction},
                      {"ramp_min", c.torque.ramp_min},
                      {"ramp_max", c.torque.ramp_max},
                      {"speed_hold_gain", c.torque.speed_hold_gain},
                      {"v_band_lo", c.torque.v_band_lo},
                      {"v_band_hi", c.torque.v_band_hi}}},
                    {"steering",
                     {{"amplitude", c.steering.amplitude},
                      {"freq_lo", c.steering.freq_lo},
                      {"freq_hi", c.steering.freq_hi},
                      {"follow_gain", c.steering.follow_gain},
                      {"dither_amplitude", c.steering.dither_amplitude}}}};
    j["split"] = cfg.split;
    const TrainConfig& t = cfg.train;
    j["train"] = {{"epochs", t.epochs},
                  {"seq_len", t.seq_len},
                  {"batch_size", t.batch_size},
                  {"lr", t.lr},
                  {"gamma", t.gamma},
                  {"loss_w1", t.loss_w1},
                  {"loss_w2", t.loss_w2},
                  {"momentum", t.momentum},
                  {"embedding_dim", t.embedding_dim},
                  {"encoder_hidden", t.encoder_hidden},
                  {"decoder_hidden", t.decoder_hidden},
                  {"val_patience", t.val_patience}};
    j["mlp"] = {{"epochs", cfg.mlp.epochs},
                {"lr", cfg.mlp.lr},
                {"batch_size", cfg.mlp.batch_size},
                {"hidden", cfg.mlp.hidden},
                {"val_patience", cfg.mlp.val_patience}};
    j["eval"] = {{"mass_deltas", cfg.eval.mass_deltas}};
    detail::json planes = detail::json::array();
    for (const HalfPlane& pl : cfg.safe_set.planes)
        planes.push_back({pl.c_y, pl.c_r, pl.b});
    j["safe_set"] = {{"planes", planes}, {"alphas", cfg.safe_set.alphas}};
    const GovernConfig& g = cfg.govern;
    j["govern"] = {{"variants", g.variants},
                   {"mu", g.mu},
                   {"duration", g.duration},
                   {"dt", g.dt},
                   {"initial_speed", g.initial_speed},
                   {"v_ref", g.v_ref},
                   {"speed_gain", g.speed_gain},
                   {"steer_knots", g.steer_knots}};
    return j.dump();
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    return hash_hex(fnv1a64(canonical_config(cfg)));
}

}  // namespace koopsafe
