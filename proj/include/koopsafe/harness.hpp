#pragma once

// The four experiment commands behind the CLI: collect, train, eval, govern.
// Each consumes an ExperimentConfig and reads or writes a fixed layout under
// out_dir:
//
//   corpus/<scenario>.csv     collect
//   model.json                train
//   training_curve.csv        train
//   eval_report.json          eval
//   govern/<variant>_*.csv    govern
//
// All files carry the tool version and config hash; reruns with the same
// config and seed are byte-identical (governor logs aside, whose solve-time
// column is wall-clock).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopsafe/baselines.hpp"
#include "koopsafe/config.hpp"
#include "koopsafe/csv.hpp"
#include "koopsafe/dataset.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/governor.hpp"
#include "koopsafe/koopman.hpp"
#include "koopsafe/version.hpp"

namespace koopsafe {

namespace detail {

inline std::string sanitize_number(double v) {
    std::string s = csv_num(v);
    for (char& c : s) {
        if (c == '.') c = 'p';
        if (c == '-') c = 'm';
    }
    return s;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline std::vector<std::string> file_comments(const ExperimentConfig& cfg) {
    return {"tool_version=" + std::string(kToolVersion), "config=" + config_hash(cfg)};
}

}  // namespace detail

// Scenario ids sort the same way the catalog enumerates them, so directory
// order equals generation order.
inline std::vector<ScenarioSpec> scenario_catalog(const ExperimentConfig& cfg) {
    std::vector<ScenarioSpec> out;
    std::uint64_t index = 0;
    for (double radius : cfg.collect.radii)
        for (double mu : cfg.collect.mus)
            for (int k = 0; k < cfg.collect.seeds_per_scenario; ++k, ++index) {
                ScenarioSpec s;
                s.id = (radius > 0.0 ? "r" + detail::sanitize_number(radius) : "straight");
                s.id += "_mu" + detail::sanitize_number(mu) + "_s" + std::to_string(k);
                s.radius = radius;
                s.mu = mu;
                s.duration = cfg.collect.duration;
                s.dt = cfg.collect.dt;
                s.excitation.torque = cfg.collect.torque;
                s.excitation.steering = cfg.collect.steering;
                s.excitation.initial_speed = cfg.collect.initial_speed;
                // Pin each scenario's lateral demand to ~1.3x (straights) or
                // ~0.85x steady (curves) of that road's grip so the corpus
                // reaches tire saturation without spinning out.
                const double g = cfg.vehicle.gravity;
                const double wheelbase = cfg.vehicle.dist_front + cfg.vehicle.dist_rear;
                if (radius > 0.0) {
                    s.excitation.steering.kind = SteeringExcitation::Kind::curve_follow;
                    const double v_target = std::clamp(
                        std::sqrt(0.85 * mu * g * radius), 7.0, 19.0);
                    s.excitation.initial_speed = v_target;
                    s.excitation.torque.v_band_lo = 0.92 * v_target;
                    s.excitation.torque.v_band_hi = 1.08 * v_target;
                    s.excitation.steering.dither_amplitude =
                        std::min(cfg.collect.steering.dither_amplitude,
                                 0.3 * wheelbase / radius);
                } else {
                    s.excitation.steering.kind = SteeringExcitation::Kind::sine_sweep;
                    const double v0 = std::max(s.excitation.initial_speed, 1.0);
                    s.excitation.steering.amplitude =
                        std::min(cfg.collect.steering.amplitude,
                                 1.3 * mu * g * wheelbase / (v0 * v0));
                }
                s.excitation.seed = derive_seed(cfg.seed, 1000 + index);
                out.push_back(std::move(s));
            }
    return out;
}

inline std::vector<std::string> corpus_files(const std::string& corpus_dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    if (!fs::is_directory(corpus_dir))
        throw ConfigError("corpus directory '" + corpus_dir + "' does not exist");
    for (const fs::directory_entry& e : fs::directory_iterator(corpus_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv")
            names.push_back(e.path().filename().string());
    if (names.empty())
        throw ConfigError("corpus directory '" + corpus_dir + "' holds no CSV files");
    std::sort(names.begin(), names.end());
    return names;
}

// One hash over name and content of every corpus file, in name order.
inline std::string corpus_hash(const std::string& corpus_dir) {
    std::string buf;
    for (const std::string& name : corpus_files(corpus_dir)) {
        buf += name;
        buf += '\0';
        buf += detail::read_file_bytes(corpus_dir + "/" + name);
    }
    return hash_hex(fnv1a64(buf));
}

inline std::vector<Trajectory> load_corpus(const std::string& corpus_dir) {
    std::vector<Trajectory> trajs;
    for (const std::string& name : corpus_files(corpus_dir))
        trajs.push_back(read_trajectory_csv(corpus_dir + "/" + name));
    return trajs;
}

struct CollectSummary {
    int files = 0;
    long long rows = 0;
    std::string hash;
};

inline CollectSummary cmd_collect(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const std::string dir = cfg.out_dir + "/corpus";
    std::filesystem::create_directories(dir);
    const std::vector<std::string> meta = detail::file_comments(cfg);

    CollectSummary sum;
    for (const ScenarioSpec& s : scenario_catalog(cfg)) {
        const Trajectory tr = run_scenario(s, cfg.vehicle);
        write_trajectory_csv(dir + "/" + s.id + ".csv", tr, meta);
        ++sum.files;
        sum.rows += static_cast<long long>(tr.samples.size());
    }
    sum.hash = corpus_hash(dir);
    return sum;
}

struct TrainSummary {
    KoopmanModel model;
    std::vector<EpochStats> curve;
};

inline TrainSummary cmd_train(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const std::string corpus_dir = cfg.out_dir + "/corpus";
    const std::vector<Trajectory> trajs = load_corpus(corpus_dir);
    const SplitDataset data =
        prepare_dataset(trajs, cfg.train.seq_len, cfg.split, derive_seed(cfg.seed, 100));

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    TrainResult result = train(data, tc);
    result.model.train_meta.corpus_hash = corpus_hash(corpus_dir);
    result.model.train_meta.config_hash = config_hash(cfg);
    save(result.model, cfg.out_dir + "/model.json");

    CsvWriter w(cfg.out_dir + "/training_curve.csv");
    for (const std::string& m : detail::file_comments(cfg)) w.comment(m);
    w.row({"epoch", "loss", "loss_prediction", "loss_reconstruction",
           "val_loss_prediction"});
    for (const EpochStats& e : result.curve)
        w.row({csv_int(e.epoch), csv_num(e.l), csv_num(e.l1), csv_num(e.l2),
               csv_num(e.val_l1)});
    w.close();

    return {std::move(result.model), std::move(result.curve)};
}

struct EvalRow {
    std::string model;      // koopman | mlp | physics
    double mass_delta = 0;  // kg added to the plant the row is scored against
    std::array<double, 3> rmse{};
};

struct EvalReport {
    std::string corpus;
    std::array<double, 3> channel_std{};
    std::vector<EvalRow> rows;
    std::string worse_mass_side;     // "decreased" or "increased"
    double worst_degradation = 0.0;  // max over channels and sides, koopman rows
};

namespace detail {

// Each trajectory was recorded on its own road friction, so both the
// perturbed-plant truth and the physics baseline are built per trajectory.
// mass_delta 0 scores against the recorded transitions (learned models and
// the matching physics plant alike); a nonzero delta re-advances every
// recorded test transition with the recording plant's mass shifted.
inline std::array<double, 3> eval_rmse(
    const std::function<OneStepPredictor(const Trajectory&)>& make_predictor,
    const std::vector<Trajectory>& test, const VehicleParams& vehicle,
    double mass_delta) {
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    std::size_t pairs = 0;
    for (const Trajectory& t : test) {
        const OneStepPredictor predictor = make_predictor(t);
        VehicleParams plant = vehicle;
        plant.friction = t.mu;
        if (mass_delta != 0.0) plant = perturb_params(plant, mass_delta);
        for (std::size_t i = 0; i + 1 < t.samples.size(); ++i, ++pairs) {
            const VehicleState truth =
                mass_delta == 0.0
                    ? t.samples[i + 1].state
                    : advance(t.samples[i].state, t.samples[i].input, plant, t.dt);
            const VehicleState pred = predictor(t.samples[i].state, t.samples[i].input);
            acc[0] += (pred.v_x - truth.v_x) * (pred.v_x - truth.v_x);
            acc[1] += (pred.v_y - truth.v_y) * (pred.v_y - truth.v_y);
            acc[2] += (pred.omega_r - truth.omega_r) * (pred.omega_r - truth.omega_r);
        }
    }
    if (pairs == 0) throw EmptyTestSetError("no test pairs to evaluate");
    for (double& a : acc) a = std::sqrt(a / static_cast<double>(pairs));
    return acc;
}

}  // namespace detail

inline EvalReport cmd_eval(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const std::string corpus_dir = cfg.out_dir + "/corpus";
    if (!std::filesystem::exists(cfg.out_dir + "/model.json"))
        throw ConfigError("eval: no model at '" + cfg.out_dir + "/model.json'; train first");
    const KoopmanModel model = load(cfg.out_dir + "/model.json");
    const std::vector<Trajectory> trajs = load_corpus(corpus_dir);
    const SplitDataset data =
        prepare_dataset(trajs, cfg.train.seq_len, cfg.split, derive_seed(cfg.seed, 100));
    for (int ch = 0; ch < kNumChannels; ++ch)
        if (data.norm.mins[ch] != model.norm.mins[ch] ||
            data.norm.maxs[ch] != model.norm.maxs[ch])
            throw ConfigError(
                "eval: corpus split normalization differs from the model's; "
                "the model was trained on a different corpus or seed");

    MlpConfig mc = cfg.mlp;
    mc.seed = cfg.seed;
    const MlpTrainResult mlp = train_mlp(data, mc);

    struct Named {
        std::string name;
        std::function<OneStepPredictor(const Trajectory&)> make;
    };
    // The learned models are friction-blind; the physics baseline runs the
    // nominal-mass plant on each trajectory's recorded road friction.
    const OneStepPredictor dk = koopman_predictor(model);
    const OneStepPredictor ml = mlp_predictor(mlp.mlp);
    const std::vector<Named> models{
        {"koopman", [&dk](const Trajectory&) { return dk; }},
        {"mlp", [&ml](const Trajectory&) { return ml; }},
        {"physics", [&cfg](const Trajectory& t) {
             VehicleParams p = cfg.vehicle;
             p.friction = t.mu;
             return physics_predictor(p, t.dt);
         }}};

    EvalReport report;
    report.corpus = corpus_hash(corpus_dir);
    report.channel_std = channel_std(data.trajs.test);

    std::vector<double> deltas{0.0};
    for (double d : cfg.eval.mass_deltas)
        if (d != 0.0) deltas.push_back(d);

    for (const Named& m : models)
        for (double dm : deltas) {
            EvalRow row;
            row.model = m.name;
            row.mass_delta = dm;
            row.rmse = detail::eval_rmse(m.make, data.trajs.test, cfg.vehicle, dm);
            report.rows.push_back(row);
        }

    // degradation of the koopman rows relative to their nominal-plant row
    std::array<double, 3> nominal{};
    for (const EvalRow& r : report.rows)
        if (r.model == "koopman" && r.mass_delta == 0.0) nominal = r.rmse;
    double worst_minus = 0.0, worst_plus = 0.0;
    for (const EvalRow& r : report.rows) {
        if (r.model != "koopman" || r.mass_delta == 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) {
            const double ratio = r.rmse[ch] / std::max(nominal[ch], 1e-300);
            (r.mass_delta < 0.0 ? worst_minus : worst_plus) =
                std::max(r.mass_delta < 0.0 ? worst_minus : worst_plus, ratio);
        }
    }
    report.worse_mass_side = worst_minus >= worst_plus ? "decreased" : "increased";
    report.worst_degradation = std::max(worst_minus, worst_plus);

    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["config"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["corpus"] = report.corpus;
    j["model_file"] = {{"train_seed", model.train_meta.seed},
                       {"epochs", model.train_meta.epochs},
                       {"best_val_loss_prediction", model.train_meta.best_val_l1},
                       {"corpus", model.train_meta.corpus_hash},
                       {"config", model.train_meta.config_hash}};
    j["channels"] = {"v_x", "v_y", "omega_r"};
    j["test_channel_std"] = report.channel_std;
    j["rows"] = nlohmann::json::array();
    for (const EvalRow& r : report.rows)
        j["rows"].push_back(
            {{"model", r.model}, {"mass_delta", r.mass_delta}, {"rmse", r.rmse}});
    j["mass_robustness"] = {{"worse_side", report.worse_mass_side},
                            {"worst_degradation_factor", report.worst_degradation}};

    std::ofstream out(cfg.out_dir + "/eval_report.json", std::ios::binary);
    if (!out) throw Error("cannot open '" + cfg.out_dir + "/eval_report.json'");
    out << j.dump(1, '\t') << "\n";
    return report;
}

namespace detail {

inline double steer_schedule(const std::vector<std::array<double, 2>>& knots, double t) {
    if (t <= knots.front()[0]) return knots.front()[1];
    for (std::size_t i = 1; i < knots.size(); ++i)
        if (t <= knots[i][0]) {
            const double t0 = knots[i - 1][0], t1 = knots[i][0];
            const double f = t1 > t0 ? (t - t0) / (t1 - t0) : 1.0;
            return knots[i - 1][1] + f * (knots[i][1] - knots[i - 1][1]);
        }
    return knots.back()[1];
}

inline void write_governor_log(const std::string& path, const ExperimentConfig& cfg,
                               const ClosedLoopResult& run, double dt) {
    CsvWriter w(path);
    for (const std::string& m : file_comments(cfg)) w.comment(m);
    w.row({"t", "torque_nominal", "torque_applied", "steer", "h1", "h2", "h3", "h4",
           "slack_sum", "interval_lo", "interval_hi", "solve_time_us"});
    for (std::size_t k = 0; k < run.log.size(); ++k) {
        const GovernorResult& g = run.log[k];
        double slack_sum = 0.0;
        for (double s : g.slack_used) slack_sum += s;
        w.row({csv_num(static_cast<double>(k) * dt), csv_num(g.torque_nominal),
               csv_num(g.torque_applied),
               csv_num(run.trajectory.samples[k].input.steer_front),
               csv_num(g.h_before[0]), csv_num(g.h_before[1]), csv_num(g.h_before[2]),
               csv_num(g.h_before[3]), csv_num(slack_sum),
               g.interval_empty ? "" : csv_num(g.interval_lo),
               g.interval_empty ? "" : csv_num(g.interval_hi),
               csv_num(g.solve_time * 1e6)});
    }
}

inline void write_phase_csv(const std::string& path, const ExperimentConfig& cfg,
                            const ClosedLoopResult& run) {
    CsvWriter w(path);
    for (const std::string& m : file_comments(cfg)) w.comment(m);
    w.row({"v_y", "omega_r"});
    for (const TrajectorySample& s : run.trajectory.samples)
        w.row({csv_num(s.state.v_y), csv_num(s.state.omega_r)});
}

}  // namespace detail

struct GovernSummary {
    std::vector<std::string> variants;
    std::vector<ClosedLoopResult> runs;  // parallel to variants
};

inline GovernSummary cmd_govern(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const GovernConfig& gc = cfg.govern;

    bool want_dk = false, want_mf = false;
    for (const std::string& v : gc.variants) {
        want_dk = want_dk || v == "dk_scg";
        want_mf = want_mf || v == "mf_scg";
    }
    KoopmanModel model;
    if (want_dk) {
        if (!std::filesystem::exists(cfg.out_dir + "/model.json"))
            throw ConfigError("govern: no model at '" + cfg.out_dir +
                              "/model.json'; train first or drop dk_scg");
        model = load(cfg.out_dir + "/model.json");
    }
    OneStepPredictor mf_pred;
    if (want_mf) mf_pred = physics_predictor(cfg.vehicle, gc.dt);

    VehicleParams plant = cfg.vehicle;
    plant.friction = gc.mu;

    GovernedRunSpec spec;
    spec.duration = gc.duration;
    spec.dt = gc.dt;
    spec.x0 = VehicleState{gc.initial_speed, 0.0, 0.0};
    spec.bounds = TorqueBounds{cfg.vehicle.torque_min, cfg.vehicle.torque_max};

    // The same driver law runs closed-loop in every variant; the steering
    // profile is a function of time alone, so governed passes answer to the
    // identical steering and to the torque the driver demands from the state
    // the governor actually produced.
    const PrimaryController driver = [&gc](double t, const VehicleState& x) {
        return ControlInput{gc.speed_gain * (gc.v_ref - x.v_x),
                            detail::steer_schedule(gc.steer_knots, t)};
    };

    std::filesystem::create_directories(cfg.out_dir + "/govern");
    GovernSummary sum;
    for (const std::string& name : gc.variants) {
        ClosedLoopResult run;
        if (name == "no_scg") {
            run = closed_loop_run(plant, driver, GovernorVariant::off, nullptr,
                                  nullptr, cfg.safe_set, spec);
        } else if (name == "mf_scg") {
            run = closed_loop_run(plant, driver, GovernorVariant::physics, nullptr,
                                  &mf_pred, cfg.safe_set, spec);
        } else {
            run = closed_loop_run(plant, driver, GovernorVariant::koopman, &model,
                                  nullptr, cfg.safe_set, spec);
        }
        run.trajectory.seed = cfg.seed;
        const std::string stem = cfg.out_dir + "/govern/" + name;
        write_trajectory_csv(stem + "_trajectory.csv", run.trajectory,
                             detail::file_comments(cfg));
        detail::write_governor_log(stem + "_governor_log.csv", cfg, run, gc.dt);
        detail::write_phase_csv(stem + "_phase.csv", cfg, run);
        sum.variants.push_back(name);
        sum.runs.push_back(std::move(run));
    }
    return sum;
}

}  // namespace koopsafe
