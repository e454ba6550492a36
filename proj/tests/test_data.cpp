#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "koopsafe/dataset.hpp"

using namespace koopsafe;
using Catch::Approx;

namespace {

Trajectory synthetic_trajectory(int len, double base, const std::string& id = "syn",
                                double dt = 0.05) {
    Trajectory tr;
    tr.dt = dt;
    tr.scenario_id = id;
    for (int i = 0; i < len; ++i) {
        TrajectorySample s;
        s.t = i * dt;
        s.state = {base + i, base + i + 0.1, base + i + 0.2};
        s.input = {base + i + 0.3, 0.001 * (base + i)};
        tr.samples.push_back(s);
    }
    return tr;
}

ScenarioSpec quiet_curve_spec() {
    ScenarioSpec s;
    s.id = "curve_r50";
    s.radius = 50.0;
    s.mu = 0.85;
    s.duration = 20.0;
    s.excitation.initial_speed = 10.0;
    s.excitation.seed = 3;
    s.excitation.torque = {0.0, 0.0, 1.0, 3.0, 0.0, 0.2, 1.0, 2000.0, 9.9, 10.1};
    s.excitation.steering.kind = SteeringExcitation::Kind::curve_follow;
    return s;
}

}  // namespace

TEST_CASE("normalization freezes channel extremes and round-trips") {
    Trajectory tr;
    tr.scenario_id = "norm";
    for (int i = 0; i < 3; ++i) {
        TrajectorySample s;
        s.t = i * 0.05;
        s.state = {10.0 + i, -0.5 + 0.4 * i, -0.3 + 0.3 * i};
        s.input = {i == 0 ? -2919.0 : (i == 1 ? 0.0 : 847.0), -0.1 + 0.1 * i};
        tr.samples.push_back(s);
    }
    const NormalizationSpec n = fit_normalization({tr});
    CHECK(n.mins[3] == -2919.0);
    CHECK(n.maxs[3] == 847.0);
    CHECK(n.normalize(3, 0.0) == Approx(0.7750929).margin(1e-6));  // 2919 / 3766

    Rng rng = make_rng(8);
    for (int ch = 0; ch < kNumChannels; ++ch)
        for (int i = 0; i < 50; ++i) {
            const double v = uniform(rng, n.mins[ch], n.maxs[ch]);
            CHECK(n.denormalize(ch, n.normalize(ch, v)) ==
                  Approx(v).margin(1e-12 * (1.0 + std::abs(v))));
        }
}

TEST_CASE("a flat channel is rejected when fitting normalization") {
    Trajectory tr = synthetic_trajectory(10, 0.0);
    for (auto& s : tr.samples) s.input.steer_front = 0.0;
    CHECK_THROWS_AS(fit_normalization({tr}), DegenerateChannelError);
}

TEST_CASE("windowing is stride one and never crosses trajectory boundaries") {
    const std::vector<Trajectory> trajs{synthetic_trajectory(30, 0.0, "a"),
                                        synthetic_trajectory(25, 1000.0, "b")};
    const auto windows = window(trajs, 20);
    CHECK(windows.size() == 15);  // (30 - 20) + (25 - 20)
    for (const Window& w : windows) {
        CHECK(w.x.cols() == 21);
        CHECK(w.u.cols() == 20);
        // no window mixes the two value ranges
        const bool low = w.x(0, 0) < 500.0;
        CHECK((w.x.row(0).maxCoeff() < 500.0) == low);
        CHECK(w.source == (low ? 0 : 1));
    }
    // stride 1: consecutive windows of one trajectory overlap by K columns
    CHECK(windows[1].x.col(0) == windows[0].x.col(1));
    CHECK(windows[1].u.col(0) == windows[0].u.col(1));

    const auto single = window({synthetic_trajectory(1200, 0.0)}, 20);
    CHECK(single.size() == 1180);
}

TEST_CASE("split partitions whole trajectories and rejects empty subsets") {
    std::vector<Trajectory> trajs;
    for (int i = 0; i < 10; ++i) trajs.push_back(synthetic_trajectory(5, i, "t" + std::to_string(i)));

    const TrajectorySplit s = split(trajs, {0.8, 0.1, 0.1}, 7);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 1);

    const TrajectorySplit again = split(trajs, {0.8, 0.1, 0.1}, 7);
    CHECK(again.val[0].scenario_id == s.val[0].scenario_id);

    CHECK_THROWS_AS(split(trajs, {1.0, 0.0, 0.0}, 7), TooFewTrajectoriesError);
    CHECK_THROWS_AS(split(trajs, {0.5, 0.2, 0.2}, 7), ConfigError);
}

TEST_CASE("scenario runs are sampled on the control grid and respect input limits") {
    ScenarioSpec s;
    s.id = "straight_short";
    s.mu = 0.7;
    s.duration = 5.0;
    s.excitation.seed = 21;
    const VehicleParams p;
    const Trajectory tr = run_scenario(s, p);

    REQUIRE(tr.samples.size() == 100);
    CHECK(tr.samples[0].t == 0.0);
    CHECK(tr.samples[99].t == Approx(4.95).margin(1e-12));
    for (const auto& smp : tr.samples) {
        CHECK(std::abs(smp.input.steer_front) <= kSteerLimit);
        CHECK(smp.input.torque_total >= p.torque_min);
        CHECK(smp.input.torque_total <= p.torque_max);
        CHECK(smp.state.finite());
    }

    const Trajectory rerun = run_scenario(s, p);
    REQUIRE(rerun.samples.size() == tr.samples.size());
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
        CHECK(rerun.samples[i].state.v_x == tr.samples[i].state.v_x);
        CHECK(rerun.samples[i].input.torque_total == tr.samples[i].input.torque_total);
    }
}

TEST_CASE("the curve follower tracks the kinematic yaw rate") {
    const Trajectory tr = run_scenario(quiet_curve_spec(), VehicleParams{});
    double mean_omega = 0.0, mean_vx = 0.0;
    int count = 0;
    for (const auto& s : tr.samples)
        if (s.t > 5.0) {
            mean_omega += s.state.omega_r;
            mean_vx += s.state.v_x;
            ++count;
        }
    mean_omega /= count;
    mean_vx /= count;
    const double expected = mean_vx / 50.0;  // ~0.2 rad/s at 10 m/s
    CHECK(std::abs(std::abs(mean_omega) - expected) <= 0.2 * expected);
}

TEST_CASE("scenario validation rejects bad specs") {
    ScenarioSpec s;
    s.id = "bad";
    s.radius = -1.0;
    CHECK_THROWS_AS(run_scenario(s, VehicleParams{}), ConfigError);
    s.radius = 0.0;
    s.excitation.steering.amplitude = 0.2;
    CHECK_THROWS_AS(run_scenario(s, VehicleParams{}), ConfigError);
    s.excitation.steering.amplitude = 0.1;
    s.duration = 0.0;
    CHECK_THROWS_AS(run_scenario(s, VehicleParams{}), ConfigError);
}

TEST_CASE("trajectory csv writes the pinned schema and reads back") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "koopsafe_traj_test.csv").string();

    Trajectory tr = synthetic_trajectory(25, 2.0, "csv_case");
    tr.seed = 42;
    tr.mu = 0.5;
    tr.radius = 75.0;
    write_trajectory_csv(path, tr, {"tool=koopsafe 0.1.0 config=deadbeef"});

    const CsvTable raw = read_csv(path);
    REQUIRE(raw.comments.size() == 1);
    CHECK(raw.header ==
          std::vector<std::string>{"scenario_id", "seed", "t", "v_x", "v_y", "omega_r",
                                   "torque", "steer", "mu", "radius"});

    const Trajectory back = read_trajectory_csv(path);
    REQUIRE(back.samples.size() == tr.samples.size());
    CHECK(back.scenario_id == "csv_case");
    CHECK(back.seed == 42);
    CHECK(back.mu == 0.5);
    CHECK(back.radius == 75.0);
    CHECK(back.dt == Approx(tr.dt).margin(1e-9));
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
        CHECK(back.samples[i].state.v_x ==
              Approx(tr.samples[i].state.v_x).epsilon(1e-8));
        CHECK(back.samples[i].input.torque_total ==
              Approx(tr.samples[i].input.torque_total).epsilon(1e-8));
    }

    // straights leave the radius cell empty
    tr.radius = 0.0;
    write_trajectory_csv(path, tr);
    const CsvTable straight = read_csv(path);
    CHECK(straight.rows[0][9].empty());
    CHECK(read_trajectory_csv(path).radius == 0.0);
    fs::remove(path);
}

TEST_CASE("trajectory csv rejects malformed files") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "koopsafe_bad_test.csv").string();
    {
        std::ofstream out(path);
        out << "a,b\n1,2,3\n";
    }
    CHECK_THROWS_AS(read_csv(path), FormatError);
    {
        std::ofstream out(path);
        out << "scenario_id,seed,t,v_x,v_y,omega_r,torque,steer,mu,radius\n";
        out << "s,1,0.0,1,2,3,4,0.05,0.85,\n";
        out << "s,1,0.2,1,2,3,4,0.05,0.85,\n";  // gap jumps from 0.2, not uniform
        out << "s,1,0.25,1,2,3,4,0.05,0.85,\n";
    }
    CHECK_THROWS_AS(read_trajectory_csv(path), FormatError);
    fs::remove(path);
}

TEST_CASE("prepare_dataset fits normalization on the training split only") {
    std::vector<Trajectory> trajs;
    for (int i = 0; i < 10; ++i) {
        Trajectory tr = synthetic_trajectory(30, 10.0 * i, "p" + std::to_string(i));
        trajs.push_back(tr);
    }
    const SplitDataset d = prepare_dataset(trajs, 5, {0.8, 0.1, 0.1}, 3);
    CHECK(d.train.size() == 8 * 25);
    CHECK(d.val.size() == 25);
    CHECK(d.test.size() == 25);

    const NormalizationSpec direct = fit_normalization(d.trajs.train);
    CHECK(d.norm.mins[0] == direct.mins[0]);
    CHECK(d.norm.maxs[3] == direct.maxs[3]);
}
