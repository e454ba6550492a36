#pragma once

// Comparison predictors: a physics one-step model with injected parameter
// mismatch and a direct MLP next-state regressor, plus the RMSE evaluator
// every predictor (including the Koopman model) is scored with. All
// predictors share the OneStepPredictor signature in physical units; the
// normalization lives inside the handles that need it.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "koopsafe/dataset.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/koopman.hpp"
#include "koopsafe/nn.hpp"
#include "koopsafe/normalize.hpp"
#include "koopsafe/rng.hpp"
#include "koopsafe/vehicle.hpp"

namespace koopsafe {

using OneStepPredictor =
    std::function<VehicleState(const VehicleState&, const ControlInput&)>;

// Evaluation-time mismatch for the physics baseline. Without it the physics
// predictor is the plant itself and scores exactly zero.
inline VehicleParams perturb_params(VehicleParams p, double dmass, double dmu = 0.0) {
    p.mass += dmass;
    p.friction += dmu;
    validate_params(p);
    return p;
}

inline OneStepPredictor physics_predictor(const VehicleParams& params, double dt) {
    return [params, dt](const VehicleState& x, const ControlInput& u) {
        return advance(x, u, params, dt);
    };
}

// One re-lifted step through the Koopman model, in physical units.
inline OneStepPredictor koopman_predictor(const KoopmanModel& model) {
    if (!model.valid()) throw ModelMissingError("koopman_predictor: model not initialized");
    return [model](const VehicleState& x, const ControlInput& u) {
        const Eigen::Vector3d xn = normalize_state(model.norm, x);
        const Eigen::Vector2d un = normalize_input(model.norm, u);
        const Eigen::VectorXd z = lift(model, xn);
        const Eigen::Vector3d next =
            model.a.topRows(3) * z + model.b.topRows(3) * un;
        return denormalize_state(model.norm, next);
    };
}

// ---- MLP baseline -----------------------------------------------------------

struct MlpConfig {
    std::vector<int> hidden{128, 128, 128};
    double lr = 0.01;
    int batch_size = 50;
    int epochs = 40;
    std::uint64_t seed = 0;
    int val_patience = 20;
};

struct MlpBaseline {
    nn::DenseNet net;  // 5 -> 3, normalized in and out
    NormalizationSpec norm;
};

struct MlpEpochStats {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct MlpTrainResult {
    MlpBaseline mlp;
    std::vector<MlpEpochStats> curve;
};

inline VehicleState mlp_predict(const MlpBaseline& mlp, const VehicleState& x,
                                const ControlInput& u) {
    if (mlp.net.input_dim() != kNumChannels || mlp.net.output_dim() != kStateChannels)
        throw DimensionError("mlp_predict: network is not a 5 -> 3 map");
    Eigen::VectorXd in(kNumChannels);
    in.head<3>() = normalize_state(mlp.norm, x);
    in.tail<2>() = normalize_input(mlp.norm, u);
    const Eigen::VectorXd out = nn::forward(mlp.net, in);
    return denormalize_state(mlp.norm, Eigen::Vector3d(out));
}

inline OneStepPredictor mlp_predictor(const MlpBaseline& mlp) {
    return [mlp](const VehicleState& x, const ControlInput& u) {
        return mlp_predict(mlp, x, u);
    };
}

namespace detail {

// Consecutive-sample pairs of a trajectory set, as normalized 5 -> 3 columns.
struct PairSet {
    Eigen::MatrixXd in;   // 5 x N
    Eigen::MatrixXd out;  // 3 x N
};

inline PairSet one_step_pairs(const NormalizationSpec& norm,
                              const std::vector<Trajectory>& trajs) {
    std::size_t total = 0;
    for (const Trajectory& t : trajs)
        if (t.samples.size() > 1) total += t.samples.size() - 1;
    PairSet pairs;
    pairs.in.resize(kNumChannels, total);
    pairs.out.resize(kStateChannels, total);
    std::size_t at = 0;
    for (const Trajectory& t : trajs) {
        for (std::size_t i = 0; i + 1 < t.samples.size(); ++i, ++at) {
            const TrajectorySample& s = t.samples[i];
            pairs.in.col(at).head<3>() = normalize_state(norm, s.state);
            pairs.in.col(at).tail<2>() = normalize_input(norm, s.input);
            pairs.out.col(at) = normalize_state(norm, t.samples[i + 1].state);
        }
    }
    return pairs;
}

inline double mse(const nn::DenseNet& net, const PairSet& pairs) {
    const Eigen::MatrixXd pred = nn::forward(net, pairs.in);
    return (pred - pairs.out).squaredNorm() / static_cast<double>(pairs.out.cols());
}

}  // namespace detail

// SGD on the one-step squared loss, early-stopped on validation MSE with the
// best parameters returned, mirroring the Koopman trainer's protocol.
inline MlpTrainResult train_mlp(const SplitDataset& data, const MlpConfig& cfg) {
    if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.val_patience < 1 || !(cfg.lr > 0.0))
        throw ConfigError("mlp config: bad batch size, epochs, patience, or lr");
    const detail::PairSet train = detail::one_step_pairs(data.norm, data.trajs.train);
    const detail::PairSet val = detail::one_step_pairs(data.norm, data.trajs.val);
    if (train.in.cols() == 0 || val.in.cols() == 0)
        throw TooFewTrajectoriesError("mlp training needs train and val pairs");

    MlpTrainResult result;
    result.mlp.norm = data.norm;
    std::vector<int> dims{kNumChannels};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(kStateChannels);
    result.mlp.net = nn::init({dims}, derive_seed(cfg.seed, 10));
    nn::DenseNet& net = result.mlp.net;

    Rng shuffle_rng = make_rng(derive_seed(cfg.seed, 11));
    std::vector<int> order(static_cast<std::size_t>(train.in.cols()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    nn::DenseNet best = net;
    double best_val = 1e300;
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, shuffle_rng);
        double sum = 0.0;
        std::size_t seen = 0;
        while (seen < order.size()) {
            const std::size_t count =
                std::min(order.size() - seen, static_cast<std::size_t>(cfg.batch_size));
            Eigen::MatrixXd in(kNumChannels, count), target(kStateChannels, count);
            for (std::size_t i = 0; i < count; ++i) {
                in.col(i) = train.in.col(order[seen + i]);
                target.col(i) = train.out.col(order[seen + i]);
            }
            nn::ForwardCache cache;
            const Eigen::MatrixXd pred = nn::forward(net, in, &cache);
            const Eigen::MatrixXd err = pred - target;
            const double batch_mse = err.squaredNorm() / static_cast<double>(count);
            if (!std::isfinite(batch_mse))
                throw DivergedError("mlp loss became non-finite at epoch " +
                                    std::to_string(epoch));
            const nn::GradientSet grads =
                nn::backward(net, cache, (2.0 / static_cast<double>(count)) * err);
            nn::sgd_step(net, grads, cfg.lr);
            sum += batch_mse * static_cast<double>(count);
            seen += count;
        }
        MlpEpochStats row;
        row.epoch = epoch;
        row.train_mse = sum / static_cast<double>(seen);
        row.val_mse = detail::mse(net, val);
        if (!std::isfinite(row.val_mse))
            throw DivergedError("mlp validation loss became non-finite at epoch " +
                                std::to_string(epoch));
        result.curve.push_back(row);
        if (row.val_mse < best_val) {
            best_val = row.val_mse;
            best = net;
            since_best = 0;
        } else if (++since_best >= cfg.val_patience) {
            break;
        }
    }
    if (!result.curve.empty()) net = best;
    return result;
}

// ---- evaluation -------------------------------------------------------------

// Per-channel RMSE of one-step prediction from every consecutive pair, in
// physical units (m/s, m/s, rad/s).
inline std::array<double, 3> evaluate_one_step_rmse(const OneStepPredictor& predictor,
                                                    const std::vector<Trajectory>& test) {
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    std::size_t pairs = 0;
    for (const Trajectory& t : test) {
        for (std::size_t i = 0; i + 1 < t.samples.size(); ++i, ++pairs) {
            const VehicleState pred = predictor(t.samples[i].state, t.samples[i].input);
            const VehicleState& truth = t.samples[i + 1].state;
            acc[0] += (pred.v_x - truth.v_x) * (pred.v_x - truth.v_x);
            acc[1] += (pred.v_y - truth.v_y) * (pred.v_y - truth.v_y);
            acc[2] += (pred.omega_r - truth.omega_r) * (pred.omega_r - truth.omega_r);
        }
    }
    if (pairs == 0) throw EmptyTestSetError("one-step evaluation needs at least one pair");
    for (double& a : acc) a = std::sqrt(a / static_cast<double>(pairs));
    return acc;
}

// Standard deviation of each state channel over a trajectory set; the scale
// prediction errors are judged against.
inline std::array<double, 3> channel_std(const std::vector<Trajectory>& trajs) {
    std::array<double, 3> mean{0.0, 0.0, 0.0}, var{0.0, 0.0, 0.0};
    std::size_t count = 0;
    for (const Trajectory& t : trajs)
        for (const TrajectorySample& s : t.samples) {
            mean[0] += s.state.v_x;
            mean[1] += s.state.v_y;
            mean[2] += s.state.omega_r;
            ++count;
        }
    if (count == 0) throw EmptyTestSetError("channel_std needs at least one sample");
    for (double& m : mean) m /= static_cast<double>(count);
    for (const Trajectory& t : trajs)
        for (const TrajectorySample& s : t.samples) {
            var[0] += (s.state.v_x - mean[0]) * (s.state.v_x - mean[0]);
            var[1] += (s.state.v_y - mean[1]) * (s.state.v_y - mean[1]);
            var[2] += (s.state.omega_r - mean[2]) * (s.state.omega_r - mean[2]);
        }
    std::array<double, 3> out;
    for (int c = 0; c < 3; ++c) out[c] = std::sqrt(var[c] / static_cast<double>(count));
    return out;
}

}  // namespace koopsafe
