#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>

#include "koopsafe/errors.hpp"
#include "koopsafe/vehicle.hpp"

namespace koopsafe {

// Channel order used by every dataset, model, and report in the library.
inline constexpr int kNumChannels = 5;
inline constexpr int kStateChannels = 3;
inline constexpr const char* kChannelNames[kNumChannels] = {"v_x", "v_y", "omega_r",
                                                            "torque", "steer"};

// Min-max scaling into [0, 1], frozen from the training split and stored with
// the model so every consumer maps physical units the same way.
struct NormalizationSpec {
    std::array<double, kNumChannels> mins{};
    std::array<double, kNumChannels> maxs{};

    double span(int ch) const { return maxs[ch] - mins[ch]; }
    double normalize(int ch, double v) const { return (v - mins[ch]) / span(ch); }
    double denormalize(int ch, double v) const { return mins[ch] + v * span(ch); }

    void check() const {
        for (int ch = 0; ch < kNumChannels; ++ch) {
            if (!std::isfinite(mins[ch]) || !std::isfinite(maxs[ch]) || !(span(ch) > 0.0))
                throw DegenerateChannelError(std::string("channel '") + kChannelNames[ch] +
                                             "' has no spread (max must exceed min)");
        }
    }
};

inline Eigen::Vector3d normalize_state(const NormalizationSpec& n, const VehicleState& x) {
    return {n.normalize(0, x.v_x), n.normalize(1, x.v_y), n.normalize(2, x.omega_r)};
}

inline VehicleState denormalize_state(const NormalizationSpec& n, const Eigen::Vector3d& v) {
    return {n.denormalize(0, v(0)), n.denormalize(1, v(1)), n.denormalize(2, v(2))};
}

inline Eigen::Vector2d normalize_input(const NormalizationSpec& n, const ControlInput& u) {
    return {n.normalize(3, u.torque_total), n.normalize(4, u.steer_front)};
}

}  // namespace koopsafe
