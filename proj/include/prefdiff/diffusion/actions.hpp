#pragma once

#include "prefdiff/world/types.hpp"

namespace prefdiff {

/// Per-step displacements x̂_l = s_l - s_{l-1} with s_0 at the origin.
struct ActionSequence {
  std::array<Vec2, kHorizon> deltas{};

  bool operator==(const ActionSequence&) const = default;

  std::array<double, kActionDim> flat() const {
    std::array<double, kActionDim> out{};
    for (std::size_t l = 0; l < kHorizon; ++l) {
      out[2 * l] = deltas[l].x;
      out[2 * l + 1] = deltas[l].y;
    }
    return out;
  }
  static ActionSequence from_flat(std::span<const double> v) {
    if (v.size() != kActionDim) throw std::invalid_argument("action sequence needs " + std::to_string(kActionDim) + " values");
    ActionSequence a;
    for (std::size_t l = 0; l < kHorizon; ++l) a.deltas[l] = {v[2 * l], v[2 * l + 1]};
    return a;
  }
};

inline ActionSequence to_actions(const Trajectory& traj) {
  ActionSequence a;
  Vec2 prev{};
  for (std::size_t l = 0; l < kHorizon; ++l) {
    a.deltas[l] = traj[l] - prev;
    prev = traj[l];
  }
  return a;
}

inline Trajectory to_states(const ActionSequence& actions) {
  Trajectory t;
  Vec2 acc{};
  for (std::size_t l = 0; l < kHorizon; ++l) {
    acc = acc + actions.deltas[l];
    t[l] = acc;
  }
  return t;
}

}  // namespace prefdiff
