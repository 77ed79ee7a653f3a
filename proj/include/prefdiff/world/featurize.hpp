#pragma once

#include <algorithm>
#include <tuple>

#include "prefdiff/world/types.hpp"

namespace prefdiff {

/// Fixed scaling constants of the observation layout.
struct FeatureScales {
  static constexpr double speed = 1.0 / 30.0;
  static constexpr double lane = 1.0 / 4.0;
  static constexpr double intersection_sentinel = 200.0;
  static constexpr double intersection = 1.0 / 200.0;
  static constexpr double dx = 1.0 / 50.0;
  static constexpr double dy = 1.0 / 10.0;
  static constexpr double dvx = 1.0 / 20.0;
  static constexpr double dvy = 1.0 / 10.0;
};

/// Observation layout:
///   [0] ego speed, [1] lane width, [2] intersection distance (200 m when absent),
///   then 3 agent slots of (dx, dy, dvx, dvy, is_vru), nearest first, zero-padded.
inline Observation featurize(const WorldState& world) {
  world.validate();
  Observation obs{};
  obs[0] = world.ego_speed * FeatureScales::speed;
  obs[1] = world.lane_width * FeatureScales::lane;
  const double inter = world.intersection_distance
                           ? std::min(*world.intersection_distance, FeatureScales::intersection_sentinel)
                           : FeatureScales::intersection_sentinel;
  obs[2] = inter * FeatureScales::intersection;

  std::vector<Agent> sorted = world.agents;
  std::sort(sorted.begin(), sorted.end(), [](const Agent& a, const Agent& b) {
    return std::make_tuple(a.position.norm(), a.position.x, a.position.y, a.velocity.x, a.velocity.y,
                           static_cast<int>(a.kind)) <
           std::make_tuple(b.position.norm(), b.position.x, b.position.y, b.velocity.x, b.velocity.y,
                           static_cast<int>(b.kind));
  });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Agent& a = sorted[i];
    double* slot = obs.data() + 3 + i * kAgentFeatures;
    slot[0] = a.position.x * FeatureScales::dx;
    slot[1] = a.position.y * FeatureScales::dy;
    slot[2] = (a.velocity.x - world.ego_speed) * FeatureScales::dvx;
    slot[3] = a.velocity.y * FeatureScales::dvy;
    slot[4] = a.kind == AgentKind::vru ? 1.0 : 0.0;
  }
  return obs;
}

}  // namespace prefdiff
