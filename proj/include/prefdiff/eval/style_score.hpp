#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefdiff/eval/metrics.hpp"
#include "prefdiff/world/controllers.hpp"

namespace prefdiff {

/// Weights and reference scales of the style oracle.
struct StyleScoreParams {
  double progress_weight = 0.5;      // aggressive = w_p * progress + (1 - w_p) * overtake
  double progress_speed_factor = 1.3;  // full progress at this multiple of v_c over the horizon
  double overtake_lateral_factor = 0.8;  // full bypass at this fraction of a lane width
  double overtake_window = 15.0;     // m behind the lead where lateral offset starts to count
  double gap_weight = 0.5;           // defensive = w_g * gap + (1 - w_g) * speed margin
  double gap_reference = 30.0;       // m
  double margin_fraction = 0.4;      // full margin at this fraction below v_c
  double normal_length_scale = 2.0;  // m, exp(-ADE / scale)
};

struct StyleComponents {
  double progress = 0.0;
  double overtake = 0.0;
  double gap = 0.0;
  double speed_margin = 0.0;
  double closeness = 0.0;
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline StyleComponents style_components(const WorldState& world, const Trajectory& traj,
                                        const StyleScoreParams& p = StyleScoreParams{},
                                        const ControllerParams& controllers = ControllerParams{}) {
  StyleComponents c;
  const double vc = std::max(world.ego_speed, 1e-6);
  const double horizon_s = kStepSeconds * static_cast<double>(kHorizon);
  c.progress = clamp01(traj[kHorizon - 1].x / (p.progress_speed_factor * vc * horizon_s));

  if (auto lead = detail::lead_index(world)) {
    const Agent& a = world.agents[*lead];
    for (std::size_t l = 0; l < kHorizon; ++l) {
      const Vec2 q = a.position_at(kStepSeconds * static_cast<double>(l + 1));
      if (traj[l].x > q.x - p.overtake_window) {
        c.overtake = std::max(c.overtake, clamp01(std::abs(traj[l].y - q.y) / (p.overtake_lateral_factor * world.lane_width)));
      }
    }
  } else {
    c.overtake = c.progress;
  }

  double min_gap = std::numeric_limits<double>::infinity();
  for (const Agent& a : world.agents) {
    for (std::size_t l = 0; l < kHorizon; ++l) {
      min_gap = std::min(min_gap, (traj[l] - a.position_at(kStepSeconds * static_cast<double>(l + 1))).norm());
    }
  }
  c.gap = std::isfinite(min_gap) ? clamp01(min_gap / p.gap_reference) : 1.0;

  double mean_speed = 0.0;
  for (double v : step_speeds(traj)) mean_speed += v;
  mean_speed /= static_cast<double>(kHorizon);
  c.speed_margin = clamp01((vc - mean_speed) / (p.margin_fraction * vc));

  const Trajectory reference = style_rollout(world, Style::normal, nullptr, controllers);
  c.closeness = std::exp(-ade(traj, reference) / p.normal_length_scale);
  return c;
}

/// Simulated preference of a driver of the given style, in [0, 1].
inline double style_score(Style style, const WorldState& world, const Trajectory& traj,
                          const StyleScoreParams& p = StyleScoreParams{},
                          const ControllerParams& controllers = ControllerParams{}) {
  const StyleComponents c = style_components(world, traj, p, controllers);
  switch (style) {
    case Style::aggressive: return clamp01(p.progress_weight * c.progress + (1.0 - p.progress_weight) * c.overtake);
    case Style::defensive: return clamp01(p.gap_weight * c.gap + (1.0 - p.gap_weight) * c.speed_margin);
    case Style::normal: return clamp01(c.closeness);
  }
  return 0.0;
}

}  // namespace prefdiff
