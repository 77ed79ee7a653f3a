#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "prefdiff/rng.hpp"
#include "prefdiff/world/types.hpp"

namespace prefdiff {

/// Constants of the three kinematic style controllers.
struct ControllerParams {
  double aggressive_speed_factor = 1.3;
  double defensive_speed_factor = 0.8;
  double normal_time_gap = 1.5;
  double aggressive_time_gap = 1.0;
  double defensive_time_gap = 2.5;
  double bypass_speed_ratio = 0.7;     // aggressive bypasses leads slower than this * v_c
  double caution_speed_factor = 0.5;   // defensive target near intersections / vrus
  double caution_range = 50.0;         // m ahead where caution applies
  double standstill_gap = 4.0;         // m, bumper to bumper
  double vehicle_length = 4.5;
  double speed_gain = 1.5;             // 1/s, proportional speed tracking
  double max_accel_normal = 2.5;
  double max_accel_aggressive = 3.5;
  double max_accel_defensive = 2.0;
  double max_decel = 5.0;
  double lateral_speed = 1.5;          // m/s toward the lateral target
  double jitter_sigma = 0.1;           // m, per waypoint
  double substep = 0.1;                // s
};

namespace detail {

inline bool in_lane(double agent_y, double ego_y, double lane_width) { return std::abs(agent_y - ego_y) < 0.5 * lane_width; }

/// Index of the nearest agent ahead in the ego lane at t=0, if any.
inline std::optional<std::size_t> lead_index(const WorldState& w) {
  std::optional<std::size_t> best;
  double best_dx = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.agents.size(); ++i) {
    const Agent& a = w.agents[i];
    if (a.position.x > 0.0 && in_lane(a.position.y, 0.0, w.lane_width) && a.position.x < best_dx) {
      best_dx = a.position.x;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

/// Style-conditioned kinematic rollout over the 4 s horizon.
///
/// normal: track v_c with a 1.5 s time gap. aggressive: target 1.3 v_c and
/// move one lane left past any in-lane lead slower than 0.7 v_c.
/// defensive: 0.8 v_c, 2.5 s gap, slow to 0.5 v_c approaching intersections
/// or vrus. With `jitter` set, N(0, sigma^2) noise is added per waypoint.
inline Trajectory style_rollout(const WorldState& world, Style style, Rng* jitter,
                                const ControllerParams& p = ControllerParams{}) {
  world.validate();
  const double vc = world.ego_speed;
  double target = vc;
  double time_gap = p.normal_time_gap;
  double max_accel = p.max_accel_normal;
  if (style == Style::aggressive) {
    target = p.aggressive_speed_factor * vc;
    time_gap = p.aggressive_time_gap;
    max_accel = p.max_accel_aggressive;
  } else if (style == Style::defensive) {
    target = p.defensive_speed_factor * vc;
    time_gap = p.defensive_time_gap;
    max_accel = p.max_accel_defensive;
  }

  double lateral_target = 0.0;
  std::optional<std::size_t> bypassed;
  if (style == Style::aggressive) {
    if (auto lead = detail::lead_index(world)) {
      const Agent& a = world.agents[*lead];
      if (a.velocity.x < p.bypass_speed_ratio * vc) {
        bypassed = lead;
        lateral_target = a.position.y + world.lane_width;
      }
    }
  }

  const int substeps_per_waypoint = static_cast<int>(std::lround(kStepSeconds / p.substep));
  const double dt = kStepSeconds / substeps_per_waypoint;
  double x = 0.0, y = 0.0, v = vc, t = 0.0;
  Trajectory traj;
  for (std::size_t l = 0; l < kHorizon; ++l) {
    for (int s = 0; s < substeps_per_waypoint; ++s) {
      double desired = target;
      if (style == Style::defensive) {
        if (world.intersection_distance) {
          const double ahead = *world.intersection_distance - x;
          if (ahead > 0.0 && ahead < p.caution_range) desired = std::min(desired, p.caution_speed_factor * vc);
        }
        for (const Agent& a : world.agents) {
          if (a.kind != AgentKind::vru) continue;
          const Vec2 q = a.position_at(t);
          const double ahead = q.x - x;
          if (ahead > -5.0 && ahead < p.caution_range && std::abs(q.y - y) < 1.5 * world.lane_width) {
            desired = std::min(desired, p.caution_speed_factor * vc);
          }
        }
      }
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < world.agents.size(); ++i) {
        if (bypassed && *bypassed == i) continue;
        const Vec2 q = world.agents[i].position_at(t);
        if (q.x > x && detail::in_lane(q.y, y, world.lane_width)) gap = std::min(gap, q.x - x - p.vehicle_length);
      }
      if (std::isfinite(gap)) desired = std::min(desired, std::max(0.0, (gap - p.standstill_gap) / time_gap));
      const double accel = std::clamp(p.speed_gain * (desired - v), -p.max_decel, max_accel);
      v = std::max(0.0, v + accel * dt);
      x += v * dt;
      const double step = p.lateral_speed * dt;
      y += std::clamp(lateral_target - y, -step, step);
      t += dt;
    }
    traj[l] = {x, y};
  }
  if (jitter) {
    for (Vec2& q : traj.waypoints) {
      q.x += p.jitter_sigma * standard_normal(*jitter);
      q.y += p.jitter_sigma * standard_normal(*jitter);
    }
  }
  return traj;
}

}  // namespace prefdiff
