#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefdiff {

inline constexpr std::size_t kHorizon = 8;        // waypoints per plan
inline constexpr double kStepSeconds = 0.5;       // waypoint spacing
inline constexpr std::size_t kActionDim = 2 * kHorizon;
inline constexpr std::size_t kMaxAgents = 3;
inline constexpr std::size_t kAgentFeatures = 5;  // dx, dy, dvx, dvy, is_vru
inline constexpr std::size_t kObsWidth = 3 + kMaxAgents * kAgentFeatures;
inline constexpr double kMaxStepDisplacement = 25.0;  // 50 m/s

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

/// Planar plan in the ego frame; the implicit state s_0 is the origin.
struct Trajectory {
  std::array<Vec2, kHorizon> waypoints{};

  Vec2& operator[](std::size_t i) { return waypoints[i]; }
  const Vec2& operator[](std::size_t i) const { return waypoints[i]; }
  bool operator==(const Trajectory&) const = default;

  std::array<double, kActionDim> flat() const {
    std::array<double, kActionDim> out{};
    for (std::size_t l = 0; l < kHorizon; ++l) {
      out[2 * l] = waypoints[l].x;
      out[2 * l + 1] = waypoints[l].y;
    }
    return out;
  }
  static Trajectory from_flat(std::span<const double> v) {
    if (v.size() != kActionDim) throw std::invalid_argument("trajectory needs " + std::to_string(kActionDim) + " values");
    Trajectory t;
    for (std::size_t l = 0; l < kHorizon; ++l) t.waypoints[l] = {v[2 * l], v[2 * l + 1]};
    return t;
  }

  /// Finite waypoints and per-step displacement within 25 m.
  bool valid() const {
    Vec2 prev{};
    for (const Vec2& p : waypoints) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
      if ((p - prev).norm() > kMaxStepDisplacement) return false;
      prev = p;
    }
    return true;
  }
  void validate() const {
    if (!valid()) throw std::invalid_argument("trajectory violates finiteness or 25 m/step bound");
  }
};

enum class Style { normal, aggressive, defensive };

inline const char* to_string(Style s) {
  switch (s) {
    case Style::normal: return "normal";
    case Style::aggressive: return "aggressive";
    case Style::defensive: return "defensive";
  }
  return "normal";
}
inline Style parse_style(const std::string& s) {
  if (s == "normal") return Style::normal;
  if (s == "aggressive") return Style::aggressive;
  if (s == "defensive") return Style::defensive;
  throw std::invalid_argument("unknown style '" + s + "'");
}

enum class AgentKind { vehicle, vru };

inline const char* to_string(AgentKind k) { return k == AgentKind::vru ? "vru" : "vehicle"; }
inline AgentKind parse_agent_kind(const std::string& s) {
  if (s == "vehicle") return AgentKind::vehicle;
  if (s == "vru") return AgentKind::vru;
  throw std::invalid_argument("unknown agent kind '" + s + "'");
}

/// Other road user. Position is relative to the ego at t=0; velocity is in
/// the ego-aligned ground frame. Agents move at constant velocity.
struct Agent {
  Vec2 position;
  Vec2 velocity;
  AgentKind kind = AgentKind::vehicle;

  Vec2 position_at(double t) const { return position + velocity * t; }
  bool operator==(const Agent&) const = default;
};

struct WorldState {
  double lane_width = 3.5;
  double ego_speed = 12.0;  // also the cruise speed v_c
  std::vector<Agent> agents;
  std::optional<double> intersection_distance;

  bool operator==(const WorldState&) const = default;

  void validate() const {
    if (!(lane_width > 0.0) || !std::isfinite(lane_width)) throw std::invalid_argument("lane width must be positive");
    if (!(ego_speed >= 0.0) || !std::isfinite(ego_speed)) throw std::invalid_argument("ego speed must be >= 0");
    if (agents.size() > kMaxAgents) throw std::invalid_argument("at most 3 agents per scenario");
  }
};

using Observation = std::array<double, kObsWidth>;

struct Scenario {
  std::string id;
  WorldState world;
  Trajectory gt;
  Style style = Style::normal;
  Observation obs{};
};

struct MixtureWeights {
  double normal = 0.8;
  double aggressive = 0.1;
  double defensive = 0.1;

  void validate() const {
    const double s = normal + aggressive + defensive;
    if (normal < 0 || aggressive < 0 || defensive < 0 || !std::isfinite(s) || std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("mixture weights must be nonnegative and sum to 1");
    }
  }
};

}  // namespace prefdiff
