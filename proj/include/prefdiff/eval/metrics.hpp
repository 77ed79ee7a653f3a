#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "prefdiff/world/types.hpp"

namespace prefdiff {

/// Mean per-waypoint Euclidean distance.
inline double ade(const Trajectory& a, const Trajectory& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < kHorizon; ++l) s += (a[l] - b[l]).norm();
  return s / static_cast<double>(kHorizon);
}

inline double fde(const Trajectory& a, const Trajectory& b) { return (a[kHorizon - 1] - b[kHorizon - 1]).norm(); }

struct DisplacementMetrics {
  double min_ade = 0.0;
  double mean_ade = 0.0;
  double min_fde = 0.0;
  double mean_fde = 0.0;
};

inline DisplacementMetrics displacement_metrics(std::span<const Trajectory> candidates, const Trajectory& gt) {
  if (candidates.empty()) throw std::invalid_argument("displacement_metrics: need at least one candidate");
  DisplacementMetrics m;
  m.min_ade = m.min_fde = std::numeric_limits<double>::infinity();
  for (const Trajectory& c : candidates) {
    const double a = ade(c, gt), f = fde(c, gt);
    m.min_ade = std::min(m.min_ade, a);
    m.min_fde = std::min(m.min_fde, f);
    m.mean_ade += a;
    m.mean_fde += f;
  }
  m.mean_ade /= static_cast<double>(candidates.size());
  m.mean_fde /= static_cast<double>(candidates.size());
  return m;
}

/// Mean pairwise ADE. Absent for fewer than two candidates.
inline std::optional<double> diversity(std::span<const Trajectory> candidates) {
  const std::size_t k = candidates.size();
  if (k < 2) return std::nullopt;
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) s += ade(candidates[i], candidates[j]);
  }
  return 2.0 * s / (static_cast<double>(k) * static_cast<double>(k - 1));
}

/// Per-step speeds ‖s_l - s_{l-1}‖ / Δt, s_0 at the origin.
inline std::array<double, kHorizon> step_speeds(const Trajectory& t) {
  std::array<double, kHorizon> v{};
  Vec2 prev{};
  for (std::size_t l = 0; l < kHorizon; ++l) {
    v[l] = (t[l] - prev).norm() / kStepSeconds;
    prev = t[l];
  }
  return v;
}

struct VelocityHistogram {
  std::vector<double> edges;      // bins + 1 values
  std::vector<double> densities;  // integrates to 1 over the edges
  double mean_speed = 0.0;
  std::size_t samples = 0;

  double bin_width() const { return edges.size() > 1 ? edges[1] - edges[0] : 0.0; }
};

/// Speed histogram of every step of every trajectory; speeds above the range
/// land in the last bin.
inline VelocityHistogram velocity_profile(std::span<const Trajectory> trajs, double bin_width = 2.0,
                                          double max_speed = 50.0) {
  if (trajs.empty()) throw std::invalid_argument("velocity_profile: empty trajectory set");
  const auto bins = static_cast<std::size_t>(std::lround(max_speed / bin_width));
  VelocityHistogram h;
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(bin_width * static_cast<double>(i));
  std::vector<double> counts(bins, 0.0);
  double sum = 0.0;
  for (const Trajectory& t : trajs) {
    for (double v : step_speeds(t)) {
      const auto b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, v) / bin_width));
      counts[b] += 1.0;
      sum += v;
      ++h.samples;
    }
  }
  h.mean_speed = sum / static_cast<double>(h.samples);
  for (double c : counts) h.densities.push_back(c / (static_cast<double>(h.samples) * bin_width));
  return h;
}

}  // namespace prefdiff
