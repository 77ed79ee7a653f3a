#pragma once

#include <string>
#include <vector>

#include "prefdiff/rng.hpp"
#include "prefdiff/world/controllers.hpp"
#include "prefdiff/world/featurize.hpp"

namespace prefdiff {

/// Probabilities of the world templates drawn by sample_world.
struct WorldTemplateWeights {
  double empty = 0.15;
  double slow_lead = 0.35;
  double cruising_lead = 0.15;
  double roadside_vru = 0.15;
  double intersection = 0.20;
  double oncoming_probability = 0.4;  // extra oncoming vehicle in the left lane
};

inline WorldState sample_world(Rng& rng, const WorldTemplateWeights& tw = WorldTemplateWeights{}) {
  WorldState w;
  w.lane_width = uniform(rng, 3.2, 3.8);
  w.ego_speed = uniform(rng, 10.0, 20.0);
  const double v = w.ego_speed;
  const double total = tw.empty + tw.slow_lead + tw.cruising_lead + tw.roadside_vru + tw.intersection;
  double u = uniform(rng, 0.0, total);
  auto pick = [&u](double p) {
    if (u < p) return true;
    u -= p;
    return false;
  };
  if (pick(tw.empty)) {
  } else if (pick(tw.slow_lead)) {
    const bool vru = uniform(rng, 0.0, 1.0) < 0.3;
    const double ratio = uniform(rng, 0.2, 0.6);
    w.agents.push_back({{uniform(rng, 15.0, 40.0), uniform(rng, -0.3, 0.3)},
                        {vru ? std::min(ratio * v, 6.0) : ratio * v, 0.0},
                        vru ? AgentKind::vru : AgentKind::vehicle});
  } else if (pick(tw.cruising_lead)) {
    w.agents.push_back({{uniform(rng, 20.0, 50.0), uniform(rng, -0.3, 0.3)}, {uniform(rng, 0.8, 1.0) * v, 0.0},
                        AgentKind::vehicle});
  } else if (pick(tw.roadside_vru)) {
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    w.agents.push_back({{uniform(rng, 15.0, 45.0), side * uniform(rng, 1.0, 1.6)}, {uniform(rng, 0.0, 4.0), 0.0},
                        AgentKind::vru});
  } else {
    w.intersection_distance = uniform(rng, 20.0, 60.0);
    if (uniform(rng, 0.0, 1.0) < 0.5) {
      w.agents.push_back({{uniform(rng, 20.0, 50.0), uniform(rng, -0.3, 0.3)}, {uniform(rng, 0.7, 1.0) * v, 0.0},
                          AgentKind::vehicle});
    }
  }
  if (uniform(rng, 0.0, 1.0) < tw.oncoming_probability) {
    w.agents.push_back({{uniform(rng, 40.0, 120.0), w.lane_width + uniform(rng, -0.2, 0.2)},
                        {-uniform(rng, 8.0, 15.0), 0.0},
                        AgentKind::vehicle});
  }
  return w;
}

inline Style sample_style(Rng& rng, const MixtureWeights& mw) {
  const double u = uniform(rng, 0.0, 1.0);
  if (u < mw.normal) return Style::normal;
  if (u < mw.normal + mw.aggressive) return Style::aggressive;
  return Style::defensive;
}

/// Draws `count` scenarios from the style mixture. Scenario i uses its own
/// derived seed, so the result is a pure function of (seed, count, weights).
inline std::vector<Scenario> generate_scenarios(std::uint64_t seed, std::size_t count, const MixtureWeights& weights,
                                                const std::string& id_prefix = "sc",
                                                const ControllerParams& controllers = ControllerParams{},
                                                const WorldTemplateWeights& templates = WorldTemplateWeights{}) {
  if (count < 1) throw std::invalid_argument("generate_scenarios: count must be >= 1");
  weights.validate();
  std::vector<Scenario> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {i}));
    Scenario s;
    s.id = id_prefix + "-" + std::to_string(seed) + "-" + std::to_string(i);
    s.style = sample_style(rng, weights);
    s.world = sample_world(rng, templates);
    s.gt = style_rollout(s.world, s.style, &rng, controllers);
    s.obs = featurize(s.world);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace prefdiff
