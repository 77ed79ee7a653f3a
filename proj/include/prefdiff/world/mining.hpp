#pragma once

// Simulated takeover mining: a scenario is a "takeover" when the style
// oracle prefers the logged gt over what the policy would have driven.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "prefdiff/diffusion/sampler.hpp"
#include "prefdiff/em/em_select.hpp"
#include "prefdiff/eval/style_score.hpp"

namespace prefdiff {

struct MiningConfig {
  double score_threshold = 0.2;
  double speed_change = 1.0;        // m/s between consecutive steps
  double heading_change_deg = 5.0;  // between consecutive steps
  double rejection_ade = 0.5;       // m
  std::size_t samples = 8;          // candidates drawn for the EM aggregate
  std::uint64_t seed = 0;
  EmConfig em{};
  StyleScoreParams style{};
};

/// First step index l (1-based waypoint) where the clip's speed changes by
/// more than `speed_change` or its heading turns by more than the limit,
/// starting from cruise speed and straight-ahead heading.
inline std::optional<std::size_t> find_key_frame(const Trajectory& clip, double initial_speed, double speed_change,
                                                 double heading_change_deg) {
  const double max_turn = heading_change_deg * std::numbers::pi / 180.0;
  double prev_speed = initial_speed;
  double prev_heading = 0.0;
  Vec2 prev{};
  for (std::size_t l = 0; l < kHorizon; ++l) {
    const Vec2 d = clip[l] - prev;
    const double speed = d.norm() / kStepSeconds;
    // A stopped vehicle keeps its last heading.
    const double heading = d.norm() > 1e-9 ? std::atan2(d.y, d.x) : prev_heading;
    double turn = std::abs(heading - prev_heading);
    if (turn > std::numbers::pi) turn = 2.0 * std::numbers::pi - turn;
    if (std::abs(speed - prev_speed) > speed_change || turn > max_turn) return l + 1;
    prev_speed = speed;
    prev_heading = heading;
    prev = clip[l];
  }
  return std::nullopt;
}

/// Stage 1: the oracle prefers gt over the policy's plan by more than the threshold.
inline bool takeover_triggered(double gt_score, double sample_score, double threshold) {
  return gt_score - sample_score > threshold;
}

/// Stage 3: the policy already reproduces gt, a common case.
inline bool model_rejects(const Trajectory& policy_plan, const Trajectory& gt, double ade_limit) {
  return ade(policy_plan, gt) < ade_limit;
}

struct MinedRecord {
  Scenario scenario;
  Trajectory policy_sample;  // the plan that triggered mining
  Trajectory aggregate;      // EM plan used for model rejection
  std::size_t key_frame = 0;
  double gt_score = 0.0;
  double sample_score = 0.0;
};

struct MiningReport {
  std::vector<MinedRecord> records;
  std::size_t considered = 0;
  std::size_t after_scenario_mining = 0;
  std::size_t after_key_frames = 0;
  std::string message;  // set when nothing survives
};

/// Three stages: score-gap mining, key-frame detection, model rejection.
inline MiningReport mine_preference_set(const std::vector<Scenario>& scenarios, const DiffusionPolicy& policy,
                                        Style target, const MiningConfig& cfg = MiningConfig{}) {
  MiningReport rep;
  rep.considered = scenarios.size();
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const Scenario& s = scenarios[i];
    const auto cands = sample_trajectories(policy, s.obs, std::max<std::size_t>(cfg.samples, 1), derive_seed(cfg.seed, {i}));
    MinedRecord r;
    r.scenario = s;
    r.policy_sample = cands.front();
    r.gt_score = style_score(target, s.world, s.gt, cfg.style);
    r.sample_score = style_score(target, s.world, r.policy_sample, cfg.style);
    if (!takeover_triggered(r.gt_score, r.sample_score, cfg.score_threshold)) continue;
    ++rep.after_scenario_mining;

    const auto key = find_key_frame(s.gt, s.world.ego_speed, cfg.speed_change, cfg.heading_change_deg);
    if (!key) continue;
    r.key_frame = *key;
    ++rep.after_key_frames;

    r.aggregate = aggregate(cands, cfg.em);
    if (model_rejects(r.aggregate, s.gt, cfg.rejection_ade)) continue;
    rep.records.push_back(std::move(r));
  }
  if (rep.records.empty()) {
    rep.message = "mining kept no scenarios (" + std::to_string(rep.considered) + " considered, " +
                  std::to_string(rep.after_scenario_mining) + " passed the score gap, " +
                  std::to_string(rep.after_key_frames) + " had a key frame)";
  }
  return rep;
}

}  // namespace prefdiff
