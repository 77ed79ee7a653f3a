#pragma once

// Group-relative policy optimization over the denoising MDP, with a
// behavior-cloning term against a frozen reference and a supervised refresh.

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prefdiff/autodiff/adam.hpp"
#include "prefdiff/diffusion/pretrain.hpp"
#include "prefdiff/diffusion/sampler.hpp"

namespace prefdiff {

/// (r_k - mean) / std with population std; all zeros when std < 1e-8.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages: need K >= 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (!(sd >= 1e-8)) return adv;
  for (std::size_t k = 0; k < rewards.size(); ++k) adv[k] = (rewards[k] - mean) / sd;
  return adv;
}

/// -(1/(K T)) Σ_k Σ_t log π_k,t · γ^{T-1-t} · Â_k over rollout-major rows
/// (row = k T + t) of per-step log-probs.
inline Var rl_loss_from_log_probs(Tape& tape, Var log_probs, std::span<const double> advantages, double gamma,
                                  int horizon) {
  const std::size_t K = advantages.size();
  const auto T = static_cast<std::size_t>(horizon);
  if (log_probs.rows() != K * T) {
    throw std::invalid_argument("rl_loss: " + std::to_string(log_probs.rows()) + " log-probs for " + std::to_string(K) +
                                " advantages x " + std::to_string(T) + " steps");
  }
  Tensor w = Tensor::zeros(K * T, 1);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < T; ++t) {
      w(k * T + t, 0) = -std::pow(gamma, static_cast<double>(T - 1 - t)) * advantages[k] / static_cast<double>(K * T);
    }
  }
  return ops::sum(ops::mul(log_probs, tape.constant(w)));
}

/// -(1/(R T)) Σ log π over R reference rollouts of T steps.
inline Var bc_loss_from_log_probs(Var log_probs, int horizon) {
  if (log_probs.rows() == 0 || horizon <= 0) throw std::invalid_argument("bc_loss: empty rollout set");
  (void)horizon;  // rows are R*T, so the mean over rows is already 1/(R T)
  return ops::scale(ops::mean(log_probs), -1.0);
}

inline std::vector<const DenoisingRollout*> member_pointers(const RolloutGroup& g) {
  std::vector<const DenoisingRollout*> out;
  for (const DenoisingRollout& r : g.members) out.push_back(&r);
  return out;
}

/// RL term with log-probs re-evaluated under θ = `params` on the stored
/// (ψ_t, a_t) of the group.
inline Var rl_loss(Tape& tape, const DiffusionPolicy& policy, const ParamSet& params, const RolloutGroup& group,
                   std::span<const double> advantages, double gamma) {
  if (advantages.size() != group.members.size()) {
    throw std::invalid_argument("rl_loss: " + std::to_string(advantages.size()) + " advantages for a group of " +
                                std::to_string(group.members.size()));
  }
  const auto ptrs = member_pointers(group);
  const TransitionBatch b = make_transition_batch(policy, ptrs);
  return rl_loss_from_log_probs(tape, transition_log_probs(tape, policy, params, b), advantages, gamma, b.horizon);
}

/// Mean negative log-likelihood of cached reference rollouts under θ.
inline Var bc_loss(Tape& tape, const DiffusionPolicy& policy, const ParamSet& params,
                   std::span<const DenoisingRollout* const> reference) {
  const TransitionBatch b = make_transition_batch(policy, reference);
  return bc_loss_from_log_probs(transition_log_probs(tape, policy, params, b), b.horizon);
}

/// Reference rollouts: independent x_T per chain, full reverse process.
inline std::vector<DenoisingRollout> sample_reference_rollouts(const DiffusionPolicy& reference, const Observation& obs,
                                                               std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Latent> init(count);
  for (Latent& z : init) z = draw_latent(rng);
  return run_chains(reference, obs, init, rng);
}

struct FinetuneConfig {
  std::size_t group_size = 8;  // K
  double gamma = 0.99;
  double bc_weight = 0.1;      // α
  AdamConfig adam{5e-5};
  std::size_t epochs = 20;
  std::size_t refresh_epochs = 100;
  std::size_t refresh_batch = 64;
  AdamConfig refresh_adam{1e-4};
  std::size_t bc_rollouts = 4;  // per scenario, resampled each epoch
  std::uint64_t seed = 0;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("finetune: K must be >= 2");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("finetune: gamma must lie in [0, 1]");
    if (!(bc_weight >= 0.0)) throw std::invalid_argument("finetune: BC weight must be >= 0");
  }
};

/// Scores the terminal trajectories of one group.
using GroupScorer = std::function<std::vector<double>(const Observation&, std::span<const Trajectory>)>;

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double rl_loss = 0.0;
  double bc_loss = 0.0;
  std::size_t steps = 0;
  std::size_t skipped = 0;  // non-finite rewards or rejected Adam steps
};

/// One pass over the preference scenarios: sample a group, score terminals,
/// advantages, L = L_RL + α L_BC, one Adam step per scenario.
inline EpochMetrics dpgrpo_epoch(DiffusionPolicy& policy, const DiffusionPolicy& reference, const GroupScorer& score,
                                 std::span<const Scenario> scenarios, const FinetuneConfig& cfg, std::size_t epoch) {
  cfg.validate();
  EpochMetrics m;
  m.epoch = epoch;
  std::vector<std::size_t> order(scenarios.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(cfg.seed, {epoch, 0xE}));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  double reward_sum = 0.0, adv_sum = 0.0, rl_sum = 0.0, bc_sum = 0.0;
  for (std::size_t i : order) {
    const Scenario& s = scenarios[i];
    const RolloutGroup group = sample_group(policy, s.obs, cfg.group_size, derive_seed(cfg.seed, {epoch, i, 1}));
    std::vector<Trajectory> terminals;
    for (const DenoisingRollout& r : group.members) terminals.push_back(r.terminal);
    const std::vector<double> rewards = score(s.obs, terminals);
    if (rewards.size() != terminals.size() ||
        !std::all_of(rewards.begin(), rewards.end(), [](double r) { return std::isfinite(r); })) {
      ++m.skipped;
      continue;
    }
    const std::vector<double> adv = group_advantages(rewards);

    std::vector<DenoisingRollout> ref;
    std::vector<const DenoisingRollout*> ref_ptrs;
    if (cfg.bc_weight > 0.0 && cfg.bc_rollouts > 0) {
      ref = sample_reference_rollouts(reference, s.obs, cfg.bc_rollouts, derive_seed(cfg.seed, {epoch, i, 2}));
      for (const DenoisingRollout& r : ref) ref_ptrs.push_back(&r);
    }

    Grads grads;
    double rl_value = 0.0, bc_value = 0.0;
    {
      Tape tape;
      Var loss = rl_loss(tape, policy, policy.params, group, adv, cfg.gamma);
      rl_value = loss.value().item();
      if (!ref_ptrs.empty()) {
        Var bc = bc_loss(tape, policy, policy.params, ref_ptrs);
        bc_value = bc.value().item();
        loss = ops::add(loss, ops::scale(bc, cfg.bc_weight));
      }
      grads = tape.backward(loss);
    }
    if (!adam_step(policy.params, grads, cfg.adam).applied) {
      ++m.skipped;
      continue;
    }
    ++m.steps;
    reward_sum += std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
    for (double a : adv) adv_sum += std::abs(a) / static_cast<double>(adv.size());
    rl_sum += rl_value;
    bc_sum += bc_value;
  }
  if (m.steps) {
    const double n = static_cast<double>(m.steps);
    m.mean_reward = reward_sum / n;
    m.mean_abs_advantage = adv_sum / n;
    m.rl_loss = rl_sum / n;
    m.bc_loss = bc_sum / n;
  }
  return m;
}

/// Denoising-loss training on the preference scenarios' ground truths.
inline std::vector<double> supervised_refresh(DiffusionPolicy& policy, std::span<const Scenario> scenarios,
                                              const FinetuneConfig& cfg) {
  if (cfg.refresh_epochs == 0 || scenarios.empty()) return {};
  std::vector<Observation> obs;
  std::vector<Trajectory> gt;
  for (const Scenario& s : scenarios) {
    obs.push_back(s.obs);
    gt.push_back(s.gt);
  }
  const auto samples = make_denoising_samples(policy.normalizer, obs, gt);
  SupervisedConfig sc;
  sc.epochs = cfg.refresh_epochs;
  sc.batch_size = cfg.refresh_batch;
  sc.adam = cfg.refresh_adam;
  sc.seed = derive_seed(cfg.seed, {0x5EF});
  // own optimizer: the result must not depend on whether RL moments were kept
  policy.params.reset_optimizer();
  return train_denoiser(policy, samples, sc);
}

}  // namespace prefdiff
