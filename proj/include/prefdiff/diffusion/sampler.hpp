#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "prefdiff/diffusion/policy.hpp"

namespace prefdiff {

/// μ_t = (x_t - (1-α_t)/sqrt(1-ᾱ_t) ε̂) / sqrt(α_t), any dimension.
inline std::vector<double> reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, double alpha,
                                        double alpha_bar) {
  if (x_t.size() != eps_hat.size()) throw std::invalid_argument("reverse_mean: dimension mismatch");
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - alpha_bar);
  std::vector<double> mu(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) mu[i] = (x_t[i] - coef * eps_hat[i]) / std::sqrt(alpha);
  return mu;
}

/// Isotropic Gaussian log-density log N(a; μ, σ² I).
inline double gaussian_log_prob(std::span<const double> a, std::span<const double> mu, double sigma) {
  if (a.size() != mu.size()) throw std::invalid_argument("gaussian_log_prob: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - mu[i]) * (a[i] - mu[i]);
  const double var = sigma * sigma;
  return -sq / (2.0 * var) - 0.5 * static_cast<double>(a.size()) * std::log(2.0 * std::numbers::pi * var);
}

struct ReverseStep {
  Latent next{};
  Latent mean{};
  double log_prob = 0.0;
};

/// One ancestral step x_t -> x_{t-1} with caller-provided standard noise z.
inline ReverseStep reverse_step(const DiffusionPolicy& policy, const Latent& x_t, int t, const Observation& obs,
                                const Latent& z) {
  if (t < 1 || t > policy.steps()) {
    throw std::out_of_range("reverse_step: t=" + std::to_string(t) + " outside 1.." + std::to_string(policy.steps()));
  }
  Tensor input = Tensor::zeros(1, kDenoiserInput);
  fill_denoiser_row(policy, input.data, x_t, t, obs);
  const Tensor eps = predict_noise_eval(policy, input);
  const auto mu = reverse_mean(x_t, eps.data, policy.schedule.alpha(t), policy.schedule.alpha_bar(t));
  const double sd = policy.step_std(t);
  ReverseStep r;
  for (std::size_t i = 0; i < kActionDim; ++i) {
    r.mean[i] = mu[i];
    r.next[i] = mu[i] + sd * z[i];
  }
  r.log_prob = gaussian_log_prob(r.next, r.mean, sd);
  return r;
}

inline Latent draw_latent(Rng& rng) {
  Latent z{};
  for (double& v : z) v = standard_normal(rng);
  return z;
}

/// One reverse chain viewed as a T-step MDP: ψ_t = (o, x_{T-t}), a_t = x_{T-t-1}.
struct DenoisingRollout {
  Observation obs{};
  std::vector<Latent> latents;     // x_T, x_{T-1}, ..., x_0
  std::vector<Latent> step_noise;  // z drawn at MDP step t
  std::vector<double> log_probs;   // log π(a_t | ψ_t)
  Trajectory terminal;             // x_0 decoded to metric waypoints

  int horizon() const { return static_cast<int>(log_probs.size()); }
  const Latent& state(int t) const { return latents.at(static_cast<std::size_t>(t)); }
  const Latent& action(int t) const { return latents.at(static_cast<std::size_t>(t) + 1); }
  /// Noise level the denoiser sees at MDP step t.
  int noise_level(int t) const { return horizon() - t; }
  double total_log_prob() const {
    double s = 0;
    for (double v : log_probs) s += v;
    return s;
  }
};

/// K chains that share (o, x_T).
struct RolloutGroup {
  Observation obs{};
  Latent initial_noise{};
  std::vector<DenoisingRollout> members;
  std::vector<double> rewards;
};

struct ChainNoise {
  bool zero_step_noise = false;
};

/// Runs chains from the given initial latents, batched across chains.
inline std::vector<DenoisingRollout> run_chains(const DiffusionPolicy& policy, const Observation& obs,
                                                const std::vector<Latent>& initial, Rng& rng, ChainNoise noise = {}) {
  const int T = policy.steps();
  const std::size_t K = initial.size();
  std::vector<DenoisingRollout> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    out[k].obs = obs;
    out[k].latents.reserve(static_cast<std::size_t>(T) + 1);
    out[k].latents.push_back(initial[k]);
  }
  Tensor input = Tensor::zeros(K, kDenoiserInput);
  for (int step = 0; step < T; ++step) {
    const int t = T - step;
    for (std::size_t k = 0; k < K; ++k) {
      fill_denoiser_row(policy, std::span<double>(input.data).subspan(k * kDenoiserInput, kDenoiserInput), out[k].latents.back(),
                        t, obs);
    }
    const Tensor eps = predict_noise_eval(policy, input);
    const double sd = policy.step_std(t);
    for (std::size_t k = 0; k < K; ++k) {
      const Latent& x = out[k].latents.back();
      const auto mu = reverse_mean(x, std::span<const double>(eps.data).subspan(k * kActionDim, kActionDim),
                                   policy.schedule.alpha(t), policy.schedule.alpha_bar(t));
      Latent z{};
      if (!noise.zero_step_noise) z = draw_latent(rng);
      Latent next{};
      for (std::size_t i = 0; i < kActionDim; ++i) next[i] = mu[i] + sd * z[i];
      out[k].log_probs.push_back(gaussian_log_prob(next, mu, sd));
      out[k].step_noise.push_back(z);
      out[k].latents.push_back(next);
    }
  }
  for (DenoisingRollout& r : out) r.terminal = to_states(policy.normalizer.decode(r.latents.back()));
  return out;
}

/// Shared x_T ~ N(0, I) for the whole group, independent per-step noise.
inline RolloutGroup sample_group(const DiffusionPolicy& policy, const Observation& obs, std::size_t K,
                                 std::uint64_t seed, ChainNoise noise = {}) {
  if (K < 1) throw std::invalid_argument("sample_group: K must be >= 1");
  Rng rng(seed);
  RolloutGroup g;
  g.obs = obs;
  g.initial_noise = draw_latent(rng);
  g.members = run_chains(policy, obs, std::vector<Latent>(K, g.initial_noise), rng, noise);
  return g;
}

/// K independent candidate plans (each chain with its own x_T).
inline std::vector<Trajectory> sample_trajectories(const DiffusionPolicy& policy, const Observation& obs,
                                                   std::size_t K, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Latent> init(K);
  for (Latent& z : init) z = draw_latent(rng);
  std::vector<Trajectory> out;
  for (const DenoisingRollout& r : run_chains(policy, obs, init, rng)) out.push_back(r.terminal);
  return out;
}

/// Per-transition constants for re-evaluating log π_θ(a_t | ψ_t) on a tape.
/// Rows are rollout-major: row = r * T + t.
struct TransitionBatch {
  Tensor inputs;       // [n x kDenoiserInput]
  Tensor offset;       // a_t - x_t / sqrt(α)
  Tensor eps_coef;     // (1-α) / (sqrt(α) sqrt(1-ᾱ)), [n x 1]
  Tensor neg_inv_two_var;  // -1 / (2 σ̃²), [n x 1]
  Tensor log_norm;     // (D/2) log(2π σ̃²), [n x 1]
  std::size_t rollouts = 0;
  int horizon = 0;
};

inline TransitionBatch make_transition_batch(const DiffusionPolicy& policy,
                                             std::span<const DenoisingRollout* const> rollouts) {
  const int T = policy.steps();
  TransitionBatch b;
  b.rollouts = rollouts.size();
  b.horizon = T;
  const std::size_t n = rollouts.size() * static_cast<std::size_t>(T);
  b.inputs = Tensor::zeros(n, kDenoiserInput);
  b.offset = Tensor::zeros(n, kActionDim);
  b.eps_coef = Tensor::zeros(n, 1);
  b.neg_inv_two_var = Tensor::zeros(n, 1);
  b.log_norm = Tensor::zeros(n, 1);
  for (std::size_t r = 0; r < rollouts.size(); ++r) {
    const DenoisingRollout& ro = *rollouts[r];
    if (ro.horizon() != T) throw std::invalid_argument("rollout horizon differs from policy schedule");
    for (int t = 0; t < T; ++t) {
      const std::size_t row = r * static_cast<std::size_t>(T) + static_cast<std::size_t>(t);
      const int level = ro.noise_level(t);
      const double alpha = policy.schedule.alpha(level);
      const double abar = policy.schedule.alpha_bar(level);
      const double sd = policy.step_std(level);
      fill_denoiser_row(policy, std::span<double>(b.inputs.data).subspan(row * kDenoiserInput, kDenoiserInput), ro.state(t),
                        level, ro.obs);
      for (std::size_t i = 0; i < kActionDim; ++i) {
        b.offset(row, i) = ro.action(t)[i] - ro.state(t)[i] / std::sqrt(alpha);
      }
      b.eps_coef(row, 0) = (1.0 - alpha) / (std::sqrt(alpha) * std::sqrt(1.0 - abar));
      b.neg_inv_two_var(row, 0) = -1.0 / (2.0 * sd * sd);
      b.log_norm(row, 0) = 0.5 * static_cast<double>(kActionDim) * std::log(2.0 * std::numbers::pi * sd * sd);
    }
  }
  return b;
}

/// Differentiable log π_θ(a_t | ψ_t) for every row of the batch, [n x 1],
/// with θ taken from `params` (layout of policy.spec).
inline Var transition_log_probs(Tape& tape, const DiffusionPolicy& policy, const ParamSet& params,
                                const TransitionBatch& b) {
  Var eps = mlp_forward(tape, params, policy.spec, tape.constant(b.inputs));
  Var diff = ops::add(tape.constant(b.offset), ops::mul(eps, tape.constant(b.eps_coef)));
  Var sq = ops::row_sum(ops::square(diff));
  return ops::sub(ops::mul(sq, tape.constant(b.neg_inv_two_var)), tape.constant(b.log_norm));
}

inline Var transition_log_probs(Tape& tape, const DiffusionPolicy& policy, const TransitionBatch& b) {
  return transition_log_probs(tape, policy, policy.params, b);
}

}  // namespace prefdiff
