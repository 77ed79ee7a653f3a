#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "prefdiff/autodiff/adam.hpp"
#include "prefdiff/diffusion/policy.hpp"

namespace prefdiff {

/// One supervised example: observation and the normalized ground-truth latent.
struct DenoisingSample {
  Observation obs{};
  Latent x0{};
};

/// Noise level and ε drawn for one sample of one step.
struct DenoisingDraw {
  int t = 1;
  Latent eps{};
};

inline std::vector<DenoisingSample> make_denoising_samples(const ActionNormalizer& norm,
                                                           std::span<const Observation> obs,
                                                           std::span<const Trajectory> gt) {
  if (obs.size() != gt.size()) throw std::invalid_argument("make_denoising_samples: size mismatch");
  std::vector<DenoisingSample> out(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) out[i] = {obs[i], norm.encode(to_actions(gt[i]))};
  return out;
}

inline std::vector<DenoisingDraw> draw_denoising_noise(std::size_t n, int steps, Rng& rng) {
  std::uniform_int_distribution<int> level(1, steps);
  std::vector<DenoisingDraw> d(n);
  for (DenoisingDraw& x : d) {
    x.t = level(rng);
    for (double& v : x.eps) v = standard_normal(rng);
  }
  return d;
}

/// mean over rows of ||ε - ε̂||².
inline Var denoising_loss(Tape& tape, Var eps_hat, const Tensor& eps) {
  return ops::mean(ops::row_sum(ops::square(ops::sub(tape.constant(eps), eps_hat))));
}

/// Loss ||ε - ε_θ(sqrt(ᾱ_t) x_0 + sqrt(1-ᾱ_t) ε, t, o)||² averaged over the batch,
/// with θ taken from `params`.
inline Var pretrain_loss(Tape& tape, const DiffusionPolicy& policy, const ParamSet& params,
                         std::span<const DenoisingSample> batch, std::span<const DenoisingDraw> draws) {
  if (batch.empty()) throw std::invalid_argument("pretrain_loss: empty batch");
  if (batch.size() != draws.size()) throw std::invalid_argument("pretrain_loss: one draw per sample required");
  const std::size_t n = batch.size();
  Tensor inputs = Tensor::zeros(n, kDenoiserInput);
  Tensor eps = Tensor::zeros(n, kActionDim);
  for (std::size_t i = 0; i < n; ++i) {
    const double abar = policy.schedule.alpha_bar(draws[i].t);
    Latent noisy{};
    for (std::size_t d = 0; d < kActionDim; ++d) {
      noisy[d] = std::sqrt(abar) * batch[i].x0[d] + std::sqrt(1.0 - abar) * draws[i].eps[d];
      eps(i, d) = draws[i].eps[d];
    }
    fill_denoiser_row(policy, std::span<double>(inputs.data).subspan(i * kDenoiserInput, kDenoiserInput), noisy, draws[i].t,
                      batch[i].obs);
  }
  return denoising_loss(tape, mlp_forward(tape, params, policy.spec, tape.constant(inputs)), eps);
}

inline Var pretrain_loss(Tape& tape, const DiffusionPolicy& policy, std::span<const DenoisingSample> batch,
                         std::span<const DenoisingDraw> draws) {
  return pretrain_loss(tape, policy, policy.params, batch, draws);
}

struct TrainStepResult {
  double loss = 0.0;
  bool applied = false;
  std::string diagnostic;
};

/// One Adam step on the denoising objective. Non-finite loss skips the step.
inline TrainStepResult pretrain_step(DiffusionPolicy& policy, std::span<const DenoisingSample> batch,
                                     const AdamConfig& adam, Rng& rng) {
  const auto draws = draw_denoising_noise(batch.size(), policy.steps(), rng);
  Grads grads;
  TrainStepResult r;
  {
    Tape tape;
    Var loss = pretrain_loss(tape, policy, batch, draws);
    r.loss = loss.value().item();
    if (!std::isfinite(r.loss)) {
      r.diagnostic = "pretrain_step skipped: non-finite loss";
      return r;
    }
    grads = tape.backward(loss);
  }
  const AdamStepResult s = adam_step(policy.params, grads, adam);
  r.applied = s.applied;
  r.diagnostic = s.diagnostic;
  return r;
}

/// Monte-Carlo estimate of the denoising loss with fixed seed (no update).
inline double estimate_denoising_loss(const DiffusionPolicy& policy, std::span<const DenoisingSample> samples,
                                      std::uint64_t seed, std::size_t repeats = 4) {
  if (samples.empty()) return 0.0;
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto draws = draw_denoising_noise(samples.size(), policy.steps(), rng);
    Tape tape;
    total += pretrain_loss(tape, policy, samples, draws).value().item();
  }
  return total / static_cast<double>(repeats);
}

struct SupervisedConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  AdamConfig adam{};
  std::uint64_t seed = 0;
};

/// Epoch loop of pretrain_step over shuffled minibatches. Returns per-epoch mean loss.
inline std::vector<double> train_denoiser(DiffusionPolicy& policy, std::span<const DenoisingSample> samples,
                                          const SupervisedConfig& cfg) {
  std::vector<double> epoch_losses;
  if (samples.empty() || cfg.epochs == 0) return epoch_losses;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<DenoisingSample> batch;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(samples[order[i]]);
      const TrainStepResult r = pretrain_step(policy, batch, cfg.adam, rng);
      if (r.applied) {
        sum += r.loss;
        ++steps;
      }
    }
    epoch_losses.push_back(steps ? sum / static_cast<double>(steps) : std::nan(""));
  }
  return epoch_losses;
}

}  // namespace prefdiff
