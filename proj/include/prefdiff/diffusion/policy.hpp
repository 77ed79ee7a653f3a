#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <span>
#include <vector>

#include "prefdiff/autodiff/checkpoint.hpp"
#include "prefdiff/autodiff/mlp.hpp"
#include "prefdiff/diffusion/actions.hpp"
#include "prefdiff/diffusion/schedule.hpp"
#include "prefdiff/rng.hpp"

namespace prefdiff {

inline constexpr std::size_t kTimeEmbeddingDim = 16;
inline constexpr std::size_t kDenoiserInput = kActionDim + kTimeEmbeddingDim + kObsWidth;

using Latent = std::array<double, kActionDim>;

/// Sinusoidal features of the integer noise level t.
inline std::array<double, kTimeEmbeddingDim> time_embedding(int t) {
  std::array<double, kTimeEmbeddingDim> e{};
  constexpr std::size_t half = kTimeEmbeddingDim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

/// Affine map between metric actions and the unit-scale latent the
/// denoiser works in: latent = (action - shift) / scale, per dimension.
/// data_std is the RMS latent std of the fitted set (1 unless floored).
struct ActionNormalizer {
  Latent shift{};
  double data_std = 1.0;
  Latent scale = [] {
    Latent s{};
    s.fill(1.0);
    return s;
  }();

  Latent encode(const ActionSequence& a) const {
    const Latent f = a.flat();
    Latent out{};
    for (std::size_t i = 0; i < kActionDim; ++i) out[i] = (f[i] - shift[i]) / scale[i];
    return out;
  }
  ActionSequence decode(const Latent& z) const {
    Latent f{};
    for (std::size_t i = 0; i < kActionDim; ++i) f[i] = z[i] * scale[i] + shift[i];
    return ActionSequence::from_flat(f);
  }

  /// Per-dimension mean and std (population) of a set of action sequences,
  /// with the std floored at `min_scale`.
  static ActionNormalizer fit(std::span<const ActionSequence> data, double min_scale = 0.1) {
    ActionNormalizer n;
    if (data.empty()) return n;
    Latent sum{}, sq{};
    for (const ActionSequence& a : data) {
      const Latent f = a.flat();
      for (std::size_t i = 0; i < kActionDim; ++i) sum[i] += f[i];
    }
    const double count = static_cast<double>(data.size());
    for (std::size_t i = 0; i < kActionDim; ++i) n.shift[i] = sum[i] / count;
    for (const ActionSequence& a : data) {
      const Latent f = a.flat();
      for (std::size_t i = 0; i < kActionDim; ++i) sq[i] += (f[i] - n.shift[i]) * (f[i] - n.shift[i]);
    }
    double var_sum = 0.0;
    for (std::size_t i = 0; i < kActionDim; ++i) {
      const double sd = std::sqrt(sq[i] / count);
      n.scale[i] = std::max(sd, min_scale);
      var_sum += (sd / n.scale[i]) * (sd / n.scale[i]);
    }
    n.data_std = std::sqrt(var_sum / static_cast<double>(kActionDim));
    return n;
  }
};

struct DenoiserConfig {
  std::size_t hidden = 256;
  std::size_t layers = 2;
  Activation activation = Activation::relu;
};

/// Conditional noise predictor ε_θ(x_t, t, o) plus everything needed to
/// sample from it: schedule, latent normalizer and the σ floor.
struct DiffusionPolicy {
  ParamSet params;
  MlpSpec spec;
  NoiseSchedule schedule;
  ActionNormalizer normalizer;
  double sigma_min = 1e-3;

  int steps() const { return schedule.steps(); }

  /// Reverse-step standard deviation max(σ_t, σ_min).
  double step_std(int t) const { return std::max(schedule.sigma(t), sigma_min); }

  /// Scale on x_t at the denoiser input so it has unit variance at every t.
  /// Without it the t=1 target ε = (x_1 - sqrt(ᾱ) x_0)/sqrt(1-ᾱ) needs a gain
  /// of ~1/sqrt(β_1) on x_1.
  double input_scale(int t) const {
    const double abar = schedule.alpha_bar(t);
    const double s = normalizer.data_std;
    return 1.0 / std::sqrt(abar * s * s + 1.0 - abar);
  }

  static MlpSpec make_spec(const DenoiserConfig& cfg) {
    MlpSpec s;
    s.prefix = "denoiser";
    s.hidden = cfg.activation;
    s.widths.push_back(kDenoiserInput);
    for (std::size_t l = 0; l < cfg.layers; ++l) s.widths.push_back(cfg.hidden);
    s.widths.push_back(kActionDim);
    return s;
  }

  static DiffusionPolicy create(const DenoiserConfig& cfg, NoiseSchedule schedule, ActionNormalizer normalizer,
                                double sigma_min, std::uint64_t seed) {
    DiffusionPolicy p;
    p.spec = make_spec(cfg);
    p.schedule = std::move(schedule);
    p.normalizer = normalizer;
    p.sigma_min = sigma_min;
    Rng rng(seed);
    init_mlp(p.params, p.spec, rng, 0.5);
    return p;
  }
};

/// Writes one denoiser input row: [c_in(t) x_t | time embedding | obs].
inline void fill_denoiser_row(const DiffusionPolicy& policy, std::span<double> row, const Latent& x_t, int t,
                              const Observation& obs) {
  const double c_in = policy.input_scale(t);
  for (std::size_t i = 0; i < kActionDim; ++i) row[i] = c_in * x_t[i];
  const auto emb = time_embedding(t);
  std::copy(emb.begin(), emb.end(), row.begin() + kActionDim);
  std::copy(obs.begin(), obs.end(), row.begin() + kActionDim + kTimeEmbeddingDim);
}

/// ε_θ for a batch of input rows (constant input, differentiable in θ).
inline Var predict_noise(Tape& tape, const DiffusionPolicy& policy, const Tensor& inputs) {
  return mlp_forward(tape, policy.params, policy.spec, tape.constant(inputs));
}

inline Tensor predict_noise_eval(const DiffusionPolicy& policy, const Tensor& inputs) {
  return mlp_eval(policy.params, policy.spec, inputs);
}

// Policy checkpoint: autodiff container plus the schedule block (T, betas),
// latent normalizer and net layout, so sampling needs only this one file.

inline Checkpoint policy_checkpoint(const DiffusionPolicy& p, bool with_optimizer) {
  Checkpoint ck;
  store_params(ck, p.params, with_optimizer);
  ck.meta["schedule.T"] = p.steps();
  ck.meta["policy.sigma_min"] = p.sigma_min;
  ck.meta["policy.hidden"] = static_cast<double>(p.spec.widths[1]);
  ck.meta["policy.layers"] = static_cast<double>(p.spec.widths.size() - 2);
  ck.meta["policy.activation"] = p.spec.hidden == Activation::relu ? 0.0 : 1.0;
  ck.put("schedule.beta", Tensor::row(p.schedule.betas));
  ck.put("norm.shift", Tensor::row(std::vector<double>(p.normalizer.shift.begin(), p.normalizer.shift.end())));
  ck.meta["norm.data_std"] = p.normalizer.data_std;
  ck.put("norm.scale", Tensor::row(std::vector<double>(p.normalizer.scale.begin(), p.normalizer.scale.end())));
  return ck;
}

inline DiffusionPolicy policy_from_checkpoint(const Checkpoint& ck) {
  DiffusionPolicy p;
  DenoiserConfig cfg;
  cfg.hidden = static_cast<std::size_t>(ck.meta_value("policy.hidden"));
  cfg.layers = static_cast<std::size_t>(ck.meta_value("policy.layers"));
  cfg.activation = ck.meta_value("policy.activation") == 0.0 ? Activation::relu : Activation::tanh;
  p.spec = DiffusionPolicy::make_spec(cfg);
  const Tensor& betas = ck.tensor("schedule.beta");
  if (static_cast<double>(betas.size()) != ck.meta_value("schedule.T")) {
    throw CheckpointError("schedule block: T disagrees with beta table length");
  }
  p.schedule = NoiseSchedule::from_betas(betas.data);
  p.sigma_min = ck.meta_value("policy.sigma_min");
  const Tensor& shift = ck.tensor("norm.shift");
  const Tensor& scale = ck.tensor("norm.scale");
  if (shift.size() != kActionDim || scale.size() != kActionDim) throw CheckpointError("normalizer block has wrong width");
  std::copy(shift.data.begin(), shift.data.end(), p.normalizer.shift.begin());
  std::copy(scale.data.begin(), scale.data.end(), p.normalizer.scale.begin());
  p.normalizer.data_std = ck.meta_value("norm.data_std");
  p.params = restore_params(ck);
  // Validates the name/shape table against the declared layout.
  ParamSet expected;
  Rng rng(0);
  init_mlp(expected, p.spec, rng);
  for (const auto& [name, e] : expected.entries()) {
    if (!p.params.contains(name)) throw CheckpointError("policy checkpoint is missing parameter '" + name + "'");
    if (p.params.value(name).shape != e.value.shape) {
      throw CheckpointError("policy checkpoint parameter '" + name + "' has shape " +
                            p.params.value(name).shape_string() + ", expected " + e.value.shape_string());
    }
  }
  return p;
}

inline void save_policy(const DiffusionPolicy& p, const std::filesystem::path& path, bool with_optimizer = false) {
  write_checkpoint(policy_checkpoint(p, with_optimizer), path);
}
inline DiffusionPolicy load_policy(const std::filesystem::path& path) { return policy_from_checkpoint(read_checkpoint(path)); }

}  // namespace prefdiff
