#pragma once

// Style-transfer autoencoder used to build negatives for the reward model:
// a policy sample x_raw is re-rendered with the velocity statistics of the
// chosen trajectory so that the reward model cannot key on sampler artifacts.

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prefdiff/autodiff/adam.hpp"
#include "prefdiff/autodiff/checkpoint.hpp"
#include "prefdiff/autodiff/mlp.hpp"
#include "prefdiff/diffusion/actions.hpp"
#include "prefdiff/rng.hpp"

namespace prefdiff {

/// Rows of an [n x 16] action tensor in meters -> per-row speed mean and
/// population std, each [n x 1].
inline std::pair<Var, Var> velocity_stats(Var actions) {
  const std::size_t n = actions.rows();
  Var per_step = ops::reshape(actions, n * kHorizon, 2);
  Var speed = ops::scale(ops::sqrt(ops::shift(ops::row_sum(ops::square(per_step)), 1e-12)), 1.0 / kStepSeconds);
  Var v = ops::reshape(speed, n, kHorizon);
  Var mean = ops::row_mean(v);
  Var var = ops::row_mean(ops::square(ops::sub(v, mean)));
  return {mean, ops::sqrt(ops::shift(var, 1e-12))};
}

/// (1-δ) ||x_i - x_raw||² + δ [(mean v_i - mean v_c)² + (std v_i - std v_c)²],
/// averaged over rows.
inline Var style_transfer_loss(Tape& tape, Var x_i, const Tensor& raw, const Tensor& chosen, double delta) {
  Var recon = ops::row_sum(ops::square(ops::sub(x_i, tape.constant(raw))));
  const auto [mi, si] = velocity_stats(x_i);
  const auto [mc, sc] = velocity_stats(tape.constant(chosen));
  Var style = ops::add(ops::square(ops::sub(mi, mc)), ops::square(ops::sub(si, sc)));
  return ops::mean(ops::add(ops::scale(recon, 1.0 - delta), ops::scale(style, delta)));
}

struct StyleAutoencoder {
  static constexpr double kInputScale = 0.1;  // meters -> net units
  static constexpr std::size_t kLatent = 8;
  static constexpr std::size_t kHidden = 32;

  ParamSet params;
  MlpSpec encoder{{kActionDim, kHidden, kLatent}, Activation::relu, "ae.enc"};
  MlpSpec decoder{{kLatent, kHidden, kActionDim}, Activation::relu, "ae.dec"};

  static StyleAutoencoder create(std::uint64_t seed) {
    StyleAutoencoder ae;
    Rng rng(seed);
    init_mlp(ae.params, ae.encoder, rng);
    init_mlp(ae.params, ae.decoder, rng);
    return ae;
  }

  /// Reconstruction in meters for an [n x 16] batch of actions in meters.
  Var forward(Tape& tape, const ParamSet& ps, const Tensor& actions) const {
    Tensor in = actions;
    for (double& v : in.data) v *= kInputScale;
    Var z = mlp_forward(tape, ps, encoder, tape.constant(in));
    return ops::scale(mlp_forward(tape, ps, decoder, z), 1.0 / kInputScale);
  }

  ActionSequence reconstruct(const ActionSequence& a) const {
    const auto f = a.flat();
    Tape tape;
    const Tensor out = forward(tape, params, Tensor::row(std::vector<double>(f.begin(), f.end()))).value();
    return ActionSequence::from_flat(out.data);
  }
};

inline Tensor stack_actions(std::span<const ActionSequence> rows) {
  Tensor t = Tensor::zeros(rows.size(), kActionDim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto f = rows[r].flat();
    std::copy(f.begin(), f.end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * kActionDim));
  }
  return t;
}

inline Var autoencoder_loss(Tape& tape, const StyleAutoencoder& ae, const ParamSet& ps, const Tensor& raw,
                            const Tensor& chosen, double delta) {
  return style_transfer_loss(tape, ae.forward(tape, ps, raw), raw, chosen, delta);
}

struct AeTrainConfig {
  double delta = 0.3;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  AdamConfig adam{1e-3};
  std::uint64_t seed = 0;
  double divergence_factor = 10.0;
};

struct AeTrainReport {
  std::vector<double> epoch_losses;
  double initial_loss = 0.0;
  bool aborted = false;
  std::string message;
};

/// Adam on the style-transfer loss over (x_raw, x_c) action pairs. Aborts
/// when an epoch's mean loss exceeds divergence_factor x the initial loss.
inline AeTrainReport train_style_autoencoder(StyleAutoencoder& ae, std::span<const ActionSequence> raw,
                                             std::span<const ActionSequence> chosen, const AeTrainConfig& cfg) {
  if (raw.empty()) throw std::invalid_argument("train_style_autoencoder: empty training set");
  if (raw.size() != chosen.size()) throw std::invalid_argument("train_style_autoencoder: raw/chosen size mismatch");
  AeTrainReport rep;
  {
    Tape tape;
    rep.initial_loss =
        autoencoder_loss(tape, ae, ae.params, stack_actions(raw), stack_actions(chosen), cfg.delta).value().item();
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<ActionSequence> br, bc;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      br.clear();
      bc.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        br.push_back(raw[order[i]]);
        bc.push_back(chosen[order[i]]);
      }
      Grads g;
      double loss = 0.0;
      {
        Tape tape;
        Var l = autoencoder_loss(tape, ae, ae.params, stack_actions(br), stack_actions(bc), cfg.delta);
        loss = l.value().item();
        if (!std::isfinite(loss)) continue;
        g = tape.backward(l);
      }
      if (adam_step(ae.params, g, cfg.adam).applied) {
        sum += loss;
        ++batches;
      }
    }
    const double mean = batches ? sum / static_cast<double>(batches) : std::nan("");
    rep.epoch_losses.push_back(mean);
    if (!std::isfinite(mean) || mean > cfg.divergence_factor * rep.initial_loss) {
      rep.aborted = true;
      rep.message = "autoencoder training diverged at epoch " + std::to_string(e + 1) + ": loss " +
                    std::to_string(mean) + " vs initial " + std::to_string(rep.initial_loss);
      break;
    }
  }
  return rep;
}

inline Checkpoint autoencoder_checkpoint(const StyleAutoencoder& ae) {
  Checkpoint ck;
  store_params(ck, ae.params, false);
  return ck;
}

inline StyleAutoencoder autoencoder_from_checkpoint(const Checkpoint& ck) {
  StyleAutoencoder ae = StyleAutoencoder::create(0);
  load_params_into(ae.params, ck);
  return ae;
}

}  // namespace prefdiff
