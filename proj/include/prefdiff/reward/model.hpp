#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prefdiff/autodiff/adam.hpp"
#include "prefdiff/autodiff/checkpoint.hpp"
#include "prefdiff/autodiff/mlp.hpp"
#include "prefdiff/reward/bt_loss.hpp"
#include "prefdiff/reward/pairs.hpp"

namespace prefdiff {

inline constexpr std::size_t kRewardInput = kObsWidth + kActionDim;

/// Trajectory coordinates as the reward net sees them: waypoints in the
/// state space, x over 40 m and y over 4 m.
struct RewardFeatureScales {
  static constexpr double x = 1.0 / 40.0;
  static constexpr double y = 1.0 / 4.0;
};

inline void fill_reward_row(std::span<double> row, const Observation& obs, const Trajectory& traj) {
  std::copy(obs.begin(), obs.end(), row.begin());
  for (std::size_t l = 0; l < kHorizon; ++l) {
    row[kObsWidth + 2 * l] = traj[l].x * RewardFeatureScales::x;
    row[kObsWidth + 2 * l + 1] = traj[l].y * RewardFeatureScales::y;
  }
}

struct RewardConfig {
  std::size_t hidden = 256;
  std::size_t layers = 2;
};

/// r_φ(o, x): MLP over concat(obs, scaled waypoints) with a scalar head.
struct RewardModel {
  ParamSet params;
  MlpSpec spec;

  static MlpSpec make_spec(const RewardConfig& cfg) {
    MlpSpec s;
    s.prefix = "reward";
    s.hidden = Activation::relu;
    s.widths.push_back(kRewardInput);
    for (std::size_t l = 0; l < cfg.layers; ++l) s.widths.push_back(cfg.hidden);
    s.widths.push_back(1);
    return s;
  }

  static RewardModel create(const RewardConfig& cfg, std::uint64_t seed) {
    RewardModel m;
    m.spec = make_spec(cfg);
    Rng rng(seed);
    init_mlp(m.params, m.spec, rng);
    return m;
  }

  Var forward(Tape& tape, const ParamSet& ps, const Tensor& inputs) const {
    return mlp_forward(tape, ps, spec, tape.constant(inputs));
  }

  double score(const Observation& obs, const Trajectory& traj) const {
    Tensor in = Tensor::zeros(1, kRewardInput);
    fill_reward_row(in.data, obs, traj);
    return mlp_eval(params, spec, in).item();
  }

  std::vector<double> score(const Observation& obs, std::span<const Trajectory> trajs) const {
    if (trajs.empty()) return {};
    Tensor in = Tensor::zeros(trajs.size(), kRewardInput);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      fill_reward_row(std::span<double>(in.data).subspan(i * kRewardInput, kRewardInput), obs, trajs[i]);
    }
    return mlp_eval(params, spec, in).data;
  }
};

struct PairBatch {
  Tensor chosen;
  Tensor ignored;
};

inline PairBatch make_pair_batch(std::span<const PreferencePair* const> pairs) {
  PairBatch b{Tensor::zeros(pairs.size(), kRewardInput), Tensor::zeros(pairs.size(), kRewardInput)};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    fill_reward_row(std::span<double>(b.chosen.data).subspan(i * kRewardInput, kRewardInput), pairs[i]->obs,
                    pairs[i]->chosen);
    fill_reward_row(std::span<double>(b.ignored.data).subspan(i * kRewardInput, kRewardInput), pairs[i]->obs,
                    pairs[i]->ignored);
  }
  return b;
}

inline Var reward_pair_loss(Tape& tape, const RewardModel& m, const ParamSet& ps, const PairBatch& b, double margin) {
  return bt_margin_loss(m.forward(tape, ps, b.chosen), m.forward(tape, ps, b.ignored), margin);
}

/// Fraction of pairs with r(o, x_c) > r(o, x_i).
inline double pairwise_accuracy(const RewardModel& m, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) return std::nan("");
  std::size_t correct = 0;
  for (const PreferencePair& p : pairs) {
    if (m.score(p.obs, p.chosen) > m.score(p.obs, p.ignored)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

struct RewardTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamConfig adam{2e-5};
  double margin = 1.0;
  double holdout_fraction = 0.1;
  double validation_fraction = 0.1;  // of the training part, for early stopping
  std::size_t patience = 4;
  std::uint64_t seed = 0;
};

struct RewardTrainReport {
  std::vector<double> train_losses;
  std::vector<double> validation_losses;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
  double accuracy = 0.0;  // on the held-out split
  bool flagged = false;   // accuracy below 0.5
  std::string message;
};

inline double mean_pair_loss(const RewardModel& m, std::span<const PreferencePair* const> pairs, double margin) {
  if (pairs.empty()) return std::nan("");
  Tape tape;
  return reward_pair_loss(tape, m, m.params, make_pair_batch(pairs), margin).value().item();
}

/// Mean margin loss with minibatch Adam, 90/10 held-out split, early stopping
/// on a validation slice of the training part; the best-validation weights
/// are kept.
inline RewardTrainReport train_reward_model(RewardModel& m, std::span<const PreferencePair> pairs,
                                            const RewardTrainConfig& cfg) {
  if (pairs.size() < 20) throw std::invalid_argument("train_reward_model: need at least 20 pairs");
  RewardTrainReport rep;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.holdout_fraction * pairs.size())));
  std::vector<PreferencePair> heldout;
  std::vector<const PreferencePair*> train, val;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_hold) {
      heldout.push_back(pairs[order[i]]);
    } else {
      train.push_back(&pairs[order[i]]);
    }
  }
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.validation_fraction * train.size())));
  val.assign(train.end() - static_cast<std::ptrdiff_t>(n_val), train.end());
  train.resize(train.size() - n_val);
  rep.train_pairs = train.size();
  rep.heldout_pairs = heldout.size();

  ParamSet best = m.params;
  double best_val = mean_pair_loss(m, val, cfg.margin);
  std::size_t since_best = 0;
  std::vector<const PreferencePair*> batch;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(train.begin(), train.end(), rng);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      batch.assign(train.begin() + static_cast<std::ptrdiff_t>(start),
                   train.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), start + cfg.batch_size)));
      Grads g;
      double loss = 0.0;
      {
        Tape tape;
        Var l = reward_pair_loss(tape, m, m.params, make_pair_batch(batch), cfg.margin);
        loss = l.value().item();
        if (!std::isfinite(loss)) continue;
        g = tape.backward(l);
      }
      if (adam_step(m.params, g, cfg.adam).applied) {
        sum += loss;
        ++steps;
      }
    }
    rep.train_losses.push_back(steps ? sum / static_cast<double>(steps) : std::nan(""));
    const double v = mean_pair_loss(m, val, cfg.margin);
    rep.validation_losses.push_back(v);
    rep.epochs_run = e + 1;
    if (v < best_val) {
      best_val = v;
      best = m.params;
      rep.best_epoch = e + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  m.params = best;
  rep.accuracy = pairwise_accuracy(m, heldout);
  if (!(rep.accuracy >= 0.5)) {
    rep.flagged = true;
    rep.message = "reward model held-out accuracy " + std::to_string(rep.accuracy) + " is below 0.5; unusable";
  }
  return rep;
}

inline Checkpoint reward_checkpoint(const RewardModel& m) {
  Checkpoint ck;
  store_params(ck, m.params, false);
  ck.meta["reward.hidden"] = static_cast<double>(m.spec.widths[1]);
  ck.meta["reward.layers"] = static_cast<double>(m.spec.widths.size() - 2);
  return ck;
}

inline RewardModel reward_from_checkpoint(const Checkpoint& ck) {
  RewardConfig cfg;
  cfg.hidden = static_cast<std::size_t>(ck.meta_value("reward.hidden"));
  cfg.layers = static_cast<std::size_t>(ck.meta_value("reward.layers"));
  RewardModel m = RewardModel::create(cfg, 0);
  load_params_into(m.params, ck);
  return m;
}

}  // namespace prefdiff
