#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "prefdiff/autodiff/gradcheck.hpp"
#include "prefdiff/diffusion/pretrain.hpp"
#include "prefdiff/diffusion/sampler.hpp"

namespace prefdiff {
namespace {

DiffusionPolicy small_policy(std::uint64_t seed, std::size_t hidden = 32) {
  return DiffusionPolicy::create(DenoiserConfig{hidden, 2, Activation::relu}, build_schedule(10, 1e-4, 0.2),
                                 ActionNormalizer{}, 1e-3, seed);
}

void zero_params(DiffusionPolicy& p) {
  for (const auto& [name, e] : p.params.entries()) {
    Tensor& v = p.params.mutable_value(name);
    std::fill(v.data.begin(), v.data.end(), 0.0);
  }
}

Observation random_obs(Rng& rng) {
  Observation o{};
  for (double& v : o) v = uniform(rng, -1.0, 1.0);
  return o;
}

Trajectory random_traj(Rng& rng) {
  Trajectory t;
  Vec2 p{};
  for (std::size_t l = 0; l < kHorizon; ++l) {
    p = p + Vec2{uniform(rng, 0.0, 10.0), uniform(rng, -1.0, 1.0)};
    t[l] = p;
  }
  return t;
}

TEST(Schedule, HandEvaluatedTwoSteps) {
  const NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  EXPECT_NEAR(s.alpha(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha(2), 0.8, 1e-15);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
  EXPECT_NEAR(s.sigma(1), std::sqrt(0.1), 1e-15);
  EXPECT_NEAR(s.sigma(2), std::sqrt(0.2), 1e-15);
}

TEST(Schedule, ZeroNoiseLimitAndMonotonicity) {
  const NoiseSchedule tiny = build_schedule(5, 1e-15, 1e-15);
  for (int t = 1; t <= 5; ++t) {
    EXPECT_NEAR(tiny.alpha(t), 1.0, 1e-14);
    EXPECT_NEAR(tiny.alpha_bar(t), 1.0, 1e-13);
  }
  const NoiseSchedule s = build_schedule(10, 1e-4, 0.2);
  for (int t = 2; t <= 10; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  EXPECT_LT(s.alpha_bar(10), s.alpha_bar(1));
}

TEST(Schedule, InvalidRangesRejected) {
  EXPECT_THROW(build_schedule(10, 0.0, 0.2), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 0.3, 0.2), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(build_schedule(0, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 1e-4, 0.2).alpha(11), std::out_of_range);
}

TEST(Actions, DefinitionalDifferencing) {
  Trajectory t;
  t[0] = {1, 0};
  t[1] = {2, 0};
  t[2] = {2, 1};
  for (std::size_t l = 3; l < kHorizon; ++l) t[l] = {2, 1};
  const ActionSequence a = to_actions(t);
  EXPECT_EQ(a.deltas[0], (Vec2{1, 0}));
  EXPECT_EQ(a.deltas[1], (Vec2{1, 0}));
  EXPECT_EQ(a.deltas[2], (Vec2{0, 1}));
  EXPECT_EQ(a.deltas[3], (Vec2{0, 0}));
  const ActionSequence zero = to_actions(Trajectory{});
  for (const Vec2& d : zero.deltas) EXPECT_EQ(d, (Vec2{0, 0}));
}

TEST(Actions, RoundTripWithin1e12) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Trajectory t = random_traj(rng);
    const Trajectory back = to_states(to_actions(t));
    for (std::size_t l = 0; l < kHorizon; ++l) EXPECT_LE((back[l] - t[l]).norm(), 1e-12);
  }
}

TEST(Normalizer, FitAndInverse) {
  Rng rng(4);
  std::vector<ActionSequence> data;
  for (int i = 0; i < 200; ++i) data.push_back(to_actions(random_traj(rng)));
  const ActionNormalizer n = ActionNormalizer::fit(data);
  EXPECT_NEAR(n.data_std, 1.0, 1e-9);
  const ActionSequence back = n.decode(n.encode(data[3]));
  for (std::size_t l = 0; l < kHorizon; ++l) EXPECT_LE((back.deltas[l] - data[3].deltas[l]).norm(), 1e-12);
  // A single repeated sequence has no spread at all.
  EXPECT_NEAR(ActionNormalizer::fit(std::vector<ActionSequence>(3, data[0])).data_std, 0.0, 1e-12);
}

TEST(ReverseStep, HandEvaluatedScalarStep) {
  // ε̂ = 0, z = 0, α = 0.81: x_{t-1} = 0.9 / sqrt(0.81) = 1.0
  const std::vector<double> x{0.9}, eps{0.0};
  EXPECT_NEAR(reverse_mean(x, eps, 0.81, 0.81)[0], 1.0, 1e-15);
  const std::vector<double> zero{0.0};
  EXPECT_EQ(reverse_mean(zero, eps, 0.81, 0.5)[0], 0.0);
}

TEST(ReverseStep, LogProbAtModeUnitVariance) {
  const std::vector<double> a{0.3};
  EXPECT_NEAR(gaussian_log_prob(a, a, 1.0), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(gaussian_log_prob(a, a, 1.0), -0.9189, 1e-4);
}

TEST(ReverseStep, ZeroNetZeroInputIsFixedPoint) {
  DiffusionPolicy p = small_policy(1);
  zero_params(p);
  const ReverseStep r = reverse_step(p, Latent{}, 5, Observation{}, Latent{});
  for (double v : r.next) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(reverse_step(p, Latent{}, 0, Observation{}, Latent{}), std::out_of_range);
  EXPECT_THROW(reverse_step(p, Latent{}, 11, Observation{}, Latent{}), std::out_of_range);
}

TEST(ReverseStep, MatchesIndependentFormula) {
  DiffusionPolicy p = small_policy(2);
  Rng rng(3);
  const Observation obs = random_obs(rng);
  const Latent x = draw_latent(rng), z = draw_latent(rng);
  const int t = 4;
  const ReverseStep r = reverse_step(p, x, t, obs, z);
  Tensor in = Tensor::zeros(1, kDenoiserInput);
  fill_denoiser_row(p, in.data, x, t, obs);
  const Tensor eps = predict_noise_eval(p, in);
  const double a = p.schedule.alpha(t), ab = p.schedule.alpha_bar(t), sd = std::sqrt(p.schedule.beta(t));
  double sq = 0.0;
  for (std::size_t i = 0; i < kActionDim; ++i) {
    const double mu = (x[i] - (1 - a) / std::sqrt(1 - ab) * eps.data[i]) / std::sqrt(a);
    EXPECT_NEAR(r.next[i], mu + sd * z[i], 1e-12);
    sq += (r.next[i] - mu) * (r.next[i] - mu);
  }
  EXPECT_NEAR(r.log_prob, -sq / (2 * sd * sd) - 8.0 * std::log(2 * std::numbers::pi * sd * sd), 1e-9);
}

TEST(Pretrain, PerfectPredictorGivesZeroLoss) {
  Rng rng(1);
  Tensor eps = Tensor::zeros(6, kActionDim);
  for (double& v : eps.data) v = standard_normal(rng);
  Tape tape;
  EXPECT_EQ(denoising_loss(tape, tape.constant(eps), eps).value().item(), 0.0);
}

TEST(Pretrain, ZeroNetLossIsDimensionCount) {
  DiffusionPolicy p = small_policy(1);
  zero_params(p);
  Rng rng(2);
  std::vector<DenoisingSample> samples(2000);
  for (auto& s : samples) {
    s.obs = random_obs(rng);
    s.x0 = draw_latent(rng);
  }
  // 5 repeats x 2000 samples = 10^4 draws.
  const double loss = estimate_denoising_loss(p, samples, 17, 5);
  EXPECT_NEAR(loss, static_cast<double>(kActionDim), 0.05 * kActionDim);
}

TEST(Pretrain, LossGradientMatchesFiniteDifferences) {
  DiffusionPolicy p = DiffusionPolicy::create(DenoiserConfig{12, 2, Activation::tanh}, build_schedule(10, 1e-4, 0.2),
                                              ActionNormalizer{}, 1e-3, 5);
  Rng rng(6);
  std::vector<DenoisingSample> batch(3);
  for (auto& s : batch) {
    s.obs = random_obs(rng);
    s.x0 = draw_latent(rng);
  }
  const auto draws = draw_denoising_noise(batch.size(), p.steps(), rng);
  const LossBuilder build = [&](Tape& tape, const ParamSet& ps) {
    Tensor inputs = Tensor::zeros(batch.size(), kDenoiserInput);
    Tensor eps = Tensor::zeros(batch.size(), kActionDim);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double ab = p.schedule.alpha_bar(draws[i].t);
      Latent noisy{};
      for (std::size_t d = 0; d < kActionDim; ++d) {
        noisy[d] = std::sqrt(ab) * batch[i].x0[d] + std::sqrt(1 - ab) * draws[i].eps[d];
        eps(i, d) = draws[i].eps[d];
      }
      fill_denoiser_row(p, std::span<double>(inputs.data).subspan(i * kDenoiserInput, kDenoiserInput), noisy,
                        draws[i].t, batch[i].obs);
    }
    return denoising_loss(tape, mlp_forward(tape, ps, p.spec, tape.constant(inputs)), eps);
  };
  EXPECT_TRUE(grad_check(p.params, build, 1e-4).passed);
  // Same value as the library loss for the same draws.
  Tape t1, t2;
  EXPECT_NEAR(build(t1, p.params).value().item(), pretrain_loss(t2, p, batch, draws).value().item(), 1e-12);
}

TEST(Pretrain, NonFiniteLossSkipsStep) {
  DiffusionPolicy p = small_policy(1);
  std::vector<DenoisingSample> batch(2);
  batch[0].x0[0] = std::nan("");
  const ParamSet before = p.params;
  Rng rng(1);
  const TrainStepResult r = pretrain_step(p, batch, AdamConfig{}, rng);
  EXPECT_FALSE(r.applied);
  EXPECT_TRUE(p.params.same_values(before));
  EXPECT_THROW(pretrain_step(p, std::vector<DenoisingSample>{}, AdamConfig{}, rng), std::invalid_argument);
}

TEST(SampleGroup, SharedInitialNoiseIndependentOfSigmaFloor) {
  DiffusionPolicy lo = small_policy(4), hi = small_policy(4);
  lo.sigma_min = 1e-6;
  hi.sigma_min = 10.0;
  Rng rng(8);
  const Observation obs = random_obs(rng);
  const RolloutGroup a = sample_group(lo, obs, 4, 99), b = sample_group(hi, obs, 4, 99);
  EXPECT_EQ(a.initial_noise, b.initial_noise);
  for (const auto* g : {&a, &b}) {
    for (const DenoisingRollout& r : g->members) EXPECT_EQ(r.latents.front(), g->initial_noise);
  }
  EXPECT_NE(a.members[0].terminal, b.members[0].terminal);
  EXPECT_THROW(sample_group(lo, obs, 0, 1), std::invalid_argument);
}

TEST(SampleGroup, ZeroStepNoiseCollapsesGroup) {
  DiffusionPolicy p = small_policy(5);
  Rng rng(9);
  const RolloutGroup g = sample_group(p, random_obs(rng), 6, 7, ChainNoise{true});
  for (const DenoisingRollout& r : g.members) EXPECT_EQ(r.latents, g.members[0].latents);
  const RolloutGroup noisy = sample_group(p, g.obs, 6, 7);
  EXPECT_NE(noisy.members[0].terminal, noisy.members[1].terminal);
}

TEST(SampleGroup, StoredLogProbsMatchDensityReevaluation) {
  DiffusionPolicy p = small_policy(6);
  Rng rng(10);
  const RolloutGroup g = sample_group(p, random_obs(rng), 3, 21);
  std::vector<const DenoisingRollout*> ptrs;
  for (const DenoisingRollout& r : g.members) {
    ASSERT_EQ(r.horizon(), 10);
    for (int t = 0; t < r.horizon(); ++t) {
      // ψ_{t+1} = (o, a_t)
      if (t + 1 < r.horizon()) {
        EXPECT_EQ(r.state(t + 1), r.action(t));
      }
      const int level = r.noise_level(t);
      Tensor in = Tensor::zeros(1, kDenoiserInput);
      fill_denoiser_row(p, in.data, r.state(t), level, r.obs);
      const Tensor eps = predict_noise_eval(p, in);
      const auto mu = reverse_mean(r.state(t), eps.data, p.schedule.alpha(level), p.schedule.alpha_bar(level));
      EXPECT_NEAR(r.log_probs[static_cast<std::size_t>(t)], gaussian_log_prob(r.action(t), mu, p.step_std(level)), 1e-9);
      // reproducible from the stored noise
      const ReverseStep again = reverse_step(p, r.state(t), level, r.obs, r.step_noise[static_cast<std::size_t>(t)]);
      for (std::size_t i = 0; i < kActionDim; ++i) EXPECT_NEAR(again.next[i], r.action(t)[i], 1e-12);
    }
    EXPECT_TRUE(std::isfinite(r.total_log_prob()));
    ptrs.push_back(&r);
  }
  // The differentiable re-evaluation agrees with the stored values.
  const TransitionBatch batch = make_transition_batch(p, ptrs);
  Tape tape;
  const Tensor lp = transition_log_probs(tape, p, batch).value();
  for (std::size_t r = 0; r < ptrs.size(); ++r) {
    for (std::size_t t = 0; t < 10; ++t) {
      EXPECT_NEAR(lp.data[r * 10 + t], ptrs[r]->log_probs[t], 1e-8);
    }
  }
}

TEST(SampleGroup, TransitionLogProbGradientMatchesFiniteDifferences) {
  DiffusionPolicy p = DiffusionPolicy::create(DenoiserConfig{10, 2, Activation::tanh}, build_schedule(4, 1e-2, 0.2),
                                              ActionNormalizer{}, 1e-3, 12);
  Rng rng(12);
  const RolloutGroup g = sample_group(p, random_obs(rng), 2, 5);
  std::vector<const DenoisingRollout*> ptrs{&g.members[0], &g.members[1]};
  const TransitionBatch batch = make_transition_batch(p, ptrs);
  const LossBuilder build = [&](Tape& tape, const ParamSet& ps) {
    Var eps = mlp_forward(tape, ps, p.spec, tape.constant(batch.inputs));
    Var diff = ops::add(tape.constant(batch.offset), ops::mul(eps, tape.constant(batch.eps_coef)));
    Var lp = ops::sub(ops::mul(ops::row_sum(ops::square(diff)), tape.constant(batch.neg_inv_two_var)),
                      tape.constant(batch.log_norm));
    return ops::mean(lp);
  };
  const GradCheckReport rep = grad_check(p.params, build, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_param << " " << rep.worst;
}

TEST(Sampling, MinOverCandidatesNeverWorseThanFirst) {
  DiffusionPolicy p = small_policy(7);
  Rng rng(13);
  for (int i = 0; i < 10; ++i) {
    const Observation obs = random_obs(rng);
    const Trajectory target = random_traj(rng);
    const auto cands = sample_trajectories(p, obs, 6, 100 + i);
    auto ade = [&](const Trajectory& t) {
      double s = 0;
      for (std::size_t l = 0; l < kHorizon; ++l) s += (t[l] - target[l]).norm();
      return s / kHorizon;
    };
    double best = 1e300;
    for (const auto& c : cands) best = std::min(best, ade(c));
    EXPECT_LE(best, ade(cands[0]));
  }
}

TEST(Sampling, DeterministicGivenSeed) {
  DiffusionPolicy p = small_policy(8);
  const RolloutGroup a = sample_group(p, Observation{}, 3, 42), b = sample_group(p, Observation{}, 3, 42);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.members[k].latents, b.members[k].latents);
}

TEST(PolicyCheckpoint, RoundTripAndValidation) {
  const auto dir = std::filesystem::temp_directory_path() / "prefdiff_policy_test";
  std::filesystem::create_directories(dir);
  Rng rng(1);
  std::vector<ActionSequence> acts;
  for (int i = 0; i < 10; ++i) acts.push_back(to_actions(random_traj(rng)));
  DiffusionPolicy p = DiffusionPolicy::create(DenoiserConfig{24, 3, Activation::tanh}, build_schedule(6, 1e-3, 0.1),
                                              ActionNormalizer::fit(acts), 2e-3, 3);
  save_policy(p, dir / "p.ckpt");
  const DiffusionPolicy q = load_policy(dir / "p.ckpt");
  EXPECT_TRUE(q.params.same_values(p.params));
  EXPECT_EQ(q.schedule.betas, p.schedule.betas);
  EXPECT_EQ(q.normalizer.shift, p.normalizer.shift);
  EXPECT_EQ(q.normalizer.data_std, p.normalizer.data_std);
  EXPECT_EQ(q.sigma_min, p.sigma_min);
  EXPECT_EQ(q.spec.widths, p.spec.widths);
  const RolloutGroup a = sample_group(p, Observation{}, 2, 1), b = sample_group(q, Observation{}, 2, 1);
  EXPECT_EQ(a.members[1].latents, b.members[1].latents);

  Checkpoint bad = policy_checkpoint(p, false);
  bad.meta["policy.hidden"] = 25;
  try {
    policy_from_checkpoint(bad);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("denoiser.l0."), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace prefdiff
