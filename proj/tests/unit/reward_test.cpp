#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "prefdiff/autodiff/gradcheck.hpp"
#include "prefdiff/diffusion/pretrain.hpp"
#include "prefdiff/eval/metrics.hpp"
#include "prefdiff/reward/autoencoder.hpp"
#include "prefdiff/reward/model.hpp"
#include "prefdiff/world/generate.hpp"

namespace prefdiff {
namespace {

double mean_speed(const Trajectory& t) {
  const auto v = step_speeds(t);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Straight-ish path at constant speed with a small lateral wiggle.
Trajectory cruise(double speed, double wiggle, Rng& rng) {
  Trajectory t;
  Vec2 p{};
  for (std::size_t l = 0; l < kHorizon; ++l) {
    p = p + Vec2{speed * kStepSeconds, uniform(rng, -wiggle, wiggle)};
    t[l] = p;
  }
  return t;
}

ActionSequence random_actions(Rng& rng) {
  ActionSequence a;
  for (Vec2& d : a.deltas) d = {uniform(rng, 2.0, 8.0), uniform(rng, -0.5, 0.5)};
  return a;
}

// ---- margin loss ------------------------------------------------------------

TEST(BtMarginLoss, HandValues) {
  EXPECT_NEAR(bt_margin_loss(0.3, 0.3, 1.0), std::log(2.0) + 1.0, 1e-12);
  EXPECT_NEAR(bt_margin_loss(10.0, 0.0, 1.0), std::log1p(std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(bt_margin_loss(10.0, 0.0, 1.0), 4.54e-5, 1e-7);
}

TEST(BtMarginLoss, MonotonePositiveShiftInvariant) {
  double prev = std::numeric_limits<double>::infinity();
  for (double d = -20.0; d <= 40.0; d += 0.25) {
    const double l = bt_margin_loss(d, 0.0);
    EXPECT_LE(l, prev);
    EXPECT_GT(l, 0.0);
    prev = l;
    for (double c : {-7.0, 0.5, 1e3}) EXPECT_NEAR(bt_margin_loss(d + c, c), l, 1e-9 * std::max(1.0, std::abs(c)));
  }
}

TEST(BtMarginLoss, TensorFormMatchesScalar) {
  Tape tape;
  Tensor rc = Tensor::zeros(3, 1), ri = Tensor::zeros(3, 1);
  rc.data = {0.0, 2.0, 0.2};
  ri.data = {0.0, -1.0, 0.7};
  const double v = bt_margin_loss(tape.constant(rc), tape.constant(ri)).value().item();
  double want = 0.0;
  for (int i = 0; i < 3; ++i) want += bt_margin_loss(rc.data[i], ri.data[i]) / 3.0;
  EXPECT_NEAR(v, want, 1e-14);
}

// ---- style-transfer autoencoder --------------------------------------------

TEST(StyleLoss, PureReconstructionFixedPoint) {
  Rng rng(3);
  std::vector<ActionSequence> raw, chosen;
  for (int i = 0; i < 5; ++i) {
    raw.push_back(random_actions(rng));
    chosen.push_back(random_actions(rng));
  }
  Tape tape;
  const Tensor r = stack_actions(raw);
  EXPECT_EQ(style_transfer_loss(tape, tape.constant(r), r, stack_actions(chosen), 0.0).value().item(), 0.0);
}

TEST(StyleLoss, ZeroStyleGapWhenVelocityStatsMatch) {
  Rng rng(4);
  std::vector<ActionSequence> xi, chosen;
  for (int i = 0; i < 4; ++i) {
    ActionSequence a = random_actions(rng);
    xi.push_back(a);
    // mirrored laterally and time-reversed: same per-step speeds
    ActionSequence m;
    for (std::size_t l = 0; l < kHorizon; ++l) m.deltas[l] = {a.deltas[kHorizon - 1 - l].x, -a.deltas[kHorizon - 1 - l].y};
    chosen.push_back(m);
  }
  Tape tape;
  const Tensor x = stack_actions(xi);
  EXPECT_NEAR(style_transfer_loss(tape, tape.constant(x), x, stack_actions(chosen), 1.0).value().item(), 0.0, 1e-10);
}

TEST(StyleLoss, VelocityStatsHandValues) {
  ActionSequence a;
  for (std::size_t l = 0; l < kHorizon; ++l) a.deltas[l] = {l < 4 ? 3.0 : 0.0, l < 4 ? 4.0 : 5.0};
  // speeds: 10 m/s for every step
  Tape tape;
  const auto [m, s] = velocity_stats(tape.constant(stack_actions(std::vector<ActionSequence>{a})));
  EXPECT_NEAR(m.value().item(), 10.0, 1e-9);
  EXPECT_NEAR(s.value().item(), 0.0, 1e-5);
  ActionSequence b;
  for (std::size_t l = 0; l < kHorizon; ++l) b.deltas[l] = {l % 2 ? 1.0 : 3.0, 0.0};
  Tape t2;
  const auto [m2, s2] = velocity_stats(t2.constant(stack_actions(std::vector<ActionSequence>{b})));
  EXPECT_NEAR(m2.value().item(), 4.0, 1e-9);
  EXPECT_NEAR(s2.value().item(), 2.0, 1e-9);
}

TEST(StyleAutoencoderTest, ShapeAndGradientMatchesFiniteDifferences) {
  StyleAutoencoder ae = StyleAutoencoder::create(8);
  Rng rng(9);
  std::vector<ActionSequence> raw, chosen;
  for (int i = 0; i < 6; ++i) {
    raw.push_back(random_actions(rng));
    chosen.push_back(random_actions(rng));
  }
  const Tensor r = stack_actions(raw), c = stack_actions(chosen);
  {
    Tape tape;
    const Var out = ae.forward(tape, ae.params, r);
    EXPECT_EQ(out.rows(), r.rows());
    EXPECT_EQ(out.cols(), r.cols());
  }
  const LossBuilder build = [&](Tape& tape, const ParamSet& ps) { return autoencoder_loss(tape, ae, ps, r, c, 0.3); };
  const GradCheckReport rep = grad_check(ae.params, build, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_param << " " << rep.worst;
}

TEST(StyleAutoencoderTest, TrainingReducesLossAndRoundTrips) {
  Rng rng(10);
  std::vector<ActionSequence> raw, chosen;
  for (int i = 0; i < 128; ++i) {
    raw.push_back(random_actions(rng));
    chosen.push_back(random_actions(rng));
  }
  StyleAutoencoder ae = StyleAutoencoder::create(11);
  AeTrainConfig cfg;
  cfg.epochs = 40;
  const AeTrainReport rep = train_style_autoencoder(ae, raw, chosen, cfg);
  ASSERT_FALSE(rep.aborted) << rep.message;
  EXPECT_LT(rep.epoch_losses.back(), 0.5 * rep.initial_loss);

  const StyleAutoencoder back = autoencoder_from_checkpoint(decode_checkpoint(encode_checkpoint(autoencoder_checkpoint(ae))));
  EXPECT_EQ(back.reconstruct(raw[0]), ae.reconstruct(raw[0]));
  EXPECT_THROW(train_style_autoencoder(ae, {}, {}, cfg), std::invalid_argument);
}

TEST(StyleAutoencoderTest, DivergenceAborts) {
  Rng rng(12);
  std::vector<ActionSequence> raw, chosen;
  for (int i = 0; i < 32; ++i) {
    raw.push_back(random_actions(rng));
    chosen.push_back(random_actions(rng));
  }
  StyleAutoencoder ae = StyleAutoencoder::create(13);
  AeTrainConfig cfg;
  cfg.epochs = 5;
  cfg.adam.lr = 1e3;
  cfg.divergence_factor = 1.0;  // any epoch above the initial loss trips it
  const AeTrainReport rep = train_style_autoencoder(ae, raw, chosen, cfg);
  EXPECT_TRUE(rep.aborted);
  EXPECT_NE(rep.message.find("diverged"), std::string::npos);
}

// ---- pair synthesis ----------------------------------------------------------

struct PairFixture {
  DiffusionPolicy policy;
  std::vector<Scenario> preference;
};

const PairFixture& pair_fixture() {
  static const PairFixture f = [] {
    PairFixture out;
    const auto train = generate_scenarios(21, 256, MixtureWeights{1.0, 0.0, 0.0});
    std::vector<Observation> obs;
    std::vector<Trajectory> gt;
    std::vector<ActionSequence> acts;
    for (const Scenario& s : train) {
      obs.push_back(s.obs);
      gt.push_back(s.gt);
      acts.push_back(to_actions(s.gt));
    }
    out.policy = DiffusionPolicy::create(DenoiserConfig{64, 2, Activation::relu}, build_schedule(10, 1e-4, 0.2),
                                         ActionNormalizer::fit(acts), 1e-3, 22);
    SupervisedConfig sc;
    sc.epochs = 60;
    sc.adam.lr = 1e-3;
    train_denoiser(out.policy, make_denoising_samples(out.policy.normalizer, obs, gt), sc);
    out.preference = generate_scenarios(23, 10, MixtureWeights{0.0, 1.0, 0.0}, "pref");
    return out;
  }();
  return f;
}

TEST(SynthesizePairs, CardinalityAndIdentityStub) {
  const PairFixture& f = pair_fixture();
  const Reconstructor identity = [](const ActionSequence& a) { return a; };
  const auto pairs = synthesize_pairs(f.preference, f.policy, identity, 3, 5);
  ASSERT_EQ(pairs.size(), 30u);
  for (std::size_t j = 0; j < f.preference.size(); ++j) {
    const auto raw = sample_trajectories(f.policy, f.preference[j].obs, 3, derive_seed(5, {j}));
    for (std::size_t k = 0; k < 3; ++k) {
      const PreferencePair& p = pairs[j * 3 + k];
      EXPECT_EQ(p.chosen, f.preference[j].gt);
      EXPECT_EQ(p.obs, f.preference[j].obs);
      // to_actions/to_states round trip may reorder additions
      for (std::size_t l = 0; l < kHorizon; ++l) EXPECT_NEAR((p.ignored[l] - raw[k][l]).norm(), 0.0, 1e-9);
      EXPECT_EQ(p.provenance, Provenance::reconstructed);
    }
  }
}

TEST(SynthesizePairs, InvalidReconstructionFallsBackToRaw) {
  const PairFixture& f = pair_fixture();
  const Reconstructor broken = [](const ActionSequence&) {
    ActionSequence a;
    a.deltas[0] = {std::nan(""), 0.0};
    return a;
  };
  const auto pairs = synthesize_pairs(std::span(f.preference).first(2), f.policy, broken, 2, 5);
  ASSERT_EQ(pairs.size(), 4u);
  for (const PreferencePair& p : pairs) {
    EXPECT_EQ(p.provenance, Provenance::raw);
    EXPECT_TRUE(p.ignored.valid());
  }
}

TEST(SynthesizePairs, ReconstructionMovesVelocityMeanTowardChosen) {
  const PairFixture& f = pair_fixture();
  // autoencoder trained on (policy sample, gt) action pairs of a larger aggressive pool
  const auto pool = generate_scenarios(24, 60, MixtureWeights{0.0, 1.0, 0.0}, "pool");
  std::vector<ActionSequence> raw, chosen;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    for (const Trajectory& t : sample_trajectories(f.policy, pool[j].obs, 3, derive_seed(25, {j}))) {
      raw.push_back(to_actions(t));
      chosen.push_back(to_actions(pool[j].gt));
    }
  }
  StyleAutoencoder ae = StyleAutoencoder::create(26);
  AeTrainConfig cfg;
  cfg.epochs = 300;
  const AeTrainReport rep = train_style_autoencoder(ae, raw, chosen, cfg);
  ASSERT_FALSE(rep.aborted) << rep.message;

  const Reconstructor identity = [](const ActionSequence& a) { return a; };
  const Reconstructor recon = [&](const ActionSequence& a) { return ae.reconstruct(a); };
  const auto raw_pairs = synthesize_pairs(f.preference, f.policy, identity, 3, 7);
  const auto rec_pairs = synthesize_pairs(f.preference, f.policy, recon, 3, 7);
  double raw_gap = 0.0, rec_gap = 0.0;
  for (std::size_t i = 0; i < raw_pairs.size(); ++i) {
    const double vc = mean_speed(raw_pairs[i].chosen);
    raw_gap += std::abs(mean_speed(raw_pairs[i].ignored) - vc);
    rec_gap += std::abs(mean_speed(rec_pairs[i].ignored) - vc);
  }
  EXPECT_LT(rec_gap, raw_gap) << "raw " << raw_gap / 30 << " reconstructed " << rec_gap / 30;
}

TEST(PairIo, JsonLinesRoundTripAndErrors) {
  Rng rng(30);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 3; ++i) {
    PreferencePair p;
    p.id = "p" + std::to_string(i);
    for (double& v : p.obs) v = uniform(rng, -1, 1);
    p.chosen = cruise(10, 0.2, rng);
    p.ignored = cruise(7, 0.2, rng);
    p.provenance = static_cast<Provenance>(i);
    pairs.push_back(p);
  }
  const auto path = std::filesystem::temp_directory_path() / "prefdiff_pairs_test.jsonl";
  write_pairs(path, pairs);
  const auto back = read_pairs(path);
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, pairs[i].id);
    EXPECT_EQ(back[i].obs, pairs[i].obs);
    EXPECT_EQ(back[i].chosen, pairs[i].chosen);
    EXPECT_EQ(back[i].ignored, pairs[i].ignored);
    EXPECT_EQ(back[i].provenance, pairs[i].provenance);
  }
  EXPECT_EQ(pair_to_json(pairs[2])["provenance"], "live-annotated");
  Json bad = pair_to_json(pairs[0]);
  bad["provenance"] = "imagined";
  EXPECT_THROW(pair_from_json(bad), DatasetError);
  bad.erase("provenance");
  EXPECT_THROW(pair_from_json(bad), DatasetError);
  std::filesystem::remove(path);
}

// ---- reward model -----------------------------------------------------------

std::vector<PreferencePair> speed_pairs(std::size_t n, std::uint64_t seed, bool shuffle_labels) {
  const auto scen = generate_scenarios(seed, n, MixtureWeights{});
  Rng rng(seed + 1);
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = uniform(rng, 4.0, 16.0);
    const double hi = lo + uniform(rng, 1.0, 5.0);
    PreferencePair p;
    p.id = "sp" + std::to_string(i);
    p.obs = scen[i].obs;
    p.chosen = cruise(hi, 0.3, rng);
    p.ignored = cruise(lo, 0.3, rng);
    if (shuffle_labels && uniform(rng, 0.0, 1.0) < 0.5) std::swap(p.chosen, p.ignored);
    out.push_back(p);
  }
  return out;
}

TEST(RewardModelTest, SeparableSpeedPreferenceIsLearned) {
  const auto pairs = speed_pairs(1000, 40, false);
  RewardModel m = RewardModel::create(RewardConfig{}, 41);
  RewardTrainConfig cfg;
  cfg.seed = 42;
  const RewardTrainReport rep = train_reward_model(m, pairs, cfg);
  EXPECT_EQ(rep.heldout_pairs, 100u);
  EXPECT_GE(rep.accuracy, 0.9);
  EXPECT_FALSE(rep.flagged);
  EXPECT_GE(rep.best_epoch, 1u);
  EXPECT_LE(rep.epochs_run, 30u);
}

TEST(RewardModelTest, ShuffledLabelsGiveChanceAccuracy) {
  const auto pairs = speed_pairs(2000, 50, true);
  RewardModel m = RewardModel::create(RewardConfig{}, 51);
  RewardTrainConfig cfg;
  cfg.seed = 52;
  const RewardTrainReport rep = train_reward_model(m, pairs, cfg);
  EXPECT_EQ(rep.heldout_pairs, 200u);
  EXPECT_NEAR(rep.accuracy, 0.5, 0.1);
}

TEST(RewardModelTest, AccuracyIsAntisymmetricInPairOrder) {
  const auto pairs = speed_pairs(50, 60, true);
  const RewardModel m = RewardModel::create(RewardConfig{64, 2}, 61);
  std::vector<PreferencePair> swapped = pairs;
  for (PreferencePair& p : swapped) std::swap(p.chosen, p.ignored);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double a = pairwise_accuracy(m, std::span(pairs).subspan(i, 1));
    const double b = pairwise_accuracy(m, std::span(swapped).subspan(i, 1));
    EXPECT_EQ(a + b, 1.0);  // continuous scores: ties have probability zero
  }
}

TEST(RewardModelTest, ScoresFiniteBatchConsistentAndCheckpointed) {
  const auto pairs = speed_pairs(4, 70, false);
  const RewardModel m = RewardModel::create(RewardConfig{32, 2}, 71);
  std::vector<Trajectory> trajs{pairs[0].chosen, pairs[0].ignored};
  const auto batch = m.score(pairs[0].obs, trajs);
  ASSERT_EQ(batch.size(), 2u);
  EXPECT_TRUE(std::isfinite(batch[0]));
  EXPECT_DOUBLE_EQ(batch[1], m.score(pairs[0].obs, pairs[0].ignored));
  const RewardModel back = reward_from_checkpoint(decode_checkpoint(encode_checkpoint(reward_checkpoint(m))));
  EXPECT_EQ(back.spec.widths, m.spec.widths);
  EXPECT_EQ(back.score(pairs[1].obs, pairs[1].chosen), m.score(pairs[1].obs, pairs[1].chosen));
}

TEST(RewardModelTest, LossGradientMatchesFiniteDifferences) {
  const auto pairs = speed_pairs(6, 80, false);
  const RewardModel m = RewardModel::create(RewardConfig{16, 2}, 81);
  std::vector<const PreferencePair*> ptrs;
  for (const PreferencePair& p : pairs) ptrs.push_back(&p);
  const PairBatch b = make_pair_batch(ptrs);
  const LossBuilder build = [&](Tape& tape, const ParamSet& ps) { return reward_pair_loss(tape, m, ps, b, 1.0); };
  const GradCheckReport rep = grad_check(m.params, build, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_param << " " << rep.worst;
}

TEST(RewardModelTest, TooFewPairsRejected) {
  RewardModel m = RewardModel::create(RewardConfig{8, 1}, 1);
  EXPECT_THROW(train_reward_model(m, speed_pairs(19, 90, false), RewardTrainConfig{}), std::invalid_argument);
}

}  // namespace
}  // namespace prefdiff
