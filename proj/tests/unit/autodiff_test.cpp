#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "prefdiff/autodiff/adam.hpp"
#include "prefdiff/autodiff/checkpoint.hpp"
#include "prefdiff/autodiff/gradcheck.hpp"
#include "prefdiff/autodiff/mlp.hpp"
#include "prefdiff/rng.hpp"

namespace prefdiff {
namespace {

MlpSpec one_by_one(Activation act = Activation::relu) {
  return MlpSpec{{1, 1, 1}, act, "m"};
}

ParamSet one_by_one_params(double w0, double b0) {
  ParamSet p;
  p.add("m.l0.w", Tensor({1, 1}, {w0}));
  p.add("m.l0.b", Tensor({1, 1}, {b0}));
  p.add("m.l1.w", Tensor({1, 1}, {1.0}));
  p.add("m.l1.b", Tensor({1, 1}, {0.0}));
  return p;
}

TEST(MlpForward, ZeroWeightsGiveZeroOutput) {
  MlpSpec spec{{3, 4, 2}, Activation::relu, "z"};
  ParamSet p;
  Rng rng(1);
  init_mlp(p, spec, rng);
  for (const auto& [name, e] : p.entries()) {
    Tensor& v = p.mutable_value(name);
    std::fill(v.data.begin(), v.data.end(), 0.0);
  }
  const Tensor out = mlp_eval(p, spec, Tensor({2, 3}, {1, -2, 3, 0.5, 7, -1}));
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityAndNegativePreactivation) {
  EXPECT_DOUBLE_EQ(mlp_eval(one_by_one_params(1.0, 0.0), one_by_one(), Tensor::scalar(2.0)).item(), 2.0);
  // 3*0 - 1 = -1 -> ReLU -> 0
  EXPECT_DOUBLE_EQ(mlp_eval(one_by_one_params(3.0, -1.0), one_by_one(), Tensor::scalar(0.0)).item(), 0.0);
}

TEST(MlpForward, ShapeMismatchIsRejected) {
  MlpSpec spec{{3, 4, 2}, Activation::relu, "z"};
  ParamSet p;
  Rng rng(1);
  init_mlp(p, spec, rng);
  Tape tape;
  try {
    mlp_forward(tape, p, spec, tape.constant(Tensor::zeros(1, 5)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("5 columns"), std::string::npos);
  }
}

TEST(Backward, LinearProductRule) {
  ParamSet p;
  p.add("w", Tensor::scalar(0.7));
  Tape tape;
  Var y = ops::matmul(tape.constant(Tensor::scalar(2.0)), tape.parameter(p, "w"));
  const Grads g = tape.backward(y);
  EXPECT_DOUBLE_EQ(g.at("w").item(), 2.0);
}

TEST(Backward, ReluGateBlocksNegativePreactivation) {
  ParamSet p = one_by_one_params(3.0, -1.0);
  Tape tape;
  Var y = mlp_forward(tape, p, one_by_one(), tape.constant(Tensor::scalar(0.0)));
  const Grads g = tape.backward(y);
  EXPECT_EQ(g.at("m.l0.w").item(), 0.0);
  EXPECT_EQ(g.at("m.l0.b").item(), 0.0);
}

TEST(Backward, UnreachedParametersGetZero) {
  ParamSet p;
  p.add("used", Tensor::scalar(1.5));
  p.add("unused", Tensor::zeros(2, 3));
  Tape tape;
  Var y = ops::square(tape.parameter(p, "used"));
  const Grads g = tape.backward(y);
  EXPECT_DOUBLE_EQ(g.at("used").item(), 3.0);
  ASSERT_EQ(g.at("unused").size(), 6u);
  for (double v : g.at("unused").data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ReusedTapeIsRejected) {
  ParamSet p;
  p.add("w", Tensor::scalar(1.0));
  Tape tape;
  Var y = ops::square(tape.parameter(p, "w"));
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Backward, StaleTapeIsRejected) {
  ParamSet p;
  p.add("w", Tensor::scalar(1.0));
  Tape tape;
  Var y = ops::square(tape.parameter(p, "w"));
  adam_step(p, {{"w", Tensor::scalar(1.0)}}, AdamConfig{});
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Backward, OutputGradShapeMustMatch) {
  ParamSet p;
  p.add("w", Tensor::zeros(1, 3));
  Tape tape;
  Var y = ops::relu(tape.parameter(p, "w"));
  EXPECT_THROW(tape.backward(y, Tensor::zeros(1, 2)), ShapeError);
}

// Every op in the vocabulary against central differences.
TEST(Backward, OpVocabularyMatchesFiniteDifferences) {
  Rng rng(7);
  ParamSet p;
  auto rnd = [&](std::size_t r, std::size_t c, double lo, double hi) {
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.data) v = uniform(rng, lo, hi);
    return t;
  };
  p.add("a", rnd(3, 4, -1, 1));
  p.add("b", rnd(4, 2, -1, 1));
  p.add("c", rnd(1, 2, -1, 1));
  p.add("col", rnd(3, 1, -1, 1));
  p.add("pos", rnd(3, 2, 0.5, 2.0));
  const LossBuilder build = [](Tape& t, const ParamSet& ps) {
    Var a = t.parameter(ps, "a");
    Var h = ops::affine(a, t.parameter(ps, "b"), t.parameter(ps, "c"));       // 3x2
    Var m = ops::mul(ops::tanh(h), t.parameter(ps, "col"));                    // col broadcast
    Var s = ops::sub(ops::softplus(m), ops::log_sigmoid(ops::scale(h, 0.5)));  //
    Var q = ops::add(ops::square(s), ops::log(t.parameter(ps, "pos")));
    Var r = ops::sqrt(ops::shift(ops::square(ops::reshape(q, 2, 3)), 1.0));
    Var cat = ops::concat_cols({r, ops::row_mean(r), ops::row_sum(ops::relu(r))});
    return ops::add(ops::mean(cat), ops::sum(ops::matmul(a, t.parameter(ps, "b"))));
  };
  const GradCheckReport rep = grad_check(p, build, 1e-6);
  EXPECT_TRUE(rep.passed) << rep.worst_param << " " << rep.worst;
}

TEST(GradCheck, QuadraticLossIsExact) {
  ParamSet p;
  p.add("theta", Tensor({1, 4}, {0.3, -1.2, 2.5, 0.0}));
  const LossBuilder build = [](Tape& t, const ParamSet& ps) { return ops::sum(ops::square(t.parameter(ps, "theta"))); };
  Tape tape;
  const Grads g = tape.backward(build(tape, p));
  const Tensor& th = p.value("theta");
  for (std::size_t i = 0; i < th.size(); ++i) EXPECT_DOUBLE_EQ(g.at("theta").data[i], 2.0 * th.data[i]);
  EXPECT_LT(grad_check(p, build, 1e-8).worst, 1e-8);
}

TEST(GradCheck, RandomTwoLayerNets) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (Activation act : {Activation::relu, Activation::tanh}) {
      MlpSpec spec{{5, 16, 16, 3}, act, "net"};
      ParamSet p;
      Rng rng(seed);
      init_mlp(p, spec, rng);
      Tensor x = Tensor::zeros(4, 5);
      for (double& v : x.data) v = standard_normal(rng);
      const LossBuilder build = [&](Tape& t, const ParamSet& ps) {
        return ops::mean(ops::square(mlp_forward(t, ps, spec, t.constant(x))));
      };
      const GradCheckReport rep = grad_check(p, build, 1e-4);
      EXPECT_TRUE(rep.passed) << "seed " << seed << " " << rep.worst_param << " " << rep.worst;
    }
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamSet p;
  p.add("w", Tensor({1, 3}, {0.5, -2.0, 3.0}));
  const Tensor before = p.value("w");
  for (int i = 0; i < 5; ++i) {
    ASSERT_TRUE(adam_step(p, p.zero_grads(), AdamConfig{}).applied);
  }
  EXPECT_EQ(p.value("w"), before);
  EXPECT_EQ(p.step(), 5);
}

TEST(Adam, FirstStepHandEvaluation) {
  ParamSet p;
  p.add("w", Tensor::scalar(0.0));
  adam_step(p, {{"w", Tensor::scalar(1.0)}}, AdamConfig{1e-3, 0.9, 0.999, 1e-8});
  // m̂ = v̂ = 1 after bias correction: θ = -lr * 1 / (1 + eps)
  EXPECT_NEAR(p.value("w").item(), -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, DeterministicBitForBit) {
  auto run = [] {
    ParamSet p;
    p.add("w", Tensor({1, 2}, {0.1, 0.2}));
    for (int i = 0; i < 3; ++i) adam_step(p, {{"w", Tensor({1, 2}, {0.3, -0.7})}}, AdamConfig{});
    return p.value("w");
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  ParamSet p;
  p.add("w", Tensor::scalar(1.0));
  const AdamStepResult r = adam_step(p, {{"w", Tensor::scalar(std::nan(""))}}, AdamConfig{});
  EXPECT_FALSE(r.applied);
  EXPECT_NE(r.diagnostic.find("non-finite"), std::string::npos);
  EXPECT_EQ(p.value("w").item(), 1.0);
  EXPECT_EQ(p.step(), 0);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("prefdiff_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) +
                               "_" + std::to_string(::getpid()));
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointTest, RoundTripIsExact) {
  ParamSet p;
  Rng rng(3);
  init_mlp(p, MlpSpec{{4, 8, 2}, Activation::tanh, "n"}, rng);
  adam_step(p, p.zero_grads(), AdamConfig{});
  Checkpoint ck;
  store_params(ck, p, true);
  ck.meta["answer"] = 42.0;
  write_checkpoint(ck, dir / "a.ckpt");
  const Checkpoint back = read_checkpoint(dir / "a.ckpt");
  const ParamSet q = restore_params(back);
  EXPECT_TRUE(q.same_values(p));
  EXPECT_EQ(q.step(), 1);
  EXPECT_EQ(back.meta.at("answer"), 42.0);
  EXPECT_EQ(hash_params(q), hash_params(p));
  // byte-exact re-encode
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST_F(CheckpointTest, MismatchedShapeTableNamesTheParameter) {
  ParamSet saved;
  saved.add("layer.w", Tensor::zeros(2, 3));
  Checkpoint ck;
  store_params(ck, saved, false);
  write_checkpoint(ck, dir / "b.ckpt");
  ParamSet target;
  target.add("layer.w", Tensor::zeros(3, 2));
  try {
    load_params_into(target, read_checkpoint(dir / "b.ckpt"));
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
}

TEST_F(CheckpointTest, CorruptAndVersionMismatchFail) {
  ParamSet p;
  p.add("w", Tensor({1, 2}, {1.0, 2.0}));
  Checkpoint ck;
  store_params(ck, p, false);
  auto bytes = encode_checkpoint(ck);
  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0xFF;
  EXPECT_THROW(decode_checkpoint(corrupt), CheckpointError);
  auto wrong_version = bytes;
  wrong_version[4] = 99;
  try {
    decode_checkpoint(wrong_version);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

}  // namespace
}  // namespace prefdiff
