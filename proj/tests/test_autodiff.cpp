#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "support/gradcheck.hpp"
#include "tae/autodiff.hpp"
#include "tae/optimizer.hpp"
#include "tae/parameters.hpp"

using namespace tae;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected tae::Error";
  return ErrorCode::InvalidState;
}

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_EQ(code_of([] { Tensor(Shape{2, 3}, std::vector<double>(5)); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { Tensor(Shape{2, 0}); }), ErrorCode::ShapeMismatch);
}

TEST(Forward, MatmulByHand) {
  Tape t;
  Var c = matmul(t.constant(Tensor::matrix({{1, 2}, {3, 4}})), t.constant(Tensor::matrix({{1}, {1}})));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.value().values(), (std::vector<double>{3, 7}));
}

TEST(Forward, Relu) {
  Tape t;
  EXPECT_EQ(relu(t.constant(Tensor::vector({-1, 0, 2}))).value().values(), (std::vector<double>{0, 0, 2}));
}

TEST(Forward, SoftmaxCrossEntropyUniformLogits) {
  Tape t;
  const std::vector<std::size_t> target{0};
  Var l = softmax_cross_entropy(t.constant(Tensor::matrix({{0, 0}})), target);
  EXPECT_NEAR(l.value()[0], std::log(2.0), 1e-15);
}

TEST(Forward, SoftmaxCrossEntropyStableForHugeLogits) {
  Tape t;
  const std::vector<std::size_t> target{1};
  Var l = softmax_cross_entropy(t.constant(Tensor::matrix({{1000, 0}})), target);
  EXPECT_NEAR(l.value()[0], 1000.0, 1e-9);
}

TEST(Forward, ShapeErrorNamesOpAndShapes) {
  Tape t;
  try {
    matmul(t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 3})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
}

TEST(Backward, LinearGradient) {
  Tape t;
  Var w = t.leaf(Tensor::vector({2}));
  Var x = t.constant(Tensor::vector({3}));
  t.backward(dot(w, x));
  EXPECT_EQ(t.grad(w).values(), (std::vector<double>{3}));
}

TEST(Backward, DeadReluHasZeroGradient) {
  Tape t;
  Var w = t.leaf(Tensor::vector({-1}));
  t.backward(sum(relu(w)));
  EXPECT_EQ(t.grad(w)[0], 0.0);
}

TEST(Backward, RejectsNonScalarAndSecondCall) {
  Tape t;
  Var w = t.leaf(Tensor::vector({1, 2}));
  EXPECT_EQ(code_of([&] { t.backward(w); }), ErrorCode::ShapeMismatch);
  Var s = sum(w);
  t.backward(s);
  EXPECT_EQ(code_of([&] { t.backward(s); }), ErrorCode::InvalidState);
}

TEST(Backward, NonParticipatingParametersGetExactZero) {
  ParameterStore store;
  const auto a = store.add("a", Tensor::vector({1.5, -2}));
  store.add("unused", Tensor::vector({4, 5, 6}));
  Tape t;
  Var pa = t.param(store, a);
  t.backward(sum(mul(pa, pa)));
  const auto grads = t.param_grads(store);
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[0].values(), (std::vector<double>{3, -4}));
  EXPECT_EQ(grads[1].values(), (std::vector<double>{0, 0, 0}));
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  Rng rng(11);
  check::GradCase c;
  c.family = "mlp3";
  c.inputs = {check::detail::random_tensor(rng, {3, 4}), check::detail::random_tensor(rng, {4, 5}), check::detail::random_tensor(rng, {5}),
              check::detail::random_tensor(rng, {5, 5}), check::detail::random_tensor(rng, {5}), check::detail::random_tensor(rng, {5, 3}),
              check::detail::random_tensor(rng, {3})};
  const std::vector<std::size_t> targets{0, 2, 1};
  c.build = [targets](Tape&, const std::vector<Var>& in) {
    Var h = relu(add_bias(matmul(in[0], in[1]), in[2]));
    h = relu(add_bias(matmul(h, in[3]), in[4]));
    return softmax_cross_entropy(add_bias(matmul(h, in[5]), in[6]), targets);
  };
  const auto r = check::check_gradients(c);
  EXPECT_EQ(r.failures, 0u) << r.worst;
  EXPECT_GT(r.checked, 60u);
}

TEST(Backward, RandomGraphsEveryFamily) {
  Rng rng(2024);
  for (std::size_t i = 0; i < 3 * check::kFamilies; ++i) {
    const auto c = check::random_case(i, rng);
    const auto r = check::check_gradients(c);
    EXPECT_EQ(r.failures, 0u) << r.worst;
  }
}

TEST(Backward, FamiliesCoverEveryOp) {
  const auto seen = check::covered_ops();
  for (const auto& op : check::all_ops()) EXPECT_TRUE(seen.contains(op)) << op;
}

TEST(Backward, RowNormAtZeroIsFinite) {
  Tape t;
  Var x = t.leaf(Tensor(Shape{1, 3}, 0.0));
  t.backward(sum(normalize_rows(x)));
  EXPECT_TRUE(t.grad(x).all_finite());
}

TEST(ParameterStore, FlatIndexIsBijection) {
  ParameterStore s;
  s.add("a", Tensor(Shape{2, 3}));
  s.add("b", Tensor(Shape{4}));
  s.add("c", Tensor(Shape{1}));
  ASSERT_EQ(s.scalar_count(), 11u);
  for (std::size_t f = 0; f < s.scalar_count(); ++f) {
    const auto loc = s.locate(f);
    EXPECT_EQ(s.flat_index(loc.name, loc.offset), f);
  }
  EXPECT_EQ(s.locate(6).name, "b");
  EXPECT_EQ(s.locate(6).offset, 0u);
  EXPECT_EQ(code_of([&] { s.add("a", Tensor(Shape{1})); }), ErrorCode::InvalidArgument);
}

TEST(Sgd, AllFalseMaskLeavesStoreUnchanged) {
  ParameterStore s;
  s.add("w", Tensor::vector({1, 2, 3}));
  const ParameterStore before = s;
  MomentumSgd opt(0.9);
  std::vector<Tensor> g{Tensor::vector({5, -5, 1})};
  opt.step(s, g, TrainableMask::none(3), 0.1);
  EXPECT_TRUE(s.bit_equal(before));
}

TEST(Sgd, VanillaStep) {
  ParameterStore s;
  s.add("w", Tensor::vector({1}));
  MomentumSgd opt(0.0);
  std::vector<Tensor> g{Tensor::vector({0.5})};
  opt.step(s, g, TrainableMask::all(1), 0.1);
  EXPECT_DOUBLE_EQ(s.scalar(0), 0.95);
}

TEST(Sgd, MixedMaskMomentumRecomputation) {
  ParameterStore s;
  s.add("w", Tensor::vector({1, -1, 0.5, 2}));
  TrainableMask mask(4);
  mask.set(1);
  mask.set(3);
  MomentumSgd opt(0.9);
  const std::vector<double> start = s.flatten();
  std::vector<double> m(4, 0.0), v = start;
  for (int step = 0; step < 3; ++step) {
    std::vector<Tensor> g{Tensor::vector({0.3 * step, -0.2, 1.0, 0.1 * step})};
    opt.step(s, g, mask, 0.05);
    for (std::size_t k = 0; k < 4; ++k) {
      if (!mask[k]) continue;
      m[k] = 0.9 * m[k] + g[0][k];
      v[k] -= 0.05 * m[k];
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (mask[k]) {
      EXPECT_DOUBLE_EQ(s.scalar(k), v[k]) << k;
    } else {
      EXPECT_TRUE(bits_equal(s.scalar(k), start[k])) << k;
    }
  }
}

TEST(Sgd, NonFiniteGradientAbortsBeforeAnyUpdate) {
  ParameterStore s;
  s.add("first", Tensor::vector({1}));
  s.add("second", Tensor::vector({1}));
  const ParameterStore before = s;
  MomentumSgd opt;
  std::vector<Tensor> g{Tensor::vector({1}), Tensor::vector({std::numeric_limits<double>::quiet_NaN()})};
  try {
    opt.step(s, g, TrainableMask::all(2), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  EXPECT_TRUE(s.bit_equal(before));
}

TEST(Sgd, ResetFrozenZeroesStaleVelocity) {
  ParameterStore s;
  s.add("w", Tensor::vector({1, 1}));
  MomentumSgd opt(0.9);
  std::vector<Tensor> g{Tensor::vector({1, 1})};
  opt.step(s, g, TrainableMask::all(2), 0.1);
  TrainableMask second(2);
  second.set(0);
  opt.reset_frozen(s, second);
  EXPECT_EQ(opt.buffers()[0][1], 0.0);
  EXPECT_EQ(opt.buffers()[0][0], 1.0);
}

TEST(Sgd, WeightDecayOnlyOnTrainableScalars) {
  ParameterStore s;
  s.add("w", Tensor::vector({2, 2}));
  MomentumSgd opt(0.0, 0.5);
  TrainableMask mask(2);
  mask.set(0);
  std::vector<Tensor> g{Tensor::vector({0, 0})};
  opt.step(s, g, mask, 0.1);
  EXPECT_DOUBLE_EQ(s.scalar(0), 2 - 0.1 * 0.5 * 2);
  EXPECT_EQ(s.scalar(1), 2.0);
}

TEST(Sgd, FreezeInvariantOverManySteps) {
  Rng rng(5);
  ParameterStore s;
  s.add("a", check::detail::random_tensor(rng, {6, 4}));
  s.add("b", check::detail::random_tensor(rng, {5}));
  TrainableMask mask(s.scalar_count());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (rng.uniform() < 0.3) mask.set(i);
  const auto start = s.flatten();
  MomentumSgd opt(0.9);
  for (int step = 0; step < 50; ++step) {
    std::vector<Tensor> g{check::detail::random_tensor(rng, {6, 4}), check::detail::random_tensor(rng, {5})};
    opt.step(s, g, mask, 0.01);
  }
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) {
      EXPECT_TRUE(bits_equal(s.scalar(i), start[i])) << i;
    }
}
