// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tastas/autodiff.hpp"

#include <gtest/gtest.h>

#include "gradcheck.h"

namespace tastas::ad {
namespace {

using testing::CheckGradients;
using testing::RandomParam;

// Contracts the output with fixed random weights so every entry matters.
Var Project(Var out, uint64_t seed) {
  Rng rng(seed);
  Mat w(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.Uniform(-1, 1);
  return Sum(Mul(out, out.tape->Constant(w)));
}

class OpGradient : public ::testing::Test {
 protected:
  Rng rng{17};
};

TEST_F(OpGradient, MatMulAddRowAndActivations) {
  auto a = RandomParam("a", 4, 3, &rng), b = RandomParam("b", 3, 5, &rng), c = RandomParam("c", 1, 5, &rng);
  auto r = CheckGradients({&a, &b, &c}, [&](Tape &t) {
    Var x = AddRow(MatMul(t.Param(&a, true), t.Param(&b, true)), t.Param(&c, true));
    return Project(Add(Tanh(x), Mul(Sigmoid(x), Scale(x, 0.5))), 3);
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST_F(OpGradient, ReluAwayFromKink) {
  auto a = RandomParam("a", 5, 4, &rng);
  for (Eigen::Index i = 0; i < a.value.size(); ++i)
    if (std::abs(a.value(i)) < 0.05) a.value(i) = 0.3;
  auto r = CheckGradients({&a}, [&](Tape &t) { return Project(Relu(t.Param(&a, true)), 4); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST_F(OpGradient, SliceConcatSub) {
  auto a = RandomParam("a", 3, 6, &rng), b = RandomParam("b", 3, 2, &rng);
  auto r = CheckGradients({&a, &b}, [&](Tape &t) {
    Var va = t.Param(&a, true), vb = t.Param(&b, true);
    Var cat = ConcatCols({SliceCols(va, 1, 3), vb, va});
    Var rows = ConcatRows({cat, Sub(cat, cat), Tanh(cat)});
    return Project(rows, 5);
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST_F(OpGradient, GatherScatterFrameOverlap) {
  auto a = RandomParam("a", 6, 3, &rng), x = RandomParam("x", 13, 1, &rng);
  auto r = CheckGradients({&a, &x}, [&](Tape &t) {
    Var g = GatherRows(t.Param(&a, true), {-1, 0, 2, 2, 5, -1, 1, 3, 4});
    Var s = ScatterRowsMean(g, {0, 0, 1, 2, 2, 3, -1, 4, 5}, 6);
    Var f = FrameSignal(t.Param(&x, true), 4, 2, 6);
    Var o = OverlapAdd(Tanh(f), 2, 12);
    return Add(Project(s, 6), Project(o, 7));
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST_F(OpGradient, NormalisationsAndPooling) {
  auto x = RandomParam("x", 5, 4, &rng), gamma = RandomParam("gamma", 1, 4, &rng),
       beta = RandomParam("beta", 1, 4, &rng);
  auto r = CheckGradients({&x, &gamma, &beta}, [&](Tape &t) {
    Var vx = t.Param(&x, true);
    Var n = GlobalLayerNorm(vx, t.Param(&gamma, true), t.Param(&beta, true));
    Var pooled = MeanRows(n);
    Var unit = L2NormalizeRows(Add(vx, BroadcastRows(pooled, 5)));
    return Add(Project(n, 8), Project(unit, 9));
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST_F(OpGradient, SoftmaxCrossEntropy) {
  auto z = RandomParam("z", 4, 3, &rng, 2.0);
  auto r = CheckGradients({&z}, [&](Tape &t) { return SoftmaxCrossEntropy(t.Param(&z, true), {0, 2, 1, 2}); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Tape, FrozenParametersGetNoGradient) {
  Rng rng(1);
  auto a = RandomParam("a", 2, 2, &rng), b = RandomParam("b", 2, 2, &rng);
  a.ZeroGrad();
  b.ZeroGrad();
  Tape t;
  Var out = Sum(MatMul(t.Param(&a, false), t.Param(&b, true)));
  t.Backward(out);
  EXPECT_EQ(a.grad.cwiseAbs().sum(), 0.0);
  EXPECT_GT(b.grad.cwiseAbs().sum(), 0.0);
}

TEST(Tape, InferenceTapeRecordsNothing) {
  Rng rng(1);
  auto a = RandomParam("a", 2, 2, &rng);
  Tape t(false);
  Var out = Sum(t.Param(&a, true));
  EXPECT_FALSE(out.requires_grad());
  EXPECT_THROW(t.Backward(t.Param(&a, true)), InvalidArgument);
}

TEST(Tape, ShapeErrors) {
  Tape t;
  Var a = t.Constant(Mat::Zero(2, 3)), b = t.Constant(Mat::Zero(2, 3));
  EXPECT_THROW(MatMul(a, b), InvalidArgument);
  EXPECT_THROW(AddRow(a, b), InvalidArgument);
  EXPECT_THROW(GatherRows(a, {5}), InvalidArgument);
}

}  // namespace
}  // namespace tastas::ad
