// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "branchpar/autodiff.hpp"
#include "branchpar/errors.hpp"
#include "branchpar/grad_check.hpp"
#include "branchpar/ops.hpp"
#include "test_util.hpp"

namespace branchpar {
namespace {

using testing_util::random_tensor;

TEST(Tensor, ConstructionChecksElementCount) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.numel(), 4);
  EXPECT_EQ(t.at({1, 0}), 3.0);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE(bit_equal(matmul(eye, a), a));
}

TEST(Matmul, HandComputedProduct) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 1}, {5, 6});
  EXPECT_TRUE(bit_equal(matmul(a, b), Tensor::from({2, 1}, {17, 39})));
}

TEST(Matmul, MatchesTripleLoop) {
  const Tensor a = random_tensor({4, 5}, 1);
  const Tensor b = random_tensor({5, 3}, 2);
  std::vector<double> expect(12, 0.0);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) acc += a.at({i, k}) * b.at({k, j});
      expect[static_cast<std::size_t>(i * 3 + j)] = acc;
    }
  }
  EXPECT_TRUE(bit_equal(matmul(a, b), Tensor({4, 3}, expect)));
}

TEST(Matmul, BatchedBroadcast) {
  const Tensor a = random_tensor({3, 2, 4}, 3);
  const Tensor b = random_tensor({4, 5}, 4);
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 2, 5}));
  const Tensor second = matmul(slice(a, 0, 1, 1).view({2, 4}), b);
  EXPECT_TRUE(bit_equal(slice(c, 0, 1, 1).view({2, 5}), second));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(to_string(Shape{2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(to_string(Shape{4, 5})), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetricInputIsUniform) {
  const Tensor y = softmax(Tensor::from({0.0, 0.0}), 0);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  const Tensor x = random_tensor({3, 7}, 5);
  const Tensor shifted = add(x, Tensor::scalar(123.25));
  const Tensor a = softmax(x, 1);
  // Only the rounding of x + c itself separates the two results.
  EXPECT_LT(max_abs_diff(a, softmax(shifted, 1)), 1e-14);
  const Tensor sums = reduce_sum(a, 1);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(sums[i], 1.0, 1e-12);
  for (double v : a.data()) EXPECT_GE(v, 0.0);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Tensor y = softmax(Tensor::from({1000.0, 0.0}), 0);
  EXPECT_EQ(y[0], 1.0);
}

TEST(Softmax, EmptyAxisRejected) {
  EXPECT_THROW(softmax(Tensor::zeros({2, 0}), 1), DimensionError);
  EXPECT_THROW(softmax(Tensor::zeros({2, 3}), 2), DimensionError);
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  const Tensor w = random_tensor({4, 6}, 6);
  const auto rep = grad_check([&](const Tensor& x) { return sum_all(mul(softmax(x, 1), w)); },
                              random_tensor({4, 6}, 7));
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
  EXPECT_LE(rep.max_rel_err, 1e-6);
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  const Tensor y = layer_norm(Tensor::full({1, 4}, 2.5), Tensor::ones({4}), Tensor::zeros({4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, StandardizedInputWithoutEps) {
  const Tensor x = Tensor::from({1.0, -1.0});
  EXPECT_TRUE(bit_equal(layer_norm(x, Tensor::ones({2}), Tensor::zeros({2}), 0.0), x));
}

TEST(LayerNorm, MatchesScalarFormula) {
  const double eps = 1e-5;
  const Tensor y = layer_norm(Tensor::from({1.0, -1.0}), Tensor::ones({2}), Tensor::zeros({2}), eps);
  const double expect = 1.0 / std::sqrt(1.0 + eps);
  EXPECT_NEAR(y[0], expect, 1e-15);
  EXPECT_NEAR(y[1], -expect, 1e-15);
}

TEST(LayerNorm, AffineParametersApplied) {
  const Tensor x = random_tensor({3, 5}, 8);
  const Tensor g = random_tensor({5}, 9);
  const Tensor b = random_tensor({5}, 10);
  const Tensor y = layer_norm(x, g, b);
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (int j = 0; j < 5; ++j) mean += x.at({i, j});
    mean /= 5.0;
    double var = 0.0;
    for (int j = 0; j < 5; ++j) var += (x.at({i, j}) - mean) * (x.at({i, j}) - mean);
    var /= 5.0;
    for (int j = 0; j < 5; ++j) {
      const double expect = g[j] * (x.at({i, j}) - mean) / std::sqrt(var + 1e-5) + b[j];
      EXPECT_NEAR(y.at({i, j}), expect, 1e-13);
    }
  }
}

TEST(LayerNorm, WrongAffineLengthRejected) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::ones({2}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::ones({3}), Tensor::zeros({4})), DimensionError);
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  const Tensor x = random_tensor({3, 6}, 11);
  const Tensor g = random_tensor({6}, 12);
  const Tensor b = random_tensor({6}, 13);
  const Tensor w = random_tensor({3, 6}, 14);
  const std::vector<Tensor> inputs = {x, g, b};
  const auto rep = grad_check(
      [&](std::span<const Tensor> in) { return sum_all(mul(layer_norm(in[0], in[1], in[2]), w)); }, inputs);
  EXPECT_LE(rep.max_rel_err, 1e-6);
}

TEST(Elementwise, ScalarExamples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(relu(Tensor::scalar(-3.0)).item(), 0.0);
  EXPECT_EQ(relu(Tensor::scalar(3.0)).item(), 3.0);
  EXPECT_TRUE(bit_equal(add(Tensor::from({1, 2}), Tensor::from({3, 4})), Tensor::from({4, 6})));
  EXPECT_TRUE(bit_equal(sub(Tensor::from({1, 2}), Tensor::from({3, 4})), Tensor::from({-2, -2})));
  EXPECT_TRUE(bit_equal(mul(Tensor::from({1, 2}), Tensor::from({3, 4})), Tensor::from({3, 8})));
  EXPECT_TRUE(bit_equal(scale(Tensor::from({1, 2}), 0.5), Tensor::from({0.5, 1.0})));
}

TEST(Elementwise, GenericEntryPointMatchesNamedOps) {
  const Tensor a = random_tensor({2, 3}, 15);
  const Tensor b = random_tensor({3}, 16);
  const std::vector<Tensor> ab = {a, b};
  EXPECT_TRUE(bit_equal(elementwise(ElementwiseKind::mul, ab), mul(a, b)));
  const std::vector<Tensor> only_a = {a};
  EXPECT_TRUE(bit_equal(elementwise(ElementwiseKind::scale, only_a, 3.0), scale(a, 3.0)));
}

TEST(Elementwise, BroadcastRules) {
  const Tensor a = Tensor::from({2, 1}, {1, 2});
  const Tensor b = Tensor::from({3}, {10, 20, 30});
  EXPECT_TRUE(bit_equal(add(a, b), Tensor::from({2, 3}, {11, 21, 31, 12, 22, 32})));
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  const Tensor b = random_tensor({3}, 17);
  const Tensor w = random_tensor({2, 3}, 18);
  const auto rep = grad_check(
      [&](const Tensor& x) { return sum_all(mul(sigmoid(mul(add(x, b), sub(x, b))), w)); },
      random_tensor({2, 3}, 19));
  EXPECT_LE(rep.max_rel_err, 1e-6);
}

TEST(ReduceMean, Examples) {
  EXPECT_EQ(reduce_mean(Tensor::from({2.0, 4.0}), 0).item(), 3.0);
  const Tensor x = random_tensor({3, 1, 4}, 20);
  const Tensor y = reduce_mean(x, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 4}));
  EXPECT_TRUE(bit_equal(y, x.view({3, 4})));
  EXPECT_THROW(reduce_mean(x, 3), DimensionError);
}

TEST(ReduceMean, GradientIsUniform) {
  Graph g;
  const Tensor x = g.leaf(random_tensor({4, 5}, 21));
  const auto grads = g.backward(sum_all(reduce_mean(x, 0)));
  for (double v : grads.of(x).data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto rep = grad_check([](const Tensor& t) { return sum_all(reduce_mean(mul(t, t), 1)); },
                              random_tensor({4, 5}, 22));
  EXPECT_LE(rep.max_rel_err, 1e-6);
}

TEST(Permute, InvolutionAndErrors) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor t = permute(x, {1, 0});
  EXPECT_TRUE(bit_equal(t, Tensor::from({3, 2}, {1, 4, 2, 5, 3, 6})));
  EXPECT_TRUE(bit_equal(permute(t, {1, 0}), x));
  EXPECT_THROW(permute(x, {0, 0}), DimensionError);
  EXPECT_THROW(permute(x, {0}), DimensionError);
}

TEST(Reshape, PreservesRowMajorOrder) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor flat = reshape(x, {6});
  const Tensor y = reshape(flat, {3, 2});
  EXPECT_TRUE(bit_equal(y, Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6})));
  EXPECT_THROW(reshape(x, {4}), DimensionError);
}

TEST(Permute, GradientIsPermutedGradient) {
  const Tensor w = random_tensor({4, 2, 3}, 23);
  const auto rep = grad_check([&](const Tensor& x) { return sum_all(mul(permute(x, {2, 0, 1}), w)); },
                              random_tensor({2, 3, 4}, 24));
  EXPECT_LE(rep.max_rel_err, 1e-6);

  Graph g;
  const Tensor x = g.leaf(random_tensor({2, 3, 4}, 25));
  const auto grads = g.backward(sum_all(mul(permute(x, {2, 0, 1}), w)));
  EXPECT_TRUE(bit_equal(grads.of(x), permute(w, {1, 2, 0})));
}

TEST(Linear, IdentityAndZeroInput) {
  const Tensor x = random_tensor({3, 2}, 26);
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_TRUE(bit_equal(linear(x, eye, Tensor::zeros({2})), x));
  const Tensor b = Tensor::from({7.0, -1.0});
  const Tensor y = linear(Tensor::zeros({3, 2}), random_tensor({2, 2}, 27), b);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(y.at({i, 0}), 7.0);
    EXPECT_EQ(y.at({i, 1}), -1.0);
  }
  EXPECT_THROW(linear(x, Tensor::zeros({3, 2})), DimensionError);
}

TEST(Linear, WeightGradientMatchesFiniteDifferences) {
  const Tensor x = random_tensor({2, 3, 4}, 28);
  const Tensor out_w = random_tensor({2, 3, 5}, 29);
  const std::vector<Tensor> inputs = {random_tensor({4, 5}, 30), random_tensor({5}, 31)};
  const auto rep = grad_check(
      [&](std::span<const Tensor> in) { return sum_all(mul(linear(x, in[0], in[1]), out_w)); }, inputs);
  EXPECT_LE(rep.max_rel_err, 1e-6);
}

TEST(SliceConcat, RoundTrip) {
  const Tensor x = random_tensor({4, 6}, 32);
  const std::vector<Tensor> parts = {slice(x, 1, 0, 2), slice(x, 1, 2, 4)};
  EXPECT_TRUE(bit_equal(concat(parts, 1), x));
  EXPECT_THROW(slice(x, 1, 5, 2), DimensionError);
}

TEST(Determinism, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    Graph g;
    const Tensor x = g.leaf(random_tensor({3, 4}, 33));
    const Tensor w = g.leaf(random_tensor({4, 4}, 34));
    const Tensor y = softmax(linear(x, w), 1);
    const Tensor loss = sum_all(mul(y, y));
    const auto grads = g.backward(loss);
    return std::pair{grads.of(x), grads.of(w)};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_TRUE(bit_equal(a.first, b.first));
  EXPECT_TRUE(bit_equal(a.second, b.second));
}

TEST(FiniteCheck, NonFiniteResultIsAnError) {
  const Tensor inf = Tensor::from({std::numeric_limits<double>::max()});
  EXPECT_THROW(scale(inf, 10.0), NumericError);
  ScopedExecMode bench({Precision::f64, false});
  EXPECT_NO_THROW(scale(inf, 10.0));
}

TEST(Precision, F32ModeRoundsResults) {
  const Tensor x = Tensor::from({1.0});
  const double exact = matmul(x.view({1, 1}), Tensor::from({1, 1}, {1.0 / 3.0})).item();
  ScopedExecMode f32({Precision::f32, true});
  const double rounded = matmul(x.view({1, 1}), Tensor::from({1, 1}, {1.0 / 3.0})).item();
  EXPECT_EQ(rounded, static_cast<double>(static_cast<float>(exact)));
  EXPECT_NE(rounded, exact);
  EXPECT_EQ(element_width(Precision::f32), 4);
  EXPECT_EQ(element_width(Precision::f64), 8);
}

TEST(GradCheck, SigmoidSum) {
  const auto rep = grad_check([](const Tensor& x) { return sum_all(sigmoid(x)); }, random_tensor({5, 7}, 35));
  EXPECT_LE(rep.max_rel_err, 1e-7);
  EXPECT_EQ(rep.checked, 32);
}

TEST(GradCheck, LinearFunctionIsNearlyExact) {
  const Tensor w = random_tensor({6, 6}, 36);
  const auto rep = grad_check([&](const Tensor& x) { return sum_all(mul(x, w)); }, random_tensor({6, 6}, 37));
  EXPECT_LE(rep.max_rel_err, 1e-9);
}

TEST(GradCheck, AttentionScore) {
  const Tensor k = random_tensor({5, 4}, 38);
  const Tensor v = random_tensor({5, 3}, 39);
  const Tensor w = random_tensor({2, 3}, 40);
  auto attention = [&](const Tensor& q) {
    const Tensor logits = scale(matmul(q, permute(k, {1, 0})), 0.5);
    return sum_all(mul(matmul(softmax(logits, 1), v), w));
  };
  const auto rep = grad_check(attention, random_tensor({2, 4}, 41));
  EXPECT_LE(rep.max_rel_err, 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A custom op with a deliberately wrong backward.
  auto wrong_square = [](const Tensor& x) {
    const std::vector<Tensor> in = {x};
    std::vector<double> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = e * e;
    Tensor y = Graph::record("wrong_square", in, Tensor(x.shape(), v), [x](const Tensor& g) {
      return std::vector<Tensor>{mul(g, x.detach())};  // missing factor 2
    });
    return sum_all(y);
  };
  const auto rep = grad_check(wrong_square, random_tensor({4}, 42));
  EXPECT_FALSE(rep.passed);
}

TEST(GradCheck, SkipsReluKinks) {
  // One coordinate sits exactly on the kink; the others are far from it.
  const Tensor x = Tensor::from({0.0, 1.0, -2.0, 3.0});
  GradCheckOptions opts;
  opts.coords = 3;
  const auto rep = grad_check([](const Tensor& t) { return sum_all(relu(t)); }, x, opts);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.checked, 3);
  EXPECT_EQ(rep.skipped_kinks, 1);
}

}  // namespace
}  // namespace branchpar
