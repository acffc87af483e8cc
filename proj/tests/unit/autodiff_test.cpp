// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "branchpar/autodiff.hpp"
#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"
#include "test_util.hpp"

namespace branchpar {
namespace {

using testing_util::random_tensor;

TEST(Backward, SumGivesOnes) {
  Graph g;
  const Tensor x = g.leaf(random_tensor({2, 3, 4}, 1));
  const auto grads = g.backward(sum_all(x));
  EXPECT_TRUE(bit_equal(grads.of(x), Tensor::ones({2, 3, 4})));
}

TEST(Backward, HalfSquareGivesInput) {
  Graph g;
  const Tensor value = random_tensor({5, 2}, 2);
  const Tensor x = g.leaf(value);
  const auto grads = g.backward(scale(sum_all(mul(x, x)), 0.5));
  EXPECT_TRUE(bit_equal(grads.of(x), value));
}

TEST(Backward, NonScalarLossRejected) {
  Graph g;
  const Tensor x = g.leaf(random_tensor({3}, 3));
  EXPECT_THROW(g.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, UnreachableLeafGetsZeros) {
  Graph g;
  const Tensor x = g.leaf(random_tensor({3}, 4));
  const Tensor unused = g.leaf(random_tensor({2, 2}, 5));
  const auto grads = g.backward(sum_all(x));
  EXPECT_FALSE(grads.reached(unused));
  EXPECT_TRUE(bit_equal(grads.of(unused), Tensor::zeros({2, 2})));
}

TEST(Backward, GradientShapesMatchLeaves) {
  Graph g;
  const Tensor x = g.leaf(random_tensor({3, 4}, 6));
  const Tensor w = g.leaf(random_tensor({4, 2}, 7));
  const Tensor b = g.leaf(random_tensor({2}, 8));
  const auto grads = g.backward(sum_all(sigmoid(linear(x, w, b))));
  EXPECT_EQ(grads.of(x).shape(), x.shape());
  EXPECT_EQ(grads.of(w).shape(), w.shape());
  EXPECT_EQ(grads.of(b).shape(), b.shape());
}

TEST(Backward, ValuesWithoutLeavesStayDetached) {
  const Tensor y = add(Tensor::ones({2}), Tensor::ones({2}));
  EXPECT_FALSE(y.attached());
}

TEST(Backward, SeedsComputeVectorJacobianProducts) {
  Graph g;
  const Tensor x = g.leaf(random_tensor({4}, 9));
  const Tensor y = scale(x, 3.0);
  const Tensor v = random_tensor({4}, 10);
  const std::vector<Seed> seeds = {{y, v}};
  const auto grads = g.backward(seeds);
  EXPECT_TRUE(bit_equal(grads.of(x), scale(v, 3.0)));
}

TEST(Backward, IdentityForkMatchesDirectReuse) {
  // x feeds two consumers either directly or through one identity per
  // consumer; the gradient of x must be the same either way.
  const Tensor value = random_tensor({3, 3}, 11);
  const Tensor w = random_tensor({3, 3}, 12);
  Graph g1;
  const Tensor x1 = g1.leaf(value);
  const auto direct = g1.backward(sum_all(add(mul(x1, w), sigmoid(x1))));
  Graph g2;
  const Tensor x2 = g2.leaf(value);
  const auto forked = g2.backward(sum_all(add(mul(identity(x2), w), sigmoid(identity(x2)))));
  EXPECT_TRUE(bit_equal(direct.of(x1), forked.of(x2)));
}

TEST(Backward, RepeatedSweepsAreBitIdentical) {
  auto run = [] {
    Graph g;
    const Tensor x = g.leaf(random_tensor({4, 4}, 13));
    const Tensor y = softmax(matmul(x, permute(x, {1, 0})), 1);
    return g.backward(sum_all(mul(y, y))).of(x);
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}

}  // namespace
}  // namespace branchpar
