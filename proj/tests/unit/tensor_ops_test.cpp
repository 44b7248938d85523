// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fqconv/autograd.hpp"
#include "fqconv/error.hpp"
#include "fqconv/ops.hpp"
#include "fqconv/tensor.hpp"
#include "test_support.hpp"

namespace fqconv {
namespace {

using testing::gradient_error;
using testing::random_tensor;
using testing::reference_conv2d;

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(num_elements(t.shape()), t.size());
  EXPECT_EQ(t.grad().size(), t.data().size());
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3);
}

TEST(Conv1d, IdentityKernel) {
  Tensor x({1, 3}, std::vector<float>{1, 0, 0});
  Tensor k({1, 1, 1}, std::vector<float>{1});
  Tensor y = conv1d(x, k, 1, 0);
  EXPECT_EQ(y.storage(), (std::vector<float>{1, 0, 0}));
}

TEST(Conv1d, SumKernel) {
  Tensor x({1, 3}, std::vector<float>{1, 2, 3});
  Tensor k({1, 1, 3}, std::vector<float>{1, 1, 1});
  Tensor y = conv1d(x, k, 1, 0);
  ASSERT_EQ(y.size(), 1);
  EXPECT_EQ(y[0], 6.0f);
}

TEST(Conv1d, DilatedMatchesNestedLoops) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({4, 16}, rng);
  Tensor k = random_tensor({8, 4, 3}, rng);
  Tensor y = conv1d(x, k, 2, 0);
  Tensor ref = reference_conv2d(x.reshaped({4, 1, 16}), k.reshaped({8, 4, 1, 3}), 1, 0, 2);
  ASSERT_EQ(y.size(), ref.size());
  for (int64_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], ref[i]) << i;
}

TEST(Conv1d, RejectsBadShapes) {
  EXPECT_THROW(conv1d(Tensor({2, 5}), Tensor({1, 3, 3}), 1, 0), DimensionError);
  EXPECT_THROW(conv1d(Tensor({1, 2}), Tensor({1, 1, 3}), 1, 0), DimensionError);
  EXPECT_THROW(conv1d(Tensor({1, 8}), Tensor({1, 1, 3}), 0, 0), ValidationError);
}

TEST(Conv2d, OnesTimesTwo) {
  Tensor x({1, 2, 2}, 1.0f);
  Tensor k({1, 1, 1, 1}, 2.0f);
  Tensor y = conv2d(x, k, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (float v : y.data()) EXPECT_EQ(v, 2.0f);
}

TEST(Conv2d, StridedPaddedMatchesNestedLoops) {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({3, 8, 8}, rng);
  Tensor k = random_tensor({4, 3, 3, 3}, rng);
  Tensor y = conv2d(x, k, 2, 1);
  Tensor ref = reference_conv2d(x, k, 2, 1);
  ASSERT_EQ(y.shape(), ref.shape());
  for (int64_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], ref[i]) << i;
}

TEST(Conv2d, ZeroKernel) {
  std::mt19937_64 rng(13);
  Tensor y = conv2d(random_tensor({3, 6, 6}, rng), Tensor({2, 3, 3, 3}), 1, 1);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Dense, SmallCases) {
  Tensor eye({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor x = Tensor::vector({0.25f, -3.0f});
  EXPECT_EQ(dense(x, eye, Tensor({2})).storage(), x.storage());
  Tensor w({2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_EQ(dense(Tensor::vector({1, 1}), w, Tensor({2})).storage(), (std::vector<float>{3, 7}));
}

TEST(Dense, MatchesNestedLoops) {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({39}, rng);
  Tensor w = random_tensor({100, 39}, rng);
  Tensor b = random_tensor({100}, rng);
  Tensor y = dense(x, w, b);
  for (int64_t m = 0; m < 100; ++m) {
    float acc = 0.0f;
    for (int64_t i = 0; i < 39; ++i) acc += w[m * 39 + i] * x[i];
    acc += b[m];
    EXPECT_EQ(y[m], acc);
  }
}

TEST(GlobalAvgPool, Values) {
  EXPECT_EQ(global_avg_pool(Tensor({1, 5}, 0.375f))[0], 0.375f);
  EXPECT_EQ(global_avg_pool(Tensor({1, 3}, std::vector<float>{1, 2, 3}))[0], 2.0f);
  std::mt19937_64 rng(15);
  Tensor x = random_tensor({4, 7, 9}, rng);
  Tensor y = global_avg_pool(x);
  for (int64_t c = 0; c < 4; ++c) {
    long double acc = 0.0L;
    for (int64_t i = 0; i < 63; ++i) acc += x[c * 63 + i];
    const float oracle = static_cast<float>(acc / 63.0L);
    EXPECT_LE(std::fabs(y[c] - oracle), std::nextafter(std::fabs(oracle), INFINITY) - std::fabs(oracle));
  }
}

TEST(SoftmaxCrossEntropy, KnownValues) {
  EXPECT_NEAR(softmax_cross_entropy(Tensor::vector({0, 0}), Tensor::vector({1, 0})), std::log(2.0), 1e-7);
  EXPECT_LT(softmax_cross_entropy(Tensor::vector({0, 80}), Tensor::vector({0, 1})), 1e-6f);
  EXPECT_THROW(softmax_cross_entropy(Tensor::vector({0, 0}), Tensor::vector({0.5f, 0.2f})), ValidationError);
}

TEST(SoftmaxCrossEntropy, MatchesExtendedPrecision) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = random_tensor({10}, rng, -5.0f, 5.0f);
    Tensor t = random_tensor({10}, rng, 0.0f, 1.0f);
    float total = 0.0f;
    for (float v : t.data()) total += v;
    for (float& v : t.data()) v /= total;
    long double m = z[0];
    for (float v : z.data()) m = std::max<long double>(m, v);
    long double s = 0.0L;
    for (float v : z.data()) s += std::exp(static_cast<long double>(v) - m);
    long double loss = 0.0L;
    for (int64_t k = 0; k < 10; ++k) loss -= t[k] * (z[k] - m - std::log(s));
    EXPECT_NEAR(softmax_cross_entropy(z, t), static_cast<double>(loss), 1e-6 * static_cast<double>(loss));
  }
}

TEST(Autograd, SumGivesOnes) {
  Tensor x({3, 4}, 0.5f);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(tape.parameter(x)));
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Autograd, FanOutAccumulates) {
  Tensor x = Tensor::vector({1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  Var v = tape.parameter(x);
  Var y = scale(v, 3.0f);
  tape.backward(sum(add(y, y)));
  for (float g : x.grad()) EXPECT_EQ(g, 6.0f);
  EXPECT_EQ(tape.last_backward_visits(), tape.size());
}

TEST(Autograd, RejectsNonScalarLoss) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  Tape tape;
  EXPECT_THROW(tape.backward(tape.parameter(x)), UsageError);
}

TEST(Autograd, BackwardIsDeterministic) {
  std::mt19937_64 rng(17);
  Tensor x0 = random_tensor({2, 3, 20}, rng);
  Tensor k0 = random_tensor({4, 3, 3}, rng);
  auto run = [&] {
    Tensor x = x0, k = k0;
    k.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(relu(conv1d(tape.constant(x), tape.parameter(k), 2, 1))));
    return std::vector<float>(k.grad().begin(), k.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradients, Conv1dMatchesFiniteDifferences) {
  std::mt19937_64 rng(18);
  std::vector<Tensor> leaves{random_tensor({2, 3, 12}, rng), random_tensor({4, 3, 3}, rng)};
  const double err = gradient_error(leaves, [](Tape&, std::vector<Var>& v) { return conv1d(v[0], v[1], 2, 1); }, rng);
  EXPECT_LE(err, 1e-4);
}

TEST(Gradients, Conv2dMatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  std::vector<Tensor> leaves{random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)};
  const double err = gradient_error(leaves, [](Tape&, std::vector<Var>& v) { return conv2d(v[0], v[1], 2, 1); }, rng);
  EXPECT_LE(err, 1e-3);
}

TEST(Gradients, DenseMatchesFiniteDifferences) {
  std::mt19937_64 rng(20);
  std::vector<Tensor> leaves{random_tensor({3, 5, 4}, rng), random_tensor({6, 5}, rng), random_tensor({6}, rng)};
  const double err = gradient_error(leaves, [](Tape&, std::vector<Var>& v) { return dense(v[0], v[1], v[2]); }, rng);
  EXPECT_LE(err, 1e-3);
}

TEST(Gradients, SoftmaxCrossEntropyMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  Tensor target = one_hot(std::vector<int>{1, 0, 3}, 4);
  std::vector<Tensor> leaves{random_tensor({3, 4}, rng, -3.0f, 3.0f)};
  const double err = gradient_error(
      leaves, [&](Tape&, std::vector<Var>& v) { return softmax_cross_entropy(v[0], target); }, rng);
  EXPECT_LE(err, 1e-3);
}

TEST(Gradients, BatchNormMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  std::vector<Tensor> leaves{random_tensor({6, 3, 5}, rng, -2.0f, 2.0f), random_tensor({3}, rng, 0.5f, 1.5f),
                             random_tensor({3}, rng)};
  const double err = gradient_error(
      leaves, [](Tape&, std::vector<Var>& v) { return batch_norm(v[0], v[1], v[2], 1e-5f); }, rng);
  EXPECT_LE(err, 1e-3);
}

TEST(BatchNorm, TrainingStatistics) {
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({64, 2, 8}, rng, -3.0f, 5.0f);
  Tensor gamma = Tensor::vector({1.5f, 0.5f});
  Tensor beta = Tensor::vector({-1.0f, 2.0f});
  Tape tape;
  tape.set_grad_enabled(false);
  const Tensor& y = batch_norm(tape.constant(x), tape.constant(gamma), tape.constant(beta), 1e-5f).value();
  for (int64_t c = 0; c < 2; ++c) {
    double m = 0.0, s = 0.0;
    for (int64_t n = 0; n < 64; ++n)
      for (int64_t l = 0; l < 8; ++l) m += y[(n * 2 + c) * 8 + l];
    m /= 512.0;
    for (int64_t n = 0; n < 64; ++n)
      for (int64_t l = 0; l < 8; ++l) s += std::pow(y[(n * 2 + c) * 8 + l] - m, 2);
    EXPECT_NEAR(m, beta[c], 1e-3);
    EXPECT_NEAR(std::sqrt(s / 512.0), gamma[c], 1e-3);
  }
}

TEST(BatchNorm, ConstantBatchGivesBeta) {
  Tape tape;
  tape.set_grad_enabled(false);
  const Tensor& y = batch_norm(tape.constant(Tensor({4, 1, 3}, 7.0f)), tape.constant(Tensor::vector({2.0f})),
                               tape.constant(Tensor::vector({0.25f})), 1e-5f)
                        .value();
  for (float v : y.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
}

}  // namespace
}  // namespace fqconv
