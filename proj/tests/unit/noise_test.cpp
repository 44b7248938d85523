// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fqconv/error.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/noise.hpp"
#include "fqconv/training.hpp"
#include "fqconv/transforms.hpp"
#include "test_support.hpp"

namespace fqconv {
namespace {

using testing::quick_quantized;
using testing::toy_sequences;

TEST(Inject, StandardDeviationMatchesLsbFraction) {
  std::mt19937_64 rng(1);
  Tensor y = inject(Tensor({1000000}), 0.5f, 20.0f, rng);
  double mean = 0.0, sq = 0.0;
  for (float v : y.data()) mean += v;
  mean /= static_cast<double>(y.size());
  for (float v : y.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(y.size() - 1));
  EXPECT_NEAR(sd, 0.1, 0.001);
  EXPECT_NEAR(mean, 0.0, 0.001);
}

TEST(Inject, ZeroLevelIsIdentityWithoutDraws) {
  std::mt19937_64 rng(2), copy(2);
  Tensor x = testing::random_tensor({100}, rng);
  copy = rng;
  EXPECT_EQ(inject(x, 1.0f, 0.0f, rng).storage(), x.storage());
  EXPECT_EQ(rng(), copy());
}

TEST(NoiseInjector, DrawsAndStreams) {
  NoiseSpec spec{5, 5, 25, 7};
  NoiseInjector a(spec, 0), b(spec, 0), c(spec, 1);
  EXPECT_TRUE(a.sample({10}, 1.0f, 0.0f).empty());
  EXPECT_EQ(a.draws(), 0u);
  Tensor na = a.sample({10}, 1.0f, 5.0f);
  EXPECT_EQ(a.draws(), 10u);
  EXPECT_EQ(na.storage(), b.sample({10}, 1.0f, 5.0f).storage());
  EXPECT_NE(na.storage(), c.sample({10}, 1.0f, 5.0f).storage());
}

TEST(NoiseInjector, FrozenWeightsAreCached) {
  NoiseSpec spec{10, 0, 0, 3};
  spec.frozen_weights = true;
  NoiseInjector frozen(spec, 0);
  Tensor first = frozen.weight_noise(4, {6}, 1.0f);
  EXPECT_EQ(frozen.weight_noise(4, {6}, 1.0f).storage(), first.storage());
  EXPECT_NE(frozen.weight_noise(5, {6}, 1.0f).storage(), first.storage());
  spec.frozen_weights = false;
  NoiseInjector fresh(spec, 0);
  Tensor one = fresh.weight_noise(4, {6}, 1.0f);
  EXPECT_NE(fresh.weight_noise(4, {6}, 1.0f).storage(), one.storage());
}

TEST(NoiseSpec, Validation) {
  EXPECT_THROW((NoiseSpec{-1, 0, 0}).validate(), ConfigError);
  NoiseSpec s;
  s.repetitions = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_NO_THROW((NoiseSpec{}).validate());
}

TEST(NoiseLadder, Points) {
  std::vector<NoiseSpec> l = noise_ladder(5, 4);
  ASSERT_EQ(l.size(), 5u);
  const float expect[5][3] = {{1, 1, 5}, {5, 5, 25}, {10, 10, 50}, {20, 20, 100}, {30, 30, 150}};
  for (size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(l[i].weight_pct, expect[i][0]);
    EXPECT_EQ(l[i].act_pct, expect[i][1]);
    EXPECT_EQ(l[i].mac_pct, expect[i][2]);
    EXPECT_EQ(l[i].repetitions, 4);
  }
}

class NoisyToy : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(toy_sequences(9, 300));
    fq_ = new Network(replace_bn_relu(quick_quantized(*data_, 9, 2, 4, 2)));
  }
  static void TearDownTestSuite() {
    delete fq_;
    delete data_;
  }
  static Dataset* data_;
  static Network* fq_;
};

Dataset* NoisyToy::data_ = nullptr;
Network* NoisyToy::fq_ = nullptr;

TEST_F(NoisyToy, ZeroSpecEqualsNoiseless) {
  NoiseSpec zero;
  zero.repetitions = 3;
  NoiseReport r = noisy_eval(*fq_, *data_, Split::kTest, zero);
  const double clean = evaluate(*fq_, *data_, Split::kTest).accuracy;
  ASSERT_EQ(r.accuracies.size(), 3u);
  for (double a : r.accuracies) EXPECT_EQ(a, clean);
  EXPECT_EQ(r.std_accuracy, 0.0);
}

TEST_F(NoisyToy, ReproducibleAndSummarized) {
  NoiseSpec spec{20, 20, 100, 11, 5};
  NoiseReport a = noisy_eval(*fq_, *data_, Split::kTest, spec);
  NoiseReport b = noisy_eval(*fq_, *data_, Split::kTest, spec);
  EXPECT_EQ(a.accuracies, b.accuracies);
  const double mean = std::accumulate(a.accuracies.begin(), a.accuracies.end(), 0.0) / 5.0;
  double sq = 0.0;
  for (double v : a.accuracies) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(a.mean_accuracy, mean, 1e-12);
  EXPECT_NEAR(a.std_accuracy, std::sqrt(sq / 4.0), 1e-9);
  spec.seed = 12;
  EXPECT_NE(noisy_eval(*fq_, *data_, Split::kTest, spec).accuracies, a.accuracies);
}

TEST_F(NoisyToy, ResampledOnEveryForward) {
  NoiseSpec spec{10, 10, 50, 1};
  NoiseInjector inj(spec, 0);
  Tensor x = slice_rows(data_->features, 0, 8);
  Tensor first = predict(*fq_, x, &inj);
  const uint64_t per_pass = inj.draws();
  EXPECT_GT(per_pass, 0u);
  Tensor second = predict(*fq_, x, &inj);
  EXPECT_EQ(inj.draws(), 2 * per_pass);
  EXPECT_NE(first.storage(), second.storage());
}

TEST_F(NoisyToy, FloatNetworksIgnoreNoise) {
  Network fp = build_kws_net(testing::toy_kws(9));
  NoiseInjector inj(NoiseSpec{30, 30, 150, 2}, 0);
  Tensor x = slice_rows(data_->features, 0, 4);
  EXPECT_EQ(predict(fp, x, &inj).storage(), predict(fp, x).storage());
  EXPECT_EQ(inj.draws(), 0u);
}

TEST_F(NoisyToy, ZeroSpecTrainingEqualsFineTuning) {
  TrainOptions o;
  o.epochs = 1;
  o.optimizer = OptimizerConfig::adam(0.001f);
  o.seed = 4;
  Network plain = finetune_fq(*fq_, *data_, o).net;
  Network noisy = noise_aware_train(*fq_, *data_, NoiseSpec{}, o).net;
  for (size_t i = 0; i < plain.params.size(); ++i) EXPECT_EQ(plain.params[i].value.storage(), noisy.params[i].value.storage());
}

}  // namespace
}  // namespace fqconv
