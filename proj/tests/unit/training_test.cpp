// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fqconv/builders.hpp"
#include "fqconv/error.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/ops.hpp"
#include "fqconv/training.hpp"
#include "fqconv/transforms.hpp"
#include "test_support.hpp"

namespace fqconv {
namespace {

using testing::quick_quantized;
using testing::random_tensor;
using testing::toy_kws;
using testing::toy_sequences;

double oracle_distill(const Tensor& s, const Tensor& t, int label, double T, double alpha) {
  const size_t k = static_cast<size_t>(s.size());
  auto log_softmax = [&](const Tensor& z, double temp) {
    std::vector<long double> out(k);
    long double m = z[0] / temp;
    for (size_t i = 0; i < k; ++i) m = std::max<long double>(m, z[static_cast<int64_t>(i)] / temp);
    long double sum = 0.0L;
    for (size_t i = 0; i < k; ++i) sum += std::exp(z[static_cast<int64_t>(i)] / temp - m);
    for (size_t i = 0; i < k; ++i) out[i] = z[static_cast<int64_t>(i)] / temp - m - std::log(sum);
    return out;
  };
  const auto ls_t = log_softmax(s, T), lt_t = log_softmax(t, T), ls = log_softmax(s, 1.0);
  long double soft = 0.0L;
  for (size_t i = 0; i < k; ++i) soft -= std::exp(lt_t[i]) * ls_t[i];
  return static_cast<double>(alpha * T * T * soft - (1.0 - alpha) * ls[static_cast<size_t>(label)]);
}

TEST(Distillation, AlphaZeroIsCrossEntropy) {
  std::mt19937_64 rng(1);
  Tensor s = random_tensor({6}, rng, -3, 3), t = random_tensor({6}, rng, -3, 3);
  DistillConfig c{4.0f, 0.0f};
  EXPECT_EQ(distillation_loss(s, t, 2, c), softmax_cross_entropy(s, one_hot(std::vector<int>{2}, 6).reshaped({6})));
}

TEST(Distillation, MatchedLogitsGiveTeacherEntropy) {
  std::mt19937_64 rng(2);
  Tensor z = random_tensor({5}, rng, -2, 2);
  DistillConfig c{3.0f, 1.0f};
  Tensor p = softmax(z, 3.0f);
  double entropy = 0.0;
  for (float v : p.data()) entropy -= v * std::log(v);
  EXPECT_NEAR(distillation_loss(z, z, 0, c), 9.0 * entropy, 1e-5);

  Tensor zs = z.reshaped({1, 5});
  zs.set_requires_grad(true);
  Tape tape;
  std::vector<int> label{0};
  tape.backward(distillation_loss(tape.parameter(zs), z.reshaped({1, 5}), label, c));
  for (float g : zs.grad()) EXPECT_NEAR(g, 0.0f, 1e-6);
}

TEST(Distillation, MatchesExtendedPrecision) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s = random_tensor({10}, rng, -6, 6), t = random_tensor({10}, rng, -6, 6);
    const int label = trial % 10;
    const float alpha = static_cast<float>(trial % 5) / 4.0f;
    const double oracle = oracle_distill(s, t, label, 4.0, alpha);
    EXPECT_NEAR(distillation_loss(s, t, label, DistillConfig{4.0f, alpha}), oracle, 1e-5 * std::fabs(oracle));
  }
}

TEST(Distillation, Validation) {
  EXPECT_THROW((DistillConfig{0.0f, 0.5f}).validate(), ConfigError);
  EXPECT_THROW((DistillConfig{2.0f, 1.5f}).validate(), ConfigError);
}

TEST(Optimizer, Schedules) {
  OptimizerConfig a = OptimizerConfig::adam(0.01f, 0.5f);
  EXPECT_FLOAT_EQ(a.learning_rate_at(2), 0.0025f);
  OptimizerConfig s = OptimizerConfig::sgd(0.1f, {60, 120});
  EXPECT_FLOAT_EQ(s.learning_rate_at(59), 0.1f);
  EXPECT_FLOAT_EQ(s.learning_rate_at(60), 0.02f);
  EXPECT_FLOAT_EQ(s.learning_rate_at(150), 0.004f);
}

TEST(TrainStage, ZeroLearningRateKeepsWeights) {
  Dataset d = toy_sequences(4, 200);
  Network net = build_kws_net(toy_kws(4));
  TrainOptions o;
  o.epochs = 2;
  o.optimizer = OptimizerConfig::adam(0.0f);
  StageResult r = train_stage(net, d, o);
  for (size_t i = 0; i < net.params.size(); ++i) {
    const Param& p = net.params[i];
    if (p.role == ParamRole::kRunningMean || p.role == ParamRole::kRunningVar) continue;
    EXPECT_EQ(r.net.params[i].value.storage(), p.value.storage()) << p.name;
  }
}

TEST(TrainStage, LogHasOneRecordPerEpoch) {
  Dataset d = toy_sequences(5, 200);
  TrainOptions o;
  o.epochs = 3;
  o.stage_id = "Q66";
  std::ostringstream log;
  o.log = &log;
  StageResult r = train_stage(build_kws_net(toy_kws(5)), d, o);
  ASSERT_EQ(r.log.size(), 3u);
  for (int e = 0; e < 3; ++e) {
    EXPECT_EQ(r.log[static_cast<size_t>(e)].epoch, e + 1);
    EXPECT_EQ(r.log[static_cast<size_t>(e)].stage, "Q66");
  }
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    EXPECT_EQ(line.front(), '{');
    ++n;
  }
  EXPECT_EQ(n, 3);
  EXPECT_EQ(r.best_val.accuracy, std::max({r.log[0].val_accuracy, r.log[1].val_accuracy, r.log[2].val_accuracy,
                                           evaluate(build_kws_net(toy_kws(5)), d, Split::kVal).accuracy}));
}

TEST(TrainStage, SeparableTaskIsLearned) {
  SequenceTaskOptions so;
  so.num_classes = 2;
  so.num_samples = 200;
  so.jitter = 0.0f;
  so.separation = 3.0f;
  so.seed = 6;
  Dataset d = gen_sequence_classes(so);
  TrainOptions o;
  o.epochs = 50;
  StageResult r = train_stage(build_kws_net(toy_kws(6)), d, o);
  double best = 0.0;
  for (const EpochRecord& e : r.log) best = std::max(best, e.train_accuracy);
  EXPECT_GE(best, 0.99);
}

TEST(TrainStage, Deterministic) {
  Dataset d = toy_sequences(7, 200);
  TrainOptions o;
  o.epochs = 2;
  o.seed = 9;
  Network a = train_stage(to_fake_quant(build_kws_net(toy_kws(7)), 4, 4), d, o).net;
  Network b = train_stage(to_fake_quant(build_kws_net(toy_kws(7)), 4, 4), d, o).net;
  for (size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].value.storage(), b.params[i].value.storage());
}

TEST(TrainStage, DivergenceIsReported) {
  Dataset d = toy_sequences(8, 100);
  Network net = build_kws_net(toy_kws(8));
  for (Param& p : net.params) {
    if (p.role == ParamRole::kWeight) p.value[0] = NAN;
  }
  TrainOptions o;
  o.epochs = 1;
  EXPECT_THROW(train_stage(net, d, o), DivergenceError);
}

TEST(Schedules, Naming) {
  EXPECT_EQ(stage_name(6, 6), "Q66");
  EXPECT_EQ(stage_name(2, 4, true), "FQ24");
  EXPECT_EQ(stage_name(16, 8), "Q16_8");
  GradualSchedule k = kws_schedule(3);
  std::vector<std::string> ids;
  for (const StageSpec& s : k.stages) ids.push_back(s.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"Q66", "Q45", "Q35", "Q24", "FQ24"}));
  EXPECT_NO_THROW(k.validate());
  GradualSchedule r = resnet_schedule(3);
  ids.clear();
  for (const StageSpec& s : r.stages) ids.push_back(s.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"Q88", "FP1", "Q66", "Q55", "Q44", "Q33", "Q22"}));
  EXPECT_NO_THROW(r.validate());
}

TEST(Schedules, ValidationRejectsBadGraphs) {
  GradualSchedule g = kws_schedule(1);
  g.stages[1].init = "Q99";
  EXPECT_THROW(g.validate(), ConfigError);
  g = kws_schedule(1);
  std::swap(g.stages[0], g.stages[1]);
  EXPECT_THROW(g.validate(), ConfigError);
  g = kws_schedule(1);
  g.stages[2].weight_bits = 5;
  EXPECT_THROW(g.validate(), ConfigError);
  g = kws_schedule(1);
  g.stages.push_back(g.stages[0]);
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Gradual, StageInitIsParameterExact) {
  Dataset d = toy_sequences(10, 200);
  Network q66 = quick_quantized(d, 10, 6, 6);
  StageSpec s;
  s.id = "Q45";
  s.weight_bits = 4;
  s.act_bits = 5;
  Network init = initialize_stage(s, q66);
  Network manual = q66;
  set_bitwidths(manual, 4, 5);
  Tensor x = slice_rows(d.features, 0, 16);
  EXPECT_EQ(predict(init, x).storage(), predict(manual, x).storage());
  for (size_t i = 0; i < q66.params.size(); ++i) EXPECT_EQ(init.params[i].value.storage(), q66.params[i].value.storage());
}

TEST(Gradual, SingleStageIsOneTrainStage) {
  Dataset d = toy_sequences(11, 200);
  TrainOptions o;
  o.epochs = 1;
  o.seed = 3;
  Network fp = train_stage(build_kws_net(toy_kws(11)), d, o).net;
  GradualSchedule schedule = direct_schedule(8, 8, 1);
  GradualOptions go;
  go.base = o;
  GradualResult g = run_gradual_quantization(schedule, fp, d, go);
  const StageSpec& spec = schedule.stages.at(0);
  TrainOptions direct = o;
  direct.stage_id = spec.id;
  direct.epochs = spec.epochs;
  if (spec.optimizer) direct.optimizer = *spec.optimizer;
  direct.teacher = &fp;
  Network ref = train_stage(initialize_stage(spec, fp), d, direct).net;
  const Network& got = g.stages.at(spec.id).net;
  for (size_t i = 0; i < ref.params.size(); ++i) EXPECT_EQ(got.params[i].value.storage(), ref.params[i].value.storage());
}

TEST(Gradual, ResumeReusesCompletedStages) {
  Dataset d = toy_sequences(12, 150);
  TrainOptions o;
  o.epochs = 1;
  Network fp = train_stage(build_kws_net(toy_kws(12)), d, o).net;
  GradualSchedule s = kws_schedule(1);
  s.stages.resize(2);
  GradualOptions go;
  go.base = o;
  int trained = 0;
  go.on_stage = [&](const StageSpec&, const StageResult&) { ++trained; };
  GradualResult first = run_gradual_quantization(s, fp, d, go);
  EXPECT_EQ(trained, 2);
  go.completed.emplace("Q66", first.stages.at("Q66").net);
  trained = 0;
  GradualResult second = run_gradual_quantization(s, fp, d, go);
  EXPECT_EQ(trained, 1);
  EXPECT_EQ(second.order, first.order);
}

TEST(Gradual, AccuracyFloorStops) {
  Dataset d = toy_sequences(13, 150);
  TrainOptions o;
  o.epochs = 0;
  Network fp = build_kws_net(toy_kws(13));
  GradualSchedule s = kws_schedule(0);
  s.accuracy_floor = 1.01;
  GradualOptions go;
  go.base = o;
  GradualResult g = run_gradual_quantization(s, fp, d, go);
  EXPECT_EQ(g.stopped_at, "Q66");
  EXPECT_EQ(g.order.size(), 1u);
}

TEST(FinetuneFq, ZeroEpochsReturnsInput) {
  Dataset d = toy_sequences(14, 200);
  Network fq = replace_bn_relu(quick_quantized(d, 14, 2, 4));
  TrainOptions o;
  o.epochs = 0;
  StageResult r = finetune_fq(fq, d, o);
  for (size_t i = 0; i < fq.params.size(); ++i) EXPECT_EQ(r.net.params[i].value.storage(), fq.params[i].value.storage());
}

TEST(FinetuneFq, ScalesAreTrained) {
  Dataset d = toy_sequences(15, 200);
  Network fq = replace_bn_relu(quick_quantized(d, 15, 2, 4));
  std::vector<int> scales;
  for (const Node& n : fq.nodes) {
    if (n.kind == NodeKind::kQuantize) scales.push_back(n.quant.scale_param);
  }
  const std::vector<int> trainable = trainable_params(fq);
  int trained = 0;
  for (int id : scales) trained += std::count(trainable.begin(), trainable.end(), id) > 0;
  EXPECT_GT(trained, 0);

  Network net = fq;
  for (int id : scales) net.param(id).value[0] -= 1.0f;
  Tape tape;
  for (int id : trainable) {
    net.param(id).value.set_requires_grad(true);
    net.param(id).value.zero_grad();
  }
  Tensor x = slice_rows(d.features, 0, 32);
  std::vector<int> labels(d.labels.begin(), d.labels.begin() + 32);
  ForwardOptions fo;
  fo.training = true;
  ForwardPass pass = forward(net, tape, x, fo);
  tape.backward(softmax_cross_entropy(pass.output(), one_hot(labels, d.num_classes)));
  double g = 0.0;
  for (int id : scales) g += std::fabs(net.param(id).value.grad()[0]);
  EXPECT_GT(g, 0.0);
}

TEST(FinetuneFq, RejectsBatchNormNetworks) {
  Dataset d = toy_sequences(16, 100);
  TrainOptions o;
  o.epochs = 1;
  EXPECT_THROW(finetune_fq(quick_quantized(d, 16, 2, 4), d, o), UsageError);
}

}  // namespace
}  // namespace fqconv
