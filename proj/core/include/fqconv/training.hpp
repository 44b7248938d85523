// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fqconv/autograd.hpp"
#include "fqconv/data.hpp"
#include "fqconv/network.hpp"
#include "fqconv/noise.hpp"

namespace fqconv {

struct DistillConfig {
  float temperature = 4.0f;
  float alpha = 0.9f;
  /// Throws ConfigError unless T > 0 and alpha in [0, 1].
  void validate() const;
};

/// alpha T^2 CE(softmax(t / T), softmax(s / T)) + (1 - alpha) CE(onehot, softmax(s)),
/// averaged over the batch. With alpha = 0 this is exactly the cross-entropy.
Var distillation_loss(const Var& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
                      const DistillConfig& cfg);
/// Single sample, logits [K].
float distillation_loss(const Tensor& student_logits, const Tensor& teacher_logits, int label, const DistillConfig& cfg);

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  float learning_rate = 0.01f;
  /// Adam: learning rate multiplied by this after every epoch.
  float lr_decay = 0.98f;
  /// SGD: Nesterov momentum.
  float momentum = 0.9f;
  /// Applied to weight tensors only.
  float weight_decay = 0.0f;
  /// SGD: learning rate multiplied by step_gamma at each milestone epoch.
  std::vector<int> milestones;
  float step_gamma = 0.2f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;

  static OptimizerConfig adam(float lr = 0.01f, float decay = 0.98f);
  static OptimizerConfig sgd(float lr = 0.1f, std::vector<int> milestones = {});
  /// Learning rate used during zero-based epoch `epoch`.
  float learning_rate_at(int epoch) const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}
  void set_epoch(int epoch) { lr_ = cfg_.learning_rate_at(epoch); }
  float learning_rate() const { return lr_; }
  /// Applies one update from the gradients stored on the parameters, then
  /// zeroes them.
  void step(Network& net, std::span<const int> params);

 private:
  OptimizerConfig cfg_;
  float lr_ = 0.0f;
  int64_t t_ = 0;
  std::map<int, std::vector<float>> m_;
  std::map<int, std::vector<float>> v_;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  int64_t samples = 0;
};

/// Mean cross-entropy and top-1 accuracy on one split.
EvalResult evaluate(const Network& net, const Dataset& data, Split split, NoiseInjector* noise = nullptr);

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;
};

/// One JSON object on a single line.
std::string to_json_line(const EpochRecord& r);

struct TrainOptions {
  std::string stage_id = "FP";
  int epochs = 10;
  int64_t batch_size = 32;
  OptimizerConfig optimizer;
  DistillConfig distill;
  const Network* teacher = nullptr;
  uint64_t seed = 0;
  /// Random flips and crops on image batches.
  bool augment = false;
  /// Noise injected on every training forward pass.
  std::optional<NoiseSpec> noise;
  /// Receives one JSON line per epoch.
  std::ostream* log = nullptr;
};

struct StageResult {
  /// Snapshot with the best validation accuracy (ties: lower validation loss).
  Network net;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  EvalResult best_val;
};

/// Trains for options.epochs epochs and keeps the best validation snapshot.
/// Epoch 0 is the network as given. Throws DivergenceError on a NaN loss.
StageResult train_stage(Network net, const Dataset& data, const TrainOptions& options);

/// Fine-tunes a network produced by replace_bn_relu; scales stay trainable.
StageResult finetune_fq(Network net, const Dataset& data, const TrainOptions& options);

/// train_stage with noise injected on every forward pass.
StageResult noise_aware_train(Network net, const Dataset& data, const NoiseSpec& spec, TrainOptions options);

struct StageSpec {
  std::string id;
  /// 32 means the stage trains a float network.
  int weight_bits = 8;
  int act_bits = 8;
  /// Stage (or "FP") whose parameters initialize this one.
  std::string init = "FP";
  /// Stage (or "FP") providing soft labels; empty trains on hard labels.
  std::string teacher;
  int epochs = 10;
  std::optional<OptimizerConfig> optimizer;
  /// Apply replace_bn_relu to the initializer and fine-tune the result.
  bool fully_quantized = false;

  bool is_float() const { return weight_bits >= 32 && act_bits >= 32; }
};

struct GradualSchedule {
  std::vector<StageSpec> stages;
  /// Stop when a stage's best validation accuracy is below this.
  double accuracy_floor = 0.0;
  /// Use the most accurate finished stage as teacher instead of the named one
  /// whenever it is better.
  bool promote_teacher = false;

  /// Throws ConfigError on duplicate ids, dangling references or increasing
  /// quantized bitwidths.
  void validate() const;
};

/// "Q66", "Q45", "FQ24"; bitwidths of 10 or more are written "Q10_8".
std::string stage_name(int weight_bits, int act_bits, bool fully_quantized = false);

/// FP -> Q66 -> Q45 -> Q35 -> Q24 -> FQ24 with the initializer and trainer
/// networks of the keyword-spotting training sequence.
GradualSchedule kws_schedule(int epochs);
/// Q88 -> FP1 -> Q66 -> Q55 -> Q44 -> Q33 -> Q22 with FP1 as trainer.
GradualSchedule resnet_schedule(int epochs);
/// Single stage straight from FP, taught by FP.
GradualSchedule direct_schedule(int weight_bits, int act_bits, int epochs);

struct GradualOptions {
  /// Template for every stage; epochs, optimizer, teacher and stage_id are
  /// replaced per stage.
  TrainOptions base;
  /// Stages already trained (for resume); they are reused, not retrained.
  std::map<std::string, Network> completed;
  /// Called after each newly trained stage.
  std::function<void(const StageSpec&, const StageResult&)> on_stage;
};

struct GradualResult {
  std::map<std::string, StageResult> stages;
  std::vector<std::string> order;
  /// Stage that fell below the accuracy floor, or empty.
  std::string stopped_at;
};

GradualResult run_gradual_quantization(const GradualSchedule& schedule, const Network& fp_baseline,
                                       const Dataset& data, const GradualOptions& options);

/// Network for `stage` initialized from `init`: bitwidths replaced, scales
/// carried over, BN/ReLU replaced for fully quantized stages.
Network initialize_stage(const StageSpec& stage, const Network& init);

}  // namespace fqconv
