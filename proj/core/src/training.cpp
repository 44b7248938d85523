// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

#include "fqconv/error.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/ops.hpp"

namespace fqconv {

void DistillConfig::validate() const {
  if (!(temperature > 0.0f)) throw ConfigError("distillation temperature must be positive");
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ConfigError("distillation alpha must lie in [0, 1]");
}

Var distillation_loss(const Var& student, const Tensor& teacher, std::span<const int> labels, const DistillConfig& cfg) {
  cfg.validate();
  const Shape& s = student.shape();
  if (!same_shape(s, teacher.shape())) {
    throw DimensionError("distillation_loss: student " + shape_to_string(s) + " vs teacher " +
                         shape_to_string(teacher.shape()));
  }
  const int k = static_cast<int>(s.back());
  Tensor hard_target = one_hot(labels, k);
  if (s.size() == 1) hard_target = hard_target.reshaped({k});
  Var hard = softmax_cross_entropy(student, hard_target);
  if (cfg.alpha == 0.0f) return hard;
  const float t = cfg.temperature;
  Var soft = softmax_cross_entropy(scale(student, 1.0f / t), softmax(teacher, t));
  return add(scale(soft, cfg.alpha * t * t), scale(hard, 1.0f - cfg.alpha));
}

float distillation_loss(const Tensor& student, const Tensor& teacher, int label, const DistillConfig& cfg) {
  Tape tape;
  tape.set_grad_enabled(false);
  const int labels[1] = {label};
  return distillation_loss(tape.constant(student), teacher, labels, cfg).value()[0];
}

OptimizerConfig OptimizerConfig::adam(float lr, float decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::kAdam;
  c.learning_rate = lr;
  c.lr_decay = decay;
  return c;
}

OptimizerConfig OptimizerConfig::sgd(float lr, std::vector<int> milestones) {
  OptimizerConfig c;
  c.kind = OptimizerKind::kSgd;
  c.learning_rate = lr;
  c.momentum = 0.9f;
  c.weight_decay = 5e-4f;
  c.milestones = std::move(milestones);
  return c;
}

float OptimizerConfig::learning_rate_at(int epoch) const {
  if (kind == OptimizerKind::kAdam) {
    return static_cast<float>(learning_rate * std::pow(static_cast<double>(lr_decay), epoch));
  }
  const auto passed = std::count_if(milestones.begin(), milestones.end(), [epoch](int m) { return m <= epoch; });
  return static_cast<float>(learning_rate * std::pow(static_cast<double>(step_gamma), static_cast<double>(passed)));
}

void Optimizer::step(Network& net, std::span<const int> params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (int id : params) {
    Param& p = net.param(id);
    Tensor& w = p.value;
    if (!w.has_grad()) continue;
    std::span<float> g = w.grad();
    const float wd = p.role == ParamRole::kWeight ? cfg_.weight_decay : 0.0f;
    const size_t n = static_cast<size_t>(w.size());
    std::vector<float>& m = m_[id];
    if (m.empty()) m.assign(n, 0.0f);
    if (cfg_.kind == OptimizerKind::kAdam) {
      std::vector<float>& v = v_[id];
      if (v.empty()) v.assign(n, 0.0f);
      for (size_t i = 0; i < n; ++i) {
        const float gi = g[i] + wd * w[static_cast<int64_t>(i)];
        m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * gi * gi;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        w[static_cast<int64_t>(i)] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + cfg_.epsilon));
      }
    } else {
      for (size_t i = 0; i < n; ++i) {
        const float gi = g[i] + wd * w[static_cast<int64_t>(i)];
        m[i] = cfg_.momentum * m[i] + gi;
        w[static_cast<int64_t>(i)] -= lr_ * (gi + cfg_.momentum * m[i]);
      }
    }
    w.zero_grad();
  }
}

namespace {

double cross_entropy_row(std::span<const float> z, int label) {
  double m = -std::numeric_limits<double>::infinity();
  for (float v : z) m = std::max(m, static_cast<double>(v));
  double s = 0.0;
  for (float v : z) s += std::exp(static_cast<double>(v) - m);
  return -(static_cast<double>(z[static_cast<size_t>(label)]) - m - std::log(s));
}

bool better(const EvalResult& a, const EvalResult& b) {
  return a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.loss < b.loss);
}

constexpr uint64_t kTrainNoiseStream = 1u << 20;
constexpr uint64_t kValNoiseStream = 1u << 21;

}  // namespace

EvalResult evaluate(const Network& net, const Dataset& data, Split split, NoiseInjector* noise) {
  std::vector<int64_t> rows = data.indices(split);
  if (rows.empty()) throw DataError(std::string("no ") + to_string(split) + " samples to evaluate");
  Tensor logits = predict(net, gather_rows(data.features, rows), noise);
  const int64_t k = logits.dim(1);
  EvalResult r;
  r.samples = static_cast<int64_t>(rows.size());
  std::vector<int> pred = argmax_rows(logits);
  int64_t correct = 0;
  double loss = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    const int label = data.labels[static_cast<size_t>(rows[i])];
    loss += cross_entropy_row(logits.data().subspan(i * static_cast<size_t>(k), static_cast<size_t>(k)), label);
    if (pred[i] == label) ++correct;
  }
  r.loss = loss / static_cast<double>(rows.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  return r;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["train_accuracy"] = r.train_accuracy;
  j["val_loss"] = r.val_loss;
  j["val_accuracy"] = r.val_accuracy;
  j["learning_rate"] = r.learning_rate;
  return j.dump();
}

StageResult train_stage(Network net, const Dataset& data, const TrainOptions& o) {
  if (o.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (o.batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (o.teacher) o.distill.validate();
  if (o.noise) {
    o.noise->validate();
    if (net.mode != NetMode::kFullyQuantized) throw UsageError("noise-aware training needs a fully quantized network");
  }
  data.validate();
  const std::vector<int64_t> train_rows = data.indices(Split::kTrain);
  if (train_rows.size() < 2) throw DataError("training split needs at least two samples");

  if (has_uninitialized_scales(net)) {
    std::vector<int64_t> first(train_rows.begin(), train_rows.begin() + std::min<int64_t>(256, train_rows.size()));
    calibrate(net, gather_rows(data.features, first));
  }
  const std::vector<int> params = trainable_params(net);
  for (Param& p : net.params) p.value.set_requires_grad(false);
  for (int id : params) net.param(id).value.set_requires_grad(true);

  Tensor teacher_logits;
  if (o.teacher && !o.augment) teacher_logits = predict(*o.teacher, gather_rows(data.features, train_rows));

  auto val_eval = [&](const Network& n) {
    if (!o.noise) return evaluate(n, data, Split::kVal);
    NoiseInjector inj(*o.noise, kValNoiseStream);
    return evaluate(n, data, Split::kVal, &inj);
  };

  StageResult result;
  result.net = net;
  result.best_val = val_eval(net);
  result.best_epoch = 0;

  Optimizer opt(o.optimizer);
  std::mt19937_64 rng(o.seed);
  std::vector<int64_t> order(train_rows.size());
  const int64_t n = static_cast<int64_t>(train_rows.size());
  for (int epoch = 1; epoch <= o.epochs; ++epoch) {
    opt.set_epoch(epoch - 1);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::optional<NoiseInjector> injector;
    if (o.noise) injector.emplace(*o.noise, kTrainNoiseStream + static_cast<uint64_t>(epoch));
    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0;
    for (int64_t b = 0; b + 1 < n; b += o.batch_size) {
      const int64_t e = std::min(n, b + o.batch_size);
      if (e - b < 2) break;
      std::vector<int64_t> rows(static_cast<size_t>(e - b));
      for (int64_t i = b; i < e; ++i) rows[static_cast<size_t>(i - b)] = train_rows[static_cast<size_t>(order[static_cast<size_t>(i)])];
      Tensor x = gather_rows(data.features, rows);
      if (o.augment) augment_images(x, rng);
      std::vector<int> labels = gather_labels(data, rows);

      Tape tape;
      ForwardOptions fo;
      fo.training = true;
      fo.noise = injector ? &*injector : nullptr;
      ForwardPass pass = forward(net, tape, x, fo);
      const Var& logits = pass.output();
      Var loss;
      if (o.teacher) {
        Tensor t;
        if (o.augment) {
          t = predict(*o.teacher, x);
        } else {
          std::vector<int64_t> pos(static_cast<size_t>(e - b));
          for (int64_t i = b; i < e; ++i) pos[static_cast<size_t>(i - b)] = order[static_cast<size_t>(i)];
          t = gather_rows(teacher_logits, pos);
        }
        loss = distillation_loss(logits, t, labels, o.distill);
      } else {
        loss = softmax_cross_entropy(logits, one_hot(labels, static_cast<int>(logits.shape().back())));
      }
      const float lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw DivergenceError("stage " + o.stage_id + " diverged at epoch " + std::to_string(epoch) +
                              " (loss is not finite)");
      }
      tape.backward(loss);
      opt.step(net, params);
      loss_sum += static_cast<double>(lv) * static_cast<double>(e - b);
      std::vector<int> pred = argmax_rows(logits.value());
      for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
      seen += e - b;
    }
    EpochRecord rec;
    rec.stage = o.stage_id;
    rec.epoch = epoch;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    EvalResult val = val_eval(net);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.learning_rate = opt.learning_rate();
    result.log.push_back(rec);
    if (o.log) *o.log << to_json_line(rec) << '\n';
    if (better(val, result.best_val)) {
      result.best_val = val;
      result.best_epoch = epoch;
      result.net = net;
    }
  }
  for (Param& p : result.net.params) {
    p.value.clear_grad();
    p.value.set_requires_grad(false);
  }
  return result;
}

StageResult finetune_fq(Network net, const Dataset& data, const TrainOptions& options) {
  if (net.mode != NetMode::kFullyQuantized) throw UsageError("finetune_fq expects a network produced by replace_bn_relu");
  return train_stage(std::move(net), data, options);
}

StageResult noise_aware_train(Network net, const Dataset& data, const NoiseSpec& spec, TrainOptions options) {
  options.noise = spec;
  return train_stage(std::move(net), data, options);
}

}  // namespace fqconv
