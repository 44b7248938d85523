// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "fqconv/error.hpp"
#include "fqconv/training.hpp"
#include "fqconv/transforms.hpp"

namespace fqconv {

std::string stage_name(int weight_bits, int act_bits, bool fully_quantized) {
  const std::string prefix = fully_quantized ? "FQ" : "Q";
  if (weight_bits < 10 && act_bits < 10) return prefix + std::to_string(weight_bits) + std::to_string(act_bits);
  return prefix + std::to_string(weight_bits) + "_" + std::to_string(act_bits);
}

void GradualSchedule::validate() const {
  std::set<std::string> seen = {"FP"};
  std::set<std::string> quantized;
  int last_w = 1 << 30, last_a = 1 << 30;
  for (const StageSpec& s : stages) {
    if (s.id.empty()) throw ConfigError("schedule stage without an id");
    if (s.id == "FP") throw ConfigError("stage id 'FP' is reserved for the full-precision baseline");
    if (seen.count(s.id)) throw ConfigError("duplicate schedule stage '" + s.id + "'");
    if (!seen.count(s.init)) throw ConfigError("stage '" + s.id + "' is initialized from unknown stage '" + s.init + "'");
    if (!s.teacher.empty() && !seen.count(s.teacher)) {
      throw ConfigError("stage '" + s.id + "' is taught by unknown stage '" + s.teacher + "'");
    }
    if (s.epochs < 0) throw ConfigError("stage '" + s.id + "' has negative epochs");
    if (!s.is_float()) {
      if (s.weight_bits < 2 || s.weight_bits > 8 || s.act_bits < 2 || s.act_bits > 16) {
        throw ConfigError("stage '" + s.id + "' bitwidths must be in [2, 8] for weights and [2, 16] for activations");
      }
      if (s.weight_bits > last_w || s.act_bits > last_a) {
        throw ConfigError("stage '" + s.id + "' raises the bitwidth; schedules must be non-increasing");
      }
      last_w = s.weight_bits;
      last_a = s.act_bits;
    } else if (s.fully_quantized) {
      throw ConfigError("stage '" + s.id + "' cannot be both float and fully quantized");
    }
    if (s.fully_quantized && !quantized.count(s.init)) {
      throw ConfigError("fully quantized stage '" + s.id + "' must be initialized from a quantized stage");
    }
    seen.insert(s.id);
    if (!s.is_float()) quantized.insert(s.id);
  }
}

namespace {

StageSpec make_stage(int w, int a, std::string init, std::string teacher, int epochs, bool fq = false) {
  StageSpec s;
  s.id = stage_name(w, a, fq);
  s.weight_bits = w;
  s.act_bits = a;
  s.init = std::move(init);
  s.teacher = std::move(teacher);
  s.epochs = epochs;
  s.fully_quantized = fq;
  return s;
}

}  // namespace

GradualSchedule kws_schedule(int epochs) {
  GradualSchedule g;
  g.stages = {make_stage(6, 6, "FP", "FP", epochs), make_stage(4, 5, "Q66", "Q66", epochs),
              make_stage(3, 5, "Q45", "Q45", epochs), make_stage(2, 4, "Q35", "Q45", epochs),
              make_stage(2, 4, "Q24", "Q45", epochs, true)};
  g.stages.back().optimizer = OptimizerConfig::adam(0.001f);
  return g;
}

GradualSchedule resnet_schedule(int epochs) {
  GradualSchedule g;
  StageSpec fp1;
  fp1.id = "FP1";
  fp1.weight_bits = 32;
  fp1.act_bits = 32;
  fp1.init = "Q88";
  fp1.teacher = "Q88";
  fp1.epochs = epochs;
  g.stages = {make_stage(8, 8, "FP", "FP", epochs), fp1,
              make_stage(6, 6, "Q88", "FP1", epochs), make_stage(5, 5, "Q66", "FP1", epochs),
              make_stage(4, 4, "Q55", "FP1", epochs), make_stage(3, 3, "Q44", "FP1", epochs),
              make_stage(2, 2, "Q33", "FP1", epochs)};
  return g;
}

GradualSchedule direct_schedule(int weight_bits, int act_bits, int epochs) {
  GradualSchedule g;
  g.stages = {make_stage(weight_bits, act_bits, "FP", "FP", epochs)};
  return g;
}

Network initialize_stage(const StageSpec& stage, const Network& init) {
  if (init.mode == NetMode::kFullyQuantized) {
    throw UsageError("stage '" + stage.id + "' cannot be initialized from a fully quantized network");
  }
  if (stage.is_float()) {
    Network net = init;
    net.mode = NetMode::kFloat;
    return net;
  }
  Network net = init.mode == NetMode::kFloat ? to_fake_quant(init, stage.weight_bits, stage.act_bits) : init;
  set_bitwidths(net, stage.weight_bits, stage.act_bits);
  if (stage.fully_quantized) return replace_bn_relu(net);
  return net;
}

GradualResult run_gradual_quantization(const GradualSchedule& schedule, const Network& fp_baseline,
                                       const Dataset& data, const GradualOptions& options) {
  schedule.validate();
  GradualResult result;
  std::map<std::string, Network> nets;
  std::map<std::string, double> accuracy;
  nets.emplace("FP", fp_baseline);
  accuracy["FP"] = evaluate(fp_baseline, data, Split::kVal).accuracy;

  for (const StageSpec& stage : schedule.stages) {
    auto done = options.completed.find(stage.id);
    if (done != options.completed.end()) {
      StageResult r;
      r.net = done->second;
      r.best_val = evaluate(r.net, data, Split::kVal);
      accuracy[stage.id] = r.best_val.accuracy;
      nets.emplace(stage.id, r.net);
      result.order.push_back(stage.id);
      result.stages.emplace(stage.id, std::move(r));
      continue;
    }
    Network init = initialize_stage(stage, nets.at(stage.init));
    TrainOptions o = options.base;
    o.stage_id = stage.id;
    o.epochs = stage.epochs;
    if (stage.optimizer) o.optimizer = *stage.optimizer;
    std::string teacher = stage.teacher;
    if (schedule.promote_teacher && !teacher.empty()) {
      for (const auto& [id, acc] : accuracy) {
        if (acc > accuracy.at(teacher)) teacher = id;
      }
    }
    o.teacher = teacher.empty() ? nullptr : &nets.at(teacher);
    StageResult r = stage.fully_quantized ? finetune_fq(std::move(init), data, o) : train_stage(std::move(init), data, o);
    accuracy[stage.id] = r.best_val.accuracy;
    nets.emplace(stage.id, r.net);
    if (options.on_stage) options.on_stage(stage, r);
    result.order.push_back(stage.id);
    const bool below = r.best_val.accuracy < schedule.accuracy_floor;
    result.stages.emplace(stage.id, std::move(r));
    if (below) {
      result.stopped_at = stage.id;
      break;
    }
  }
  return result;
}

}  // namespace fqconv
