// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fqconv/data.hpp"
#include "fqconv/kernels.hpp"
#include "fqconv/network.hpp"
#include "fqconv/quantizer.hpp"
#include "fqconv/transforms.hpp"

namespace fqconv {

/// One integer step. A conv plan accumulates S = sum w_int * a_int and maps S
/// to the next activation code by binning against sorted thresholds; an add
/// plan sums two code tensors on a shared grid and clips.
struct IntegerLayerPlan {
  enum class Kind { kConv, kAdd };

  Kind kind = Kind::kConv;
  std::string name;
  /// Code slots read and written; slot 0 holds the entry codes.
  int input = 0;
  int input_b = -1;
  int output = 1;

  NodeKind conv_kind = NodeKind::kConv1d;
  Shape kernel_shape;
  int dilation = 1;
  int stride = 1;
  int padding = 0;
  std::vector<int8_t> weight_codes;

  QuantConfig weight;
  QuantConfig input_cfg;
  QuantConfig output_cfg;
  float gain = 0.0f;
  /// T_j for j = min_code + 1 .. max_code: the smallest S whose code is >= j.
  /// Equal thresholds mean a code is skipped; a threshold of
  /// accumulator_bound + 1 means it is never reached.
  std::vector<int64_t> thresholds;
  /// Every reachable accumulator satisfies |S| <= accumulator_bound.
  int64_t accumulator_bound = 0;
  int32_t min_code = 0;
  int32_t max_code = 0;

  /// Output code for accumulator value s.
  int32_t bin(int64_t s) const;
};

/// Compiled pure-integer network. The optional full-precision head (per-frame
/// dense) and tail (pooling and classifier) run in float around the integer body.
struct IntegerModel {
  Shape input_shape;
  int num_classes = 0;
  bool has_head = false;
  Tensor head_weight;
  Tensor head_bias;
  QuantConfig entry;
  std::vector<IntegerLayerPlan> plans;
  /// Grid of every code slot.
  std::vector<QuantConfig> slot_configs;
  /// Source-network quantize node that produced each slot.
  std::vector<int> slot_nodes;
  int output_slot = 0;
  bool has_classifier = false;
  Tensor classifier_weight;
  Tensor classifier_bias;

  bool is_ternary() const;
};

/// Thresholds reproducing round(clip(k S / e^s_out, b, 1) n_out) for every
/// reachable S. Throws CompileError for weights wider than 8 bits or
/// accumulators that need more than 32 bits.
IntegerLayerPlan compile_layer(const FQConvLayer& layer, const QuantConfig& next);
/// Throws CompileError unless `net` is a calibrated fully quantized network
/// of the shape input -> [dense] -> quantize -> (conv|add -> quantize)* -> pool -> [dense].
IntegerModel compile(const Network& net);

/// Minimal signed width holding every S: ceil(log2(2 bound + 1)).
int accumulator_sizing(const IntegerLayerPlan& plan);
int accumulator_sizing(int64_t bound);

/// Runs one plan on batched codes [B, C, ...].
IntTensor run_plan(const IntegerLayerPlan& plan, const IntTensor& input, const IntTensor* input_b,
                   kernels::OpCounter* counter = nullptr);

/// All code slots for a float input batch.
std::vector<IntTensor> integer_codes(const IntegerModel& model, const Tensor& batch,
                                     kernels::OpCounter* counter = nullptr);
/// Class scores [B, K] for a float input batch.
Tensor integer_forward(const IntegerModel& model, const Tensor& batch, kernels::OpCounter* counter = nullptr);

struct ScanResult {
  int64_t checked = 0;
  int64_t mismatches = 0;
};

/// Compares binning with the float requantization rule at every reachable
/// accumulator value (every code pair for add plans).
ScanResult exhaustive_scan(const IntegerLayerPlan& plan);

struct EquivalenceReport {
  std::vector<std::string> layers;
  /// Per plan: max |integer code - float-path code| with float-path inputs.
  std::vector<int32_t> max_code_discrepancy;
  std::vector<int64_t> scan_mismatches;
  int64_t samples = 0;
  int64_t argmax_agreements = 0;
  double max_logit_rel_diff = 0.0;

  bool ok() const;
  std::string summary() const;
};

/// Runs the compiled model and the fake-quant float path on the same samples.
EquivalenceReport verify_equivalence(const IntegerModel& model, const Network& net, const Dataset& data, Split split,
                                     int64_t max_samples = -1);

}  // namespace fqconv
