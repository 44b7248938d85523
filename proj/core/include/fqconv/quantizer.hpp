// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>

#include "fqconv/autograd.hpp"
#include "fqconv/tensor.hpp"

namespace fqconv {

/// Learned uniform quantizer: Q(x) = e^s * round(clip(x / e^s, b, 1) * n) / n
/// with n = 2^(bits-1) - 1 positive levels and lower bound b in {-1, 0}.
struct QuantConfig {
  int bits = 8;
  float lower_bound = -1.0f;
  float log_scale = 0.0f;

  /// Number of positive levels n.
  int levels() const { return (1 << (bits - 1)) - 1; }
  /// e^s; always positive.
  float scale() const;
  /// Real-valued step between adjacent levels, e^s / n.
  float lsb() const { return scale() / static_cast<float>(levels()); }
  int32_t min_code() const { return lower_bound < 0.0f ? -levels() : 0; }
  int32_t max_code() const { return levels(); }
  int num_codes() const { return static_cast<int>(max_code() - min_code()) + 1; }

  /// Throws ValidationError unless bits in [2, 16] and b in {-1, 0}.
  void validate() const;
};

bool operator==(const QuantConfig& a, const QuantConfig& b);

/// Rounds half away from zero. Used by every quantization path so that
/// training, code extraction and compiled thresholds agree on ties.
float round_half_away(float x);

/// Integer code of a single value: round(clip(x / e^s, b, 1) * n).
int32_t quantize_code(float x, const QuantConfig& cfg);
/// e^s * code / n.
float dequantize_code(int32_t code, const QuantConfig& cfg);

/// round(clip(x, b, 1) * n) / n elementwise.
Tensor quantize_core(const Tensor& x, float lower_bound, int levels);
Tensor learned_quantize(const Tensor& x, const QuantConfig& cfg);

struct QuantizeGradients {
  Tensor grad_x;
  float grad_log_scale = 0.0f;
};

/// Straight-through backward of learned_quantize: the rounding step is
/// treated as identity, leaving the clip surrogate e^s * clip(x / e^s, b, 1).
QuantizeGradients learned_quantize_backward(const Tensor& upstream, const Tensor& x, const QuantConfig& cfg);

IntTensor to_integer_codes(const Tensor& x, const QuantConfig& cfg);
Tensor from_integer_codes(const IntTensor& codes, const QuantConfig& cfg);

/// Gain k = e^{s_w} e^{s_a} / (n_w n_a) mapping an integer accumulator
/// S = sum w_int * a_int onto the real-valued pre-activation k * S.
float accumulator_gain(const QuantConfig& weights, const QuantConfig& activations);

/// Output code for accumulator value S feeding an output quantizer; this is
/// the rule both the fake-quant float path and compiled thresholds follow.
int32_t requantize_accumulator(int64_t accumulator, float gain, const QuantConfig& output);

/// Differentiable learned quantizer. `log_scale` is a one-element Var.
Var learned_quantize(const Var& x, const Var& log_scale, int bits, float lower_bound);

/// Full-precision master copy of a quantized weight tensor. Optimizers update
/// the master copy only; quantized weights are recomputed from it.
class ShadowWeights {
 public:
  ShadowWeights() = default;
  explicit ShadowWeights(Tensor master) : master_(std::move(master)) {}

  bool has_value() const { return master_.has_value(); }
  Tensor& master();
  const Tensor& master() const;
  void reset(Tensor master) { master_ = std::move(master); }

 private:
  std::optional<Tensor> master_;
};

/// Quantized view of the shadow copy. Throws UsageError if the shadow is unset.
Tensor sync_shadow(const ShadowWeights& shadow, const QuantConfig& cfg);
/// Routes the gradient received by the quantized weights to the shadow copy
/// (accumulated into master().grad()) and returns the gradient w.r.t. s.
float route_shadow_gradient(ShadowWeights& shadow, const Tensor& quantized_grad, const QuantConfig& cfg);

}  // namespace fqconv
