// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "fqconv/error.hpp"

namespace fqconv {

float QuantConfig::scale() const { return std::exp(log_scale); }

void QuantConfig::validate() const {
  if (bits < 2 || bits > 16) throw ValidationError("quantizer bitwidth must be in [2, 16], got " + std::to_string(bits));
  if (lower_bound != -1.0f && lower_bound != 0.0f) {
    throw ValidationError("quantizer lower bound must be -1 or 0, got " + std::to_string(lower_bound));
  }
  if (!std::isfinite(log_scale)) throw ValidationError("quantizer log-scale is not finite");
}

bool operator==(const QuantConfig& a, const QuantConfig& b) {
  return a.bits == b.bits && a.lower_bound == b.lower_bound && a.log_scale == b.log_scale;
}

float round_half_away(float x) { return std::round(x); }

namespace {

// Code for a value already divided by the scale.
inline int32_t code_of_normalized(float t, float lower_bound, int levels) {
  const float clipped = std::clamp(t, lower_bound, 1.0f);
  return static_cast<int32_t>(round_half_away(clipped * static_cast<float>(levels)));
}

}  // namespace

int32_t quantize_code(float x, const QuantConfig& cfg) {
  return code_of_normalized(x / cfg.scale(), cfg.lower_bound, cfg.levels());
}

float dequantize_code(int32_t code, const QuantConfig& cfg) {
  return cfg.scale() * (static_cast<float>(code) / static_cast<float>(cfg.levels()));
}

Tensor quantize_core(const Tensor& x, float lower_bound, int levels) {
  if (levels < 1) throw ValidationError("quantize_core needs at least one positive level");
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(code_of_normalized(x[i], lower_bound, levels)) / static_cast<float>(levels);
  }
  return out;
}

Tensor learned_quantize(const Tensor& x, const QuantConfig& cfg) {
  cfg.validate();
  const float scale = cfg.scale();
  const int n = cfg.levels();
  const float nf = static_cast<float>(n);
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    const int32_t code = code_of_normalized(x[i] / scale, cfg.lower_bound, n);
    out[i] = scale * (static_cast<float>(code) / nf);
  }
  return out;
}

QuantizeGradients learned_quantize_backward(const Tensor& upstream, const Tensor& x, const QuantConfig& cfg) {
  if (!same_shape(upstream.shape(), x.shape())) {
    throw DimensionError("learned_quantize_backward: upstream " + shape_to_string(upstream.shape()) + " vs input " +
                         shape_to_string(x.shape()));
  }
  const float scale = cfg.scale();
  const float b = cfg.lower_bound;
  QuantizeGradients out{Tensor(x.shape()), 0.0f};
  double grad_s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    const float t = x[i] / scale;
    const float g = upstream[i];
    if (t > b && t < 1.0f) {
      out.grad_x[i] = g;
    } else if (t >= 1.0f) {
      if (t > 1.0f) grad_s += static_cast<double>(g) * scale;
    } else if (t < b) {
      grad_s += static_cast<double>(g) * b * scale;
    }
  }
  out.grad_log_scale = static_cast<float>(grad_s);
  return out;
}

IntTensor to_integer_codes(const Tensor& x, const QuantConfig& cfg) {
  cfg.validate();
  IntTensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data[static_cast<size_t>(i)] = quantize_code(x[i], cfg);
  return out;
}

Tensor from_integer_codes(const IntTensor& codes, const QuantConfig& cfg) {
  Tensor out(codes.shape);
  for (int64_t i = 0; i < codes.size(); ++i) out[i] = dequantize_code(codes.data[static_cast<size_t>(i)], cfg);
  return out;
}

float accumulator_gain(const QuantConfig& weights, const QuantConfig& activations) {
  return (weights.scale() * activations.scale()) /
         static_cast<float>(static_cast<int64_t>(weights.levels()) * activations.levels());
}

int32_t requantize_accumulator(int64_t accumulator, float gain, const QuantConfig& output) {
  return quantize_code(gain * static_cast<float>(accumulator), output);
}

Var learned_quantize(const Var& x, const Var& log_scale, int bits, float lower_bound) {
  if (!x.valid() || !log_scale.valid()) throw UsageError("learned_quantize on an unbound Var");
  if (log_scale.value().size() != 1) throw DimensionError("learned_quantize log-scale must have one element");
  QuantConfig cfg{bits, lower_bound, log_scale.value()[0]};
  Tape* t = x.tape();
  Tensor out = learned_quantize(x.value(), cfg);
  const int x_id = x.id();
  return t->push(std::move(out), {x, log_scale}, [t, x_id, cfg](std::span<const float> gout, std::span<float* const> gin) {
    const Tensor& xv = t->value(x_id);
    const float scale = cfg.scale();
    const float b = cfg.lower_bound;
    double grad_s = 0.0;
    for (int64_t i = 0; i < xv.size(); ++i) {
      const float r = xv[i] / scale;
      const float g = gout[static_cast<size_t>(i)];
      if (r > b && r < 1.0f) {
        if (gin[0]) gin[0][i] += g;
      } else if (r > 1.0f) {
        grad_s += static_cast<double>(g) * scale;
      } else if (r < b) {
        grad_s += static_cast<double>(g) * b * scale;
      }
    }
    if (gin[1]) gin[1][0] += static_cast<float>(grad_s);
  });
}

Tensor& ShadowWeights::master() {
  if (!master_) throw UsageError("shadow weights are not initialized");
  return *master_;
}

const Tensor& ShadowWeights::master() const {
  if (!master_) throw UsageError("shadow weights are not initialized");
  return *master_;
}

Tensor sync_shadow(const ShadowWeights& shadow, const QuantConfig& cfg) {
  if (!shadow.has_value()) throw UsageError("sync_shadow: no shadow copy for this layer");
  return learned_quantize(shadow.master(), cfg);
}

float route_shadow_gradient(ShadowWeights& shadow, const Tensor& quantized_grad, const QuantConfig& cfg) {
  Tensor& master = shadow.master();
  QuantizeGradients g = learned_quantize_backward(quantized_grad, master, cfg);
  std::span<float> dst = master.grad();
  for (int64_t i = 0; i < master.size(); ++i) dst[static_cast<size_t>(i)] += g.grad_x[i];
  return g.grad_log_scale;
}

}  // namespace fqconv
