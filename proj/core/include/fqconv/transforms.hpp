// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "fqconv/network.hpp"
#include "fqconv/quantizer.hpp"

namespace fqconv {

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  bool populated = true;
};

/// Inference-mode BN as the affine gamma' x + beta' with
/// gamma' = gamma / sigma and beta' = beta - gamma mu / sigma,
/// sigma = sqrt(var + eps). Coefficients are kept in extended precision.
struct FoldedBatchNorm {
  std::vector<long double> scale;
  std::vector<long double> shift;

  double apply(size_t channel, double x) const;
};

/// Throws UsageError when the running statistics were never populated.
FoldedBatchNorm bn_fold(const BatchNormParams& params);
/// gamma (x - mu) / sigma + beta.
double bn_inference(const BatchNormParams& params, size_t channel, double x);
/// Parameters of BN node `node`; `populated` is false before any training update.
BatchNormParams batch_norm_params(const Network& net, int node);

/// Adds ln(median |gamma'|) to the log-scale; zero entries are ignored.
/// Throws ValidationError when every gamma' is zero.
QuantConfig absorb_bn_scale(const QuantConfig& cfg, std::span<const long double> gamma);

/// Removes batch norm and ReLU from a fake-quant network.
///
/// Conv -> BN -> ReLU -> Quantize(b=0): the median magnitude of gamma' scales
/// the conv weights and is added to the weight log-scale, the sign of gamma'
/// is folded per output channel, and the shift is dropped; the unsigned
/// quantizer then acts as the activation.
/// A BN feeding a residual add becomes a signed quantizer whose scale is tied
/// to the join. The full-precision dense -> BN head is folded exactly.
/// Applying the transform to a fully quantized network returns it unchanged.
Network replace_bn_relu(const Network& net);

/// Conv layer with quantized input, weights and output in a fully quantized network.
struct FQConvLayer {
  std::string name;
  int node = -1;
  int output_node = -1;
  NodeKind kind = NodeKind::kConv1d;
  Shape kernel_shape;
  int dilation = 1;
  int stride = 1;
  int padding = 0;
  ShadowWeights shadow;
  QuantConfig weight;
  QuantConfig input;
  QuantConfig output;
};

/// Every conv fed by a quantizer whose only consumer is a quantizer.
std::vector<FQConvLayer> fq_conv_layers(const Network& net);

}  // namespace fqconv
