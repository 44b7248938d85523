// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "fqconv/tensor.hpp"

// Raw batched kernels shared by the autograd ops, the fake-quant exact path
// and the integer runtime. Every output element accumulates its terms in
// ascending (input channel, kernel row, kernel tap) order starting from zero.
namespace fqconv::kernels {

/// Geometry of a batched cross-correlation. 1-D convolutions use in_h = k_h = 1.
struct ConvGeometry {
  int64_t batch = 1;
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t in_h = 1;
  int64_t in_w = 1;
  int64_t k_h = 1;
  int64_t k_w = 1;
  int64_t stride = 1;
  int64_t dilation = 1;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
  int64_t out_h = 1;
  int64_t out_w = 1;

  int64_t fan_in() const { return in_channels * k_h * k_w; }
  int64_t input_size() const { return batch * in_channels * in_h * in_w; }
  int64_t output_size() const { return batch * out_channels * out_h * out_w; }
  int64_t kernel_size() const { return out_channels * in_channels * k_h * k_w; }
};

/// Geometry for input [N, C_in, L] and kernel [C_out, C_in, K].
ConvGeometry conv1d_geometry(const Shape& input, const Shape& kernel, int64_t dilation, int64_t padding);
/// Geometry for input [N, C_in, H, W] and kernel [C_out, C_in, Kh, Kw].
ConvGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int64_t stride, int64_t padding);

void conv_forward(std::span<const float> input, std::span<const float> kernel, std::span<float> output,
                  const ConvGeometry& g);
/// Accumulates into grad_input.
void conv_backward_input(std::span<const float> grad_output, std::span<const float> kernel,
                         std::span<float> grad_input, const ConvGeometry& g);
/// Accumulates into grad_kernel.
void conv_backward_kernel(std::span<const float> grad_output, std::span<const float> input,
                          std::span<float> grad_kernel, const ConvGeometry& g);

/// Counts arithmetic performed by the integer kernels.
struct OpCounter {
  uint64_t multiplications = 0;
  uint64_t additions = 0;
};

/// Integer cross-correlation over codes. Ternary weights ({-1, 0, 1}) are
/// dispatched to an add/subtract loop that performs no multiplications.
void conv_forward_int(std::span<const int32_t> input, std::span<const int8_t> kernel, std::span<int32_t> output,
                      const ConvGeometry& g, OpCounter* counter = nullptr);
void conv_forward_int(std::span<const int32_t> input, std::span<const int32_t> kernel, std::span<int32_t> output,
                      const ConvGeometry& g, OpCounter* counter = nullptr);

/// Geometry of a feature-axis dense layer: input [B, N_in, P] -> [B, N_out, P].
struct DenseGeometry {
  int64_t batch = 1;
  int64_t in_features = 1;
  int64_t out_features = 1;
  int64_t positions = 1;
};

/// output = weights . input (+ bias). `bias` may be empty.
void dense_forward(std::span<const float> input, std::span<const float> weights, std::span<const float> bias,
                   std::span<float> output, const DenseGeometry& g);
void dense_backward(std::span<const float> grad_output, std::span<const float> input, std::span<const float> weights,
                    std::span<float> grad_input, std::span<float> grad_weights, std::span<float> grad_bias,
                    const DenseGeometry& g);

/// Per-(batch, channel) arithmetic mean over `spatial` trailing elements.
void mean_pool(std::span<const float> input, std::span<float> output, int64_t rows, int64_t spatial);

}  // namespace fqconv::kernels
