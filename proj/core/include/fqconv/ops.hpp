// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "fqconv/autograd.hpp"
#include "fqconv/tensor.hpp"

namespace fqconv {

// ---------------------------------------------------------------------------
// Differentiable operations recorded on a Tape.
//
// Convolution and dense ops accept either a single sample or a batch with a
// leading batch axis; everything else is batched with the channel on axis 1.
// ---------------------------------------------------------------------------

/// input [C_in, L] or [N, C_in, L]; kernel [C_out, C_in, K].
Var conv1d(const Var& input, const Var& kernel, int dilation, int padding);
/// input [C_in, H, W] or [N, C_in, H, W]; kernel [C_out, C_in, Kh, Kw].
Var conv2d(const Var& input, const Var& kernel, int stride, int padding);
/// input [N_in], [B, N_in] or [B, N_in, P] (applied at each of P positions); weights [M, N_in]; bias [M] or unbound.
Var dense(const Var& input, const Var& weights, const Var& bias);
/// [B, C, spatial...] -> [B, C].
Var global_avg_pool(const Var& input);
/// Mean over the batch of -sum_k target_k log softmax(logits)_k. logits and
/// target are [K] or [B, K]; every target row must be a probability vector.
Var softmax_cross_entropy(const Var& logits, const Tensor& target);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
/// Adds a tensor that is treated as a constant by the backward pass.
Var add_constant(const Var& x, const Tensor& c);
Var scale(const Var& x, float factor);
/// Sum of all elements as a one-element tensor.
Var sum(const Var& x);

/// Mini-batch statistics observed by batch_norm (per channel, biased variance).
struct BatchStatistics {
  std::vector<double> mean;
  std::vector<double> variance;
  int64_t count = 0;
};

/// Training-mode batch normalization over axis 1 of [N, C, spatial...]:
/// gamma * (x - mean) / sqrt(var + eps) + beta with mini-batch statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, float eps, BatchStatistics* stats = nullptr);
/// Per-channel constant affine y = scale[c] * x + shift[c] over axis 1.
Var channel_affine(const Var& x, std::span<const float> scale, std::span<const float> shift);

/// Runs reverse-mode differentiation from a scalar loss.
void backward(Tape& tape, const Var& loss);

// ---------------------------------------------------------------------------
// Plain tensor versions with single-sample shapes.
// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& input, const Tensor& kernel, int dilation, int padding);
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
/// [C, spatial...] -> [C].
Tensor global_avg_pool(const Tensor& input);
float softmax_cross_entropy(const Tensor& logits, const Tensor& target);

/// Row-wise softmax of [B, K] (or [K]) logits, computed with max subtraction.
Tensor softmax(const Tensor& logits, float temperature = 1.0f);
/// Row-wise argmax of [B, K] logits.
std::vector<int> argmax_rows(const Tensor& logits);
/// One-hot rows for class labels.
Tensor one_hot(std::span<const int> labels, int num_classes);

}  // namespace fqconv
