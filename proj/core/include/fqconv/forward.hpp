// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "fqconv/autograd.hpp"
#include "fqconv/network.hpp"

namespace fqconv {

class NoiseInjector;

struct ForwardOptions {
  /// Batch-norm uses mini-batch statistics and updates its running averages.
  bool training = false;
  /// Uninitialized activation scales are set from the first batch they see.
  bool calibrate = true;
  NoiseInjector* noise = nullptr;
};

struct ForwardPass {
  /// Output of every node, indexed like Network::nodes.
  std::vector<Var> values;
  const Var& output() const { return values.back(); }
};

/// Records a forward pass of a batch [B, input_shape...] on `tape`.
///
/// In quantized modes a conv whose input comes straight from a quantizer is
/// evaluated from integer codes as k * S, with S the exact integer
/// accumulator and k the accumulator gain. This is the value the compiled
/// integer model reproduces. Parameters with requires_grad set receive
/// gradients after tape.backward().
ForwardPass forward(Network& net, Tape& tape, const Tensor& batch, const ForwardOptions& options = {});

/// Inference-mode logits [B, K] without gradients, evaluated in chunks.
Tensor predict(const Network& net, const Tensor& batch, NoiseInjector* noise = nullptr, int64_t chunk = 256);

/// Initializes every uninitialized scale by running `batch` through the net.
void calibrate(Network& net, const Tensor& batch);

/// Rows [begin, end) of a batch tensor.
Tensor slice_rows(const Tensor& t, int64_t begin, int64_t end);

}  // namespace fqconv
