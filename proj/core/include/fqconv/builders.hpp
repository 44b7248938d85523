// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "fqconv/network.hpp"

namespace fqconv {

/// Dilated 1D keyword-spotting network: a per-frame full-precision dense
/// embedding, BN, an input quantizer, then conv1d layers with no padding,
/// each followed by BN, ReLU and an unsigned quantizer, and a global average
/// pool. The last conv has one filter per class.
struct KwsOptions {
  int64_t in_channels = 39;
  int64_t length = 260;
  int64_t embed = 100;
  int64_t filters = 45;
  int64_t kernel = 3;
  std::vector<int> dilations = {1, 2, 4, 8, 16, 32, 64};
  int num_classes = 12;
  uint64_t seed = 0;
};

Network build_kws_net(const KwsOptions& options = {});

/// Small residual network for images: a quantized stem conv, `depth` residual
/// blocks per entry of `widths` (1x1 conv + BN shortcut when the shape
/// changes) and a full-precision classifier after global pooling.
struct ResNetOptions {
  int64_t in_channels = 3;
  int64_t height = 32;
  int64_t width = 32;
  int depth = 1;
  std::vector<int64_t> widths = {16, 32, 64};
  int num_classes = 10;
  uint64_t seed = 0;
};

Network build_resblock_net(const ResNetOptions& options = {});

}  // namespace fqconv
