// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "fqconv/tensor.hpp"

namespace fqconv {

class Network;
struct Dataset;
enum class Split : uint8_t;

/// Gaussian noise levels as percentages of the LSB of the quantizer that
/// produced the perturbed value.
struct NoiseSpec {
  float weight_pct = 0.0f;
  float act_pct = 0.0f;
  float mac_pct = 0.0f;
  uint64_t seed = 0;
  int repetitions = 10;
  /// Draw weight noise once per repetition (a fixed chip instance) instead
  /// of on every forward pass.
  bool frozen_weights = false;

  bool is_zero() const { return weight_pct == 0.0f && act_pct == 0.0f && mac_pct == 0.0f; }
  /// Throws ConfigError on negative levels or repetitions < 1.
  void validate() const;
};

/// x + N(0, (pct/100 * lsb)^2) elementwise. pct = 0 returns x unchanged
/// without consuming random numbers.
Tensor inject(const Tensor& x, float lsb, float pct, std::mt19937_64& rng);

/// Noise source for one evaluation repetition. The stream is derived from
/// (seed, stream index) so repetitions are independent and reproducible.
class NoiseInjector {
 public:
  NoiseInjector(const NoiseSpec& spec, uint64_t stream);

  const NoiseSpec& spec() const { return spec_; }

  /// Additive noise tensor with std pct/100 * lsb, or empty for pct = 0.
  Tensor sample(const Shape& shape, float lsb, float pct);
  /// Weight noise for node `node`; cached per node when weights are frozen.
  Tensor weight_noise(int node, const Shape& shape, float lsb);

  /// Number of Gaussian draws made so far.
  uint64_t draws() const { return draws_; }

 private:
  NoiseSpec spec_;
  std::mt19937_64 rng_;
  uint64_t draws_ = 0;
  std::map<int, Tensor> frozen_;
};

struct NoiseReport {
  NoiseSpec spec;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::vector<double> accuracies;
};

/// Accuracy of a fully quantized network under noise, one independent noise
/// stream per repetition.
NoiseReport noisy_eval(const Network& net, const Dataset& data, Split split, const NoiseSpec& spec);

/// The five (weight, activation, MAC) points of the noise ladder:
/// (1,1,5), (5,5,25), (10,10,50), (20,20,100), (30,30,150).
std::vector<NoiseSpec> noise_ladder(uint64_t seed, int repetitions = 10);

}  // namespace fqconv
