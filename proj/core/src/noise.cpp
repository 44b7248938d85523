// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/noise.hpp"

#include <cmath>

#include "fqconv/data.hpp"
#include "fqconv/error.hpp"
#include "fqconv/network.hpp"
#include "fqconv/training.hpp"

namespace fqconv {

void NoiseSpec::validate() const {
  if (!(weight_pct >= 0.0f) || !(act_pct >= 0.0f) || !(mac_pct >= 0.0f)) {
    throw ConfigError("noise percentages must be non-negative");
  }
  if (repetitions < 1) throw ConfigError("noise repetitions must be at least 1");
}

Tensor inject(const Tensor& x, float lsb, float pct, std::mt19937_64& rng) {
  if (!(pct >= 0.0f)) throw ConfigError("noise percentage must be non-negative");
  if (pct == 0.0f) return x;
  std::normal_distribution<float> dist(0.0f, pct / 100.0f * lsb);
  Tensor y(x.shape(), x.storage());
  for (int64_t i = 0; i < y.size(); ++i) y[i] += dist(rng);
  return y;
}

NoiseInjector::NoiseInjector(const NoiseSpec& spec, uint64_t stream) : spec_(spec) {
  spec_.validate();
  std::seed_seq seq{static_cast<uint32_t>(spec.seed), static_cast<uint32_t>(spec.seed >> 32),
                    static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  rng_.seed(seq);
}

Tensor NoiseInjector::sample(const Shape& shape, float lsb, float pct) {
  if (!(pct >= 0.0f)) throw ConfigError("noise percentage must be non-negative");
  if (pct == 0.0f) return Tensor();
  Tensor noise(shape);
  std::normal_distribution<float> dist(0.0f, pct / 100.0f * lsb);
  for (int64_t i = 0; i < noise.size(); ++i) noise[i] = dist(rng_);
  draws_ += static_cast<uint64_t>(noise.size());
  return noise;
}

Tensor NoiseInjector::weight_noise(int node, const Shape& shape, float lsb) {
  if (!spec_.frozen_weights) return sample(shape, lsb, spec_.weight_pct);
  auto it = frozen_.find(node);
  if (it != frozen_.end() && same_shape(it->second.shape(), shape)) return it->second;
  Tensor n = sample(shape, lsb, spec_.weight_pct);
  frozen_[node] = n;
  return n;
}

NoiseReport noisy_eval(const Network& net, const Dataset& data, Split split, const NoiseSpec& spec) {
  spec.validate();
  if (net.mode != NetMode::kFullyQuantized) throw UsageError("noisy_eval expects a fully quantized network");
  NoiseReport r;
  r.spec = spec;
  if (spec.is_zero()) {
    const double acc = evaluate(net, data, split).accuracy;
    r.accuracies.assign(static_cast<size_t>(spec.repetitions), acc);
  } else {
    for (int rep = 0; rep < spec.repetitions; ++rep) {
      NoiseInjector inj(spec, static_cast<uint64_t>(rep));
      r.accuracies.push_back(evaluate(net, data, split, &inj).accuracy);
    }
  }
  double sum = 0.0;
  for (double a : r.accuracies) sum += a;
  r.mean_accuracy = sum / static_cast<double>(r.accuracies.size());
  double var = 0.0;
  for (double a : r.accuracies) var += (a - r.mean_accuracy) * (a - r.mean_accuracy);
  r.std_accuracy = r.accuracies.size() > 1 ? std::sqrt(var / static_cast<double>(r.accuracies.size() - 1)) : 0.0;
  return r;
}

std::vector<NoiseSpec> noise_ladder(uint64_t seed, int repetitions) {
  const float points[5][3] = {{1, 1, 5}, {5, 5, 25}, {10, 10, 50}, {20, 20, 100}, {30, 30, 150}};
  std::vector<NoiseSpec> out;
  for (const auto& p : points) {
    NoiseSpec s;
    s.weight_pct = p[0];
    s.act_pct = p[1];
    s.mac_pct = p[2];
    s.seed = seed;
    s.repetitions = repetitions;
    out.push_back(s);
  }
  return out;
}

}  // namespace fqconv
