// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "fqconv/autograd.hpp"
#include "fqconv/builders.hpp"
#include "fqconv/data.hpp"
#include "fqconv/network.hpp"
#include "fqconv/tensor.hpp"
#include "fqconv/training.hpp"

namespace fqconv::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

/// Distance in units in the last place between two doubles of equal sign.
inline uint64_t ulp_distance(double a, double b) {
  if (a == b) return 0;
  int64_t ia, ib;
  std::memcpy(&ia, &a, sizeof a);
  std::memcpy(&ib, &b, sizeof b);
  if (ia < 0) ia = std::numeric_limits<int64_t>::min() - ia;
  if (ib < 0) ib = std::numeric_limits<int64_t>::min() - ib;
  return ia > ib ? static_cast<uint64_t>(ia) - static_cast<uint64_t>(ib)
                 : static_cast<uint64_t>(ib) - static_cast<uint64_t>(ia);
}

/// Builds an output from leaves bound on `tape`.
using GraphFn = std::function<Var(Tape& tape, std::vector<Var>& leaves)>;

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) of
/// the gradient of L = sum_i r_i y_i, y = f(leaves), with fixed random r.
/// The numeric side uses central differences of step h on the 32-bit
/// forward and evaluates L in 64-bit.
inline double gradient_error(std::vector<Tensor> leaves, const GraphFn& f, std::mt19937_64& rng, float h = 1e-3f) {
  std::vector<double> r;
  auto loss_of = [&](std::vector<Tensor>& values) {
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<Var> vars;
    for (Tensor& t : values) vars.push_back(tape.constant(t));
    const Tensor& y = f(tape, vars).value();
    double l = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) l += r[static_cast<size_t>(i)] * static_cast<double>(y[i]);
    return l;
  };

  Tape tape;
  std::vector<Var> vars;
  for (Tensor& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
    vars.push_back(tape.parameter(t));
  }
  Var y = f(tape, vars);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int64_t i = 0; i < y.value().size(); ++i) r.push_back(d(rng));
  std::vector<float> weights(r.begin(), r.end());
  double value = 0.0;
  for (int64_t i = 0; i < y.value().size(); ++i) value += r[static_cast<size_t>(i)] * y.value()[i];
  Var loss = tape.push(Tensor::scalar(static_cast<float>(value)), {y},
                       [weights](std::span<const float> g, std::span<float* const> in) {
                         if (!in[0]) return;
                         for (size_t i = 0; i < weights.size(); ++i) in[0][i] += g[0] * weights[i];
                       });
  tape.backward(loss);

  double diff = 0.0, na = 0.0, nn = 0.0;
  for (size_t k = 0; k < leaves.size(); ++k) {
    std::vector<float> analytic(leaves[k].grad().begin(), leaves[k].grad().end());
    for (int64_t i = 0; i < leaves[k].size(); ++i) {
      std::vector<Tensor> plus = leaves, minus = leaves;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double step = static_cast<double>(plus[k][i]) - static_cast<double>(minus[k][i]);
      const double numeric = (loss_of(plus) - loss_of(minus)) / step;
      const double a = analytic[static_cast<size_t>(i)];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-12 ? 0.0 : std::sqrt(diff) / scale;
}

/// Nested-loop cross-correlation for one sample, accumulated in the kernel's
/// (input channel, row, tap) order.
inline Tensor reference_conv2d(const Tensor& x, const Tensor& k, int stride, int padding, int dilation = 1) {
  const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int64_t oh = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  const int64_t ow = (w + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  Tensor y({co, oh, ow});
  for (int64_t o = 0; o < co; ++o)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        float acc = 0.0f;
        for (int64_t c = 0; c < ci; ++c)
          for (int64_t a = 0; a < kh; ++a)
            for (int64_t b = 0; b < kw; ++b) {
              const int64_t r = i * stride - padding + a * dilation;
              const int64_t q = j * stride - padding + b * dilation;
              if (r < 0 || r >= h || q < 0 || q >= w) continue;
              acc += x[(c * h + r) * w + q] * k[((o * ci + c) * kh + a) * kw + b];
            }
        y[(o * oh + i) * ow + j] = acc;
      }
  return y;
}

/// Small keyword-spotting style network used across tests.
inline KwsOptions toy_kws(uint64_t seed, int64_t filters = 16) {
  KwsOptions o;
  o.in_channels = 12;
  o.length = 40;
  o.embed = 32;
  o.filters = filters;
  o.dilations = {1, 1, 2, 2, 4, 4, 1};
  o.num_classes = 8;
  o.seed = seed;
  return o;
}

inline Dataset toy_sequences(uint64_t seed, int64_t samples, float jitter = 2.0f) {
  SequenceTaskOptions o;
  o.seed = seed;
  o.num_samples = samples;
  o.jitter = jitter;
  return gen_sequence_classes(o);
}

/// Briefly trained fake-quant toy network, so batch-norm statistics and
/// activation scales are populated.
inline Network quick_quantized(const Dataset& data, uint64_t seed, int weight_bits, int act_bits, int epochs = 1) {
  TrainOptions o;
  o.epochs = epochs;
  o.seed = seed;
  return train_stage(to_fake_quant(build_kws_net(toy_kws(seed)), weight_bits, act_bits), data, o).net;
}

}  // namespace fqconv::testing
