// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fqconv/error.hpp"
#include "fqconv/kernels.hpp"

namespace fqconv {

namespace {

Tape* tape_of(const Var& v) {
  if (!v.valid()) throw UsageError("operation on an unbound Var");
  return v.tape();
}

Shape batched(const Shape& s, size_t single_rank) {
  if (s.size() == single_rank) {
    Shape out{1};
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }
  return s;
}

Shape unbatched_if(const Shape& s, bool single) {
  if (!single) return s;
  return Shape(s.begin() + 1, s.end());
}

Var conv_op(const Var& input, const Var& kernel, kernels::ConvGeometry g, Shape out_shape) {
  Tape* t = tape_of(input);
  Tensor out(std::move(out_shape));
  kernels::conv_forward(input.value().data(), kernel.value().data(), out.data(), g);
  const int in_id = input.id();
  const int k_id = kernel.id();
  return t->push(std::move(out), {input, kernel}, [t, in_id, k_id, g](std::span<const float> gout, std::span<float* const> gin) {
    if (gin[0]) {
      kernels::conv_backward_input(gout, t->value(k_id).data(),
                                   std::span<float>(gin[0], static_cast<size_t>(g.input_size())), g);
    }
    if (gin[1]) {
      kernels::conv_backward_kernel(gout, t->value(in_id).data(),
                                    std::span<float>(gin[1], static_cast<size_t>(g.kernel_size())), g);
    }
  });
}

void check_target(const Tensor& logits, const Tensor& target) {
  if (!same_shape(logits.shape(), target.shape())) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) + " vs target " +
                         shape_to_string(target.shape()));
  }
  const int64_t k = logits.shape().back();
  const int64_t rows = logits.size() / k;
  for (int64_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const float p = target[r * k + j];
      if (!(p >= 0.0f)) throw ValidationError("softmax_cross_entropy: target has a negative entry");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValidationError("softmax_cross_entropy: target row " + std::to_string(r) + " sums to " +
                            std::to_string(total) + ", not 1");
    }
  }
}

// Per-row log-sum-exp in double with max subtraction.
std::vector<double> log_sum_exp_rows(std::span<const float> logits, int64_t rows, int64_t k) {
  std::vector<double> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* z = logits.data() + r * k;
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) m = std::max(m, static_cast<double>(z[j]));
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j]) - m);
    out[static_cast<size_t>(r)] = m + std::log(s);
  }
  return out;
}

int64_t spatial_size(const Shape& s) {
  int64_t n = 1;
  for (size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

Var conv1d(const Var& input, const Var& kernel, int dilation, int padding) {
  const Shape& in_shape = input.shape();
  if (in_shape.size() != 2 && in_shape.size() != 3) {
    throw DimensionError("conv1d input must be [C_in, L] or [N, C_in, L], got " + shape_to_string(in_shape));
  }
  const bool single = in_shape.size() == 2;
  const kernels::ConvGeometry g = kernels::conv1d_geometry(batched(in_shape, 2), kernel.shape(), dilation, padding);
  Shape out_shape = unbatched_if({g.batch, g.out_channels, g.out_w}, single);
  return conv_op(input, kernel, g, std::move(out_shape));
}

Var conv2d(const Var& input, const Var& kernel, int stride, int padding) {
  const Shape& in_shape = input.shape();
  if (in_shape.size() != 3 && in_shape.size() != 4) {
    throw DimensionError("conv2d input must be [C_in, H, W] or [N, C_in, H, W], got " + shape_to_string(in_shape));
  }
  const bool single = in_shape.size() == 3;
  const kernels::ConvGeometry g = kernels::conv2d_geometry(batched(in_shape, 3), kernel.shape(), stride, padding);
  Shape out_shape = unbatched_if({g.batch, g.out_channels, g.out_h, g.out_w}, single);
  return conv_op(input, kernel, g, std::move(out_shape));
}

Var dense(const Var& input, const Var& weights, const Var& bias) {
  Tape* t = tape_of(input);
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  if (ws.size() != 2) throw DimensionError("dense weights must be [M, N], got " + shape_to_string(ws));
  kernels::DenseGeometry g;
  Shape out_shape;
  if (xs.size() == 1) {
    g.in_features = xs[0];
    out_shape = {ws[0]};
  } else if (xs.size() == 2) {
    g.batch = xs[0];
    g.in_features = xs[1];
    out_shape = {xs[0], ws[0]};
  } else if (xs.size() == 3) {
    g.batch = xs[0];
    g.in_features = xs[1];
    g.positions = xs[2];
    out_shape = {xs[0], ws[0], xs[2]};
  } else {
    throw DimensionError("dense input must have rank 1..3, got " + shape_to_string(xs));
  }
  g.out_features = ws[0];
  if (ws[1] != g.in_features) {
    throw DimensionError("dense inner dimension mismatch: input features " + std::to_string(g.in_features) +
                         " vs weights axis 1 (" + std::to_string(ws[1]) + ")");
  }
  if (bias.valid() && (bias.value().rank() != 1 || bias.value().size() != g.out_features)) {
    throw DimensionError("dense bias must be [" + std::to_string(g.out_features) + "], got " +
                         shape_to_string(bias.shape()));
  }
  Tensor out(std::move(out_shape));
  std::span<const float> b = bias.valid() ? bias.value().data() : std::span<const float>{};
  kernels::dense_forward(input.value().data(), weights.value().data(), b, out.data(), g);
  const int x_id = input.id();
  const int w_id = weights.id();
  return t->push(std::move(out), {input, weights, bias},
                 [t, x_id, w_id, g](std::span<const float> gout, std::span<float* const> gin) {
                   const size_t nx = static_cast<size_t>(g.batch * g.in_features * g.positions);
                   const size_t nw = static_cast<size_t>(g.out_features * g.in_features);
                   kernels::dense_backward(gout, t->value(x_id).data(), t->value(w_id).data(),
                                           gin[0] ? std::span<float>(gin[0], nx) : std::span<float>{},
                                           gin[1] ? std::span<float>(gin[1], nw) : std::span<float>{},
                                           gin[2] ? std::span<float>(gin[2], static_cast<size_t>(g.out_features))
                                                  : std::span<float>{},
                                           g);
                 });
}

Var global_avg_pool(const Var& input) {
  Tape* t = tape_of(input);
  const Shape& s = input.shape();
  if (s.size() < 3) throw DimensionError("global_avg_pool expects [B, C, spatial...], got " + shape_to_string(s));
  const int64_t rows = s[0] * s[1];
  const int64_t spatial = spatial_size(s);
  Tensor out({s[0], s[1]});
  kernels::mean_pool(input.value().data(), out.data(), rows, spatial);
  return t->push(std::move(out), {input}, [rows, spatial](std::span<const float> gout, std::span<float* const> gin) {
    if (!gin[0]) return;
    const float inv = 1.0f / static_cast<float>(spatial);
    for (int64_t r = 0; r < rows; ++r) {
      const float g = gout[static_cast<size_t>(r)] * inv;
      float* dst = gin[0] + r * spatial;
      for (int64_t i = 0; i < spatial; ++i) dst[i] += g;
    }
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& target) {
  Tape* t = tape_of(logits);
  const Tensor& z = logits.value();
  if (z.rank() != 1 && z.rank() != 2) {
    throw DimensionError("softmax_cross_entropy expects [K] or [B, K] logits, got " + shape_to_string(z.shape()));
  }
  check_target(z, target);
  const int64_t k = z.shape().back();
  const int64_t rows = z.size() / k;
  const std::vector<double> lse = log_sum_exp_rows(z.data(), rows, k);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double row = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double p = target[r * k + j];
      if (p != 0.0) row -= p * (static_cast<double>(z[r * k + j]) - lse[static_cast<size_t>(r)]);
    }
    loss += row;
  }
  loss /= static_cast<double>(rows);
  const int z_id = logits.id();
  return t->push(Tensor::scalar(static_cast<float>(loss)), {logits},
                 [t, z_id, target, lse, rows, k](std::span<const float> gout, std::span<float* const> gin) {
                   if (!gin[0]) return;
                   const Tensor& zz = t->value(z_id);
                   const double scale = static_cast<double>(gout[0]) / static_cast<double>(rows);
                   for (int64_t r = 0; r < rows; ++r) {
                     for (int64_t j = 0; j < k; ++j) {
                       const int64_t i = r * k + j;
                       const double p = std::exp(static_cast<double>(zz[i]) - lse[static_cast<size_t>(r)]);
                       gin[0][i] += static_cast<float>(scale * (p - static_cast<double>(target[i])));
                     }
                   }
                 });
}

Var relu(const Var& x) {
  Tape* t = tape_of(x);
  Tensor out = x.value();
  out.set_requires_grad(false);
  out.clear_grad();
  for (float& v : out.data()) v = v < 0.0f ? 0.0f : v;
  const int x_id = x.id();
  return t->push(std::move(out), {x}, [t, x_id](std::span<const float> gout, std::span<float* const> gin) {
    if (!gin[0]) return;
    const Tensor& xv = t->value(x_id);
    for (int64_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0f) gin[0][i] += gout[static_cast<size_t>(i)];
    }
  });
}

Var add(const Var& a, const Var& b) {
  Tape* t = tape_of(a);
  if (!same_shape(a.shape(), b.shape())) {
    throw DimensionError("add: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                         " differ");
  }
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t->push(std::move(out), {a, b}, [](std::span<const float> gout, std::span<float* const> gin) {
    for (int k = 0; k < 2; ++k) {
      if (!gin[k]) continue;
      for (size_t i = 0; i < gout.size(); ++i) gin[k][i] += gout[i];
    }
  });
}

Var add_constant(const Var& x, const Tensor& c) {
  Tape* t = tape_of(x);
  if (!same_shape(x.shape(), c.shape())) {
    throw DimensionError("add_constant: shapes " + shape_to_string(x.shape()) + " and " + shape_to_string(c.shape()) +
                         " differ");
  }
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c[i];
  return t->push(std::move(out), {x}, [](std::span<const float> gout, std::span<float* const> gin) {
    if (!gin[0]) return;
    for (size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i];
  });
}

Var scale(const Var& x, float factor) {
  Tape* t = tape_of(x);
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return t->push(std::move(out), {x}, [factor](std::span<const float> gout, std::span<float* const> gin) {
    if (!gin[0]) return;
    for (size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * factor;
  });
}

Var sum(const Var& x) {
  Tape* t = tape_of(x);
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  const int64_t n = x.value().size();
  return t->push(Tensor::scalar(static_cast<float>(acc)), {x}, [n](std::span<const float> gout, std::span<float* const> gin) {
    if (!gin[0]) return;
    for (int64_t i = 0; i < n; ++i) gin[0][i] += gout[0];
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, float eps, BatchStatistics* stats) {
  Tape* t = tape_of(x);
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("batch_norm expects [N, C, ...], got " + shape_to_string(s));
  const int64_t n = s[0];
  const int64_t c = s[1];
  if (n < 2) throw ValidationError("batch_norm in training mode needs a batch of at least 2 samples");
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("batch_norm parameters must have " + std::to_string(c) + " channels");
  }
  const int64_t spatial = spatial_size(s);
  const int64_t m = n * spatial;
  const Tensor& xv = x.value();
  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  std::vector<double> var(static_cast<size_t>(c), 0.0);
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* src = xv.data().data() + (b * c + ch) * spatial;
      double acc = 0.0;
      for (int64_t i = 0; i < spatial; ++i) acc += src[i];
      mean[static_cast<size_t>(ch)] += acc;
    }
  }
  for (double& v : mean) v /= static_cast<double>(m);
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* src = xv.data().data() + (b * c + ch) * spatial;
      const double mu = mean[static_cast<size_t>(ch)];
      double acc = 0.0;
      for (int64_t i = 0; i < spatial; ++i) {
        const double d = src[i] - mu;
        acc += d * d;
      }
      var[static_cast<size_t>(ch)] += acc;
    }
  }
  for (double& v : var) v /= static_cast<double>(m);
  std::vector<double> inv_std(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + static_cast<double>(eps));
  }
  Tensor out(s);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const size_t cc = static_cast<size_t>(ch);
      const float* src = xv.data().data() + (b * c + ch) * spatial;
      float* dst = out.data().data() + (b * c + ch) * spatial;
      for (int64_t i = 0; i < spatial; ++i) {
        const double xhat = (src[i] - mean[cc]) * inv_std[cc];
        dst[i] = static_cast<float>(gv[ch] * xhat + bv[ch]);
      }
    }
  }
  if (stats) {
    stats->mean = mean;
    stats->variance = var;
    stats->count = m;
  }
  const int x_id = x.id();
  const int g_id = gamma.id();
  return t->push(std::move(out), {x, gamma, beta},
                 [t, x_id, g_id, mean, inv_std, n, c, spatial, m](std::span<const float> gout,
                                                                  std::span<float* const> gin) {
                   const Tensor& xv2 = t->value(x_id);
                   const Tensor& gv2 = t->value(g_id);
                   for (int64_t ch = 0; ch < c; ++ch) {
                     const size_t cc = static_cast<size_t>(ch);
                     double sum_dy = 0.0;
                     double sum_dy_xhat = 0.0;
                     for (int64_t b = 0; b < n; ++b) {
                       const int64_t base = (b * c + ch) * spatial;
                       for (int64_t i = 0; i < spatial; ++i) {
                         const double xhat = (xv2[base + i] - mean[cc]) * inv_std[cc];
                         sum_dy += gout[static_cast<size_t>(base + i)];
                         sum_dy_xhat += gout[static_cast<size_t>(base + i)] * xhat;
                       }
                     }
                     if (gin[1]) gin[1][ch] += static_cast<float>(sum_dy_xhat);
                     if (gin[2]) gin[2][ch] += static_cast<float>(sum_dy);
                     if (!gin[0]) continue;
                     const double k = gv2[ch] * inv_std[cc] / static_cast<double>(m);
                     for (int64_t b = 0; b < n; ++b) {
                       const int64_t base = (b * c + ch) * spatial;
                       for (int64_t i = 0; i < spatial; ++i) {
                         const double xhat = (xv2[base + i] - mean[cc]) * inv_std[cc];
                         const double dy = gout[static_cast<size_t>(base + i)];
                         gin[0][base + i] += static_cast<float>(
                             k * (static_cast<double>(m) * dy - sum_dy - xhat * sum_dy_xhat));
                       }
                     }
                   }
                 });
}

Var channel_affine(const Var& x, std::span<const float> scale_c, std::span<const float> shift_c) {
  Tape* t = tape_of(x);
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("channel_affine expects [N, C, ...], got " + shape_to_string(s));
  const int64_t n = s[0];
  const int64_t c = s[1];
  if (static_cast<int64_t>(scale_c.size()) != c || static_cast<int64_t>(shift_c.size()) != c) {
    throw DimensionError("channel_affine parameters must have " + std::to_string(c) + " channels");
  }
  const int64_t spatial = spatial_size(s);
  Tensor out(s);
  const Tensor& xv = x.value();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t base = (b * c + ch) * spatial;
      for (int64_t i = 0; i < spatial; ++i) out[base + i] = scale_c[static_cast<size_t>(ch)] * xv[base + i] + shift_c[static_cast<size_t>(ch)];
    }
  }
  std::vector<float> sc(scale_c.begin(), scale_c.end());
  return t->push(std::move(out), {x}, [sc, n, c, spatial](std::span<const float> gout, std::span<float* const> gin) {
    if (!gin[0]) return;
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t base = (b * c + ch) * spatial;
        for (int64_t i = 0; i < spatial; ++i) gin[0][base + i] += sc[static_cast<size_t>(ch)] * gout[static_cast<size_t>(base + i)];
      }
    }
  });
}

void backward(Tape& tape, const Var& loss) { tape.backward(loss); }

Tensor conv1d(const Tensor& input, const Tensor& kernel, int dilation, int padding) {
  Tape tape;
  tape.set_grad_enabled(false);
  return conv1d(tape.constant(input), tape.constant(kernel), dilation, padding).value();
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  Tape tape;
  tape.set_grad_enabled(false);
  return conv2d(tape.constant(input), tape.constant(kernel), stride, padding).value();
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  Tape tape;
  tape.set_grad_enabled(false);
  return dense(tape.constant(input), tape.constant(weights), bias.empty() ? Var{} : tape.constant(bias)).value();
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() < 2) {
    throw DimensionError("global_avg_pool expects [C, spatial...], got " + shape_to_string(input.shape()));
  }
  const int64_t c = input.dim(0);
  const int64_t spatial = input.size() / c;
  Tensor out({c});
  kernels::mean_pool(input.data(), out.data(), c, spatial);
  return out;
}

float softmax_cross_entropy(const Tensor& logits, const Tensor& target) {
  Tape tape;
  tape.set_grad_enabled(false);
  return softmax_cross_entropy(tape.constant(logits), target).value()[0];
}

Tensor softmax(const Tensor& logits, float temperature) {
  if (!(temperature > 0.0f)) throw ValidationError("softmax temperature must be positive");
  const int64_t k = logits.shape().back();
  const int64_t rows = logits.size() / k;
  Tensor out(logits.shape());
  for (int64_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) m = std::max(m, static_cast<double>(logits[r * k + j]) / temperature);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(logits[r * k + j]) / temperature - m);
    for (int64_t j = 0; j < k; ++j) {
      out[r * k + j] = static_cast<float>(std::exp(static_cast<double>(logits[r * k + j]) / temperature - m) / s);
    }
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int64_t k = logits.shape().back();
  const int64_t rows = logits.size() / k;
  std::vector<int> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    int best = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (logits[r * k + j] > logits[r * k + best]) best = static_cast<int>(j);
    }
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

Tensor one_hot(std::span<const int> labels, int num_classes) {
  Tensor out({static_cast<int64_t>(labels.size()), num_classes});
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ValidationError("label out of range in one_hot");
    out[static_cast<int64_t>(i) * num_classes + labels[i]] = 1.0f;
  }
  return out;
}

}  // namespace fqconv
