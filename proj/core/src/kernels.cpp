// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/kernels.hpp"

#include <algorithm>
#include <cstdlib>

#include "fqconv/error.hpp"

namespace fqconv::kernels {

namespace {

// Range of output columns [lo, hi) whose input column ow*stride + offset is inside [0, in_w).
inline void valid_range(int64_t offset, int64_t stride, int64_t in_w, int64_t out_w, int64_t& lo, int64_t& hi) {
  // smallest ow with ow*stride + offset >= 0
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // largest ow with ow*stride + offset <= in_w - 1
  const int64_t last = in_w - 1 - offset;
  hi = last < 0 ? 0 : std::min(out_w, last / stride + 1);
  if (lo > hi) lo = hi;
}

void check_spans(const ConvGeometry& g, size_t input, size_t kernel, size_t output) {
  if (static_cast<int64_t>(input) != g.input_size() || static_cast<int64_t>(kernel) != g.kernel_size() ||
      static_cast<int64_t>(output) != g.output_size()) {
    throw DimensionError("convolution buffers do not match geometry");
  }
}

template <typename In, typename W, typename Acc>
void conv_forward_generic(std::span<const In> input, std::span<const W> kernel, std::span<Acc> output,
                          const ConvGeometry& g) {
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  for (int64_t n = 0; n < g.batch; ++n) {
    for (int64_t co = 0; co < g.out_channels; ++co) {
      Acc* out = output.data() + (n * g.out_channels + co) * out_plane;
      std::fill(out, out + out_plane, Acc{0});
      for (int64_t ci = 0; ci < g.in_channels; ++ci) {
        const In* in = input.data() + (n * g.in_channels + ci) * in_plane;
        for (int64_t kh = 0; kh < g.k_h; ++kh) {
          for (int64_t kw = 0; kw < g.k_w; ++kw) {
            const Acc w = static_cast<Acc>(kernel[((co * g.in_channels + ci) * g.k_h + kh) * g.k_w + kw]);
            const int64_t off_w = kw * g.dilation - g.pad_w;
            int64_t lo = 0;
            int64_t hi = 0;
            valid_range(off_w, g.stride, g.in_w, g.out_w, lo, hi);
            for (int64_t oh = 0; oh < g.out_h; ++oh) {
              const int64_t ih = oh * g.stride + kh * g.dilation - g.pad_h;
              if (ih < 0 || ih >= g.in_h) continue;
              const In* in_row = in + ih * g.in_w;
              Acc* out_row = out + oh * g.out_w;
              if (g.stride == 1) {
                for (int64_t ow = lo; ow < hi; ++ow) out_row[ow] += w * static_cast<Acc>(in_row[ow + off_w]);
              } else {
                for (int64_t ow = lo; ow < hi; ++ow) {
                  out_row[ow] += w * static_cast<Acc>(in_row[ow * g.stride + off_w]);
                }
              }
            }
          }
        }
      }
    }
  }
}

// Multiplication-free path for weights restricted to {-1, 0, 1}.
template <typename W>
void conv_forward_ternary(std::span<const int32_t> input, std::span<const W> kernel, std::span<int32_t> output,
                          const ConvGeometry& g, OpCounter* counter) {
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  uint64_t adds = 0;
  for (int64_t n = 0; n < g.batch; ++n) {
    for (int64_t co = 0; co < g.out_channels; ++co) {
      int32_t* out = output.data() + (n * g.out_channels + co) * out_plane;
      std::fill(out, out + out_plane, 0);
      for (int64_t ci = 0; ci < g.in_channels; ++ci) {
        const int32_t* in = input.data() + (n * g.in_channels + ci) * in_plane;
        for (int64_t kh = 0; kh < g.k_h; ++kh) {
          for (int64_t kw = 0; kw < g.k_w; ++kw) {
            const W w = kernel[((co * g.in_channels + ci) * g.k_h + kh) * g.k_w + kw];
            if (w == 0) continue;
            const int64_t off_w = kw * g.dilation - g.pad_w;
            int64_t lo = 0;
            int64_t hi = 0;
            valid_range(off_w, g.stride, g.in_w, g.out_w, lo, hi);
            for (int64_t oh = 0; oh < g.out_h; ++oh) {
              const int64_t ih = oh * g.stride + kh * g.dilation - g.pad_h;
              if (ih < 0 || ih >= g.in_h) continue;
              const int32_t* in_row = in + ih * g.in_w;
              int32_t* out_row = out + oh * g.out_w;
              if (w > 0) {
                for (int64_t ow = lo; ow < hi; ++ow) out_row[ow] += in_row[ow * g.stride + off_w];
              } else {
                for (int64_t ow = lo; ow < hi; ++ow) out_row[ow] -= in_row[ow * g.stride + off_w];
              }
              adds += static_cast<uint64_t>(hi - lo);
            }
          }
        }
      }
    }
  }
  if (counter) counter->additions += adds;
}

template <typename W>
void conv_forward_int_impl(std::span<const int32_t> input, std::span<const W> kernel, std::span<int32_t> output,
                           const ConvGeometry& g, OpCounter* counter) {
  check_spans(g, input.size(), kernel.size(), output.size());
  const bool ternary = std::all_of(kernel.begin(), kernel.end(), [](W w) { return w >= -1 && w <= 1; });
  if (ternary) {
    conv_forward_ternary<W>(input, kernel, output, g, counter);
    return;
  }
  conv_forward_generic<int32_t, W, int32_t>(input, kernel, output, g);
  if (counter) {
    // one multiply-add per (output, in-bounds tap); count taps with in-range inputs
    uint64_t taps = 0;
    for (int64_t kh = 0; kh < g.k_h; ++kh) {
      for (int64_t kw = 0; kw < g.k_w; ++kw) {
        int64_t lo = 0;
        int64_t hi = 0;
        valid_range(kw * g.dilation - g.pad_w, g.stride, g.in_w, g.out_w, lo, hi);
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.stride + kh * g.dilation - g.pad_h;
          if (ih >= 0 && ih < g.in_h) taps += static_cast<uint64_t>(hi - lo);
        }
      }
    }
    const uint64_t total = taps * static_cast<uint64_t>(g.batch * g.out_channels * g.in_channels);
    counter->multiplications += total;
    counter->additions += total;
  }
}

// Dot product with four interleaved partial sums; fixed order, so deterministic.
inline float dot_strided(const float* a, const float* b, int64_t n, int64_t b_stride) {
  float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i * b_stride];
    s1 += a[i + 1] * b[(i + 1) * b_stride];
    s2 += a[i + 2] * b[(i + 2) * b_stride];
    s3 += a[i + 3] * b[(i + 3) * b_stride];
  }
  for (; i < n; ++i) s0 += a[i] * b[i * b_stride];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

ConvGeometry conv1d_geometry(const Shape& input, const Shape& kernel, int64_t dilation, int64_t padding) {
  if (input.size() != 3) throw DimensionError("conv1d input must be [N, C_in, L], got " + shape_to_string(input));
  if (kernel.size() != 3) throw DimensionError("conv1d kernel must be [C_out, C_in, K], got " + shape_to_string(kernel));
  if (input[1] != kernel[1]) {
    throw DimensionError("conv1d channel mismatch: input axis 1 (C_in=" + std::to_string(input[1]) +
                         ") vs kernel axis 1 (C_in=" + std::to_string(kernel[1]) + ")");
  }
  if (dilation < 1) throw ValidationError("conv1d dilation must be positive");
  if (padding < 0) throw ValidationError("conv1d padding must be non-negative");
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_w = input[2];
  g.out_channels = kernel[0];
  g.k_w = kernel[2];
  g.dilation = dilation;
  g.pad_w = padding;
  g.out_w = g.in_w + 2 * padding - dilation * (g.k_w - 1);
  if (g.out_w < 1) {
    throw DimensionError("conv1d output length " + std::to_string(g.out_w) + " < 1 (input axis 2 L=" +
                         std::to_string(g.in_w) + ", kernel axis 2 K=" + std::to_string(g.k_w) +
                         ", dilation=" + std::to_string(dilation) + ")");
  }
  return g;
}

ConvGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int64_t stride, int64_t padding) {
  if (input.size() != 4) throw DimensionError("conv2d input must be [N, C_in, H, W], got " + shape_to_string(input));
  if (kernel.size() != 4) {
    throw DimensionError("conv2d kernel must be [C_out, C_in, Kh, Kw], got " + shape_to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw DimensionError("conv2d channel mismatch: input axis 1 (C_in=" + std::to_string(input[1]) +
                         ") vs kernel axis 1 (C_in=" + std::to_string(kernel[1]) + ")");
  }
  if (stride < 1) throw ValidationError("conv2d stride must be positive");
  if (padding < 0) throw ValidationError("conv2d padding must be non-negative");
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_channels = kernel[0];
  g.k_h = kernel[2];
  g.k_w = kernel[3];
  g.stride = stride;
  g.pad_h = padding;
  g.pad_w = padding;
  const int64_t span_h = g.in_h + 2 * padding - g.k_h;
  const int64_t span_w = g.in_w + 2 * padding - g.k_w;
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d kernel " + shape_to_string(kernel) + " larger than padded input " +
                         shape_to_string(input));
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

void conv_forward(std::span<const float> input, std::span<const float> kernel, std::span<float> output,
                  const ConvGeometry& g) {
  check_spans(g, input.size(), kernel.size(), output.size());
  conv_forward_generic<float, float, float>(input, kernel, output, g);
}

void conv_backward_input(std::span<const float> grad_output, std::span<const float> kernel,
                         std::span<float> grad_input, const ConvGeometry& g) {
  check_spans(g, grad_input.size(), kernel.size(), grad_output.size());
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  for (int64_t n = 0; n < g.batch; ++n) {
    for (int64_t co = 0; co < g.out_channels; ++co) {
      const float* gout = grad_output.data() + (n * g.out_channels + co) * out_plane;
      for (int64_t ci = 0; ci < g.in_channels; ++ci) {
        float* gin = grad_input.data() + (n * g.in_channels + ci) * in_plane;
        for (int64_t kh = 0; kh < g.k_h; ++kh) {
          for (int64_t kw = 0; kw < g.k_w; ++kw) {
            const float w = kernel[((co * g.in_channels + ci) * g.k_h + kh) * g.k_w + kw];
            const int64_t off_w = kw * g.dilation - g.pad_w;
            int64_t lo = 0;
            int64_t hi = 0;
            valid_range(off_w, g.stride, g.in_w, g.out_w, lo, hi);
            for (int64_t oh = 0; oh < g.out_h; ++oh) {
              const int64_t ih = oh * g.stride + kh * g.dilation - g.pad_h;
              if (ih < 0 || ih >= g.in_h) continue;
              float* gin_row = gin + ih * g.in_w;
              const float* gout_row = gout + oh * g.out_w;
              if (g.stride == 1) {
                for (int64_t ow = lo; ow < hi; ++ow) gin_row[ow + off_w] += w * gout_row[ow];
              } else {
                for (int64_t ow = lo; ow < hi; ++ow) gin_row[ow * g.stride + off_w] += w * gout_row[ow];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_kernel(std::span<const float> grad_output, std::span<const float> input,
                          std::span<float> grad_kernel, const ConvGeometry& g) {
  check_spans(g, input.size(), grad_kernel.size(), grad_output.size());
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  for (int64_t co = 0; co < g.out_channels; ++co) {
    for (int64_t ci = 0; ci < g.in_channels; ++ci) {
      for (int64_t kh = 0; kh < g.k_h; ++kh) {
        for (int64_t kw = 0; kw < g.k_w; ++kw) {
          const int64_t off_w = kw * g.dilation - g.pad_w;
          int64_t lo = 0;
          int64_t hi = 0;
          valid_range(off_w, g.stride, g.in_w, g.out_w, lo, hi);
          double acc = 0.0;
          for (int64_t n = 0; n < g.batch; ++n) {
            const float* gout = grad_output.data() + (n * g.out_channels + co) * out_plane;
            const float* in = input.data() + (n * g.in_channels + ci) * in_plane;
            for (int64_t oh = 0; oh < g.out_h; ++oh) {
              const int64_t ih = oh * g.stride + kh * g.dilation - g.pad_h;
              if (ih < 0 || ih >= g.in_h || hi <= lo) continue;
              acc += dot_strided(gout + oh * g.out_w + lo, in + ih * g.in_w + lo * g.stride + off_w, hi - lo,
                                 g.stride);
            }
          }
          grad_kernel[((co * g.in_channels + ci) * g.k_h + kh) * g.k_w + kw] += static_cast<float>(acc);
        }
      }
    }
  }
}

void conv_forward_int(std::span<const int32_t> input, std::span<const int8_t> kernel, std::span<int32_t> output,
                      const ConvGeometry& g, OpCounter* counter) {
  conv_forward_int_impl<int8_t>(input, kernel, output, g, counter);
}

void conv_forward_int(std::span<const int32_t> input, std::span<const int32_t> kernel, std::span<int32_t> output,
                      const ConvGeometry& g, OpCounter* counter) {
  conv_forward_int_impl<int32_t>(input, kernel, output, g, counter);
}

void dense_forward(std::span<const float> input, std::span<const float> weights, std::span<const float> bias,
                   std::span<float> output, const DenseGeometry& g) {
  const int64_t p = g.positions;
  for (int64_t b = 0; b < g.batch; ++b) {
    const float* in = input.data() + b * g.in_features * p;
    for (int64_t m = 0; m < g.out_features; ++m) {
      float* out = output.data() + (b * g.out_features + m) * p;
      std::fill(out, out + p, 0.0f);
      const float* w = weights.data() + m * g.in_features;
      for (int64_t i = 0; i < g.in_features; ++i) {
        const float wi = w[i];
        const float* src = in + i * p;
        for (int64_t j = 0; j < p; ++j) out[j] += wi * src[j];
      }
      if (!bias.empty()) {
        const float bm = bias[m];
        for (int64_t j = 0; j < p; ++j) out[j] += bm;
      }
    }
  }
}

void dense_backward(std::span<const float> grad_output, std::span<const float> input, std::span<const float> weights,
                    std::span<float> grad_input, std::span<float> grad_weights, std::span<float> grad_bias,
                    const DenseGeometry& g) {
  const int64_t p = g.positions;
  for (int64_t b = 0; b < g.batch; ++b) {
    const float* in = input.data() + b * g.in_features * p;
    for (int64_t m = 0; m < g.out_features; ++m) {
      const float* gout = grad_output.data() + (b * g.out_features + m) * p;
      if (!grad_input.empty()) {
        float* gin = grad_input.data() + b * g.in_features * p;
        const float* w = weights.data() + m * g.in_features;
        for (int64_t i = 0; i < g.in_features; ++i) {
          const float wi = w[i];
          float* dst = gin + i * p;
          for (int64_t j = 0; j < p; ++j) dst[j] += wi * gout[j];
        }
      }
      if (!grad_weights.empty()) {
        float* gw = grad_weights.data() + m * g.in_features;
        for (int64_t i = 0; i < g.in_features; ++i) gw[i] += dot_strided(gout, in + i * p, p, 1);
      }
      if (!grad_bias.empty()) {
        double acc = 0.0;
        for (int64_t j = 0; j < p; ++j) acc += gout[j];
        grad_bias[m] += static_cast<float>(acc);
      }
    }
  }
}

void mean_pool(std::span<const float> input, std::span<float> output, int64_t rows, int64_t spatial) {
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const float* src = input.data() + r * spatial;
    for (int64_t i = 0; i < spatial; ++i) acc += src[i];
    output[r] = static_cast<float>(acc / static_cast<double>(spatial));
  }
}

}  // namespace fqconv::kernels
