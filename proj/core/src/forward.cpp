// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/forward.hpp"

#include <cmath>

#include "fqconv/error.hpp"
#include "fqconv/kernels.hpp"
#include "fqconv/noise.hpp"
#include "fqconv/ops.hpp"

namespace fqconv {

namespace {

kernels::ConvGeometry conv_geometry(const Node& n, const Shape& input, const Shape& kernel) {
  if (n.kind == NodeKind::kConv1d) return kernels::conv1d_geometry(input, kernel, n.dilation, n.padding);
  return kernels::conv2d_geometry(input, kernel, n.stride, n.padding);
}

Shape conv_output_shape(const Node& n, const kernels::ConvGeometry& g) {
  if (n.kind == NodeKind::kConv1d) return {g.batch, g.out_channels, g.out_w};
  return {g.batch, g.out_channels, g.out_h, g.out_w};
}

// Conv on quantizer-grid inputs and weights evaluated through integer codes.
Var exact_quant_conv(const Var& x, const Var& wq, const QuantConfig& act, const QuantConfig& wcfg,
                     const kernels::ConvGeometry& g, Shape out_shape) {
  const Tensor& xv = x.value();
  const Tensor& wv = wq.value();
  std::vector<int32_t> a(static_cast<size_t>(xv.size()));
  for (int64_t i = 0; i < xv.size(); ++i) a[static_cast<size_t>(i)] = quantize_code(xv[i], act);
  std::vector<int32_t> w(static_cast<size_t>(wv.size()));
  for (int64_t i = 0; i < wv.size(); ++i) w[static_cast<size_t>(i)] = quantize_code(wv[i], wcfg);
  std::vector<int32_t> acc(static_cast<size_t>(g.output_size()));
  kernels::conv_forward_int(a, w, acc, g);
  const float k = accumulator_gain(wcfg, act);
  Tensor out(std::move(out_shape));
  for (int64_t i = 0; i < out.size(); ++i) out[i] = k * static_cast<float>(acc[static_cast<size_t>(i)]);

  Tape* t = x.tape();
  const int in_id = x.id();
  const int k_id = wq.id();
  return t->push(std::move(out), {x, wq}, [t, in_id, k_id, g](std::span<const float> gout, std::span<float* const> gin) {
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

Var conv_var(const Node& n, const Var& x, const Var& w) {
  if (n.kind == NodeKind::kConv1d) return conv1d(x, w, n.dilation, n.padding);
  return conv2d(x, w, n.stride, n.padding);
}

void ensure_scale(Network& net, int param, std::span<const float> data, bool calibrate, const std::string& where) {
  Param& p = net.param(param);
  if (p.initialized) return;
  if (!calibrate) throw UsageError("quantizer scale of '" + where + "' is not calibrated");
  p.value[0] = initial_log_scale(data);
  p.initialized = true;
}

}  // namespace

ForwardPass forward(Network& net, Tape& tape, const Tensor& batch, const ForwardOptions& options) {
  if (batch.rank() != static_cast<int64_t>(net.input_shape.size()) + 1) {
    throw DimensionError("forward expects a batch [B, " + shape_to_string(net.input_shape) + "], got " +
                         shape_to_string(batch.shape()));
  }
  for (size_t k = 0; k < net.input_shape.size(); ++k) {
    if (batch.shape()[k + 1] != net.input_shape[k]) {
      throw DimensionError("forward: batch axis " + std::to_string(k + 1) + " is " +
                           std::to_string(batch.shape()[k + 1]) + ", network expects " +
                           std::to_string(net.input_shape[k]));
    }
  }
  const bool quantized = net.mode != NetMode::kFloat;
  NoiseInjector* noise = quantized ? options.noise : nullptr;
  const float w_pct = noise ? noise->spec().weight_pct : 0.0f;
  const float a_pct = noise ? noise->spec().act_pct : 0.0f;
  const float m_pct = noise ? noise->spec().mac_pct : 0.0f;

  std::vector<Var> bound(net.params.size());
  auto bind = [&](int p) -> Var {
    Var& v = bound[static_cast<size_t>(p)];
    if (!v.valid()) v = tape.parameter(net.param(p).value);
    return v;
  };

  ForwardPass pass;
  pass.values.resize(net.nodes.size());
  for (size_t i = 0; i < net.nodes.size(); ++i) {
    const Node& n = net.nodes[i];
    auto in = [&](size_t k) -> const Var& { return pass.values[static_cast<size_t>(n.inputs[k])]; };
    Var out;
    switch (n.kind) {
      case NodeKind::kInput:
        out = tape.constant(batch);
        break;
      case NodeKind::kDense: {
        Var w = bind(n.weight);
        if (quantized && n.weight_quant) {
          ensure_scale(net, n.weight_quant->scale_param, net.param(n.weight).value.data(), options.calibrate, n.name);
          w = learned_quantize(w, bind(n.weight_quant->scale_param), n.weight_quant->bits, n.weight_quant->lower_bound);
        }
        out = dense(in(0), w, n.bias >= 0 ? bind(n.bias) : Var());
        break;
      }
      case NodeKind::kConv1d:
      case NodeKind::kConv2d: {
        Var x = in(0);
        Var w = bind(n.weight);
        if (!quantized || !n.weight_quant) {
          out = conv_var(n, x, w);
          break;
        }
        ensure_scale(net, n.weight_quant->scale_param, net.param(n.weight).value.data(), options.calibrate, n.name);
        const QuantConfig wcfg = net.quant_config(*n.weight_quant);
        Var wq = learned_quantize(w, bind(n.weight_quant->scale_param), wcfg.bits, wcfg.lower_bound);
        const Node& src = net.node(n.inputs[0]);
        const bool from_quantizer = src.kind == NodeKind::kQuantize;
        if (w_pct > 0.0f) wq = add_constant(wq, noise->weight_noise(static_cast<int>(i), wq.shape(), wcfg.lsb()));
        if (a_pct > 0.0f && from_quantizer) {
          x = add_constant(x, noise->sample(x.shape(), net.quant_config(src.quant).lsb(), a_pct));
        }
        if (from_quantizer && w_pct == 0.0f && a_pct == 0.0f) {
          kernels::ConvGeometry g = conv_geometry(n, x.shape(), wq.shape());
          out = exact_quant_conv(x, wq, net.quant_config(src.quant), wcfg, g, conv_output_shape(n, g));
        } else {
          out = conv_var(n, x, wq);
        }
        break;
      }
      case NodeKind::kBatchNorm: {
        Tensor& rm = net.param(n.running_mean).value;
        Tensor& rv = net.param(n.running_var).value;
        if (options.training) {
          BatchStatistics stats;
          out = batch_norm(in(0), bind(n.gamma), bind(n.beta), n.eps, &stats);
          const double m = static_cast<double>(stats.count);
          const double mom = n.momentum;
          for (int64_t c = 0; c < rm.size(); ++c) {
            const size_t cc = static_cast<size_t>(c);
            const double unbiased = stats.variance[cc] * m / (m - 1.0);
            rm[c] = static_cast<float>((1.0 - mom) * rm[c] + mom * stats.mean[cc]);
            rv[c] = static_cast<float>((1.0 - mom) * rv[c] + mom * unbiased);
          }
          net.node(static_cast<int>(i)).bn_updates += 1;
        } else {
          const Tensor& gamma = net.param(n.gamma).value;
          const Tensor& beta = net.param(n.beta).value;
          std::vector<float> sc(static_cast<size_t>(gamma.size()));
          std::vector<float> sh(static_cast<size_t>(gamma.size()));
          for (int64_t c = 0; c < gamma.size(); ++c) {
            const double inv = 1.0 / std::sqrt(static_cast<double>(rv[c]) + static_cast<double>(n.eps));
            sc[static_cast<size_t>(c)] = static_cast<float>(gamma[c] * inv);
            sh[static_cast<size_t>(c)] = static_cast<float>(beta[c] - gamma[c] * rm[c] * inv);
          }
          out = channel_affine(in(0), sc, sh);
        }
        break;
      }
      case NodeKind::kRelu:
        out = relu(in(0));
        break;
      case NodeKind::kQuantize: {
        if (!quantized) {
          out = in(0);
          break;
        }
        Var x = in(0);
        ensure_scale(net, n.quant.scale_param, x.value().data(), options.calibrate, n.name);
        const NodeKind src = net.node(n.inputs[0]).kind;
        if (m_pct > 0.0f && (src == NodeKind::kConv1d || src == NodeKind::kConv2d)) {
          x = add_constant(x, noise->sample(x.shape(), net.quant_config(n.quant).lsb(), m_pct));
        }
        out = learned_quantize(x, bind(n.quant.scale_param), n.quant.bits, n.quant.lower_bound);
        break;
      }
      case NodeKind::kAdd:
        out = add(in(0), in(1));
        break;
      case NodeKind::kGlobalAvgPool:
        out = global_avg_pool(in(0));
        break;
    }
    pass.values[i] = out;
  }
  return pass;
}

Tensor slice_rows(const Tensor& t, int64_t begin, int64_t end) {
  if (begin < 0 || end > t.dim(0) || begin >= end) throw DimensionError("slice_rows: bad row range");
  const int64_t row = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = end - begin;
  std::vector<float> data(t.storage().begin() + begin * row, t.storage().begin() + end * row);
  return Tensor(std::move(s), std::move(data));
}

Tensor predict(const Network& net, const Tensor& batch, NoiseInjector* noise, int64_t chunk) {
  // Inference never mutates the network: BN uses running statistics and
  // calibration is disabled.
  Network& n = const_cast<Network&>(net);
  ForwardOptions opts;
  opts.calibrate = false;
  opts.noise = noise;
  const int64_t rows = batch.dim(0);
  Tensor logits;
  int64_t k = 0;
  for (int64_t b = 0; b < rows; b += chunk) {
    Tape tape;
    tape.set_grad_enabled(false);
    const int64_t e = std::min(rows, b + chunk);
    ForwardPass pass = forward(n, tape, b == 0 && e == rows ? batch : slice_rows(batch, b, e), opts);
    const Tensor& out = pass.output().value();
    if (out.rank() != 2) throw StructuralError("network output must be [B, K], got " + shape_to_string(out.shape()));
    if (b == 0) {
      k = out.dim(1);
      logits = Tensor({rows, k});
    }
    std::copy(out.storage().begin(), out.storage().end(), logits.storage().begin() + b * k);
  }
  return logits;
}

void calibrate(Network& net, const Tensor& batch) {
  if (!has_uninitialized_scales(net) || net.mode == NetMode::kFloat) return;
  Tape tape;
  tape.set_grad_enabled(false);
  ForwardOptions opts;
  opts.calibrate = true;
  forward(net, tape, batch, opts);
}

}  // namespace fqconv
