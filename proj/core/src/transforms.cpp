// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "fqconv/error.hpp"

namespace fqconv {

double FoldedBatchNorm::apply(size_t channel, double x) const {
  return static_cast<double>(scale[channel] * static_cast<long double>(x) + shift[channel]);
}

FoldedBatchNorm bn_fold(const BatchNormParams& p) {
  if (!p.populated) throw UsageError("bn_fold: running statistics were never populated");
  const size_t c = p.gamma.size();
  if (p.beta.size() != c || p.running_mean.size() != c || p.running_var.size() != c) {
    throw DimensionError("bn_fold: parameter vectors differ in channel count");
  }
  FoldedBatchNorm f;
  f.scale.resize(c);
  f.shift.resize(c);
  for (size_t i = 0; i < c; ++i) {
    const long double sigma = std::sqrt(static_cast<long double>(p.running_var[i]) + static_cast<long double>(p.eps));
    f.scale[i] = static_cast<long double>(p.gamma[i]) / sigma;
    f.shift[i] = static_cast<long double>(p.beta[i]) -
                 static_cast<long double>(p.gamma[i]) * static_cast<long double>(p.running_mean[i]) / sigma;
  }
  return f;
}

double bn_inference(const BatchNormParams& p, size_t c, double x) {
  const long double sigma = std::sqrt(static_cast<long double>(p.running_var[c]) + static_cast<long double>(p.eps));
  return static_cast<double>(static_cast<long double>(p.gamma[c]) *
                                 (static_cast<long double>(x) - static_cast<long double>(p.running_mean[c])) / sigma +
                             static_cast<long double>(p.beta[c]));
}

BatchNormParams batch_norm_params(const Network& net, int node) {
  const Node& n = net.node(node);
  if (n.kind != NodeKind::kBatchNorm) throw UsageError("node '" + n.name + "' is not a batch norm");
  BatchNormParams p;
  auto copy = [&](int id) {
    const Tensor& t = net.param(id).value;
    return std::vector<double>(t.storage().begin(), t.storage().end());
  };
  p.gamma = copy(n.gamma);
  p.beta = copy(n.beta);
  p.running_mean = copy(n.running_mean);
  p.running_var = copy(n.running_var);
  p.eps = n.eps;
  p.populated = n.bn_updates > 0;
  return p;
}

long double bn_scale_magnitude(std::span<const long double> gamma) {
  std::vector<long double> a;
  for (long double g : gamma) {
    if (g != 0.0L) a.push_back(std::fabs(g));
  }
  if (a.empty()) throw ValidationError("absorb_bn_scale: every folded BN scale is zero");
  std::sort(a.begin(), a.end());
  const size_t h = a.size() / 2;
  return a.size() % 2 ? a[h] : 0.5L * (a[h - 1] + a[h]);
}

QuantConfig absorb_bn_scale(const QuantConfig& cfg, std::span<const long double> gamma) {
  QuantConfig out = cfg;
  out.log_scale = static_cast<float>(static_cast<long double>(cfg.log_scale) + std::log(bn_scale_magnitude(gamma)));
  return out;
}

namespace {

bool is_conv(NodeKind k) { return k == NodeKind::kConv1d || k == NodeKind::kConv2d; }

bool is_unsigned_quant(const Node& n) { return n.kind == NodeKind::kQuantize && n.quant.lower_bound == 0.0f; }

void fold_into_dense(Network& net, const Node& dense, const FoldedBatchNorm& f) {
  Tensor& w = net.param(dense.weight).value;
  const int64_t out = w.dim(0);
  const int64_t row = w.size() / out;
  if (dense.bias < 0) throw StructuralError("dense '" + dense.name + "' needs a bias to absorb batch norm");
  Tensor& b = net.param(dense.bias).value;
  for (int64_t o = 0; o < out; ++o) {
    const size_t oo = static_cast<size_t>(o);
    for (int64_t k = 0; k < row; ++k) {
      w[o * row + k] = static_cast<float>(f.scale[oo] * static_cast<long double>(w[o * row + k]));
    }
    b[o] = static_cast<float>(f.scale[oo] * static_cast<long double>(b[o]) + f.shift[oo]);
  }
}

void fold_into_conv(Network& net, const Node& conv, const FoldedBatchNorm& f) {
  Tensor& w = net.param(conv.weight).value;
  const int64_t out = w.dim(0);
  const int64_t row = w.size() / out;
  const long double g = bn_scale_magnitude(f.scale);
  for (int64_t o = 0; o < out; ++o) {
    const long double c = f.scale[static_cast<size_t>(o)] < 0.0L ? -g : g;
    for (int64_t k = 0; k < row; ++k) w[o * row + k] = static_cast<float>(c * static_cast<long double>(w[o * row + k]));
  }
  if (conv.weight_quant) {
    Param& s = net.param(conv.weight_quant->scale_param);
    s.value[0] = absorb_bn_scale(net.quant_config(*conv.weight_quant), f.scale).log_scale;
  }
}

// Unsigned quantizer reached from an add through an optional ReLU.
int post_add_quantizer(const Network& net, int add) {
  std::vector<int> c = net.consumers(add);
  if (c.size() == 1 && net.node(c[0]).kind == NodeKind::kRelu) c = net.consumers(c[0]);
  if (c.size() != 1 || !is_unsigned_quant(net.node(c[0]))) {
    throw StructuralError("residual add '" + net.node(add).name + "' must feed an unsigned quantizer");
  }
  return c[0];
}

}  // namespace

Network replace_bn_relu(const Network& src) {
  if (src.mode == NetMode::kFullyQuantized) return src;
  if (src.mode != NetMode::kFakeQuant) throw UsageError("replace_bn_relu expects a fake-quant network");
  if (has_uninitialized_scales(src)) throw UsageError("replace_bn_relu: quantizer scales are not calibrated");

  Network net = src;
  const std::vector<Node>& old = src.nodes;
  const size_t count = old.size();
  std::vector<bool> drop(count, false);
  std::vector<std::optional<QuantAttachment>> become_quant(count);
  std::vector<int> scale_override(count, -1);
  int default_bits = 8;
  for (const Node& n : old) {
    if (n.kind == NodeKind::kQuantize) {
      default_bits = n.quant.bits;
      break;
    }
  }

  for (size_t i = 0; i < count; ++i) {
    const Node& bn = old[i];
    if (bn.kind != NodeKind::kBatchNorm) continue;
    const int p = bn.inputs[0];
    const Node& producer = old[static_cast<size_t>(p)];
    if (producer.kind != NodeKind::kDense && !is_conv(producer.kind)) {
      throw StructuralError("batch norm '" + bn.name + "' is not preceded by a conv or dense layer");
    }
    if (src.consumers(p).size() != 1) {
      throw StructuralError("batch norm '" + bn.name + "' shares its producer with other nodes");
    }
    const FoldedBatchNorm fold = bn_fold(batch_norm_params(src, static_cast<int>(i)));
    if (producer.kind == NodeKind::kDense) {
      fold_into_dense(net, producer, fold);
      drop[i] = true;
      continue;
    }
    fold_into_conv(net, producer, fold);
    const std::vector<int> cons = src.consumers(static_cast<int>(i));
    if (cons.size() == 1 && old[static_cast<size_t>(cons[0])].kind == NodeKind::kRelu) {
      const std::vector<int> after = src.consumers(cons[0]);
      if (after.size() == 1 && is_unsigned_quant(old[static_cast<size_t>(after[0])])) {
        drop[i] = true;
        drop[static_cast<size_t>(cons[0])] = true;
        continue;
      }
    }
    if (cons.size() == 1 && old[static_cast<size_t>(cons[0])].kind == NodeKind::kAdd) {
      const Node& add = old[static_cast<size_t>(cons[0])];
      const int other = add.inputs[0] == static_cast<int>(i) ? add.inputs[1] : add.inputs[0];
      const int post = post_add_quantizer(src, cons[0]);
      const Node& other_node = old[static_cast<size_t>(other)];
      const int join = other_node.kind == NodeKind::kQuantize ? other_node.quant.scale_param
                                                              : old[static_cast<size_t>(post)].quant.scale_param;
      become_quant[i] = QuantAttachment{old[static_cast<size_t>(post)].quant.bits, -1.0f, join};
      scale_override[static_cast<size_t>(post)] = join;
      net.param(join).trainable = false;
      continue;
    }
    become_quant[i] = QuantAttachment{default_bits, -1.0f, net.add_log_scale(bn.name + ".scale")};
  }

  for (size_t i = 0; i < count; ++i) {
    const Node& n = old[i];
    if (n.kind != NodeKind::kRelu || drop[i]) continue;
    const std::vector<int> cons = src.consumers(static_cast<int>(i));
    if (cons.size() != 1 || !is_unsigned_quant(old[static_cast<size_t>(cons[0])])) {
      throw StructuralError("ReLU '" + n.name + "' is not followed by an unsigned quantizer");
    }
    drop[i] = true;
  }

  std::vector<int> remap(count, -1);
  std::vector<Node> rebuilt;
  for (size_t i = 0; i < count; ++i) {
    if (drop[i]) {
      remap[i] = remap[static_cast<size_t>(old[i].inputs[0])];
      continue;
    }
    Node n = old[i];
    for (int& in : n.inputs) in = remap[static_cast<size_t>(in)];
    if (become_quant[i]) {
      Node q;
      q.kind = NodeKind::kQuantize;
      q.name = n.name + "_quant";
      q.inputs = n.inputs;
      q.quant = *become_quant[i];
      n = std::move(q);
    }
    if (scale_override[i] >= 0) n.quant.scale_param = scale_override[i];
    rebuilt.push_back(std::move(n));
    remap[i] = static_cast<int>(rebuilt.size()) - 1;
  }
  net.nodes = std::move(rebuilt);
  net.mode = NetMode::kFullyQuantized;
  prune_params(net);
  net.validate();
  return net;
}

std::vector<FQConvLayer> fq_conv_layers(const Network& net) {
  std::vector<FQConvLayer> layers;
  for (int i = 0; i < static_cast<int>(net.nodes.size()); ++i) {
    const Node& n = net.node(i);
    if (!is_conv(n.kind) || !n.weight_quant) continue;
    const Node& src = net.node(n.inputs[0]);
    const std::vector<int> cons = net.consumers(i);
    if (src.kind != NodeKind::kQuantize || cons.size() != 1 || net.node(cons[0]).kind != NodeKind::kQuantize) continue;
    FQConvLayer l;
    l.name = n.name;
    l.node = i;
    l.output_node = cons[0];
    l.kind = n.kind;
    l.kernel_shape = net.param(n.weight).value.shape();
    l.dilation = n.dilation;
    l.stride = n.stride;
    l.padding = n.padding;
    l.shadow = ShadowWeights(net.param(n.weight).value);
    l.weight = net.quant_config(*n.weight_quant);
    l.input = net.quant_config(src.quant);
    l.output = net.quant_config(net.node(cons[0]).quant);
    layers.push_back(std::move(l));
  }
  return layers;
}

}  // namespace fqconv
