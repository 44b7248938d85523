// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/builders.hpp"

#include <cmath>
#include <random>

#include "fqconv/error.hpp"

namespace fqconv {

namespace {

class Builder {
 public:
  Builder(Network& net, uint64_t seed) : net_(net), rng_(seed) {}

  Tensor he_normal(Shape shape, int64_t fan_in) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(dist(rng_));
    return t;
  }

  int input() {
    Node n;
    n.kind = NodeKind::kInput;
    n.name = "input";
    return net_.add_node(std::move(n));
  }

  int dense(int x, const std::string& name, int64_t in, int64_t out) {
    Node n;
    n.kind = NodeKind::kDense;
    n.name = name;
    n.inputs = {x};
    n.weight = net_.add_param(name + ".weight", ParamRole::kWeight, he_normal({out, in}, in));
    n.bias = net_.add_param(name + ".bias", ParamRole::kBias, Tensor({out}));
    return net_.add_node(std::move(n));
  }

  int conv(int x, const std::string& name, NodeKind kind, Shape kernel, int dilation, int stride, int padding) {
    Node n;
    n.kind = kind;
    n.name = name;
    n.inputs = {x};
    n.dilation = dilation;
    n.stride = stride;
    n.padding = padding;
    const int64_t fan_in = num_elements(kernel) / kernel[0];
    n.weight = net_.add_param(name + ".weight", ParamRole::kWeight, he_normal(kernel, fan_in));
    n.weight_quant = QuantAttachment{8, -1.0f, net_.add_log_scale(name + ".weight_scale")};
    return net_.add_node(std::move(n));
  }

  int batch_norm(int x, const std::string& name, int64_t channels) {
    Node n;
    n.kind = NodeKind::kBatchNorm;
    n.name = name;
    n.inputs = {x};
    n.gamma = net_.add_param(name + ".gamma", ParamRole::kGamma, Tensor({channels}, 1.0f));
    n.beta = net_.add_param(name + ".beta", ParamRole::kBeta, Tensor({channels}, 0.0f));
    n.running_mean = net_.add_param(name + ".running_mean", ParamRole::kRunningMean, Tensor({channels}, 0.0f));
    n.running_var = net_.add_param(name + ".running_var", ParamRole::kRunningVar, Tensor({channels}, 1.0f));
    return net_.add_node(std::move(n));
  }

  int unary(int x, NodeKind kind, const std::string& name) {
    Node n;
    n.kind = kind;
    n.name = name;
    n.inputs = {x};
    return net_.add_node(std::move(n));
  }

  int quantize(int x, const std::string& name, float lower_bound) {
    Node n;
    n.kind = NodeKind::kQuantize;
    n.name = name;
    n.inputs = {x};
    n.quant = QuantAttachment{8, lower_bound, net_.add_log_scale(name + ".scale")};
    return net_.add_node(std::move(n));
  }

  int add(int a, int b, const std::string& name) {
    Node n;
    n.kind = NodeKind::kAdd;
    n.name = name;
    n.inputs = {a, b};
    return net_.add_node(std::move(n));
  }

 private:
  Network& net_;
  std::mt19937_64 rng_;
};

}  // namespace

Network build_kws_net(const KwsOptions& o) {
  if (o.in_channels < 1 || o.embed < 1 || o.filters < 1 || o.kernel < 1 || o.num_classes < 2 || o.dilations.empty()) {
    throw ValidationError("build_kws_net: sizes must be positive and there must be at least one conv layer");
  }
  Network net;
  net.arch = "kws";
  net.input_shape = {o.in_channels, o.length};
  net.num_classes = o.num_classes;
  Builder b(net, o.seed);
  int x = b.input();
  x = b.dense(x, "embed", o.in_channels, o.embed);
  x = b.batch_norm(x, "embed_bn", o.embed);
  x = b.quantize(x, "input_quant", -1.0f);
  int64_t channels = o.embed;
  for (size_t l = 0; l < o.dilations.size(); ++l) {
    const std::string name = "conv" + std::to_string(l + 1);
    const int64_t out = l + 1 == o.dilations.size() ? o.num_classes : o.filters;
    x = b.conv(x, name, NodeKind::kConv1d, {out, channels, o.kernel}, o.dilations[l], 1, 0);
    x = b.batch_norm(x, name + "_bn", out);
    x = b.unary(x, NodeKind::kRelu, name + "_relu");
    x = b.quantize(x, name + "_quant", 0.0f);
    channels = out;
  }
  b.unary(x, NodeKind::kGlobalAvgPool, "pool");
  net.validate();
  return net;
}

Network build_resblock_net(const ResNetOptions& o) {
  if (o.depth < 1 || o.widths.empty() || o.num_classes < 2) {
    throw ValidationError("build_resblock_net: need depth >= 1, at least one width and two classes");
  }
  Network net;
  net.arch = "resnet";
  net.input_shape = {o.in_channels, o.height, o.width};
  net.num_classes = o.num_classes;
  Builder b(net, o.seed);
  int x = b.input();
  x = b.quantize(x, "input_quant", -1.0f);
  x = b.conv(x, "stem", NodeKind::kConv2d, {o.widths[0], o.in_channels, 3, 3}, 1, 1, 1);
  x = b.batch_norm(x, "stem_bn", o.widths[0]);
  x = b.unary(x, NodeKind::kRelu, "stem_relu");
  x = b.quantize(x, "stem_quant", 0.0f);
  int64_t channels = o.widths[0];
  for (size_t s = 0; s < o.widths.size(); ++s) {
    const int64_t w = o.widths[s];
    for (int j = 0; j < o.depth; ++j) {
      const std::string name = "block" + std::to_string(s + 1) + "_" + std::to_string(j + 1);
      const int stride = (s > 0 && j == 0) ? 2 : 1;
      const int block_in = x;
      int y = b.conv(x, name + ".conv_a", NodeKind::kConv2d, {w, channels, 3, 3}, 1, stride, 1);
      y = b.batch_norm(y, name + ".bn_a", w);
      y = b.unary(y, NodeKind::kRelu, name + ".relu_a");
      y = b.quantize(y, name + ".quant_a", 0.0f);
      y = b.conv(y, name + ".conv_b", NodeKind::kConv2d, {w, w, 3, 3}, 1, 1, 1);
      y = b.batch_norm(y, name + ".bn_b", w);
      int shortcut = block_in;
      if (stride != 1 || channels != w) {
        shortcut = b.conv(block_in, name + ".shortcut", NodeKind::kConv2d, {w, channels, 1, 1}, 1, stride, 0);
        shortcut = b.batch_norm(shortcut, name + ".shortcut_bn", w);
      }
      x = b.add(y, shortcut, name + ".add");
      x = b.unary(x, NodeKind::kRelu, name + ".relu");
      x = b.quantize(x, name + ".quant", 0.0f);
      channels = w;
    }
  }
  x = b.unary(x, NodeKind::kGlobalAvgPool, "pool");
  b.dense(x, "classifier", channels, o.num_classes);
  net.validate();
  return net;
}

}  // namespace fqconv
