// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fqconv/error.hpp"
#include "fqconv/kernels.hpp"

namespace fqconv {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kInput: return "input";
    case NodeKind::kDense: return "dense";
    case NodeKind::kConv1d: return "conv1d";
    case NodeKind::kConv2d: return "conv2d";
    case NodeKind::kBatchNorm: return "batch_norm";
    case NodeKind::kRelu: return "relu";
    case NodeKind::kQuantize: return "quantize";
    case NodeKind::kAdd: return "add";
    case NodeKind::kGlobalAvgPool: return "global_avg_pool";
  }
  return "?";
}

const char* to_string(NetMode mode) {
  switch (mode) {
    case NetMode::kFloat: return "fp";
    case NetMode::kFakeQuant: return "fake_quant";
    case NetMode::kFullyQuantized: return "fq";
  }
  return "?";
}

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::kWeight: return "weight";
    case ParamRole::kBias: return "bias";
    case ParamRole::kGamma: return "gamma";
    case ParamRole::kBeta: return "beta";
    case ParamRole::kRunningMean: return "running_mean";
    case ParamRole::kRunningVar: return "running_var";
    case ParamRole::kLogScale: return "log_scale";
  }
  return "?";
}

NodeKind node_kind_from_string(const std::string& s) {
  for (NodeKind k : {NodeKind::kInput, NodeKind::kDense, NodeKind::kConv1d, NodeKind::kConv2d, NodeKind::kBatchNorm,
                     NodeKind::kRelu, NodeKind::kQuantize, NodeKind::kAdd, NodeKind::kGlobalAvgPool}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown node kind '" + s + "'");
}

NetMode net_mode_from_string(const std::string& s) {
  for (NetMode m : {NetMode::kFloat, NetMode::kFakeQuant, NetMode::kFullyQuantized}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown network mode '" + s + "'");
}

ParamRole param_role_from_string(const std::string& s) {
  for (ParamRole r : {ParamRole::kWeight, ParamRole::kBias, ParamRole::kGamma, ParamRole::kBeta,
                      ParamRole::kRunningMean, ParamRole::kRunningVar, ParamRole::kLogScale}) {
    if (s == to_string(r)) return r;
  }
  throw ValidationError("unknown parameter role '" + s + "'");
}

int Network::add_param(std::string name, ParamRole role, Tensor value) {
  Param p;
  p.name = std::move(name);
  p.role = role;
  p.value = std::move(value);
  p.trainable = role != ParamRole::kRunningMean && role != ParamRole::kRunningVar;
  params.push_back(std::move(p));
  return static_cast<int>(params.size()) - 1;
}

int Network::add_node(Node node) {
  for (int in : node.inputs) {
    if (in < 0 || in >= static_cast<int>(nodes.size())) {
      throw StructuralError("node '" + node.name + "' references missing input " + std::to_string(in));
    }
  }
  nodes.push_back(std::move(node));
  return static_cast<int>(nodes.size()) - 1;
}

int Network::add_log_scale(const std::string& name) {
  int id = add_param(name, ParamRole::kLogScale, Tensor::vector({0.0f}));
  params.back().initialized = false;
  return id;
}

QuantConfig Network::quant_config(const QuantAttachment& q) const {
  QuantConfig cfg;
  cfg.bits = q.bits;
  cfg.lower_bound = q.lower_bound;
  cfg.log_scale = param(q.scale_param).value[0];
  return cfg;
}

std::vector<int> Network::consumers(int id) const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (int in : nodes[i].inputs) {
      if (in == id) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

int Network::count(NodeKind kind) const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [kind](const Node& n) { return n.kind == kind; }));
}

void Network::validate() const {
  if (nodes.empty() || nodes.front().kind != NodeKind::kInput) throw StructuralError("network must start with an input node");
  auto check_param = [&](const Node& n, int p, const char* what) {
    if (p < 0 || p >= static_cast<int>(params.size())) {
      throw StructuralError("node '" + n.name + "' has no valid " + what + " parameter");
    }
  };
  for (size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    for (int in : n.inputs) {
      if (in < 0 || in >= static_cast<int>(i)) throw StructuralError("node '" + n.name + "' is not topologically ordered");
    }
    const size_t want_inputs = n.kind == NodeKind::kInput ? 0 : n.kind == NodeKind::kAdd ? 2 : 1;
    if (n.inputs.size() != want_inputs) {
      throw StructuralError("node '" + n.name + "' (" + to_string(n.kind) + ") expects " + std::to_string(want_inputs) +
                            " inputs");
    }
    switch (n.kind) {
      case NodeKind::kDense:
      case NodeKind::kConv1d:
      case NodeKind::kConv2d:
        check_param(n, n.weight, "weight");
        if (n.weight_quant) check_param(n, n.weight_quant->scale_param, "weight scale");
        break;
      case NodeKind::kBatchNorm:
        check_param(n, n.gamma, "gamma");
        check_param(n, n.beta, "beta");
        check_param(n, n.running_mean, "running mean");
        check_param(n, n.running_var, "running variance");
        break;
      case NodeKind::kQuantize:
        check_param(n, n.quant.scale_param, "scale");
        break;
      default:
        break;
    }
  }
  if (mode == NetMode::kFullyQuantized && count(NodeKind::kBatchNorm) > 0) {
    throw StructuralError("fully quantized network still contains batch norm nodes");
  }
  infer_shapes(*this);
}

std::vector<Shape> infer_shapes(const Network& net) {
  std::vector<Shape> shapes(net.nodes.size());
  for (size_t i = 0; i < net.nodes.size(); ++i) {
    const Node& n = net.nodes[i];
    auto in_shape = [&](size_t k) -> const Shape& { return shapes[static_cast<size_t>(n.inputs.at(k))]; };
    switch (n.kind) {
      case NodeKind::kInput:
        shapes[i] = net.input_shape;
        break;
      case NodeKind::kDense: {
        const Shape& w = net.param(n.weight).value.shape();
        Shape s = in_shape(0);
        if (s.empty() || s[0] != w[1]) {
          throw DimensionError("dense '" + n.name + "': input features " + shape_to_string(s) + " vs weights " +
                               shape_to_string(w));
        }
        s[0] = w[0];
        shapes[i] = s;
        break;
      }
      case NodeKind::kConv1d: {
        Shape in = in_shape(0);
        in.insert(in.begin(), 1);
        kernels::ConvGeometry g = kernels::conv1d_geometry(in, net.param(n.weight).value.shape(), n.dilation, n.padding);
        shapes[i] = {g.out_channels, g.out_w};
        break;
      }
      case NodeKind::kConv2d: {
        Shape in = in_shape(0);
        in.insert(in.begin(), 1);
        kernels::ConvGeometry g = kernels::conv2d_geometry(in, net.param(n.weight).value.shape(), n.stride, n.padding);
        shapes[i] = {g.out_channels, g.out_h, g.out_w};
        break;
      }
      case NodeKind::kAdd:
        if (!same_shape(in_shape(0), in_shape(1))) {
          throw DimensionError("add '" + n.name + "': branch shapes " + shape_to_string(in_shape(0)) + " and " +
                               shape_to_string(in_shape(1)) + " differ");
        }
        shapes[i] = in_shape(0);
        break;
      case NodeKind::kGlobalAvgPool:
        shapes[i] = {in_shape(0).at(0)};
        break;
      case NodeKind::kBatchNorm:
        if (net.param(n.gamma).value.size() != in_shape(0).at(0)) {
          throw DimensionError("batch norm '" + n.name + "' channel count does not match its input");
        }
        shapes[i] = in_shape(0);
        break;
      case NodeKind::kRelu:
      case NodeKind::kQuantize:
        shapes[i] = in_shape(0);
        break;
    }
  }
  return shapes;
}

int64_t parameter_count(const Network& net) {
  int64_t total = 0;
  for (const Param& p : net.params) {
    if (p.role == ParamRole::kWeight || p.role == ParamRole::kBias || p.role == ParamRole::kGamma ||
        p.role == ParamRole::kBeta) {
      total += p.value.size();
    }
  }
  return total;
}

int64_t macs_per_sample(const Network& net) {
  std::vector<Shape> shapes = infer_shapes(net);
  int64_t total = 0;
  for (size_t i = 0; i < net.nodes.size(); ++i) {
    const Node& n = net.nodes[i];
    if (n.kind == NodeKind::kDense || n.kind == NodeKind::kConv1d || n.kind == NodeKind::kConv2d) {
      const Shape& w = net.param(n.weight).value.shape();
      const int64_t per_output = num_elements(w) / w[0];
      total += num_elements(shapes[i]) * per_output;
    }
  }
  return total;
}

int64_t receptive_field(const Network& net) {
  int last = -1;
  for (int i = 0; i < static_cast<int>(net.nodes.size()); ++i) {
    if (net.nodes[static_cast<size_t>(i)].kind == NodeKind::kConv1d) last = i;
  }
  if (last < 0) return 1;
  int64_t rf = 1;
  for (int id = last; id > 0;) {
    const Node& n = net.node(id);
    if (n.kind == NodeKind::kConv1d) {
      const int64_t k = net.param(n.weight).value.shape().back();
      rf += (k - 1) * n.dilation;
    }
    id = n.inputs.empty() ? 0 : n.inputs.front();
  }
  return rf;
}

void set_bitwidths(Network& net, int weight_bits, int act_bits) {
  for (Node& n : net.nodes) {
    if (n.weight_quant) n.weight_quant->bits = weight_bits;
    if (n.kind == NodeKind::kQuantize) n.quant.bits = act_bits;
  }
}

float initial_log_scale(std::span<const float> x) {
  float m = 0.0f;
  for (float v : x) m = std::max(m, std::fabs(v));
  return m > 0.0f ? std::log(m) : 0.0f;
}

Network to_fake_quant(const Network& net, int weight_bits, int act_bits) {
  Network out = net;
  if (out.mode == NetMode::kFullyQuantized) throw UsageError("to_fake_quant: network is already fully quantized");
  out.mode = NetMode::kFakeQuant;
  set_bitwidths(out, weight_bits, act_bits);
  for (Node& n : out.nodes) {
    if (!n.weight_quant) continue;
    Param& s = out.param(n.weight_quant->scale_param);
    if (!s.initialized) {
      s.value[0] = initial_log_scale(out.param(n.weight).value.data());
      s.initialized = true;
    }
  }
  return out;
}

std::vector<int> trainable_params(const Network& net) {
  std::vector<bool> used(net.params.size(), false);
  const bool quantized = net.mode != NetMode::kFloat;
  for (const Node& n : net.nodes) {
    for (int p : {n.weight, n.bias, n.gamma, n.beta}) {
      if (p >= 0) used[static_cast<size_t>(p)] = true;
    }
    if (quantized && n.weight_quant) used[static_cast<size_t>(n.weight_quant->scale_param)] = true;
    if (quantized && n.kind == NodeKind::kQuantize) used[static_cast<size_t>(n.quant.scale_param)] = true;
  }
  std::vector<int> out;
  for (size_t i = 0; i < net.params.size(); ++i) {
    if (used[i] && net.params[i].trainable) out.push_back(static_cast<int>(i));
  }
  return out;
}

bool has_uninitialized_scales(const Network& net) {
  for (const Node& n : net.nodes) {
    if (n.kind == NodeKind::kQuantize && !net.param(n.quant.scale_param).initialized) return true;
    if (n.weight_quant && !net.param(n.weight_quant->scale_param).initialized) return true;
  }
  return false;
}

void prune_params(Network& net) {
  std::vector<int> remap(net.params.size(), -1);
  auto mark = [&](int p) {
    if (p >= 0) remap[static_cast<size_t>(p)] = 0;
  };
  for (const Node& n : net.nodes) {
    for (int p : {n.weight, n.bias, n.gamma, n.beta, n.running_mean, n.running_var}) mark(p);
    if (n.weight_quant) mark(n.weight_quant->scale_param);
    if (n.kind == NodeKind::kQuantize) mark(n.quant.scale_param);
  }
  std::vector<Param> kept;
  for (size_t i = 0; i < net.params.size(); ++i) {
    if (remap[i] < 0) continue;
    remap[i] = static_cast<int>(kept.size());
    kept.push_back(std::move(net.params[i]));
  }
  auto apply = [&](int& p) {
    if (p >= 0) p = remap[static_cast<size_t>(p)];
  };
  for (Node& n : net.nodes) {
    for (int* p : {&n.weight, &n.bias, &n.gamma, &n.beta, &n.running_mean, &n.running_var}) apply(*p);
    if (n.weight_quant) apply(n.weight_quant->scale_param);
    if (n.kind == NodeKind::kQuantize) apply(n.quant.scale_param);
  }
  net.params = std::move(kept);
}

}  // namespace fqconv
