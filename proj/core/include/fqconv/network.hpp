// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fqconv/autograd.hpp"
#include "fqconv/quantizer.hpp"
#include "fqconv/tensor.hpp"

namespace fqconv {

enum class NodeKind { kInput, kDense, kConv1d, kConv2d, kBatchNorm, kRelu, kQuantize, kAdd, kGlobalAvgPool };

/// kFloat: quantizers bypassed. kFakeQuant: quantizers active, BN present.
/// kFullyQuantized: BN-free network produced by replace_bn_relu.
enum class NetMode { kFloat, kFakeQuant, kFullyQuantized };

enum class ParamRole { kWeight, kBias, kGamma, kBeta, kRunningMean, kRunningVar, kLogScale };

const char* to_string(NodeKind kind);
const char* to_string(NetMode mode);
const char* to_string(ParamRole role);
NodeKind node_kind_from_string(const std::string& s);
NetMode net_mode_from_string(const std::string& s);
ParamRole param_role_from_string(const std::string& s);

struct Param {
  std::string name;
  ParamRole role = ParamRole::kWeight;
  Tensor value;
  /// Log-scales start uninitialized until calibrated; everything else is true.
  bool initialized = true;
  bool trainable = true;
};

/// Quantizer attached to a node. Several attachments may share one
/// log-scale parameter, which ties their scales.
struct QuantAttachment {
  int bits = 8;
  float lower_bound = -1.0f;
  int scale_param = -1;
};

struct Node {
  NodeKind kind = NodeKind::kInput;
  std::string name;
  std::vector<int> inputs;

  // Dense / conv.
  int weight = -1;
  int bias = -1;
  int dilation = 1;
  int stride = 1;
  int padding = 0;
  /// Present on layers whose weights are quantized in quantized modes.
  std::optional<QuantAttachment> weight_quant;

  // BatchNorm.
  int gamma = -1;
  int beta = -1;
  int running_mean = -1;
  int running_var = -1;
  int64_t bn_updates = 0;
  float eps = 1e-5f;
  float momentum = 0.1f;

  // Quantize.
  QuantAttachment quant;
};

/// Declarative network graph with its parameter table. Nodes are stored in
/// topological order and the last node is the output. Networks are values:
/// transforms take a network and return a new one.
class Network {
 public:
  NetMode mode = NetMode::kFloat;
  std::string arch = "custom";
  /// Per-sample input shape, e.g. [C, L] or [C, H, W].
  Shape input_shape;
  int num_classes = 0;
  std::vector<Node> nodes;
  std::vector<Param> params;

  int add_param(std::string name, ParamRole role, Tensor value);
  int add_node(Node node);
  /// New uninitialized log-scale parameter.
  int add_log_scale(const std::string& name);

  int output() const { return static_cast<int>(nodes.size()) - 1; }
  const Node& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
  Node& node(int id) { return nodes.at(static_cast<size_t>(id)); }
  Param& param(int id) { return params.at(static_cast<size_t>(id)); }
  const Param& param(int id) const { return params.at(static_cast<size_t>(id)); }

  /// Quantizer configuration currently described by an attachment.
  QuantConfig quant_config(const QuantAttachment& q) const;

  /// Indices of nodes that consume node `id`.
  std::vector<int> consumers(int id) const;
  int count(NodeKind kind) const;

  /// Checks graph structure, parameter references and shapes; throws StructuralError.
  void validate() const;
};

/// Per-sample output shape of every node.
std::vector<Shape> infer_shapes(const Network& net);

/// Learnable weights, biases and BN affine parameters (log-scales and running
/// statistics excluded).
int64_t parameter_count(const Network& net);
/// Multiply-accumulates of dense and conv layers for one sample.
int64_t macs_per_sample(const Network& net);
/// Input frames seen by one output position of the last conv layer.
int64_t receptive_field(const Network& net);

/// Sets bitwidths of every weight quantizer and every activation quantizer.
void set_bitwidths(Network& net, int weight_bits, int act_bits);

/// Switches a float network to fake-quant mode at the given bitwidths.
/// Weight scales that were never initialized are set to ln max|w|;
/// activation scales are left for calibration on the first batch.
Network to_fake_quant(const Network& net, int weight_bits, int act_bits);

/// s = ln max|x|, or 0 when x is identically zero.
float initial_log_scale(std::span<const float> x);

/// Parameters touched by training, in table order.
std::vector<int> trainable_params(const Network& net);

bool has_uninitialized_scales(const Network& net);

/// Removes parameters no node references and renumbers the rest.
void prune_params(Network& net);

}  // namespace fqconv
