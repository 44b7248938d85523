// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/integer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "fqconv/error.hpp"
#include "fqconv/forward.hpp"
#include "fqconv/ops.hpp"

namespace fqconv {

int32_t IntegerLayerPlan::bin(int64_t s) const {
  const auto it = std::upper_bound(thresholds.begin(), thresholds.end(), s);
  return min_code + static_cast<int32_t>(it - thresholds.begin());
}

bool IntegerModel::is_ternary() const {
  for (const IntegerLayerPlan& p : plans) {
    if (p.kind == IntegerLayerPlan::Kind::kConv && p.weight.levels() != 1) return false;
  }
  return !plans.empty();
}

int accumulator_sizing(int64_t bound) {
  int bits = 1;
  while (((int64_t{1} << bits) < 2 * bound + 1) && bits < 63) ++bits;
  return bits;
}

int accumulator_sizing(const IntegerLayerPlan& plan) { return accumulator_sizing(plan.accumulator_bound); }

IntegerLayerPlan compile_layer(const FQConvLayer& layer, const QuantConfig& next) {
  layer.weight.validate();
  layer.input.validate();
  next.validate();
  if (layer.weight.levels() > 127) {
    throw CompileError("layer '" + layer.name + "': weights wider than 8 bits do not fit int8 codes");
  }
  IntegerLayerPlan p;
  p.kind = IntegerLayerPlan::Kind::kConv;
  p.name = layer.name;
  p.conv_kind = layer.kind;
  p.kernel_shape = layer.kernel_shape;
  p.dilation = layer.dilation;
  p.stride = layer.stride;
  p.padding = layer.padding;
  p.weight = layer.weight;
  p.input_cfg = layer.input;
  p.output_cfg = next;
  p.gain = accumulator_gain(layer.weight, layer.input);
  p.min_code = next.min_code();
  p.max_code = next.max_code();

  IntTensor codes = to_integer_codes(layer.shadow.master(), layer.weight);
  p.weight_codes.assign(codes.data.begin(), codes.data.end());

  const int64_t fan_in = num_elements(layer.kernel_shape) / layer.kernel_shape.at(0);
  const int64_t max_a = std::max<int64_t>(std::abs(layer.input.min_code()), layer.input.max_code());
  p.accumulator_bound = static_cast<int64_t>(layer.weight.levels()) * max_a * fan_in;
  if (accumulator_sizing(p) > 32) {
    throw CompileError("layer '" + layer.name + "': accumulator needs " + std::to_string(accumulator_sizing(p)) +
                       " bits, more than 32");
  }
  const int64_t lo = -p.accumulator_bound;
  const int64_t never = p.accumulator_bound + 1;
  for (int32_t j = p.min_code + 1; j <= p.max_code; ++j) {
    int64_t a = lo, b = never;
    while (a < b) {
      const int64_t mid = a + (b - a) / 2;
      if (requantize_accumulator(mid, p.gain, next) >= j) {
        b = mid;
      } else {
        a = mid + 1;
      }
    }
    p.thresholds.push_back(a);
  }
  return p;
}

namespace {

bool is_conv(NodeKind k) { return k == NodeKind::kConv1d || k == NodeKind::kConv2d; }

bool same_grid(const QuantConfig& a, const QuantConfig& b) { return a.bits == b.bits && a.log_scale == b.log_scale; }

kernels::ConvGeometry plan_geometry(const IntegerLayerPlan& p, const Shape& input) {
  if (p.conv_kind == NodeKind::kConv1d) return kernels::conv1d_geometry(input, p.kernel_shape, p.dilation, p.padding);
  return kernels::conv2d_geometry(input, p.kernel_shape, p.stride, p.padding);
}

Tensor head_dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape tape;
  tape.set_grad_enabled(false);
  return dense(tape.constant(x), tape.constant(w), tape.constant(b)).value();
}

}  // namespace

IntegerModel compile(const Network& net) {
  if (net.mode != NetMode::kFullyQuantized) throw CompileError("compile expects a fully quantized network");
  if (has_uninitialized_scales(net)) throw CompileError("compile: quantizer scales are not calibrated");
  net.validate();
  IntegerModel m;
  m.input_shape = net.input_shape;
  m.num_classes = net.num_classes;
  std::vector<int> slot_of(net.nodes.size(), -1);
  const int count = static_cast<int>(net.nodes.size());
  int i = 1;
  if (i < count && net.node(i).kind == NodeKind::kDense) {
    const Node& d = net.node(i);
    if (d.weight_quant) throw CompileError("head dense layer '" + d.name + "' must be full precision");
    m.has_head = true;
    m.head_weight = net.param(d.weight).value;
    m.head_bias = d.bias >= 0 ? net.param(d.bias).value : Tensor({m.head_weight.dim(0)});
    ++i;
  }
  if (i >= count || net.node(i).kind != NodeKind::kQuantize || net.node(i).inputs[0] != i - 1) {
    throw CompileError("the integer body must start with a quantizer on the network input");
  }
  m.entry = net.quant_config(net.node(i).quant);
  slot_of[static_cast<size_t>(i)] = 0;
  m.slot_configs.push_back(m.entry);
  m.slot_nodes.push_back(i);
  ++i;

  const std::vector<FQConvLayer> layers = fq_conv_layers(net);
  for (; i < count; ++i) {
    const Node& n = net.node(i);
    if (n.kind == NodeKind::kGlobalAvgPool) break;
    if (is_conv(n.kind)) {
      auto it = std::find_if(layers.begin(), layers.end(), [i](const FQConvLayer& l) { return l.node == i; });
      if (it == layers.end()) {
        throw CompileError("conv '" + n.name + "' is not a fully quantized layer (quantized input, weights and output)");
      }
      const int in_slot = slot_of[static_cast<size_t>(n.inputs[0])];
      if (in_slot < 0) throw CompileError("conv '" + n.name + "' reads a tensor that is not integer coded");
      IntegerLayerPlan p = compile_layer(*it, it->output);
      p.input = in_slot;
      p.output = static_cast<int>(m.slot_configs.size());
      slot_of[static_cast<size_t>(it->output_node)] = p.output;
      m.slot_configs.push_back(p.output_cfg);
      m.slot_nodes.push_back(it->output_node);
      m.plans.push_back(std::move(p));
      i = it->output_node;
      continue;
    }
    if (n.kind == NodeKind::kAdd) {
      const int a = slot_of[static_cast<size_t>(n.inputs[0])];
      const int b = slot_of[static_cast<size_t>(n.inputs[1])];
      const std::vector<int> cons = net.consumers(i);
      if (a < 0 || b < 0 || cons.size() != 1 || net.node(cons[0]).kind != NodeKind::kQuantize) {
        throw CompileError("add '" + n.name + "' must join two integer-coded branches into a quantizer");
      }
      const QuantConfig out = net.quant_config(net.node(cons[0]).quant);
      const QuantConfig& ca = m.slot_configs[static_cast<size_t>(a)];
      const QuantConfig& cb = m.slot_configs[static_cast<size_t>(b)];
      if (!same_grid(ca, out) || !same_grid(cb, out)) {
        throw CompileError("add '" + n.name + "': branches and join quantizer must share one scale and bitwidth");
      }
      IntegerLayerPlan p;
      p.kind = IntegerLayerPlan::Kind::kAdd;
      p.name = n.name;
      p.input = a;
      p.input_b = b;
      p.input_cfg = ca;
      p.weight = cb;
      p.output_cfg = out;
      p.min_code = out.min_code();
      p.max_code = out.max_code();
      p.accumulator_bound = static_cast<int64_t>(std::max(std::abs(ca.min_code()), ca.max_code())) +
                            std::max(std::abs(cb.min_code()), cb.max_code());
      p.output = static_cast<int>(m.slot_configs.size());
      slot_of[static_cast<size_t>(cons[0])] = p.output;
      m.slot_configs.push_back(out);
      m.slot_nodes.push_back(cons[0]);
      m.plans.push_back(std::move(p));
      i = cons[0];
      continue;
    }
    throw CompileError("node '" + n.name + "' (" + to_string(n.kind) + ") cannot be executed in the integer body");
  }
  if (i >= count) throw CompileError("the network must end in global average pooling");
  const int pooled = slot_of[static_cast<size_t>(net.node(i).inputs[0])];
  if (pooled < 0) throw CompileError("global pooling must read integer-coded activations");
  m.output_slot = pooled;
  ++i;
  if (i < count) {
    const Node& d = net.node(i);
    if (d.kind != NodeKind::kDense || d.weight_quant || i + 1 != count) {
      throw CompileError("only a full-precision classifier may follow global pooling");
    }
    m.has_classifier = true;
    m.classifier_weight = net.param(d.weight).value;
    m.classifier_bias = d.bias >= 0 ? net.param(d.bias).value : Tensor({m.classifier_weight.dim(0)});
  }
  return m;
}

IntTensor run_plan(const IntegerLayerPlan& p, const IntTensor& input, const IntTensor* input_b,
                   kernels::OpCounter* counter) {
  if (p.kind == IntegerLayerPlan::Kind::kAdd) {
    if (!input_b || !same_shape(input.shape, input_b->shape)) throw DimensionError("add plan '" + p.name + "' needs two equal-shape inputs");
    IntTensor out(input.shape);
    for (size_t k = 0; k < input.data.size(); ++k) {
      out.data[k] = std::clamp(input.data[k] + input_b->data[k], p.min_code, p.max_code);
    }
    if (counter) counter->additions += input.data.size();
    return out;
  }
  kernels::ConvGeometry g = plan_geometry(p, input.shape);
  std::vector<int32_t> acc(static_cast<size_t>(g.output_size()));
  kernels::conv_forward_int(input.data, p.weight_codes, acc, g, counter);
  Shape out_shape = p.conv_kind == NodeKind::kConv1d ? Shape{g.batch, g.out_channels, g.out_w}
                                                      : Shape{g.batch, g.out_channels, g.out_h, g.out_w};
  IntTensor out(std::move(out_shape));
  for (size_t k = 0; k < acc.size(); ++k) out.data[k] = p.bin(acc[k]);
  return out;
}

std::vector<IntTensor> integer_codes(const IntegerModel& m, const Tensor& batch, kernels::OpCounter* counter) {
  Tensor x = m.has_head ? head_dense(batch, m.head_weight, m.head_bias) : batch;
  std::vector<IntTensor> slots(m.slot_configs.size());
  slots[0] = to_integer_codes(x, m.entry);
  for (const IntegerLayerPlan& p : m.plans) {
    const IntTensor* b = p.input_b >= 0 ? &slots[static_cast<size_t>(p.input_b)] : nullptr;
    slots[static_cast<size_t>(p.output)] = run_plan(p, slots[static_cast<size_t>(p.input)], b, counter);
  }
  return slots;
}

Tensor integer_forward(const IntegerModel& m, const Tensor& batch, kernels::OpCounter* counter) {
  std::vector<IntTensor> slots = integer_codes(m, batch, counter);
  const IntTensor& last = slots[static_cast<size_t>(m.output_slot)];
  Tensor values = from_integer_codes(last, m.slot_configs[static_cast<size_t>(m.output_slot)]);
  Tape tape;
  tape.set_grad_enabled(false);
  Var pooled = global_avg_pool(tape.constant(std::move(values)));
  if (!m.has_classifier) return pooled.value();
  return dense(pooled, tape.constant(m.classifier_weight), tape.constant(m.classifier_bias)).value();
}

ScanResult exhaustive_scan(const IntegerLayerPlan& p) {
  ScanResult r;
  if (p.kind == IntegerLayerPlan::Kind::kAdd) {
    for (int32_t a = p.input_cfg.min_code(); a <= p.input_cfg.max_code(); ++a) {
      for (int32_t b = p.weight.min_code(); b <= p.weight.max_code(); ++b) {
        const float v = dequantize_code(a, p.input_cfg) + dequantize_code(b, p.weight);
        const int32_t want = quantize_code(v, p.output_cfg);
        const int32_t got = std::clamp(a + b, p.min_code, p.max_code);
        ++r.checked;
        if (want != got) ++r.mismatches;
      }
    }
    return r;
  }
  for (int64_t s = -p.accumulator_bound; s <= p.accumulator_bound; ++s) {
    ++r.checked;
    if (p.bin(s) != requantize_accumulator(s, p.gain, p.output_cfg)) ++r.mismatches;
  }
  return r;
}

bool EquivalenceReport::ok() const {
  for (int32_t d : max_code_discrepancy) {
    if (d != 0) return false;
  }
  for (int64_t s : scan_mismatches) {
    if (s != 0) return false;
  }
  return argmax_agreements == samples && max_logit_rel_diff <= 1e-5;
}

std::string EquivalenceReport::summary() const {
  std::ostringstream os;
  os << "layer\tmax_code_discrepancy\tscan_mismatches\n";
  for (size_t i = 0; i < layers.size(); ++i) {
    os << layers[i] << '\t' << max_code_discrepancy[i] << '\t' << scan_mismatches[i] << '\n';
  }
  os << "argmax_agreement\t" << argmax_agreements << '/' << samples << '\n';
  os << "max_logit_rel_diff\t" << max_logit_rel_diff << '\n';
  os << "status\t" << (ok() ? "ok" : "FAILED") << '\n';
  return os.str();
}

EquivalenceReport verify_equivalence(const IntegerModel& m, const Network& net, const Dataset& data, Split split,
                                     int64_t max_samples) {
  EquivalenceReport r;
  for (const IntegerLayerPlan& p : m.plans) {
    r.layers.push_back(p.name);
    r.max_code_discrepancy.push_back(0);
    r.scan_mismatches.push_back(exhaustive_scan(p).mismatches);
  }
  std::vector<int64_t> rows = data.indices(split);
  if (max_samples >= 0 && static_cast<int64_t>(rows.size()) > max_samples) rows.resize(static_cast<size_t>(max_samples));
  if (rows.empty()) throw DataError("verify_equivalence: no samples");
  Network& source = const_cast<Network&>(net);
  constexpr size_t kChunk = 200;
  for (size_t b = 0; b < rows.size(); b += kChunk) {
    std::vector<int64_t> chunk(rows.begin() + static_cast<int64_t>(b),
                               rows.begin() + static_cast<int64_t>(std::min(rows.size(), b + kChunk)));
    Tensor x = gather_rows(data.features, chunk);
    Tape tape;
    tape.set_grad_enabled(false);
    ForwardOptions fo;
    fo.calibrate = false;
    ForwardPass pass = forward(source, tape, x, fo);
    std::vector<IntTensor> float_codes(m.slot_configs.size());
    for (size_t s = 0; s < m.slot_nodes.size(); ++s) {
      float_codes[s] = to_integer_codes(pass.values[static_cast<size_t>(m.slot_nodes[s])].value(), m.slot_configs[s]);
    }
    for (size_t k = 0; k < m.plans.size(); ++k) {
      const IntegerLayerPlan& p = m.plans[k];
      const IntTensor* in_b = p.input_b >= 0 ? &float_codes[static_cast<size_t>(p.input_b)] : nullptr;
      IntTensor got = run_plan(p, float_codes[static_cast<size_t>(p.input)], in_b);
      const IntTensor& want = float_codes[static_cast<size_t>(p.output)];
      for (size_t e = 0; e < got.data.size(); ++e) {
        r.max_code_discrepancy[k] = std::max(r.max_code_discrepancy[k], std::abs(got.data[e] - want.data[e]));
      }
    }
    const Tensor& float_logits = pass.output().value();
    Tensor int_logits = integer_forward(m, x);
    std::vector<int> fa = argmax_rows(float_logits);
    std::vector<int> ia = argmax_rows(int_logits);
    for (size_t e = 0; e < fa.size(); ++e) r.argmax_agreements += fa[e] == ia[e];
    r.samples += static_cast<int64_t>(fa.size());
    for (int64_t e = 0; e < float_logits.size(); ++e) {
      const double a = float_logits[e];
      const double d = std::fabs(a - static_cast<double>(int_logits[e]));
      const double rel = d == 0.0 ? 0.0 : d / std::max(std::fabs(a), 1e-30);
      r.max_logit_rel_diff = std::max(r.max_logit_rel_diff, rel);
    }
  }
  return r;
}

}  // namespace fqconv
