// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/autograd.hpp"

#include "fqconv/error.hpp"

namespace fqconv {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("access to an unbound Var");
  return tape_->value(id_);
}

bool Var::needs_grad() const { return tape_ && tape_->needs_grad(id_); }

Var Tape::parameter(Tensor& param) {
  Node node;
  node.value = Tensor(param.shape(), param.storage());
  node.param = &param;
  node.needs_grad = grad_enabled_ && param.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (!v.valid()) {
      node.inputs.push_back(-1);
      continue;
    }
    if (v.tape() != this) throw UsageError("Var recorded on a different tape");
    node.inputs.push_back(v.id());
    node.needs_grad = node.needs_grad || nodes_[static_cast<size_t>(v.id())].needs_grad;
  }
  node.needs_grad = node.needs_grad && grad_enabled_;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Var& loss) {
  if (!loss.valid() || loss.tape() != this) throw UsageError("backward() needs a loss recorded on this tape");
  const Tensor& loss_value = value(loss.id());
  if (loss_value.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_to_string(loss_value.shape()));
  }
  grads_.assign(nodes_.size(), {});
  last_visits_ = 0;
  if (!nodes_[static_cast<size_t>(loss.id())].needs_grad) return;
  grads_[static_cast<size_t>(loss.id())].assign(1, 1.0f);

  std::vector<float*> input_grads;
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<size_t>(id)];
    std::vector<float>& g = grads_[static_cast<size_t>(id)];
    if (g.empty() || !node.needs_grad) continue;
    ++last_visits_;
    if (node.param) {
      std::span<float> dst = node.param->grad();
      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      continue;
    }
    if (!node.backward) continue;
    input_grads.assign(node.inputs.size(), nullptr);
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      const int in = node.inputs[k];
      if (in < 0 || !nodes_[static_cast<size_t>(in)].needs_grad) continue;
      std::vector<float>& ig = grads_[static_cast<size_t>(in)];
      if (ig.empty()) ig.assign(static_cast<size_t>(nodes_[static_cast<size_t>(in)].value.size()), 0.0f);
      input_grads[k] = ig.data();
    }
    node.backward(g, input_grads);
  }
}

std::span<const float> Tape::grad(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= grads_.size()) return {};
  return grads_[static_cast<size_t>(id)];
}

}  // namespace fqconv
