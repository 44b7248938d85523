// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fqconv/tensor.hpp"

namespace fqconv {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool needs_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Receives the upstream gradient of an operation and accumulates into the
/// gradient buffers of its inputs. A null entry in `input_grads` means that
/// input does not need a gradient.
using BackwardFn = std::function<void(std::span<const float> output_grad, std::span<float* const> input_grads)>;

/// Linear record of a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so inputs always precede their
/// consumers and a single reverse sweep visits every node once. Recorded
/// values are never modified after they are pushed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// When disabled, backward rules are dropped and nothing needs a gradient.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Leaf bound to an externally owned parameter. After backward() the
  /// parameter's grad() buffer has received its gradient (accumulated).
  Var parameter(Tensor& param);
  /// Leaf holding a copy of `value` that never receives a gradient.
  Var constant(Tensor value);

  /// Records an operation result.
  Var push(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  size_t size() const { return nodes_.size(); }

  /// Runs the reverse sweep from a single-element loss.
  void backward(const Var& loss);

  /// Gradient computed for node `id` by the last backward() call, or empty.
  std::span<const float> grad(int id) const;

  /// Number of nodes processed by the last backward() call.
  size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<float>> grads_;
  bool grad_enabled_ = true;
  size_t last_visits_ = 0;
};

}  // namespace fqconv
