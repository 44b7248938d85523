// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "fqconv/error.hpp"

namespace fqconv {

int64_t num_elements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t extent : shape) {
    if (extent <= 0) {
      throw DimensionError("non-positive extent in shape " + shape_to_string(shape));
    }
    n *= extent;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(num_elements(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (num_elements(shape_) != static_cast<int64_t>(data_.size())) {
    throw DimensionError("tensor data has " + std::to_string(data_.size()) + " elements but shape " +
                         shape_to_string(shape_) + " needs " + std::to_string(num_elements(shape_)));
  }
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({static_cast<int64_t>(values.size())}, std::vector<float>(values));
}

Tensor Tensor::scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

int64_t Tensor::dim(int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (num_elements(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::span<float> Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0f);
  return *grad_;
}

std::span<const float> Tensor::grad() const {
  if (!grad_) throw UsageError("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0f);
  } else {
    grad_.emplace(data_.size(), 0.0f);
  }
}

IntTensor::IntTensor(Shape s, int32_t fill) : shape(std::move(s)), data(static_cast<size_t>(num_elements(shape)), fill) {}

}  // namespace fqconv
