// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fqconv {

using Shape = std::vector<int64_t>;

int64_t num_elements(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of 32-bit floats.
///
/// A tensor owns its storage and is copied by value. The optional gradient
/// buffer is only used by parameters that take part in training; it always
/// has the same number of elements as the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::initializer_list<float> values);
  static Tensor scalar(float value);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Same data viewed with a different shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  bool has_grad() const { return grad_.has_value(); }
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

 private:
  Shape shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<float>> grad_;
};

/// Signed integer tensor used for quantization codes and accumulators.
struct IntTensor {
  Shape shape;
  std::vector<int32_t> data;

  IntTensor() = default;
  explicit IntTensor(Shape s, int32_t fill = 0);
  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

bool same_shape(const Shape& a, const Shape& b);

}  // namespace fqconv
