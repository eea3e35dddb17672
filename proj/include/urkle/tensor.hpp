// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "urkle/errors.hpp"

namespace urkle {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major array. The leading dimension is the batch dimension
/// whenever a tensor flows through a network.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension; zero for a default-constructed tensor.
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Number of elements per batch entry.
  std::size_t sample_size() const { return batch() == 0 ? 0 : size() / batch(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> sample(std::size_t i) {
    const std::size_t n = sample_size();
    return {data_.data() + i * n, n};
  }
  std::span<const T> sample(std::size_t i) const {
    const std::size_t n = sample_size();
    return {data_.data() + i * n, n};
  }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw ContractViolation("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Rows [begin, end) of the leading dimension.
  Tensor slice_batch(std::size_t begin, std::size_t end) const {
    if (begin > end || end > batch()) throw ContractViolation("batch slice out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t n = sample_size();
    return Tensor(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                               data_.begin() + static_cast<std::ptrdiff_t>(end * n)));
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Stacks two tensors along the batch dimension.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.sample_size() != b.sample_size()) {
    throw ContractViolation("concat_batch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.batch();
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.storage().begin(), a.storage().end());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(std::move(s), std::move(data));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                            shape_string(b.shape()));
  }
}

}  // namespace urkle
