#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "transcp/common.hpp"

namespace transcp {

// Dense row-major tensor with value semantics. Sequence features follow the
// channel-major convention used across the model: shape {C, N} where N is the
// number of spatial cells or tokens.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape, T init = T(0))
      : shape_(std::move(shape)), data_(count(shape_), init) {}
  Tensor(std::initializer_list<size_t> shape, T init = T(0))
      : Tensor(std::vector<size_t>(shape), init) {}

  static Tensor from_vector(std::vector<size_t> shape, std::vector<T> values) {
    TCP_CHECK(count(shape) == values.size(), "tensor init: shape wants ",
              count(shape), " values, got ", values.size());
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t ndim() const { return shape_.size(); }
  size_t size(size_t i) const { return shape_.at(i); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  T& at(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(size_t i, size_t j, size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(size_t i, size_t j, size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(std::vector<size_t> shape) const {
    TCP_CHECK(count(shape) == numel(), "reshape: ", count(shape),
              " elements requested, tensor has ", numel());
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static size_t count(const std::vector<size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), size_t(1),
                           std::multiplies<size_t>());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    std::vector<U> d(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>::from_vector(shape_, std::move(d));
  }

 private:
  template <typename U>
  friend class Tensor;

  std::vector<size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 ||
         std::memcmp(a.data(), b.data(), a.numel() * sizeof(T)) == 0;
}

inline std::string shape_str(const std::vector<size_t>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace transcp
