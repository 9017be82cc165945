#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "mmdm/common.hpp"

namespace mmdm::ad {

// Dense row-major tensor of 64-bit reals. Plain value type; the autodiff
// graph layer (autodiff.hpp) wraps it.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_size(shape_))
      throw ShapeMismatch("tensor data length does not match shape");
  }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool is_scalar() const { return size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  double at(std::initializer_list<int> idx) const {
    return data_[static_cast<size_t>(offset(idx))];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  static int64_t checked_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeMismatch("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  int64_t offset(std::initializer_list<int> idx) const {
    if (idx.size() != shape_.size()) throw ShapeMismatch("index rank mismatch");
    int64_t off = 0;
    auto it = idx.begin();
    for (size_t i = 0; i < shape_.size(); ++i, ++it) {
      off = off * shape_[i] + *it;
    }
    return off;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace mmdm::ad
