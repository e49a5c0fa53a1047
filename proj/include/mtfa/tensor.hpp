#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mtfa/common.hpp"
#include "mtfa/rng.hpp"

namespace mtfa {

// Dense N-dimensional array, row-major. Values are immutable by convention
// once an op has produced the tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<real> values);

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, real value);
  static Tensor scalar(real value) { return Tensor({1}, {value}); }
  // i.i.d. uniform in [lo, hi).
  static Tensor uniform(std::vector<std::int64_t> shape, real lo, real hi, Rng& rng);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::vector<real>& values() { return data_; }
  const std::vector<real>& values() const { return data_; }

  real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 2-D / 3-D accessors (row-major).
  real& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  real at2(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  real& at3(std::int64_t a, std::int64_t b, std::int64_t c) {
    return data_[static_cast<std::size_t>((a * shape_[1] + b) * shape_[2] + c)];
  }
  real at3(std::int64_t a, std::int64_t b, std::int64_t c) const {
    return data_[static_cast<std::size_t>((a * shape_[1] + b) * shape_[2] + c)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<real> data_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

}  // namespace mtfa
