#include "mtfa/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mtfa {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    MTFA_REQUIRE(d > 0, "tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), real(0));
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  MTFA_REQUIRE(shape_numel(shape_) == static_cast<std::int64_t>(data_.size()),
               "tensor value count does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<std::int64_t> shape, real value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  return t;
}

Tensor Tensor::uniform(std::vector<std::int64_t> shape, real lo, real hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

bool Tensor::all_finite() const {
  for (real x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ')';
  return os.str();
}

}  // namespace mtfa
