#include "vrg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "vrg/errors.hpp"

namespace vrg {

int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    VRG_CHECK(d >= 0, "negative dimension in shape ", shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  size_ = shape_size(shape_);
  data_ = std::shared_ptr<double[]>(new double[static_cast<size_t>(size_)]());
}

Tensor::Tensor(std::vector<int64_t> shape, double fill) : Tensor(std::move(shape)) {
  std::fill_n(data_.get(), size_, fill);
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
  Tensor t(std::move(shape));
  VRG_CHECK(t.size() == static_cast<int64_t>(values.size()),
            "from(): ", values.size(), " values for shape ", shape_str(t.shape()));
  std::memcpy(t.data(), values.data(), values.size() * sizeof(double));
  return t;
}

double Tensor::item() const {
  VRG_CHECK(size_ == 1, "item() on tensor of shape ", shape_str(shape_));
  return data_.get()[0];
}

Tensor Tensor::clone() const {
  Tensor t(shape_);
  std::memcpy(t.data(), data_.get(), static_cast<size_t>(size_) * sizeof(double));
  return t;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  VRG_CHECK(shape_size(shape) == size_, "reshape ", shape_str(shape_), " -> ",
            shape_str(shape), " changes element count");
  Tensor t;
  t.data_ = data_;
  t.shape_ = std::move(shape);
  t.size_ = size_;
  return t;
}

bool Tensor::all_finite() const {
  const double* p = data_.get();
  for (int64_t i = 0; i < size_; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

double Tensor::min() const {
  double m = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < size_; ++i) m = std::min(m, data_.get()[i]);
  return m;
}

double Tensor::max() const {
  double m = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < size_; ++i) m = std::max(m, data_.get()[i]);
  return m;
}

}  // namespace vrg
