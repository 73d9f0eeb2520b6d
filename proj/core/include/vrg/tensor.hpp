#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace vrg {

// Dense row-major double tensor.  Copies share storage; the convention across
// the library is that a tensor's contents are never mutated once it has been
// handed to an autograd node, so sharing is safe.  Feature maps are NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, double fill);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor ones(std::vector<int64_t> shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor from(std::vector<int64_t> shape, std::vector<double> values);

  const std::vector<int64_t>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return size_; }
  bool defined() const { return static_cast<bool>(data_); }

  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }
  double& at(int64_t i) { return data_.get()[i]; }
  double at(int64_t i) const { return data_.get()[i]; }

  // Value of a single-element tensor.
  double item() const;

  Tensor clone() const;
  // Same storage, new shape (element count must match).
  Tensor reshaped(std::vector<int64_t> shape) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double min() const;
  double max() const;

 private:
  std::shared_ptr<double[]> data_;
  std::vector<int64_t> shape_;
  int64_t size_ = 0;
};

int64_t shape_size(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace vrg
