#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cosemdepth {

// Dense row-major tensor of doubles. Rank 2 tensors are used as image-space
// maps (H, W); rank 3 as feature maps (C, H, W); rank 4 as conv weights
// (OutC, InC, Kh, Kw). All numeric kernels in the project run at 64-bit
// precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v);
  static Tensor from(std::vector<int> shape, std::vector<double> values);

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // (H, W) indexing.
  double& at(int y, int x) { return data_[static_cast<size_t>(y) * shape_[1] + x]; }
  double at(int y, int x) const { return data_[static_cast<size_t>(y) * shape_[1] + x]; }
  // (C, H, W) indexing.
  double& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  void fill(double v);
  double max_abs() const;
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Contract checks used across modules; failures carry a descriptive message.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace cosemdepth
