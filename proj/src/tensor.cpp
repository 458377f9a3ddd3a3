#include "cosemdepth/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cosemdepth {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  for (int d : shape_) require(d > 0, "tensor dimensions must be positive");
  data_.assign(static_cast<size_t>(shape_size(shape_)), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t[0] = v;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  require(shape_size(t.shape_) == static_cast<std::int64_t>(values.size()),
          "tensor value count does not match shape");
  t.data_ = std::move(values);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ")";
  return os.str();
}

void Tensor::fill(double v) { data_.assign(data_.size(), v); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cosemdepth
