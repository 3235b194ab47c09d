#include "simviz/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace simviz {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t s : shape) {
    if (s < 0) throw std::invalid_argument("negative dimension in shape " + shape_to_string(shape));
    n *= s;
  }
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), v_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, double fill)
    : shape_(std::move(shape)), v_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), v_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<int64_t>(v_.size()))
    throw std::invalid_argument("value count does not match shape " + shape_to_string(shape_));
}

std::vector<int64_t> Tensor::strides() const {
  std::vector<int64_t> s(shape_.size(), 1);
  for (size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
  return s;
}

namespace {
int64_t flat_index(const std::vector<int64_t>& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size())
    throw std::out_of_range("index rank mismatch for shape " + shape_to_string(shape));
  int64_t flat = 0, stride = 1;
  size_t i = shape.size();
  auto it = idx.end();
  while (i-- > 0) {
    --it;
    if (*it < 0 || *it >= shape[i]) throw std::out_of_range("tensor index out of range");
    flat += *it * stride;
    stride *= shape[i];
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return v_[static_cast<size_t>(flat_index(shape_, idx))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return v_[static_cast<size_t>(flat_index(shape_, idx))];
}

void Tensor::fill(double v) { std::fill(v_.begin(), v_.end(), v); }

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (shape_numel(shape) != numel())
    throw std::invalid_argument("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape) +
                                " changes element count");
  Tensor out;
  out.shape_ = std::move(shape);
  out.v_ = v_;
  return out;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double x : v_) s += x;
  return s;
}

double Tensor::mean() const { return v_.empty() ? 0.0 : sum() / static_cast<double>(v_.size()); }

double Tensor::min() const {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v_) m = std::min(m, x);
  return m;
}

double Tensor::max() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v_) m = std::max(m, x);
  return m;
}

double Tensor::abs_max() const {
  double m = 0.0;
  for (double x : v_) m = std::max(m, std::fabs(x));
  return m;
}

bool Tensor::all_finite() const {
  for (double x : v_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_abs_diff shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace simviz
