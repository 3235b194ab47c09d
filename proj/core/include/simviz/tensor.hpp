#ifndef SIMVIZ_TENSOR_HPP
#define SIMVIZ_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace simviz {

/// Dense row-major n-dimensional array of doubles. All numerical state in
/// the library (images, feature maps, parameters, gradients) lives in these.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, double fill);
  Tensor(std::vector<int64_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, v); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_[i]; }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  /// Row-major strides, in elements.
  std::vector<int64_t> strides() const;

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;  // bounds-checked

  void fill(double v);
  Tensor reshaped(std::vector<int64_t> shape) const;

  double sum() const;
  double mean() const;
  double min() const;
  double max() const;
  double abs_max() const;
  bool all_finite() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const;

private:
  std::vector<int64_t> shape_;
  std::vector<double> v_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

/// Largest absolute elementwise difference; tensors must share a shape.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace simviz

#endif
