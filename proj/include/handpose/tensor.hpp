#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace handpose {

// Dense row-major double tensor. Rank is dynamic; feature maps use
// {channels, rows, cols} (CHW) throughout the library.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::size_t>(checked_numel(shape_)) != data_.size())
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, v); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int numel() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  // CHW accessors.
  double& at(int c, int h, int w) { return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)]; }
  double at(int c, int h, int w) const { return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)]; }
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "}";
    return os.str();
  }

 private:
  static int checked_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    if (n > (1LL << 31)) throw std::invalid_argument("Tensor: too large");
    return static_cast<int>(n);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace handpose
