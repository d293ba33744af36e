#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace speckle {

/// Dense row-major tensor of doubles. Images and feature maps use
/// height-width-channel order; kernels use [kh, kw, c_in, c_out].
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Flat index helpers for the common layouts.
  std::size_t idx3(std::size_t y, std::size_t x, std::size_t c) const {
    return (y * shape_[1] + x) * shape_[2] + c;
  }
  double& at3(std::size_t y, std::size_t x, std::size_t c) { return data_[idx3(y, x, c)]; }
  double at3(std::size_t y, std::size_t x, std::size_t c) const { return data_[idx3(y, x, c)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

/// Throws std::invalid_argument naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

}  // namespace speckle
