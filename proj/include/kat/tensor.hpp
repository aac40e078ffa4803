#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "kat/errors.hpp"

namespace kat {

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover everything the
// model needs; 32-bit precision exists only in file storage, never here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0,
                  bool requires_grad = false);
  Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0,
         bool requires_grad = false);

  static Tensor from_data(std::vector<std::size_t> shape,
                          std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> data);  // 1 x n
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Rank-2 accessors; rank-1 tensors behave as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool rg) { requires_grad_ = rg; }

  bool all_finite() const;
  Tensor transposed() const;  // rank-2 only
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace kat
