#include "kat/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace kat {

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  data_.assign(numel(), fill);
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, double fill,
               bool requires_grad)
    : Tensor(std::vector<std::size_t>(shape), fill, requires_grad) {}

Tensor Tensor::from_data(std::vector<std::size_t> shape,
                         std::vector<double> data, bool requires_grad) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.requires_grad_ = requires_grad;
  if (t.numel() != t.data_.size()) {
    throw dimension_error("tensor: data length " +
                          std::to_string(t.data_.size()) +
                          " does not match shape " + t.shape_str());
  }
  return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::row(std::vector<double> data) {
  std::size_t n = data.size();
  return from_data({1, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  return shape_.empty() ? 0 : n;
}

std::size_t Tensor::rows() const { return rank() == 1 ? 1 : shape_[0]; }

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw dimension_error("tensor: rank-2 view of rank " +
                        std::to_string(rank()) + " tensor");
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::transposed() const {
  if (rank() != 2) throw dimension_error("transpose: tensor must be rank 2");
  Tensor out({shape_[1], shape_[0]});
  for (std::size_t i = 0; i < shape_[0]; ++i)
    for (std::size_t j = 0; j < shape_[1]; ++j) out.at(j, i) = at(i, j);
  return out;
}

std::string Tensor::shape_str() const { return kat::shape_str(shape_); }

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace kat
