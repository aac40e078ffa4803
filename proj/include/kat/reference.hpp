#pragma once

#include <cstddef>
#include <vector>

// Serial reference kernels: plain index loops, no OpenMP, written
// independently of kat/kernels.hpp. Tests use them as oracles and the kernel
// benchmark compares against them.
namespace kat::ref {

// C = A(m x k) * B(k x n), classic i-j-p triple loop.
std::vector<double> matmul(const std::vector<double>& a,
                           const std::vector<double>& b, std::size_t m,
                           std::size_t k, std::size_t n);

std::vector<double> softmax_rows(const std::vector<double>& in, std::size_t r,
                                 std::size_t c, double tau);

std::vector<double> layer_norm(const std::vector<double>& x,
                               const std::vector<double>& gamma,
                               const std::vector<double>& beta, std::size_t r,
                               std::size_t c, double eps);

std::vector<double> gelu(const std::vector<double>& x);

// m[k*n_p + i] = exp(-||p_i - c_k||^2 / (2 delta^2))
std::vector<double> gaussian_mask(const std::vector<long long>& coords_xy,
                                  const std::vector<long long>& anchors_xy,
                                  double delta);

}  // namespace kat::ref
