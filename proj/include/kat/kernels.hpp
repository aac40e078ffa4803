#pragma once

#include <cstddef>

// Production numeric kernels. Hot loops are OpenMP-parallel over independent
// output rows/elements, so results are bit-identical for any thread count.
// kat/reference.hpp holds the serial counterparts used by tests and the
// kernel benchmark.
namespace kat::kernels {

// C = op(A) * op(B), shapes m x k times k x n (after transposition flags).
// accumulate=true adds into C instead of overwriting.
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate);

// Row-wise softmax of in/tau with max-subtraction.
void softmax_rows(const double* in, double* out, std::size_t r, std::size_t c,
                  double tau);

// dx += softmax backward given forward output y and upstream dy.
void softmax_rows_backward(const double* y, const double* dy, double* dx,
                           std::size_t r, std::size_t c, double tau);

// Per-row standardization followed by gamma * y + beta.
void layer_norm(const double* x, const double* gamma, const double* beta,
                double* out, std::size_t r, std::size_t c, double eps);

// Accumulates into dx, dgamma, dbeta.
void layer_norm_backward(const double* x, const double* gamma,
                         const double* dout, double* dx, double* dgamma,
                         double* dbeta, std::size_t r, std::size_t c,
                         double eps);

// Elementwise GELU, tanh approximation.
void gelu(const double* x, double* out, std::size_t n);
void gelu_backward(const double* x, const double* dout, double* dx,
                   std::size_t n);

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace kat::kernels
