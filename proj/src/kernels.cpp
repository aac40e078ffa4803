#include "kat/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace kat::kernels {

namespace {

// Matrices smaller than this (in multiply-adds) are not worth a parallel
// region.
constexpr std::size_t kParallelFlops = 1u << 14;
constexpr std::size_t kParallelRowWork = 1u << 14;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate) {
  const bool par = m * n * k >= kParallelFlops;
  if (!trans_a && !trans_b) {
    // C[i,:] += A[i,p] * B[p,:], streaming over B rows.
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      if (!accumulate) std::fill(ci, ci + n, 0.0);
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // C[i,j] = dot(A[i,:], B[j,:]); both operands row-contiguous.
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] = accumulate ? ci[j] + s : s;
      }
    }
  } else if (trans_a && !trans_b) {
    // A is stored k x m; C[i,:] += A[p,i] * B[p,:].
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      if (!accumulate) std::fill(ci, ci + n, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    // A stored k x m, B stored n x k.
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * bj[p];
        ci[j] = accumulate ? ci[j] + s : s;
      }
    }
  }
}

void softmax_rows(const double* in, double* out, std::size_t r, std::size_t c,
                  double tau) {
  const bool par = r * c >= kParallelRowWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = in + i * c;
    double* yi = out + i * c;
    double mx = xi[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yi[j] = std::exp((xi[j] - mx) / tau);
      sum += yi[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < c; ++j) yi[j] *= inv;
  }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx,
                           std::size_t r, std::size_t c, double tau) {
  const bool par = r * c >= kParallelRowWork;
  const double inv_tau = 1.0 / tau;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < r; ++i) {
    const double* yi = y + i * c;
    const double* di = dy + i * c;
    double* xi = dx + i * c;
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += yi[j] * di[j];
    for (std::size_t j = 0; j < c; ++j)
      xi[j] += inv_tau * yi[j] * (di[j] - dot);
  }
}

void layer_norm(const double* x, const double* gamma, const double* beta,
                double* out, std::size_t r, std::size_t c, double eps) {
  const bool par = r * c >= kParallelRowWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x + i * c;
    double* yi = out + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv_sd = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j)
      yi[j] = gamma[j] * ((xi[j] - mean) * inv_sd) + beta[j];
  }
}

void layer_norm_backward(const double* x, const double* gamma,
                         const double* dout, double* dx, double* dgamma,
                         double* dbeta, std::size_t r, std::size_t c,
                         double eps) {
  // dgamma/dbeta accumulate across rows; kept serial for determinism.
  const double cn = static_cast<double>(c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x + i * c;
    const double* di = dout + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= cn;
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= cn;
    const double inv_sd = 1.0 / std::sqrt(var + eps);

    // y_j = (x_j - mean) * inv_sd; dy_j = dout_j * gamma_j
    double sum_dy = 0.0, sum_dy_y = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double yj = (xi[j] - mean) * inv_sd;
      const double dyj = di[j] * gamma[j];
      sum_dy += dyj;
      sum_dy_y += dyj * yj;
      dgamma[j] += di[j] * yj;
      dbeta[j] += di[j];
    }
    double* dxi = dx + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const double yj = (xi[j] - mean) * inv_sd;
      const double dyj = di[j] * gamma[j];
      dxi[j] += inv_sd * (dyj - sum_dy / cn - yj * (sum_dy_y / cn));
    }
  }
}

double gelu_scalar(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void gelu(const double* x, double* out, std::size_t n) {
#pragma omp parallel for schedule(static) if (n >= kParallelRowWork)
  for (std::size_t i = 0; i < n; ++i) out[i] = gelu_scalar(x[i]);
}

void gelu_backward(const double* x, const double* dout, double* dx,
                   std::size_t n) {
#pragma omp parallel for schedule(static) if (n >= kParallelRowWork)
  for (std::size_t i = 0; i < n; ++i) dx[i] += dout[i] * gelu_grad_scalar(x[i]);
}

}  // namespace kat::kernels
