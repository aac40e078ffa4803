#include "kat/reference.hpp"

#include <cmath>

namespace kat::ref {

std::vector<double> matmul(const std::vector<double>& a,
                           const std::vector<double>& b, std::size_t m,
                           std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

std::vector<double> softmax_rows(const std::vector<double>& in, std::size_t r,
                                 std::size_t c, double tau) {
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = in[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[i * c + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp((in[i * c + j] - mx) / tau);
      sum += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }
  return out;
}

std::vector<double> layer_norm(const std::vector<double>& x,
                               const std::vector<double>& gamma,
                               const std::vector<double>& beta, std::size_t r,
                               std::size_t c, double eps) {
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = x[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double sd = std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = gamma[j] * (x[i * c + j] - mean) / sd + beta[j];
  }
  return out;
}

std::vector<double> gelu(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i];
    double u = std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  return out;
}

std::vector<double> gaussian_mask(const std::vector<long long>& coords_xy,
                                  const std::vector<long long>& anchors_xy,
                                  double delta) {
  const std::size_t n_p = coords_xy.size() / 2;
  const std::size_t K = anchors_xy.size() / 2;
  std::vector<double> m(K * n_p);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n_p; ++i) {
      double dx = static_cast<double>(coords_xy[2 * i] - anchors_xy[2 * k]);
      double dy =
          static_cast<double>(coords_xy[2 * i + 1] - anchors_xy[2 * k + 1]);
      m[k * n_p + i] = std::exp(-(dx * dx + dy * dy) / (2.0 * delta * delta));
    }
  return m;
}

}  // namespace kat::ref
