// Compares the OpenMP kernels in kat::kernels against the serial reference
// in kat::ref: wall time, effective GFLOP/s, and the largest deviation.
// Thread count follows OMP_NUM_THREADS.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kat/kernels.hpp"
#include "kat/masks.hpp"
#include "kat/reference.hpp"
#include "kat/rng.hpp"

using namespace kat;

namespace {

using clock_type = std::chrono::steady_clock;

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clock_type::now();
    fn();
    const auto t1 = clock_type::now();
    best = std::min(best,
                    std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void bench_matmul(Rng& rng, std::size_t m, std::size_t k, std::size_t n) {
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);
  std::vector<double> c(m * n);
  const double gflop = 2.0 * m * k * n * 1e-9;

  const double t_ref = time_best_of(3, [&]() {
    auto out = ref::matmul(a, b, m, k, n);
    c[0] += out[0];  // keep the result alive
  });
  auto serial = ref::matmul(a, b, m, k, n);
  const double t_omp = time_best_of(
      3, [&]() { kernels::matmul(a.data(), b.data(), c.data(), m, k, n,
                                 false, false, false); });
  std::printf("matmul %4zux%-4zu x %4zux%-4zu  serial %8.2f ms (%5.2f GF/s)"
              "  omp %8.2f ms (%5.2f GF/s)  speedup %4.2fx  max|diff| %.2e\n",
              m, k, k, n, t_ref * 1e3, gflop / t_ref, t_omp * 1e3,
              gflop / t_omp, t_ref / t_omp, max_diff(serial, c));
}

void bench_rowops(Rng& rng, std::size_t r, std::size_t c) {
  auto x = random_vec(rng, r * c);
  std::vector<double> out(r * c);
  const double t_soft_ref = time_best_of(5, [&]() {
    auto o = ref::softmax_rows(x, r, c, 2.0);
    out[0] += o[0];
  });
  const double t_soft = time_best_of(
      5, [&]() { kernels::softmax_rows(x.data(), out.data(), r, c, 2.0); });
  auto soft_serial = ref::softmax_rows(x, r, c, 2.0);
  kernels::softmax_rows(x.data(), out.data(), r, c, 2.0);
  std::printf("softmax %5zux%-5zu          serial %8.2f ms            omp "
              "%8.2f ms            speedup %4.2fx  max|diff| %.2e\n",
              r, c, t_soft_ref * 1e3, t_soft * 1e3, t_soft_ref / t_soft,
              max_diff(soft_serial, out));

  auto gamma = random_vec(rng, c);
  auto beta = random_vec(rng, c);
  const double t_ln_ref = time_best_of(5, [&]() {
    auto o = ref::layer_norm(x, gamma, beta, r, c, 1e-6);
    out[0] += o[0];
  });
  const double t_ln = time_best_of(5, [&]() {
    kernels::layer_norm(x.data(), gamma.data(), beta.data(), out.data(), r, c,
                        1e-6);
  });
  auto ln_serial = ref::layer_norm(x, gamma, beta, r, c, 1e-6);
  kernels::layer_norm(x.data(), gamma.data(), beta.data(), out.data(), r, c,
                      1e-6);
  std::printf("layernorm %5zux%-5zu        serial %8.2f ms            omp "
              "%8.2f ms            speedup %4.2fx  max|diff| %.2e\n",
              r, c, t_ln_ref * 1e3, t_ln * 1e3, t_ln_ref / t_ln,
              max_diff(ln_serial, out));
}

void bench_mask(Rng& rng, std::size_t k, std::size_t n_p) {
  PatchGrid grid;
  std::set<Coord> used;
  while (used.size() < n_p)
    used.insert({static_cast<std::int64_t>(rng.below(256)),
                 static_cast<std::int64_t>(rng.below(256))});
  grid.coords.assign(used.begin(), used.end());
  AnchorSet anchors;
  for (std::size_t i = 0; i < k; ++i) anchors.anchors.push_back(grid.coords[i]);

  std::vector<long long> cs, as;
  for (const auto& c : grid.coords) {
    cs.push_back(c.m);
    cs.push_back(c.n);
  }
  for (const auto& a : anchors.anchors) {
    as.push_back(a.m);
    as.push_back(a.n);
  }
  double sink = 0.0;
  const double t_ref = time_best_of(5, [&]() {
    auto m = ref::gaussian_mask(cs, as, 24.0);
    sink += m[0];
  });
  Tensor m;
  const double t_omp =
      time_best_of(5, [&]() { m = gaussian_mask(grid, anchors, 24.0); });
  auto serial = ref::gaussian_mask(cs, as, 24.0);
  std::printf("gaussian mask %4zux%-6zu    serial %8.2f ms            omp "
              "%8.2f ms            speedup %4.2fx  max|diff| %.2e\n",
              k, n_p, t_ref * 1e3, t_omp * 1e3, t_ref / t_omp,
              max_diff(serial, m.values()));
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (built without OpenMP)\n");
#endif
  Rng rng(1);
  bench_matmul(rng, 512, 256, 256);
  bench_matmul(rng, 2048, 256, 256);
  bench_matmul(rng, 4096, 256, 64);
  bench_rowops(rng, 4096, 256);
  bench_mask(rng, 32, 4096);
  return 0;
}
