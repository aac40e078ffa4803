#include "kat/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "kat/rng.hpp"

namespace kat {

double sq_dist(const Coord& a, const Coord& b) {
  const double dm = static_cast<double>(a.m - b.m);
  const double dn = static_cast<double>(a.n - b.n);
  return dm * dm + dn * dn;
}

void PatchGrid::validate() const {
  if (coords.empty()) throw parameter_error("patch grid: no patches");
  std::set<Coord> seen;
  for (const Coord& c : coords) {
    if (c.m < 0 || c.n < 0)
      throw parameter_error("patch grid: negative coordinate (" +
                            std::to_string(c.m) + ", " + std::to_string(c.n) +
                            ")");
    if (!seen.insert(c).second)
      throw parameter_error("patch grid: duplicate coordinate (" +
                            std::to_string(c.m) + ", " + std::to_string(c.n) +
                            ")");
  }
}

std::size_t anchor_count(std::size_t n_p, std::size_t nk_bar) {
  if (nk_bar == 0) throw parameter_error("anchor_count: nk_bar must be >= 1");
  const double ratio = static_cast<double>(n_p) / static_cast<double>(nk_bar);
  const auto rounded = static_cast<std::size_t>(std::floor(ratio + 0.5));
  return std::max<std::size_t>(1, rounded);
}

namespace {

double sq_dist_pc(const std::pair<double, double>& c, const Coord& p) {
  const double dm = c.first - static_cast<double>(p.m);
  const double dn = c.second - static_cast<double>(p.n);
  return dm * dm + dn * dn;
}

}  // namespace

namespace {

std::vector<std::pair<double, double>> kmeans_once(const PatchGrid& grid,
                                                   std::size_t k,
                                                   std::uint64_t seed) {
  const std::size_t n = grid.size();
  Rng rng(seed);

  // k-means++ seeding.
  std::vector<std::pair<double, double>> centers;
  centers.reserve(k);
  {
    const Coord& first = grid.coords[rng.below(n)];
    centers.emplace_back(static_cast<double>(first.m),
                         static_cast<double>(first.n));
  }
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], sq_dist_pc(centers.back(), grid.coords[i]));
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t pick;
    if (total > 0.0) {
      pick = rng.weighted(d2);
    } else {
      pick = rng.below(n);  // all points coincide with chosen centers
    }
    centers.emplace_back(static_cast<double>(grid.coords[pick].m),
                         static_cast<double>(grid.coords[pick].n));
  }

  // Lloyd iterations.
  std::vector<std::size_t> assign(n, 0), prev(n, k);
  for (int iter = 0; iter < 300; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t bi = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist_pc(centers[c], grid.coords[i]);
        if (d < best) {
          best = d;
          bi = c;
        }
      }
      assign[i] = bi;
    }
    if (assign == prev) break;
    prev = assign;

    std::vector<double> sm(k, 0.0), sn(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sm[assign[i]] += static_cast<double>(grid.coords[i].m);
      sn[assign[i]] += static_cast<double>(grid.coords[i].n);
      ++count[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centers[c] = {sm[c] / count[c], sn[c] / count[c]};
      } else {
        // Re-seed to the point farthest from the stale center.
        double best = -1.0;
        std::size_t bi = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist_pc(centers[c], grid.coords[i]);
          if (d > best) {
            best = d;
            bi = i;
          }
        }
        centers[c] = {static_cast<double>(grid.coords[bi].m),
                      static_cast<double>(grid.coords[bi].n)};
      }
    }
  }
  return centers;
}

double within_cluster_ss(const PatchGrid& grid,
                         const std::vector<std::pair<double, double>>& centers) {
  double total = 0.0;
  for (const Coord& p : grid.coords) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : centers) best = std::min(best, sq_dist_pc(c, p));
    total += best;
  }
  return total;
}

}  // namespace

std::vector<std::pair<double, double>> kmeans_cluster(const PatchGrid& grid,
                                                      std::size_t k,
                                                      std::uint64_t seed) {
  grid.validate();
  const std::size_t n = grid.size();
  if (k == 0) throw parameter_error("kmeans: K must be >= 1");
  if (k > n)
    throw parameter_error("kmeans: K = " + std::to_string(k) +
                          " exceeds point count " + std::to_string(n));
  // A handful of seeded restarts, keeping the lowest within-cluster sum of
  // squares; one k-means++ run can still land in a poor local optimum.
  constexpr int kRestarts = 4;
  std::vector<std::pair<double, double>> best;
  double best_ss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < kRestarts; ++r) {
    auto centers = kmeans_once(grid, k, Rng::mix(seed, r));
    const double ss = within_cluster_ss(grid, centers);
    if (ss < best_ss) {
      best_ss = ss;
      best = std::move(centers);
    }
  }
  return best;
}

AnchorSet detect_anchors(const PatchGrid& grid, std::size_t nk_bar,
                         std::uint64_t seed) {
  grid.validate();
  if (nk_bar == 0)
    throw parameter_error("detect_anchors: nk_bar must be >= 1");
  const std::size_t k = std::min(anchor_count(grid.size(), nk_bar),
                                 grid.size());
  auto centers = kmeans_cluster(grid, k, seed);

  AnchorSet out;
  out.nk_bar = nk_bar;
  out.seed = seed;
  out.anchors.reserve(k);
  std::set<Coord> used;
  for (const auto& c : centers) {
    // Nearest unused grid coordinate; ties broken lexicographically.
    bool found = false;
    Coord best{};
    double best_d = 0.0;
    for (const Coord& p : grid.coords) {
      if (used.count(p)) continue;
      const double d = sq_dist_pc(c, p);
      if (!found || d < best_d || (d == best_d && p < best)) {
        found = true;
        best = p;
        best_d = d;
      }
    }
    if (!found)
      throw parameter_error("detect_anchors: more anchors than grid cells");
    used.insert(best);
    out.anchors.push_back(best);
  }
  return out;
}

Tensor gaussian_mask(const PatchGrid& grid, const AnchorSet& anchors,
                     double delta) {
  if (!(delta > 0.0))
    throw parameter_error("gaussian_mask: delta must be positive, got " +
                          std::to_string(delta));
  grid.validate();
  const std::size_t k = anchors.K();
  const std::size_t n = grid.size();
  const double inv = 1.0 / (2.0 * delta * delta);
  constexpr double floor = std::numeric_limits<double>::min();
  Tensor m({k, n});
#pragma omp parallel for schedule(static) if (k * n >= 4096)
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t i = 0; i < n; ++i) {
      const double w = std::exp(-sq_dist(grid.coords[i], anchors.anchors[a]) *
                                inv);
      m.at(a, i) = std::max(w, floor);
    }
  return m;
}

std::vector<double> delta_schedule(std::size_t nk_bar, std::size_t n_scales) {
  std::vector<double> deltas(n_scales);
  for (std::size_t s = 0; s < n_scales; ++s)
    deltas[s] = std::sqrt(static_cast<double>(nk_bar) *
                          static_cast<double>(nk_bar) *
                          std::pow(2.0, static_cast<double>(s)));
  return deltas;
}

std::pair<AnchorSet, MaskStack> build_mask_stack(
    const PatchGrid& grid, std::size_t nk_bar, std::size_t n_scales,
    std::uint64_t seed, const std::vector<double>& delta_override) {
  if (n_scales == 0)
    throw parameter_error("build_mask_stack: need at least one scale");
  AnchorSet anchors = detect_anchors(grid, nk_bar, seed);
  MaskStack stack;
  stack.deltas = delta_override.empty() ? delta_schedule(nk_bar, n_scales)
                                        : delta_override;
  if (stack.deltas.size() != n_scales)
    throw parameter_error("build_mask_stack: " +
                          std::to_string(stack.deltas.size()) +
                          " deltas for " + std::to_string(n_scales) +
                          " scales");
  for (std::size_t s = 0; s < n_scales; ++s) {
    if (!(stack.deltas[s] > 0.0) ||
        (s > 0 && stack.deltas[s] <= stack.deltas[s - 1]))
      throw parameter_error(
          "build_mask_stack: deltas must be positive and strictly increasing");
  }
  stack.masks.reserve(n_scales);
  for (double d : stack.deltas)
    stack.masks.push_back(gaussian_mask(grid, anchors, d));
  return {std::move(anchors), std::move(stack)};
}

std::pair<AnchorSet, MaskStack> build_ones_mask_stack(const PatchGrid& grid,
                                                      std::size_t nk_bar,
                                                      std::size_t n_scales,
                                                      std::uint64_t seed) {
  AnchorSet anchors = detect_anchors(grid, nk_bar, seed);
  MaskStack stack;
  stack.deltas = delta_schedule(nk_bar, n_scales);
  for (std::size_t s = 0; s < n_scales; ++s)
    stack.masks.push_back(Tensor({anchors.K(), grid.size()}, 1.0));
  return {std::move(anchors), std::move(stack)};
}

void write_mask_stack(std::ostream& os, const MaskStack& stack) {
  os.precision(17);
  os << stack.K() << " " << stack.n_p() << " " << stack.scales() << "\n";
  for (std::size_t s = 0; s < stack.scales(); ++s)
    os << (s ? " " : "") << stack.deltas[s];
  os << "\n";
  for (const Tensor& m : stack.masks) {
    for (std::size_t a = 0; a < m.rows(); ++a) {
      for (std::size_t i = 0; i < m.cols(); ++i)
        os << (i ? " " : "") << m.at(a, i);
      os << "\n";
    }
  }
}

void write_mask_stack_file(const std::string& path, const MaskStack& stack) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open for writing: " + path);
  write_mask_stack(os, stack);
  if (!os) throw data_error("write failed: " + path);
}

MaskStack read_mask_stack(std::istream& is) {
  std::size_t k = 0, n_p = 0, n_scales = 0;
  if (!(is >> k >> n_p >> n_scales))
    throw format_error("mask stack: bad header");
  MaskStack stack;
  stack.deltas.resize(n_scales);
  for (auto& d : stack.deltas)
    if (!(is >> d)) throw format_error("mask stack: bad delta list");
  for (std::size_t s = 0; s < n_scales; ++s) {
    Tensor m({k, n_p});
    for (std::size_t i = 0; i < k * n_p; ++i)
      if (!(is >> m[i]))
        throw format_error("mask stack: truncated matrix " +
                           std::to_string(s));
    stack.masks.push_back(std::move(m));
  }
  return stack;
}

MaskStack read_mask_stack_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open: " + path);
  return read_mask_stack(is);
}

}  // namespace kat
