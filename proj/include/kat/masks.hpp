#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kat/tensor.hpp"

namespace kat {

// Patch-wise coordinate on the slide grid.
struct Coord {
  std::int64_t m = 0;
  std::int64_t n = 0;
  friend bool operator==(const Coord& a, const Coord& b) {
    return a.m == b.m && a.n == b.n;
  }
  friend bool operator<(const Coord& a, const Coord& b) {
    return a.m != b.m ? a.m < b.m : a.n < b.n;
  }
};

double sq_dist(const Coord& a, const Coord& b);

// One bag's patch coordinates. One patch per grid cell: duplicates are
// rejected, coordinates are non-negative.
struct PatchGrid {
  std::vector<Coord> coords;

  std::size_t size() const { return coords.size(); }
  void validate() const;
};

// K anchor positions snapped onto the grid.
struct AnchorSet {
  std::vector<Coord> anchors;
  std::size_t nk_bar = 0;
  std::uint64_t seed = 0;

  std::size_t K() const { return anchors.size(); }
};

// N Gaussian masks M(delta_s), each K x n_p with entries in (0,1].
struct MaskStack {
  std::vector<Tensor> masks;
  std::vector<double> deltas;

  std::size_t scales() const { return masks.size(); }
  std::size_t K() const { return masks.empty() ? 0 : masks[0].rows(); }
  std::size_t n_p() const { return masks.empty() ? 0 : masks[0].cols(); }
};

// K = max(1, round(n_p / nk_bar)), .5 rounding up.
std::size_t anchor_count(std::size_t n_p, std::size_t nk_bar);

// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded to
// the point farthest from the stale center. Deterministic under seed.
std::vector<std::pair<double, double>> kmeans_cluster(const PatchGrid& grid,
                                                      std::size_t k,
                                                      std::uint64_t seed);

// Cluster centers snapped to the nearest grid coordinate (ties broken
// lexicographically, duplicates pushed to the next-nearest unused cell).
AnchorSet detect_anchors(const PatchGrid& grid, std::size_t nk_bar,
                         std::uint64_t seed);

// m_ki = exp(-||p_i - c_k||^2 / (2 delta^2)), floored at the smallest
// positive normal double so entries stay inside (0,1].
Tensor gaussian_mask(const PatchGrid& grid, const AnchorSet& anchors,
                     double delta);

// Per-block scale schedule delta_s^2 = nk_bar^2 * 2^(s-1); an explicit
// delta_override replaces it.
std::vector<double> delta_schedule(std::size_t nk_bar, std::size_t n_scales);

std::pair<AnchorSet, MaskStack> build_mask_stack(
    const PatchGrid& grid, std::size_t nk_bar, std::size_t n_scales,
    std::uint64_t seed, const std::vector<double>& delta_override = {});

// Same anchors, every mask entry 1: the "without masks" ablation.
std::pair<AnchorSet, MaskStack> build_ones_mask_stack(const PatchGrid& grid,
                                                      std::size_t nk_bar,
                                                      std::size_t n_scales,
                                                      std::uint64_t seed);

// Text container: "K n_p N" header, delta list, then N row-major matrices.
void write_mask_stack(std::ostream& os, const MaskStack& stack);
void write_mask_stack_file(const std::string& path, const MaskStack& stack);
MaskStack read_mask_stack(std::istream& is);
MaskStack read_mask_stack_file(const std::string& path);

}  // namespace kat
