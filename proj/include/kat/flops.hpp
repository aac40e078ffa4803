#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kat/errors.hpp"

namespace kat {

// Matmul-only cost model, 2abc per a x b * b x c product; softmax, layer norm
// and elementwise work are dominated terms and excluded. d_ff = 0 resolves to
// 4 * d_e. Counts cover the attention blocks only (no embedding, no head), so
// they are functions of (n_p, K, d_e, heads, blocks) alone.
//
// Per kernel-attention block (its three flows share one W_q/W_k/W_v set):
//   patch projections q,k,v        6 n_p d_e^2
//   kernel projections q,k,v       6 K   d_e^2
//   class query projection         2     d_e^2
//   output projection W_o          2 (n_p + K + 1) d_e^2
//   summary flow  score + agg      4 K n_p d_e
//   distribution flow score + agg  4 n_p K d_e
//   class flow    score + agg      4 K d_e
//   feed-forward, all streams      4 (n_p + K + 1) d_e d_ff
std::uint64_t count_flops_ka(std::uint64_t n_p, std::uint64_t k,
                             std::uint64_t d_e, std::uint64_t heads,
                             std::uint64_t blocks, std::uint64_t d_ff = 0);

// Token self-attention over t = n_p + 1 tokens (patches plus the
// classification token):
//   projections q,k,v      6 t d_e^2
//   output projection      2 t d_e^2
//   score + aggregation    4 t^2 d_e
//   feed-forward           4 t d_e d_ff
std::uint64_t count_flops_sa(std::uint64_t n_p, std::uint64_t d_e,
                             std::uint64_t heads, std::uint64_t blocks,
                             std::uint64_t d_ff = 0);

// Matmul FLOPs summed over an actual forward graph (the same builders the
// model runs, in shape-only mode), blocks only. Must equal the closed forms
// above exactly.
std::uint64_t instrument_flops_ka(std::uint64_t n_p, std::uint64_t k,
                                  std::uint64_t d_e, std::uint64_t heads,
                                  std::uint64_t blocks, std::uint64_t d_ff = 0);
std::uint64_t instrument_flops_sa(std::uint64_t n_p, std::uint64_t d_e,
                                  std::uint64_t heads, std::uint64_t blocks,
                                  std::uint64_t d_ff = 0);

// Activation elements recorded by one forward graph (tape footprint).
std::uint64_t instrument_activations_ka(std::uint64_t n_p, std::uint64_t k,
                                        std::uint64_t d_e, std::uint64_t heads,
                                        std::uint64_t blocks,
                                        std::uint64_t d_ff = 0);
std::uint64_t instrument_activations_sa(std::uint64_t n_p, std::uint64_t d_e,
                                        std::uint64_t heads,
                                        std::uint64_t blocks,
                                        std::uint64_t d_ff = 0);

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Least-squares fit of log y against log x.
LogLogFit fit_loglog(const std::vector<double>& x,
                     const std::vector<double>& y);

struct CostRecord {
  std::uint64_t n_p = 0, k = 0, d_e = 0, heads = 0, blocks = 0;
  std::uint64_t flops_ka = 0, flops_sa = 0;
  std::uint64_t act_ka = 0, act_sa = 0;  // activation element counts
};

struct CostReport {
  std::vector<CostRecord> records;
  LogLogFit ka_fit;        // over all sampled n_p
  LogLogFit sa_fit;        // over all sampled n_p
  LogLogFit sa_tail_fit;   // over the quadratic-dominated n_p (see below)
  std::uint64_t sa_linear_crossover = 0;  // t above which t^2 d_e terms win
  std::uint64_t ka_cheaper_from = 0;      // smallest n_p with SA > KA
};

// Records analytic and instrumented counts per n_p; fits the scaling
// exponents. The self-attention curve mixes a linear and a quadratic regime,
// so its asymptotic exponent is additionally fit on the points past the
// regime crossover (t >= linear_coeff / quadratic_coeff); with fewer than two
// such points the last two points are used.
CostReport scaling_report(const std::vector<std::uint64_t>& n_p_list,
                          std::uint64_t k, std::uint64_t d_e,
                          std::uint64_t heads, std::uint64_t blocks,
                          std::uint64_t d_ff = 0);

void write_cost_report(std::ostream& os, const CostReport& report);
// "n_p flops_ka flops_sa" lines for external plotting.
void write_cost_plot(std::ostream& os, const CostReport& report);

}  // namespace kat
