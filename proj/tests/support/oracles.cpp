#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "kat/reference.hpp"

namespace kat::oracle {

namespace {

// out[i][j] = sum_p a[i][p] * b[p][j] over explicit loops.
Tensor mm(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      out.at(i, j) = s;
    }
  return out;
}

Tensor slice(const Tensor& a, std::size_t c0, std::size_t w) {
  Tensor out({a.rows(), w});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = a.at(i, c0 + j);
  return out;
}

// Row-wise softmax of scores/tau with max subtraction.
Tensor softmax_rows(const Tensor& s, double tau) {
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double mx = s.at(i, 0);
    for (std::size_t j = 1; j < s.cols(); ++j) mx = std::max(mx, s.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) {
      out.at(i, j) = std::exp((s.at(i, j) - mx) / tau);
      sum += out.at(i, j);
    }
    for (std::size_t j = 0; j < s.cols(); ++j) out.at(i, j) /= sum;
  }
  return out;
}

// softmax(q k^T / tau) row-wise, optionally masked entrywise, times v.
Tensor flow(const Tensor& q, const Tensor& k, const Tensor& v,
            const Tensor* mask, double tau) {
  Tensor scores({q.rows(), k.rows()});
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < q.cols(); ++p)
        s += q.at(i, p) * k.at(j, p);
      scores.at(i, j) = s;
    }
  Tensor w = softmax_rows(scores, tau);
  if (mask)
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        w.at(i, j) *= mask->at(i, j);
  return mm(w, v);
}

Tensor transpose(const Tensor& a) { return a.transposed(); }

Tensor layer_norm_t(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    double eps = 1e-6) {
  std::vector<double> out = ref::layer_norm(x.values(), gamma.values(),
                                            beta.values(), x.rows(), x.cols(),
                                            eps);
  return Tensor::from_data(x.shape(), std::move(out));
}

void add_rowvec_inplace(Tensor& a, const Tensor& v) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a.at(i, j) += v[j];
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

std::tuple<Tensor, Tensor, Tensor> kernel_attention_scalar(
    const Tensor& x, const Tensor& kt, const Tensor& c, const Tensor& mask,
    const FlowProj& proj, double tau) {
  const Tensor kq = mm(kt, proj.wq), xk = mm(x, proj.wk), xv = mm(x, proj.wv);
  const Tensor xq = mm(x, proj.wq), kk = mm(kt, proj.wk), kv = mm(kt, proj.wv);
  const Tensor cq = mm(c, proj.wq);
  const Tensor mask_t = transpose(mask);
  Tensor kt_out = flow(kq, xk, xv, &mask, tau);
  Tensor x_out = flow(xq, kk, kv, &mask_t, tau);
  Tensor c_out = flow(cq, kk, kv, nullptr, tau);
  return {std::move(x_out), std::move(kt_out), std::move(c_out)};
}

std::tuple<Tensor, Tensor, Tensor> multi_head_ka_scalar(
    const Tensor& x, const Tensor& kt, const Tensor& c, const Tensor& mask,
    const BlockParams& block, const KatConfig& config) {
  const std::size_t d_h = config.head_dim();
  const double tau = config.tau();
  const auto& isf = block.proj[0];
  const auto& idf = config.separate_qkv ? block.proj[1] : block.proj[0];
  const auto& cls = config.separate_qkv ? block.proj[2] : block.proj[0];

  const Tensor kq = mm(kt, isf.wq), xk = mm(x, isf.wk), xv = mm(x, isf.wv);
  const Tensor xq = mm(x, idf.wq), kki = mm(kt, idf.wk), kvi = mm(kt, idf.wv);
  const Tensor cq = mm(c, cls.wq), kkc = mm(kt, cls.wk), kvc = mm(kt, cls.wv);
  const Tensor mask_t = transpose(mask);

  Tensor kt_cat({kt.rows(), config.d_e}), x_cat({x.rows(), config.d_e}),
      c_cat({static_cast<std::size_t>(1), config.d_e});
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    const std::size_t c0 = h * d_h;
    Tensor kt_h = flow(slice(kq, c0, d_h), slice(xk, c0, d_h),
                       slice(xv, c0, d_h), &mask, tau);
    Tensor x_h = flow(slice(xq, c0, d_h), slice(kki, c0, d_h),
                      slice(kvi, c0, d_h), &mask_t, tau);
    Tensor c_h = flow(slice(cq, c0, d_h), slice(kkc, c0, d_h),
                      slice(kvc, c0, d_h), nullptr, tau);
    for (std::size_t i = 0; i < kt.rows(); ++i)
      for (std::size_t j = 0; j < d_h; ++j)
        kt_cat.at(i, c0 + j) = kt_h.at(i, j);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d_h; ++j)
        x_cat.at(i, c0 + j) = x_h.at(i, j);
    for (std::size_t j = 0; j < d_h; ++j) c_cat.at(0, c0 + j) = c_h.at(0, j);
  }
  return {mm(x_cat, block.wo), mm(kt_cat, block.wo), mm(c_cat, block.wo)};
}

namespace {

std::tuple<Tensor, Tensor, Tensor> block_scalar(const Tensor& x,
                                                const Tensor& kt,
                                                const Tensor& c,
                                                const Tensor& mask,
                                                const BlockParams& blk,
                                                const KatConfig& config) {
  const Tensor nx = layer_norm_t(x, blk.ln1_gamma, blk.ln1_beta);
  const Tensor nk = layer_norm_t(kt, blk.ln1_gamma, blk.ln1_beta);
  const Tensor nc = layer_norm_t(c, blk.ln1_gamma, blk.ln1_beta);
  auto [ax, ak, ac] = multi_head_ka_scalar(nx, nk, nc, mask, blk, config);
  const Tensor ux = add(x, ax);
  const Tensor uk = add(kt, ak);
  const Tensor uc = config.cls_attn_residual ? add(c, ac) : ac;
  auto ff = [&blk](const Tensor& u) {
    Tensor n = layer_norm_t(u, blk.ln2_gamma, blk.ln2_beta);
    Tensor h = mm(n, blk.ff1_w);
    add_rowvec_inplace(h, blk.ff1_b);
    h = Tensor::from_data(h.shape(), ref::gelu(h.values()));
    Tensor o = mm(h, blk.ff2_w);
    add_rowvec_inplace(o, blk.ff2_b);
    return add(u, o);
  };
  return {ff(ux), ff(uk), ff(uc)};
}

}  // namespace

std::vector<double> kat_forward_scalar(const FeatureBag& bag,
                                       const MaskStack& masks,
                                       const KatParams& params,
                                       const KatConfig& config) {
  Tensor x = mm(bag.features_f64(), params.embed_w);
  add_rowvec_inplace(x, params.embed_b);
  Tensor kt({masks.K(), config.d_e});
  for (std::size_t k = 0; k < masks.K(); ++k)
    for (std::size_t j = 0; j < config.d_e; ++j)
      kt.at(k, j) = params.kernel_seed[j];
  Tensor c = params.cls_token;
  for (std::size_t s = 0; s < config.n_blocks; ++s) {
    auto [nx, nk, nc] =
        block_scalar(x, kt, c, masks.masks[s], params.blocks[s], config);
    x = std::move(nx);
    kt = std::move(nk);
    c = std::move(nc);
  }
  Tensor logits = mm(c, params.head_w);
  add_rowvec_inplace(logits, params.head_b);
  return logits.values();
}

Tensor central_diff(Tensor& param, const std::function<double()>& loss,
                    double h) {
  Tensor grad(param.shape());
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double rel_err(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double auc_pairwise(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  double credit = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        credit += 1.0;
      else if (scores[i] == scores[j])
        credit += 0.5;
    }
  }
  return credit / static_cast<double>(pairs);
}

void ScalarAdam::step(double& w, double g, int t, double lr, double b1,
                      double b2, double eps, double wd) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g * g;
  const double mh = m / (1.0 - std::pow(b1, t));
  const double vh = v / (1.0 - std::pow(b2, t));
  w -= lr * (mh / (std::sqrt(vh) + eps) + wd * w);
}

double wcss(const PatchGrid& grid,
            const std::vector<std::pair<double, double>>& centers) {
  double total = 0.0;
  for (const Coord& p : grid.coords) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : centers) {
      const double dm = c.first - static_cast<double>(p.m);
      const double dn = c.second - static_cast<double>(p.n);
      best = std::min(best, dm * dm + dn * dn);
    }
    total += best;
  }
  return total;
}

std::vector<std::pair<double, double>> lloyd_random_init(const PatchGrid& grid,
                                                         std::size_t k,
                                                         Rng& rng) {
  const std::size_t n = grid.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<std::pair<double, double>> centers;
  for (std::size_t c = 0; c < k; ++c)
    centers.emplace_back(static_cast<double>(grid.coords[idx[c]].m),
                         static_cast<double>(grid.coords[idx[c]].n));
  std::vector<std::size_t> assign(n, 0), prev(n, k);
  for (int iter = 0; iter < 300 && assign != prev; ++iter) {
    if (iter) prev = assign;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dm = centers[c].first - static_cast<double>(grid.coords[i].m);
        const double dn = centers[c].second - static_cast<double>(grid.coords[i].n);
        const double d = dm * dm + dn * dn;
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    std::vector<double> sm(k, 0.0), sn(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sm[assign[i]] += static_cast<double>(grid.coords[i].m);
      sn[assign[i]] += static_cast<double>(grid.coords[i].n);
      ++cnt[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (cnt[c]) centers[c] = {sm[c] / cnt[c], sn[c] / cnt[c]};
  }
  return centers;
}

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale,
                     bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

PatchGrid random_grid(Rng& rng, std::size_t n_p, std::int64_t side) {
  PatchGrid grid;
  std::set<Coord> used;
  while (used.size() < n_p) {
    Coord c{static_cast<std::int64_t>(rng.below(side)),
            static_cast<std::int64_t>(rng.below(side))};
    used.insert(c);
  }
  grid.coords.assign(used.begin(), used.end());
  // Restore an unordered feel: sets iterate lexicographically.
  rng.shuffle(grid.coords);
  return grid;
}

}  // namespace kat::oracle
