#include "kat/tape.hpp"

#include <algorithm>
#include <cmath>

#include "kat/kernels.hpp"

namespace kat {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = shape.empty() ? 0 : 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// Effective (rows, cols) of a rank-2 tensor under a transpose flag.
std::pair<std::size_t, std::size_t> eff2(const std::vector<std::size_t>& s,
                                         bool trans) {
  return trans ? std::make_pair(s[1], s[0]) : std::make_pair(s[0], s[1]);
}

}  // namespace

Tape::Id Tape::push(std::vector<std::size_t> shape, Tensor val,
                    bool needs_grad, bool is_leaf) {
  Slot slot;
  slot.shape = std::move(shape);
  slot.needs_grad = needs_grad;
  slot.is_leaf = is_leaf;
  if (!is_leaf) activation_elements_ += product(slot.shape);
  if (mode_ == Mode::kValues) slot.val = std::move(val);
  slots_.push_back(std::move(slot));
  grads_.emplace_back();
  return slots_.size() - 1;
}

void Tape::check_finite(Id id, const char* op) const {
  if (mode_ != Mode::kValues) return;
  if (!slots_[id].val.all_finite())
    throw numeric_error(std::string(op) + ": non-finite value produced");
}

Tape::Id Tape::leaf(Tensor t) {
  std::vector<std::size_t> shape = t.shape();
  bool rg = t.requires_grad();
  Id id = push(std::move(shape), std::move(t), rg, true);
  check_finite(id, "leaf");
  return id;
}

const Tensor& Tape::value(Id id) const {
  if (mode_ != Mode::kValues)
    throw contract_error("tape: values are not retained in shape-only mode");
  return slots_[id].val;
}

const std::vector<std::size_t>& Tape::shape(Id id) const {
  return slots_[id].shape;
}

Tape::Id Tape::matmul(Id a, Id b, bool trans_a, bool trans_b) {
  const auto& sa = slots_[a].shape;
  const auto& sb = slots_[b].shape;
  if (sa.size() != 2 || sb.size() != 2)
    throw dimension_error("matmul: operands must be rank 2, got " +
                          shape_str(sa) + " x " + shape_str(sb));
  auto [m, ka] = eff2(sa, trans_a);
  auto [kb, n] = eff2(sb, trans_b);
  if (ka != kb)
    throw dimension_error("matmul: inner dimensions disagree: " +
                          shape_str(sa) + (trans_a ? "^T" : "") + " x " +
                          shape_str(sb) + (trans_b ? "^T" : ""));
  flops_ += 2ull * m * ka * n;

  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor({m, n});
    kernels::matmul(val_of(a).data(), val_of(b).data(), out.data(), m, ka, n,
                    trans_a, trans_b, false);
  }
  const bool ng = slots_[a].needs_grad || slots_[b].needs_grad;
  Id id = push({m, n}, std::move(out), ng, false);
  check_finite(id, "matmul");
  const std::size_t kk = ka;
  nodes_.push_back(
      {id, [a, b, id, m, kk, n, trans_a, trans_b](Tape& t) {
         const Tensor& dc = t.grads_[id];
         const Tensor& va = t.val_of(a);
         const Tensor& vb = t.val_of(b);
         if (t.slots_[a].needs_grad) {
           Tensor& da = t.grad_buffer(a);
           if (!trans_a && !trans_b) {
             kernels::matmul(dc.data(), vb.data(), da.data(), m, n, kk, false,
                             true, true);
           } else if (!trans_a && trans_b) {
             kernels::matmul(dc.data(), vb.data(), da.data(), m, n, kk, false,
                             false, true);
           } else if (trans_a && !trans_b) {
             kernels::matmul(vb.data(), dc.data(), da.data(), kk, n, m, false,
                             true, true);
           } else {
             kernels::matmul(vb.data(), dc.data(), da.data(), kk, n, m, true,
                             true, true);
           }
         }
         if (t.slots_[b].needs_grad) {
           Tensor& db = t.grad_buffer(b);
           if (!trans_a && !trans_b) {
             kernels::matmul(va.data(), dc.data(), db.data(), kk, m, n, true,
                             false, true);
           } else if (!trans_a && trans_b) {
             kernels::matmul(dc.data(), va.data(), db.data(), n, m, kk, true,
                             false, true);
           } else if (trans_a && !trans_b) {
             kernels::matmul(va.data(), dc.data(), db.data(), kk, m, n, false,
                             false, true);
           } else {
             kernels::matmul(dc.data(), va.data(), db.data(), n, m, kk, true,
                             true, true);
           }
         }
       }});
  return id;
}

Tape::Id Tape::add(Id a, Id b) {
  if (slots_[a].shape != slots_[b].shape)
    throw dimension_error("add: shapes differ: " + shape_str(slots_[a].shape) +
                          " vs " + shape_str(slots_[b].shape));
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(slots_[a].shape);
    const std::size_t n = out.numel();
    const double* pa = val_of(a).data();
    const double* pb = val_of(b).data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  }
  const bool ng = slots_[a].needs_grad || slots_[b].needs_grad;
  Id id = push(slots_[a].shape, std::move(out), ng, false);
  check_finite(id, "add");
  nodes_.push_back({id, [a, b, id](Tape& t) {
                      const Tensor& dc = t.grads_[id];
                      for (Id in : {a, b}) {
                        if (!t.slots_[in].needs_grad) continue;
                        Tensor& d = t.grad_buffer(in);
                        for (std::size_t i = 0; i < dc.numel(); ++i)
                          d[i] += dc[i];
                      }
                    }});
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  if (slots_[a].shape != slots_[b].shape)
    throw dimension_error("mul: shapes differ: " + shape_str(slots_[a].shape) +
                          " vs " + shape_str(slots_[b].shape));
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(slots_[a].shape);
    const std::size_t n = out.numel();
    const double* pa = val_of(a).data();
    const double* pb = val_of(b).data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  }
  const bool ng = slots_[a].needs_grad || slots_[b].needs_grad;
  Id id = push(slots_[a].shape, std::move(out), ng, false);
  check_finite(id, "mul");
  nodes_.push_back({id, [a, b, id](Tape& t) {
                      const Tensor& dc = t.grads_[id];
                      if (t.slots_[a].needs_grad) {
                        Tensor& da = t.grad_buffer(a);
                        const Tensor& vb = t.val_of(b);
                        for (std::size_t i = 0; i < dc.numel(); ++i)
                          da[i] += dc[i] * vb[i];
                      }
                      if (t.slots_[b].needs_grad) {
                        Tensor& db = t.grad_buffer(b);
                        const Tensor& va = t.val_of(a);
                        for (std::size_t i = 0; i < dc.numel(); ++i)
                          db[i] += dc[i] * va[i];
                      }
                    }});
  return id;
}

Tape::Id Tape::scale(Id a, double s) {
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(slots_[a].shape);
    const double* pa = val_of(a).data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = s * pa[i];
  }
  Id id = push(slots_[a].shape, std::move(out), slots_[a].needs_grad, false);
  check_finite(id, "scale");
  nodes_.push_back({id, [a, id, s](Tape& t) {
                      if (!t.slots_[a].needs_grad) return;
                      const Tensor& dc = t.grads_[id];
                      Tensor& da = t.grad_buffer(a);
                      for (std::size_t i = 0; i < dc.numel(); ++i)
                        da[i] += s * dc[i];
                    }});
  return id;
}

Tape::Id Tape::add_rowvec(Id a, Id v) {
  const auto& sa = slots_[a].shape;
  const auto& sv = slots_[v].shape;
  const std::size_t n = sa.size() == 2 ? sa[1] : sa[0];
  const std::size_t vn = product(sv);
  if (sa.size() != 2 || vn != n || sv.size() > 2 ||
      (sv.size() == 2 && sv[0] != 1))
    throw dimension_error("add_rowvec: incompatible shapes " + shape_str(sa) +
                          " and " + shape_str(sv));
  const std::size_t m = sa[0];
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(sa);
    const double* pa = val_of(a).data();
    const double* pv = val_of(v).data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        po[i * n + j] = pa[i * n + j] + pv[j];
  }
  const bool ng = slots_[a].needs_grad || slots_[v].needs_grad;
  Id id = push(sa, std::move(out), ng, false);
  check_finite(id, "add_rowvec");
  nodes_.push_back({id, [a, v, id, m, n](Tape& t) {
                      const Tensor& dc = t.grads_[id];
                      if (t.slots_[a].needs_grad) {
                        Tensor& da = t.grad_buffer(a);
                        for (std::size_t i = 0; i < dc.numel(); ++i)
                          da[i] += dc[i];
                      }
                      if (t.slots_[v].needs_grad) {
                        Tensor& dv = t.grad_buffer(v);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                            dv[j] += dc[i * n + j];
                      }
                    }});
  return id;
}

Tape::Id Tape::broadcast_rows(Id v, std::size_t m) {
  const auto& sv = slots_[v].shape;
  const std::size_t n = product(sv);
  if (sv.size() > 2 || (sv.size() == 2 && sv[0] != 1))
    throw dimension_error("broadcast_rows: expected a row vector, got " +
                          shape_str(sv));
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor({m, n});
    const double* pv = val_of(v).data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) po[i * n + j] = pv[j];
  }
  Id id = push({m, n}, std::move(out), slots_[v].needs_grad, false);
  check_finite(id, "broadcast_rows");
  nodes_.push_back({id, [v, id, m, n](Tape& t) {
                      if (!t.slots_[v].needs_grad) return;
                      const Tensor& dc = t.grads_[id];
                      Tensor& dv = t.grad_buffer(v);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                          dv[j] += dc[i * n + j];
                    }});
  return id;
}

Tape::Id Tape::slice_cols(Id a, std::size_t col0, std::size_t width) {
  const auto& sa = slots_[a].shape;
  if (sa.size() != 2 || col0 + width > sa[1])
    throw dimension_error("slice_cols: [" + std::to_string(col0) + ", " +
                          std::to_string(col0 + width) + ") out of range for " +
                          shape_str(sa));
  const std::size_t m = sa[0], n = sa[1];
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor({m, width});
    const double* pa = val_of(a).data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < width; ++j)
        po[i * width + j] = pa[i * n + col0 + j];
  }
  Id id = push({m, width}, std::move(out), slots_[a].needs_grad, false);
  nodes_.push_back({id, [a, id, col0, width, m, n](Tape& t) {
                      if (!t.slots_[a].needs_grad) return;
                      const Tensor& dc = t.grads_[id];
                      Tensor& da = t.grad_buffer(a);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < width; ++j)
                          da[i * n + col0 + j] += dc[i * width + j];
                    }});
  return id;
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw parameter_error("concat_cols: no inputs");
  const std::size_t m = slots_[parts[0]].shape[0];
  std::size_t total = 0;
  bool ng = false;
  for (Id p : parts) {
    const auto& sp = slots_[p].shape;
    if (sp.size() != 2 || sp[0] != m)
      throw dimension_error("concat_cols: row counts differ");
    total += sp[1];
    ng = ng || slots_[p].needs_grad;
  }
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor({m, total});
    double* po = out.data();
    std::size_t off = 0;
    for (Id p : parts) {
      const std::size_t w = slots_[p].shape[1];
      const double* pp = val_of(p).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j)
          po[i * total + off + j] = pp[i * w + j];
      off += w;
    }
  }
  Id id = push({m, total}, std::move(out), ng, false);
  std::vector<Id> ins = parts;
  nodes_.push_back({id, [ins, id, m, total](Tape& t) {
                      const Tensor& dc = t.grads_[id];
                      std::size_t off = 0;
                      for (Id p : ins) {
                        const std::size_t w = t.slots_[p].shape[1];
                        if (t.slots_[p].needs_grad) {
                          Tensor& dp = t.grad_buffer(p);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < w; ++j)
                              dp[i * w + j] += dc[i * total + off + j];
                        }
                        off += w;
                      }
                    }});
  return id;
}

Tape::Id Tape::softmax_scaled(Id s, double tau) {
  if (!(tau > 0.0))
    throw parameter_error("softmax_scaled: tau must be positive, got " +
                          std::to_string(tau));
  const auto& ss = slots_[s].shape;
  if (ss.size() != 2)
    throw dimension_error("softmax_scaled: expected rank 2, got " +
                          shape_str(ss));
  const std::size_t r = ss[0], c = ss[1];
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(ss);
    kernels::softmax_rows(val_of(s).data(), out.data(), r, c, tau);
  }
  Id id = push(ss, std::move(out), slots_[s].needs_grad, false);
  check_finite(id, "softmax_scaled");
  nodes_.push_back({id, [s, id, r, c, tau](Tape& t) {
                      if (!t.slots_[s].needs_grad) return;
                      kernels::softmax_rows_backward(
                          t.val_of(id).data(), t.grads_[id].data(),
                          t.grad_buffer(s).data(), r, c, tau);
                    }});
  return id;
}

Tape::Id Tape::layer_norm(Id x, Id gamma, Id beta, double eps) {
  if (!(eps > 0.0)) throw parameter_error("layer_norm: eps must be positive");
  const auto& sx = slots_[x].shape;
  const std::size_t d = sx.size() == 2 ? sx[1] : sx[0];
  if (product(slots_[gamma].shape) != d || product(slots_[beta].shape) != d)
    throw dimension_error("layer_norm: gamma/beta length does not match " +
                          shape_str(sx));
  const std::size_t r = sx.size() == 2 ? sx[0] : 1;
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(sx);
    kernels::layer_norm(val_of(x).data(), val_of(gamma).data(),
                        val_of(beta).data(), out.data(), r, d, eps);
  }
  const bool ng = slots_[x].needs_grad || slots_[gamma].needs_grad ||
                  slots_[beta].needs_grad;
  Id id = push(sx, std::move(out), ng, false);
  check_finite(id, "layer_norm");
  nodes_.push_back({id, [x, gamma, beta, id, r, d, eps](Tape& t) {
                      const Tensor& dc = t.grads_[id];
                      // Backward needs all three buffers even when only some
                      // inputs require grad; scratch for the rest.
                      Tensor sdx, sdg, sdb;
                      Tensor* dx = &sdx;
                      Tensor* dg = &sdg;
                      Tensor* db = &sdb;
                      if (t.slots_[x].needs_grad)
                        dx = &t.grad_buffer(x);
                      else
                        sdx = Tensor(t.slots_[x].shape);
                      if (t.slots_[gamma].needs_grad)
                        dg = &t.grad_buffer(gamma);
                      else
                        sdg = Tensor(t.slots_[gamma].shape);
                      if (t.slots_[beta].needs_grad)
                        db = &t.grad_buffer(beta);
                      else
                        sdb = Tensor(t.slots_[beta].shape);
                      kernels::layer_norm_backward(
                          t.val_of(x).data(), t.val_of(gamma).data(),
                          dc.data(), dx->data(), dg->data(), db->data(), r, d,
                          eps);
                    }});
  return id;
}

Tape::Id Tape::gelu(Id x) {
  Tensor out;
  if (mode_ == Mode::kValues) {
    out = Tensor(slots_[x].shape);
    kernels::gelu(val_of(x).data(), out.data(), out.numel());
  }
  Id id = push(slots_[x].shape, std::move(out), slots_[x].needs_grad, false);
  check_finite(id, "gelu");
  nodes_.push_back({id, [x, id](Tape& t) {
                      if (!t.slots_[x].needs_grad) return;
                      const Tensor& dc = t.grads_[id];
                      kernels::gelu_backward(t.val_of(x).data(), dc.data(),
                                             t.grad_buffer(x).data(),
                                             dc.numel());
                    }});
  return id;
}

Tape::Id Tape::cross_entropy(Id logits, std::size_t label) {
  const std::size_t c = product(slots_[logits].shape);
  const auto& sl = slots_[logits].shape;
  if (sl.size() == 2 && sl[0] != 1)
    throw dimension_error("cross_entropy: logits must be a single row, got " +
                          shape_str(sl));
  if (label >= c)
    throw index_error("cross_entropy: label " + std::to_string(label) +
                      " out of range for " + std::to_string(c) + " classes");
  Tensor out;
  std::vector<double> soft;  // cached softmax for backward
  if (mode_ == Mode::kValues) {
    const double* z = val_of(logits).data();
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    soft.resize(c);
    for (std::size_t j = 0; j < c; ++j) {
      soft[j] = std::exp(z[j] - mx);
      sum += soft[j];
    }
    for (std::size_t j = 0; j < c; ++j) soft[j] /= sum;
    const double lse = mx + std::log(sum);
    out = Tensor::scalar(lse - z[label]);
  }
  Id id = push({1}, std::move(out), slots_[logits].needs_grad, false);
  check_finite(id, "cross_entropy");
  nodes_.push_back(
      {id, [logits, id, label, c, soft = std::move(soft)](Tape& t) {
         if (!t.slots_[logits].needs_grad) return;
         const double dl = t.grads_[id][0];
         Tensor& dz = t.grad_buffer(logits);
         for (std::size_t j = 0; j < c; ++j)
           dz[j] += dl * (soft[j] - (j == label ? 1.0 : 0.0));
       }});
  return id;
}

Tape::Id Tape::sum(Id a) {
  Tensor out;
  if (mode_ == Mode::kValues) {
    double s = 0.0;
    const Tensor& va = val_of(a);
    for (std::size_t i = 0; i < va.numel(); ++i) s += va[i];
    out = Tensor::scalar(s);
  }
  Id id = push({1}, std::move(out), slots_[a].needs_grad, false);
  check_finite(id, "sum");
  nodes_.push_back({id, [a, id](Tape& t) {
                      if (!t.slots_[a].needs_grad) return;
                      const double dl = t.grads_[id][0];
                      Tensor& da = t.grad_buffer(a);
                      for (std::size_t i = 0; i < da.numel(); ++i)
                        da[i] += dl;
                    }});
  return id;
}

Tensor& Tape::grad_buffer(Id id) {
  if (!grad_touched(id)) grads_[id] = Tensor(slots_[id].shape);
  return grads_[id];
}

void Tape::backward(Id loss) {
  if (mode_ != Mode::kValues)
    throw contract_error("tape: backward unavailable in shape-only mode");
  if (product(slots_[loss].shape) != 1)
    throw contract_error("backward: loss must be scalar, got " +
                         shape_str(slots_[loss].shape));
  for (auto& g : grads_) g = Tensor();
  grad_buffer(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out > loss) continue;          // recorded after the loss
    if (!grad_touched(it->out)) continue;  // loss does not depend on it
    if (!slots_[it->out].needs_grad) continue;
    it->back(*this);
  }
}

const Tensor& Tape::grad(Id id) const {
  if (grad_touched(id)) return grads_[id];
  zero_grad_scratch_ = Tensor(slots_[id].shape);
  return zero_grad_scratch_;
}

}  // namespace kat
