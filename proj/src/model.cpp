#include "kat/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace kat {

double KatConfig::tau() const {
  return std::sqrt(static_cast<double>(d_e) / static_cast<double>(n_heads));
}

void KatConfig::validate() const {
  if (d_e == 0 || n_heads == 0 || d_e % n_heads != 0)
    throw config_error("config: d_e (" + std::to_string(d_e) +
                       ") must be divisible by n_heads (" +
                       std::to_string(n_heads) + ")");
  if (n_blocks < 1) throw config_error("config: need at least one block");
  if (n_classes < 2) throw config_error("config: need at least two classes");
  if (d_f == 0) throw config_error("config: d_f not set");
  if (dropout < 0.0 || dropout >= 1.0)
    throw config_error("config: dropout must lie in [0, 1)");
}

std::size_t KatParams::count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

KatParams zero_params(const KatConfig& config) {
  config.validate();
  const std::size_t d_e = config.d_e, d_ff = config.ff_dim();
  KatParams p;
  p.embed_w = Tensor({config.d_f, d_e}, 0.0, true);
  p.embed_b = Tensor({d_e}, 0.0, true);
  p.blocks.resize(config.n_blocks);
  for (auto& blk : p.blocks) {
    blk.proj.resize(config.proj_sets());
    for (auto& set : blk.proj) {
      set.wq = Tensor({d_e, d_e}, 0.0, true);
      set.wk = Tensor({d_e, d_e}, 0.0, true);
      set.wv = Tensor({d_e, d_e}, 0.0, true);
    }
    blk.wo = Tensor({d_e, d_e}, 0.0, true);
    blk.ln1_gamma = Tensor({d_e}, 0.0, true);
    blk.ln1_beta = Tensor({d_e}, 0.0, true);
    blk.ln2_gamma = Tensor({d_e}, 0.0, true);
    blk.ln2_beta = Tensor({d_e}, 0.0, true);
    blk.ff1_w = Tensor({d_e, d_ff}, 0.0, true);
    blk.ff1_b = Tensor({d_ff}, 0.0, true);
    blk.ff2_w = Tensor({d_ff, d_e}, 0.0, true);
    blk.ff2_b = Tensor({d_e}, 0.0, true);
  }
  p.kernel_seed = Tensor({1, d_e}, 0.0, true);
  p.cls_token = Tensor({1, d_e}, 0.0, true);
  p.head_w = Tensor({d_e, config.n_classes}, 0.0, true);
  p.head_b = Tensor({config.n_classes}, 0.0, true);
  return p;
}

KatParams init_params(const KatConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  constexpr double kStd = 0.02;
  KatParams p = zero_params(config);
  auto fill_weight = [&rng](Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i)
      t[i] = rng.truncated_normal(kStd);
  };
  fill_weight(p.embed_w);
  for (auto& blk : p.blocks) {
    for (auto& set : blk.proj) {
      fill_weight(set.wq);
      fill_weight(set.wk);
      fill_weight(set.wv);
    }
    fill_weight(blk.wo);
    for (std::size_t i = 0; i < config.d_e; ++i) {
      blk.ln1_gamma[i] = 1.0;
      blk.ln2_gamma[i] = 1.0;
    }
    fill_weight(blk.ff1_w);
    fill_weight(blk.ff2_w);
  }
  for (std::size_t i = 0; i < config.d_e; ++i)
    p.kernel_seed[i] = rng.normal(0.0, kStd);
  for (std::size_t i = 0; i < config.d_e; ++i)
    p.cls_token[i] = rng.normal(0.0, kStd);
  fill_weight(p.head_w);
  return p;
}

// ---- KATM serialization ----

namespace {

constexpr char kModelMagic[4] = {'K', 'A', 'T', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw format_error(std::string("model file: truncated reading ") + what);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  const std::uint64_t lo = get_u32(is, what);
  const std::uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

float get_f32(std::istream& is, const char* what) {
  std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_model(const KatParams& params, const KatConfig& config,
                const std::string& path) {
  config.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for writing: " + path);
  os.write(kModelMagic, 4);
  put_u32(os, kModelVersion);
  put_u32(os, static_cast<std::uint32_t>(config.d_f));
  put_u32(os, static_cast<std::uint32_t>(config.d_e));
  put_u32(os, static_cast<std::uint32_t>(config.n_blocks));
  put_u32(os, static_cast<std::uint32_t>(config.n_heads));
  put_u32(os, static_cast<std::uint32_t>(config.ff_dim()));
  put_u32(os, static_cast<std::uint32_t>(config.n_classes));
  put_f32(os, static_cast<float>(config.dropout));
  os.put(config.separate_qkv ? 1 : 0);
  os.put(config.cls_attn_residual ? 1 : 0);
  put_u64(os, params.count());
  params.for_each([&os](const std::string&, const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i)
      put_f32(os, static_cast<float>(t[i]));
  });
  if (!os) throw data_error("write failed: " + path);
}

std::pair<KatParams, KatConfig> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kModelMagic, 4) != 0)
    throw format_error("model file " + path + ": bad magic at offset 0");
  const std::uint32_t version = get_u32(is, "version");
  if (version != kModelVersion)
    throw format_error("model file " + path + ": unsupported version " +
                       std::to_string(version));
  KatConfig config;
  config.d_f = get_u32(is, "d_f");
  config.d_e = get_u32(is, "d_e");
  config.n_blocks = get_u32(is, "n_blocks");
  config.n_heads = get_u32(is, "n_heads");
  config.d_ff = get_u32(is, "d_ff");
  config.n_classes = get_u32(is, "n_classes");
  config.dropout = static_cast<double>(get_f32(is, "dropout"));
  config.separate_qkv = is.get() == 1;
  config.cls_attn_residual = is.get() == 1;
  if (!is) throw format_error("model file " + path + ": truncated header");
  config.validate();
  const std::uint64_t declared = get_u64(is, "param_count");

  // Materialize the parameter skeleton, then fill it in enumeration order.
  KatParams params = zero_params(config);
  if (declared != params.count())
    throw format_error("model file " + path + ": parameter count " +
                       std::to_string(declared) + " does not match config (" +
                       std::to_string(params.count()) + ")");
  params.for_each([&is, &path](const std::string& name, Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      float v = get_f32(is, name.c_str());
      if (!std::isfinite(v))
        throw format_error("model file " + path + ": non-finite value in " +
                           name);
      t[i] = static_cast<double>(v);
    }
  });
  return {std::move(params), config};
}

// ---- graph builders ----

ParamIds register_params(Tape& tape, const KatParams& params) {
  ParamIds ids{};
  ids.embed_w = tape.leaf(params.embed_w);
  ids.embed_b = tape.leaf(params.embed_b);
  for (const auto& blk : params.blocks) {
    BlockParamIds b{};
    for (const auto& set : blk.proj)
      b.proj.push_back({tape.leaf(set.wq), tape.leaf(set.wk),
                        tape.leaf(set.wv)});
    b.wo = tape.leaf(blk.wo);
    b.ln1_gamma = tape.leaf(blk.ln1_gamma);
    b.ln1_beta = tape.leaf(blk.ln1_beta);
    b.ln2_gamma = tape.leaf(blk.ln2_gamma);
    b.ln2_beta = tape.leaf(blk.ln2_beta);
    b.ff1_w = tape.leaf(blk.ff1_w);
    b.ff1_b = tape.leaf(blk.ff1_b);
    b.ff2_w = tape.leaf(blk.ff2_w);
    b.ff2_b = tape.leaf(blk.ff2_b);
    ids.blocks.push_back(std::move(b));
  }
  ids.kernel_seed = tape.leaf(params.kernel_seed);
  ids.cls_token = tape.leaf(params.cls_token);
  ids.head_w = tape.leaf(params.head_w);
  ids.head_b = tape.leaf(params.head_b);
  return ids;
}

namespace {

void check_mask(const Tensor& mask, std::size_t k, std::size_t n_p) {
  if (mask.rank() != 2 || mask.rows() != k || mask.cols() != n_p)
    throw dimension_error("kernel attention: mask is " + mask.shape_str() +
                          ", expected [" + std::to_string(k) + "x" +
                          std::to_string(n_p) + "]");
  for (std::size_t i = 0; i < mask.numel(); ++i)
    if (!(mask[i] > 0.0))
      throw contract_error("kernel attention: nonpositive mask entry");
}

// One attention flow: softmax(q op(k)^T / tau) (optionally masked) * v.
Tape::Id attention_flow(Tape& tape, Tape::Id q, Tape::Id k, Tape::Id v,
                        Tape::Id mask, bool use_mask, double tau) {
  Tape::Id scores = tape.matmul(q, k, false, true);
  Tape::Id weights = tape.softmax_scaled(scores, tau);
  if (use_mask) weights = tape.mul(weights, mask);
  return tape.matmul(weights, v);
}

Tape::Id apply_dropout(Tape& tape, Tape::Id x, const KatConfig& config,
                       const ForwardOptions& opts) {
  if (!opts.training || config.dropout <= 0.0) return x;
  if (tape.shape_only()) return x;
  if (!opts.dropout_rng)
    throw contract_error("forward: dropout requires an RNG while training");
  const auto& shape = tape.shape(x);
  Tensor mask(shape);
  const double keep = 1.0 - config.dropout;
  for (std::size_t i = 0; i < mask.numel(); ++i)
    mask[i] = opts.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
  return tape.mul(x, tape.leaf(std::move(mask)));
}

}  // namespace

StreamIds mhka_tape(Tape& tape, const StreamIds& in, Tape::Id mask,
                    Tape::Id mask_t, const BlockParamIds& block,
                    const KatConfig& config) {
  const std::size_t d_h = config.head_dim();
  const double tau = config.tau();

  // Shared projections are computed once and sliced per head; only the
  // projections each flow consumes are formed.
  const auto& isf = block.proj[0];
  const auto& idf = config.separate_qkv ? block.proj[1] : block.proj[0];
  const auto& cls = config.separate_qkv ? block.proj[2] : block.proj[0];

  Tape::Id kq = tape.matmul(in.kt, isf[0]);
  Tape::Id xk = tape.matmul(in.x, isf[1]);
  Tape::Id xv = tape.matmul(in.x, isf[2]);
  Tape::Id xq = tape.matmul(in.x, idf[0]);
  Tape::Id kk_idf = tape.matmul(in.kt, idf[1]);
  Tape::Id kv_idf = tape.matmul(in.kt, idf[2]);
  Tape::Id cq = tape.matmul(in.c, cls[0]);
  Tape::Id kk_cls = config.separate_qkv ? tape.matmul(in.kt, cls[1]) : kk_idf;
  Tape::Id kv_cls = config.separate_qkv ? tape.matmul(in.kt, cls[2]) : kv_idf;

  std::vector<Tape::Id> kt_heads, x_heads, c_heads;
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    const std::size_t c0 = h * d_h;
    Tape::Id kq_h = tape.slice_cols(kq, c0, d_h);
    Tape::Id xk_h = tape.slice_cols(xk, c0, d_h);
    Tape::Id xv_h = tape.slice_cols(xv, c0, d_h);
    Tape::Id xq_h = tape.slice_cols(xq, c0, d_h);
    Tape::Id kki_h = tape.slice_cols(kk_idf, c0, d_h);
    Tape::Id kvi_h = tape.slice_cols(kv_idf, c0, d_h);
    Tape::Id cq_h = tape.slice_cols(cq, c0, d_h);
    Tape::Id kkc_h = config.separate_qkv ? tape.slice_cols(kk_cls, c0, d_h)
                                         : kki_h;
    Tape::Id kvc_h = config.separate_qkv ? tape.slice_cols(kv_cls, c0, d_h)
                                         : kvi_h;

    kt_heads.push_back(attention_flow(tape, kq_h, xk_h, xv_h, mask, true, tau));
    x_heads.push_back(
        attention_flow(tape, xq_h, kki_h, kvi_h, mask_t, true, tau));
    c_heads.push_back(
        attention_flow(tape, cq_h, kkc_h, kvc_h, mask, false, tau));
  }

  StreamIds out{};
  out.kt = tape.matmul(tape.concat_cols(kt_heads), block.wo);
  out.x = tape.matmul(tape.concat_cols(x_heads), block.wo);
  out.c = tape.matmul(tape.concat_cols(c_heads), block.wo);
  return out;
}

StreamIds kat_block_tape(Tape& tape, const StreamIds& in, Tape::Id mask,
                         Tape::Id mask_t, const BlockParamIds& block,
                         const KatConfig& config, const ForwardOptions& opts) {
  StreamIds normed{};
  normed.x = tape.layer_norm(in.x, block.ln1_gamma, block.ln1_beta);
  normed.kt = tape.layer_norm(in.kt, block.ln1_gamma, block.ln1_beta);
  normed.c = tape.layer_norm(in.c, block.ln1_gamma, block.ln1_beta);

  StreamIds att = mhka_tape(tape, normed, mask, mask_t, block, config);
  att.x = apply_dropout(tape, att.x, config, opts);
  att.kt = apply_dropout(tape, att.kt, config, opts);
  att.c = apply_dropout(tape, att.c, config, opts);

  StreamIds u{};
  u.x = tape.add(in.x, att.x);
  u.kt = tape.add(in.kt, att.kt);
  u.c = config.cls_attn_residual ? tape.add(in.c, att.c) : att.c;

  auto feed_forward = [&](Tape::Id s) {
    Tape::Id n = tape.layer_norm(s, block.ln2_gamma, block.ln2_beta);
    Tape::Id h = tape.add_rowvec(tape.matmul(n, block.ff1_w), block.ff1_b);
    h = tape.gelu(h);
    h = apply_dropout(tape, h, config, opts);
    Tape::Id o = tape.add_rowvec(tape.matmul(h, block.ff2_w), block.ff2_b);
    return tape.add(s, o);
  };
  StreamIds out{};
  out.x = feed_forward(u.x);
  out.kt = feed_forward(u.kt);
  out.c = feed_forward(u.c);
  return out;
}

StreamIds kat_blocks_tape(Tape& tape, const StreamIds& in,
                          const MaskStack& masks, const ParamIds& params,
                          const KatConfig& config, const ForwardOptions& opts) {
  if (masks.scales() != config.n_blocks)
    throw config_error("forward: mask stack has " +
                       std::to_string(masks.scales()) + " scales for " +
                       std::to_string(config.n_blocks) + " blocks");
  StreamIds cur = in;
  for (std::size_t s = 0; s < config.n_blocks; ++s) {
    if (!tape.shape_only())
      check_mask(masks.masks[s], tape.shape(cur.kt)[0], tape.shape(cur.x)[0]);
    Tape::Id m = tape.leaf(masks.masks[s]);
    Tape::Id mt = tape.leaf(masks.masks[s].transposed());
    cur = kat_block_tape(tape, cur, m, mt, params.blocks[s], config, opts);
  }
  return cur;
}

ForwardIds kat_forward_tape(Tape& tape, const Tensor& features,
                            const MaskStack& masks, const ParamIds& params,
                            const KatConfig& config,
                            const ForwardOptions& opts) {
  if (features.cols() != config.d_f)
    throw config_error("forward: features have d_f = " +
                       std::to_string(features.cols()) + ", config says " +
                       std::to_string(config.d_f));
  const std::size_t k = masks.K();
  Tape::Id x_raw = tape.leaf(features);

  StreamIds in{};
  in.x = tape.add_rowvec(tape.matmul(x_raw, params.embed_w), params.embed_b);
  in.kt = tape.broadcast_rows(params.kernel_seed, k);
  in.c = params.cls_token;

  StreamIds out = kat_blocks_tape(tape, in, masks, params, config, opts);
  ForwardIds fwd{};
  fwd.streams = out;
  fwd.logits = tape.add_rowvec(tape.matmul(out.c, params.head_w),
                               params.head_b);
  return fwd;
}

Tape::Id sa_blocks_tape(Tape& tape, Tape::Id tokens,
                        const std::vector<BlockParamIds>& blocks,
                        const KatConfig& config) {
  const std::size_t d_h = config.head_dim();
  const double tau = config.tau();
  Tape::Id cur = tokens;
  for (const auto& block : blocks) {
    Tape::Id n1 = tape.layer_norm(cur, block.ln1_gamma, block.ln1_beta);
    Tape::Id q = tape.matmul(n1, block.proj[0][0]);
    Tape::Id k = tape.matmul(n1, block.proj[0][1]);
    Tape::Id v = tape.matmul(n1, block.proj[0][2]);
    std::vector<Tape::Id> heads;
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      const std::size_t c0 = h * d_h;
      heads.push_back(attention_flow(tape, tape.slice_cols(q, c0, d_h),
                                     tape.slice_cols(k, c0, d_h),
                                     tape.slice_cols(v, c0, d_h), 0, false,
                                     tau));
    }
    Tape::Id att = tape.matmul(tape.concat_cols(heads), block.wo);
    Tape::Id u = tape.add(cur, att);
    Tape::Id n2 = tape.layer_norm(u, block.ln2_gamma, block.ln2_beta);
    Tape::Id hdn = tape.gelu(
        tape.add_rowvec(tape.matmul(n2, block.ff1_w), block.ff1_b));
    Tape::Id o = tape.add_rowvec(tape.matmul(hdn, block.ff2_w), block.ff2_b);
    cur = tape.add(u, o);
  }
  return cur;
}

// ---- value-level surfaces ----

std::tuple<Tensor, Tensor, Tensor> kernel_attention(
    const Tensor& x, const Tensor& kt, const Tensor& c, const Tensor& mask,
    const FlowProj& proj, double tau) {
  check_mask(mask, kt.rows(), x.rows());
  Tape tape;
  Tape::Id xi = tape.leaf(x), ki = tape.leaf(kt), ci = tape.leaf(c);
  Tape::Id m = tape.leaf(mask), mt = tape.leaf(mask.transposed());
  Tape::Id wq = tape.leaf(proj.wq), wk = tape.leaf(proj.wk),
           wv = tape.leaf(proj.wv);

  Tape::Id kq = tape.matmul(ki, wq), xk = tape.matmul(xi, wk),
           xv = tape.matmul(xi, wv);
  Tape::Id xq = tape.matmul(xi, wq), kk = tape.matmul(ki, wk),
           kv = tape.matmul(ki, wv);
  Tape::Id cq = tape.matmul(ci, wq);

  Tape::Id kt_out = attention_flow(tape, kq, xk, xv, m, true, tau);
  Tape::Id x_out = attention_flow(tape, xq, kk, kv, mt, true, tau);
  Tape::Id c_out = attention_flow(tape, cq, kk, kv, m, false, tau);
  return {tape.value(x_out), tape.value(kt_out), tape.value(c_out)};
}

namespace {

std::tuple<Tensor, Tensor, Tensor> run_block_tape(
    const Tensor& x, const Tensor& kt, const Tensor& c, const Tensor& mask,
    const BlockParams& block, const KatConfig& config, bool full_block) {
  check_mask(mask, kt.rows(), x.rows());
  Tape tape;
  StreamIds in{tape.leaf(x), tape.leaf(kt), tape.leaf(c)};
  Tape::Id m = tape.leaf(mask), mt = tape.leaf(mask.transposed());
  BlockParamIds ids{};
  for (const auto& set : block.proj)
    ids.proj.push_back(
        {tape.leaf(set.wq), tape.leaf(set.wk), tape.leaf(set.wv)});
  ids.wo = tape.leaf(block.wo);
  if (full_block) {
    ids.ln1_gamma = tape.leaf(block.ln1_gamma);
    ids.ln1_beta = tape.leaf(block.ln1_beta);
    ids.ln2_gamma = tape.leaf(block.ln2_gamma);
    ids.ln2_beta = tape.leaf(block.ln2_beta);
    ids.ff1_w = tape.leaf(block.ff1_w);
    ids.ff1_b = tape.leaf(block.ff1_b);
    ids.ff2_w = tape.leaf(block.ff2_w);
    ids.ff2_b = tape.leaf(block.ff2_b);
    StreamIds out = kat_block_tape(tape, in, m, mt, ids, config);
    return {tape.value(out.x), tape.value(out.kt), tape.value(out.c)};
  }
  StreamIds out = mhka_tape(tape, in, m, mt, ids, config);
  return {tape.value(out.x), tape.value(out.kt), tape.value(out.c)};
}

}  // namespace

std::tuple<Tensor, Tensor, Tensor> multi_head_ka(const Tensor& x,
                                                 const Tensor& kt,
                                                 const Tensor& c,
                                                 const Tensor& mask,
                                                 const BlockParams& block,
                                                 const KatConfig& config) {
  if (config.d_e % config.n_heads != 0)
    throw config_error("multi_head_ka: d_e not divisible by n_heads");
  return run_block_tape(x, kt, c, mask, block, config, false);
}

std::tuple<Tensor, Tensor, Tensor> kat_block(const Tensor& x, const Tensor& kt,
                                             const Tensor& c,
                                             const Tensor& mask,
                                             const BlockParams& block,
                                             const KatConfig& config) {
  return run_block_tape(x, kt, c, mask, block, config, true);
}

ForwardResult kat_forward_full(const FeatureBag& bag, const MaskStack& masks,
                               const KatParams& params,
                               const KatConfig& config) {
  config.validate();
  Tape tape;
  ParamIds ids = register_params(tape, params);
  ForwardIds fwd =
      kat_forward_tape(tape, bag.features_f64(), masks, ids, config);
  ForwardResult out;
  out.x = tape.value(fwd.streams.x);
  out.kt = tape.value(fwd.streams.kt);
  out.c = tape.value(fwd.streams.c);
  out.logits = tape.value(fwd.logits).values();
  return out;
}

std::vector<double> kat_forward(const FeatureBag& bag, const MaskStack& masks,
                                const KatParams& params,
                                const KatConfig& config) {
  return kat_forward_full(bag, masks, params, config).logits;
}

}  // namespace kat
