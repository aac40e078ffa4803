#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "kat/bag.hpp"
#include "kat/masks.hpp"
#include "kat/rng.hpp"
#include "kat/tape.hpp"
#include "kat/tensor.hpp"

namespace kat {

struct KatConfig {
  std::size_t d_f = 0;
  std::size_t d_e = 256;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 8;
  std::size_t d_ff = 0;  // 0 resolves to 4 * d_e
  std::size_t n_classes = 2;
  double dropout = 0.0;
  // All three flows share one W_q/W_k/W_v set per block; flipping this gives
  // each flow its own set (ablation).
  bool separate_qkv = false;
  // Whether the classification stream keeps the residual around attention.
  bool cls_attn_residual = true;

  std::size_t ff_dim() const { return d_ff ? d_ff : 4 * d_e; }
  std::size_t head_dim() const { return d_e / n_heads; }
  double tau() const;
  std::size_t proj_sets() const { return separate_qkv ? 3 : 1; }
  void validate() const;
};

// One W_q/W_k/W_v triplet (d_e -> d_e each).
struct FlowProj {
  Tensor wq, wk, wv;
};

struct BlockParams {
  std::vector<FlowProj> proj;  // 1 set shared across flows, or (isf, idf, cls)
  Tensor wo;
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
  Tensor ff1_w, ff1_b;
  Tensor ff2_w, ff2_b;
};

// All trainable values. Enumeration order is the serialization contract:
//   embed_w, embed_b,
//   per block: each projection set's wq, wk, wv (one set, or isf/idf/cls),
//              wo, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta,
//              ff1_w, ff1_b, ff2_w, ff2_b,
//   kernel_seed, cls_token, head_w, head_b.
struct KatParams {
  Tensor embed_w, embed_b;  // d_f -> d_e affine
  std::vector<BlockParams> blocks;
  Tensor kernel_seed;  // one trainable row broadcast to all K kernels
  Tensor cls_token;    // 1 x d_e
  Tensor head_w, head_b;  // d_e -> C affine

  template <typename F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }
  std::size_t count() const;

 private:
  template <typename Self, typename F>
  static void for_each_impl(Self& self, F& f) {
    f("embed_w", self.embed_w);
    f("embed_b", self.embed_b);
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      auto& blk = self.blocks[b];
      const std::string pre = "block" + std::to_string(b) + ".";
      for (std::size_t s = 0; s < blk.proj.size(); ++s) {
        const std::string sp = blk.proj.size() == 1
                                   ? pre
                                   : pre + "flow" + std::to_string(s) + ".";
        f(sp + "wq", blk.proj[s].wq);
        f(sp + "wk", blk.proj[s].wk);
        f(sp + "wv", blk.proj[s].wv);
      }
      f(pre + "wo", blk.wo);
      f(pre + "ln1_gamma", blk.ln1_gamma);
      f(pre + "ln1_beta", blk.ln1_beta);
      f(pre + "ln2_gamma", blk.ln2_gamma);
      f(pre + "ln2_beta", blk.ln2_beta);
      f(pre + "ff1_w", blk.ff1_w);
      f(pre + "ff1_b", blk.ff1_b);
      f(pre + "ff2_w", blk.ff2_w);
      f(pre + "ff2_b", blk.ff2_b);
    }
    f("kernel_seed", self.kernel_seed);
    f("cls_token", self.cls_token);
    f("head_w", self.head_w);
    f("head_b", self.head_b);
  }
};

// Projections and kernel/class tokens ~ truncated normal (std 0.02),
// layer-norm gains 1 and shifts 0, biases 0. Deterministic under seed.
KatParams init_params(const KatConfig& config, std::uint64_t seed);

// Correctly-shaped zero-filled parameter skeleton.
KatParams zero_params(const KatConfig& config);

// KATM binary layout, little-endian:
//   offset 0   magic "KATM"
//   offset 4   version u32 (= 1)
//   offset 8   d_f u32          offset 12  d_e u32
//   offset 16  n_blocks u32     offset 20  n_heads u32
//   offset 24  d_ff u32         offset 28  n_classes u32
//   offset 32  dropout f32
//   offset 36  separate_qkv u8  offset 37  cls_attn_residual u8
//   offset 38  param_count u64
//   offset 46  parameters as f32, enumeration order
void save_model(const KatParams& params, const KatConfig& config,
                const std::string& path);
std::pair<KatParams, KatConfig> load_model(const std::string& path);

// ---- graph builders (training path) ----

struct StreamIds {
  Tape::Id x, kt, c;
};

struct BlockParamIds {
  std::vector<std::array<Tape::Id, 3>> proj;  // wq, wk, wv per set
  Tape::Id wo;
  Tape::Id ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Tape::Id ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ParamIds {
  Tape::Id embed_w, embed_b;
  std::vector<BlockParamIds> blocks;
  Tape::Id kernel_seed, cls_token;
  Tape::Id head_w, head_b;
};

ParamIds register_params(Tape& tape, const KatParams& params);

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

// Multi-head kernel attention on already-normalized streams.
StreamIds mhka_tape(Tape& tape, const StreamIds& in, Tape::Id mask,
                    Tape::Id mask_t, const BlockParamIds& block,
                    const KatConfig& config);

StreamIds kat_block_tape(Tape& tape, const StreamIds& in, Tape::Id mask,
                         Tape::Id mask_t, const BlockParamIds& block,
                         const KatConfig& config,
                         const ForwardOptions& opts = {});

// The N blocks, block s consuming mask M(delta_s).
StreamIds kat_blocks_tape(Tape& tape, const StreamIds& in,
                          const MaskStack& masks, const ParamIds& params,
                          const KatConfig& config,
                          const ForwardOptions& opts = {});

struct ForwardIds {
  Tape::Id logits;
  StreamIds streams;
};

// Embedding -> blocks -> classifier head. No positional embedding is added;
// spatial structure enters only through the masks.
ForwardIds kat_forward_tape(Tape& tape, const Tensor& features,
                            const MaskStack& masks, const ParamIds& params,
                            const KatConfig& config,
                            const ForwardOptions& opts = {});

// Standard token self-attention stack over [cls; patches], used by the cost
// bench as the "without kernels" contrast.
Tape::Id sa_blocks_tape(Tape& tape, Tape::Id tokens,
                        const std::vector<BlockParamIds>& blocks,
                        const KatConfig& config);

// ---- value-level surfaces (build a private tape) ----

// Single-head kernel attention: information summary flow, information
// distribution flow and the classification-token flow. No output projection.
std::tuple<Tensor, Tensor, Tensor> kernel_attention(
    const Tensor& x, const Tensor& kt, const Tensor& c, const Tensor& mask,
    const FlowProj& proj, double tau);

std::tuple<Tensor, Tensor, Tensor> multi_head_ka(const Tensor& x,
                                                 const Tensor& kt,
                                                 const Tensor& c,
                                                 const Tensor& mask,
                                                 const BlockParams& block,
                                                 const KatConfig& config);

std::tuple<Tensor, Tensor, Tensor> kat_block(const Tensor& x, const Tensor& kt,
                                             const Tensor& c,
                                             const Tensor& mask,
                                             const BlockParams& block,
                                             const KatConfig& config);

struct ForwardResult {
  Tensor x, kt, c;
  std::vector<double> logits;
};

std::vector<double> kat_forward(const FeatureBag& bag, const MaskStack& masks,
                                const KatParams& params,
                                const KatConfig& config);
ForwardResult kat_forward_full(const FeatureBag& bag, const MaskStack& masks,
                               const KatParams& params,
                               const KatConfig& config);

}  // namespace kat
