#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kat/bag.hpp"
#include "kat/model.hpp"
#include "kat/train.hpp"

namespace kat {

// Flat "key = value" settings merged from a config file and command-line
// overrides. Unknown keys are rejected; every run writes the fully resolved
// form beside its outputs.
struct RunConfig {
  // model
  std::size_t d_e = 256;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 8;
  std::size_t d_ff = 0;  // 0 -> 4 * d_e
  std::size_t n_classes = 0;  // 0 -> taken from the manifest
  double dropout = 0.0;
  bool separate_qkv = false;
  bool cls_attn_residual = true;

  // masks
  std::size_t nk_bar = 144;
  std::size_t scales = 0;  // 0 -> n_blocks
  std::vector<double> deltas;  // empty -> nk_bar schedule
  std::string mask_mode = "gaussian";  // or "ones"

  // training
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 0.0;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 8;

  // split
  std::array<double, 3> split_ratios = {6.0, 1.0, 3.0};

  // seeds; the specific ones fall back to `seed`
  std::uint64_t seed = 42;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::uint64_t> mask_seed;
  std::optional<std::uint64_t> train_seed;

  // synthesis
  std::size_t synth_bags = 512;
  std::size_t synth_classes = 2;
  std::size_t synth_df = 64;
  std::int64_t side_min = 15;
  std::int64_t side_max = 28;
  double fill = 0.5;
  std::int64_t motif_radius = 4;
  double motif_strength = 2.0;
  double noise_std = 1.0;

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);

  KatConfig kat_config(std::size_t d_f, std::size_t manifest_classes) const;
  TrainConfig train_config() const;
  SynthConfig synth_config() const;
  MaskMode mask_mode_enum() const;
  std::size_t resolved_scales() const { return scales ? scales : n_blocks; }
  std::uint64_t seed_for_synth() const { return synth_seed.value_or(seed); }
  std::uint64_t seed_for_masks() const { return mask_seed.value_or(seed); }
  std::uint64_t seed_for_train() const { return train_seed.value_or(seed); }

  void write_resolved(std::ostream& os) const;
  void write_resolved_file(const std::string& path) const;
};

}  // namespace kat
