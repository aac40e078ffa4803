#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kat/bag.hpp"
#include "kat/metrics.hpp"
#include "kat/model.hpp"

namespace kat {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 0.0;  // decoupled
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 8;  // bags per step, gradients averaged
  std::uint64_t seed = 42;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m, v;

  static AdamState like(const KatParams& params);
};

// Standard Adam with bias correction plus optional decoupled weight decay.
// t is the 1-based step index.
void adam_step_tensors(const std::vector<Tensor*>& params,
                       const std::vector<Tensor>& grads, AdamState& state,
                       std::size_t t, const TrainConfig& config);
void adam_step(KatParams& params, const std::vector<Tensor>& grads,
               AdamState& state, std::size_t t, const TrainConfig& config);

std::vector<Tensor*> param_tensors(KatParams& params);  // enumeration order
std::vector<Tape::Id> flat_param_ids(const ParamIds& ids);

enum class MaskMode { kGaussian, kOnes };

struct PreparedBag {
  FeatureBag bag;
  AnchorSet anchors;
  MaskStack masks;
};
using PreparedDataset = std::vector<PreparedBag>;

PreparedBag prepare_bag(FeatureBag bag, std::size_t nk_bar,
                        std::size_t n_scales, std::uint64_t seed,
                        MaskMode mode = MaskMode::kGaussian,
                        const std::vector<double>& delta_override = {});

// Loads every bag of one split from a manifest and builds its mask stack.
PreparedDataset prepare_split(const DatasetManifest& manifest, Split split,
                              std::size_t nk_bar, std::size_t n_scales,
                              std::uint64_t seed,
                              MaskMode mode = MaskMode::kGaussian,
                              const std::vector<double>& delta_override = {});

// Forward pass posteriors and cross-entropy loss for one bag.
struct BagEval {
  std::vector<double> posterior;
  double loss = 0.0;
};
BagEval eval_bag(const PreparedBag& pb, const KatParams& params,
                 const KatConfig& config);

// Bags fan out across up to max_threads (0 = OpenMP default); the metric
// reduction is serial in bag order, so results do not depend on thread count.
Metrics evaluate(const KatParams& params, const KatConfig& config,
                 const PreparedDataset& bags, int max_threads = 0);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  Metrics val;
};

struct TrainResult {
  KatParams params;  // best-validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

// Seeded-shuffle epochs with gradient averaging over batches; early stopping
// restores the best-validation-loss parameters once patience is exhausted.
// Each epoch appends one line to `log` when given.
TrainResult train(const PreparedDataset& train_bags,
                  const PreparedDataset& val_bags, const KatConfig& kat_config,
                  const TrainConfig& train_config, std::ostream* log = nullptr,
                  int eval_threads = 0);

void write_history_line(std::ostream& os, const EpochRecord& rec);

}  // namespace kat
