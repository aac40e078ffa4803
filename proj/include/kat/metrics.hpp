#pragma once

#include <cstdint>
#include <vector>

#include "kat/errors.hpp"

namespace kat {

struct Metrics {
  double accuracy = 0.0;
  double macro_auc = 0.0;
  double weighted_auc = 0.0;
  double mean_loss = 0.0;
  std::vector<double> per_class_auc;   // one-vs-rest; NaN when undefined
  std::vector<bool> class_present;     // class has at least one bag
  std::size_t n_items = 0;
};

// Rank-based (Mann-Whitney) AUC with midrank tie handling. Labels are 0/1;
// throws metric_error unless both classes occur.
double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels);

// Softmax posterior of one logit row.
std::vector<double> softmax_posterior(const std::vector<double>& logits);

// Accuracy (argmax, ties to the lowest class index), per-class one-vs-rest
// AUC, macro and prevalence-weighted means over the classes with a defined
// AUC. `losses` may be empty; then mean_loss is 0.
Metrics metrics_from_posteriors(
    const std::vector<std::vector<double>>& posteriors,
    const std::vector<std::uint32_t>& labels, std::size_t n_classes,
    const std::vector<double>& losses);

}  // namespace kat
