#include "kat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kat {

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw dimension_error("roc_auc: scores and labels sizes differ");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw metric_error("roc_auc: needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Midranks over tied groups, then the Mann-Whitney U statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]]) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double u = rank_sum_pos -
                   0.5 * static_cast<double>(n_pos) *
                       (static_cast<double>(n_pos) + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<double> softmax_posterior(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] - mx);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

Metrics metrics_from_posteriors(
    const std::vector<std::vector<double>>& posteriors,
    const std::vector<std::uint32_t>& labels, std::size_t n_classes,
    const std::vector<double>& losses) {
  if (posteriors.empty()) throw data_error("metrics: empty split");
  if (posteriors.size() != labels.size())
    throw dimension_error("metrics: posterior/label count mismatch");

  Metrics m;
  m.n_items = posteriors.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    const auto& p = posteriors[i];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
      if (p[c] > p[arg]) arg = c;  // ties keep the lowest index
    if (arg == labels[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n_items);

  std::vector<std::size_t> counts(n_classes, 0);
  for (auto l : labels) {
    if (l >= n_classes) throw data_error("metrics: label out of range");
    ++counts[l];
  }
  m.per_class_auc.assign(n_classes,
                         std::numeric_limits<double>::quiet_NaN());
  m.class_present.assign(n_classes, false);
  double macro_sum = 0.0, weighted_sum = 0.0;
  std::size_t defined = 0, defined_count = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    m.class_present[c] = counts[c] > 0;
    if (counts[c] == 0 || counts[c] == m.n_items) continue;  // AUC undefined
    std::vector<double> scores(m.n_items);
    std::vector<int> bin(m.n_items);
    for (std::size_t i = 0; i < m.n_items; ++i) {
      scores[i] = posteriors[i][c];
      bin[i] = labels[i] == c ? 1 : 0;
    }
    const double auc = roc_auc(scores, bin);
    m.per_class_auc[c] = auc;
    macro_sum += auc;
    weighted_sum += auc * static_cast<double>(counts[c]);
    ++defined;
    defined_count += counts[c];
  }
  if (defined > 0) {
    m.macro_auc = macro_sum / static_cast<double>(defined);
    m.weighted_auc = weighted_sum / static_cast<double>(defined_count);
  } else {
    m.macro_auc = std::numeric_limits<double>::quiet_NaN();
    m.weighted_auc = std::numeric_limits<double>::quiet_NaN();
  }

  if (!losses.empty()) {
    if (losses.size() != m.n_items)
      throw dimension_error("metrics: loss count mismatch");
    m.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) /
                  static_cast<double>(m.n_items);
  }
  return m;
}

}  // namespace kat
