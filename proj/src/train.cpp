#include "kat/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kat {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw config_error("train: learning rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw config_error("train: betas must lie in [0, 1)");
  if (!(eps_adam > 0.0)) throw config_error("train: eps_adam must be positive");
  if (patience < 1) throw config_error("train: patience must be >= 1");
  if (max_epochs < 1) throw config_error("train: max_epochs must be >= 1");
  if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
}

std::vector<Tensor*> param_tensors(KatParams& params) {
  std::vector<Tensor*> out;
  params.for_each([&out](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<Tape::Id> flat_param_ids(const ParamIds& ids) {
  std::vector<Tape::Id> out{ids.embed_w, ids.embed_b};
  for (const auto& b : ids.blocks) {
    for (const auto& set : b.proj) {
      out.push_back(set[0]);
      out.push_back(set[1]);
      out.push_back(set[2]);
    }
    out.insert(out.end(), {b.wo, b.ln1_gamma, b.ln1_beta, b.ln2_gamma,
                           b.ln2_beta, b.ff1_w, b.ff1_b, b.ff2_w, b.ff2_b});
  }
  out.insert(out.end(),
             {ids.kernel_seed, ids.cls_token, ids.head_w, ids.head_b});
  return out;
}

AdamState AdamState::like(const KatParams& params) {
  AdamState s;
  params.for_each([&s](const std::string&, const Tensor& t) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  });
  return s;
}

void adam_step_tensors(const std::vector<Tensor*>& params,
                       const std::vector<Tensor>& grads, AdamState& state,
                       std::size_t t, const TrainConfig& config) {
  config.validate();
  if (t < 1) throw contract_error("adam: step index starts at 1");
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw contract_error("adam: parameter/gradient/state count mismatch");
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    if (!w.same_shape(g) || !w.same_shape(state.m[p]))
      throw contract_error("adam: shape mismatch at parameter " +
                           std::to_string(p));
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= config.learning_rate *
              (mh / (std::sqrt(vh) + config.eps_adam) +
               config.weight_decay * w[i]);
    }
  }
}

void adam_step(KatParams& params, const std::vector<Tensor>& grads,
               AdamState& state, std::size_t t, const TrainConfig& config) {
  adam_step_tensors(param_tensors(params), grads, state, t, config);
}

PreparedBag prepare_bag(FeatureBag bag, std::size_t nk_bar,
                        std::size_t n_scales, std::uint64_t seed,
                        MaskMode mode,
                        const std::vector<double>& delta_override) {
  PreparedBag pb;
  auto built = mode == MaskMode::kGaussian
                   ? build_mask_stack(bag.coords, nk_bar, n_scales, seed,
                                      delta_override)
                   : build_ones_mask_stack(bag.coords, nk_bar, n_scales, seed);
  pb.anchors = std::move(built.first);
  pb.masks = std::move(built.second);
  pb.bag = std::move(bag);
  return pb;
}

PreparedDataset prepare_split(const DatasetManifest& manifest, Split split,
                              std::size_t nk_bar, std::size_t n_scales,
                              std::uint64_t seed, MaskMode mode,
                              const std::vector<double>& delta_override) {
  PreparedDataset out;
  for (std::size_t i : manifest.indices_of(split)) {
    FeatureBag bag = read_bag(manifest.resolve(manifest.entries[i]));
    if (bag.d_f != manifest.d_f)
      throw data_error("bag " + bag.id + ": d_f " + std::to_string(bag.d_f) +
                       " does not match manifest " +
                       std::to_string(manifest.d_f));
    out.push_back(
        prepare_bag(std::move(bag), nk_bar, n_scales, seed, mode,
                    delta_override));
  }
  return out;
}

BagEval eval_bag(const PreparedBag& pb, const KatParams& params,
                 const KatConfig& config) {
  Tape tape;
  ParamIds ids = register_params(tape, params);
  ForwardIds fwd =
      kat_forward_tape(tape, pb.bag.features_f64(), pb.masks, ids, config);
  Tape::Id loss = tape.cross_entropy(fwd.logits, pb.bag.label);
  BagEval out;
  out.posterior = softmax_posterior(tape.value(fwd.logits).values());
  out.loss = tape.value(loss)[0];
  return out;
}

namespace {

int resolve_threads(int max_threads) {
#ifdef _OPENMP
  int t = omp_get_max_threads();
  if (max_threads > 0) t = std::min(t, max_threads);
  return std::max(1, t);
#else
  (void)max_threads;
  return 1;
#endif
}

}  // namespace

Metrics evaluate(const KatParams& params, const KatConfig& config,
                 const PreparedDataset& bags, int max_threads) {
  if (bags.empty()) throw data_error("evaluate: empty split");
  const std::size_t n = bags.size();
  std::vector<std::vector<double>> posteriors(n);
  std::vector<double> losses(n);
  std::vector<std::uint32_t> labels(n);
  const int threads = resolve_threads(max_threads);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      BagEval e = eval_bag(bags[i], params, config);
      posteriors[i] = std::move(e.posterior);
      losses[i] = e.loss;
      labels[i] = bags[i].bag.label;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return metrics_from_posteriors(posteriors, labels, config.n_classes, losses);
}

void write_history_line(std::ostream& os, const EpochRecord& rec) {
  os.precision(17);
  os << "epoch=" << rec.epoch << "\ttrain_loss=" << rec.train_loss
     << "\tval_loss=" << rec.val_loss << "\tval_acc=" << rec.val.accuracy
     << "\tval_mauc=" << rec.val.macro_auc
     << "\tval_wauc=" << rec.val.weighted_auc << "\n";
}

TrainResult train(const PreparedDataset& train_bags,
                  const PreparedDataset& val_bags, const KatConfig& kat_config,
                  const TrainConfig& train_config, std::ostream* log,
                  int eval_threads) {
  kat_config.validate();
  train_config.validate();
  if (train_bags.empty()) throw data_error("train: empty training split");
  if (val_bags.empty()) throw data_error("train: empty validation split");

  KatParams params = init_params(kat_config, train_config.seed);
  AdamState state = AdamState::like(params);
  Rng dropout_rng(Rng::mix(train_config.seed, 0xd509));

  TrainResult result;
  KatParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t step = 0;

  std::vector<std::size_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(train_config.seed, epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t batch =
          std::min(train_config.batch_size, order.size() - pos);
      std::vector<Tensor> grad_sum;
      params.for_each([&grad_sum](const std::string&, const Tensor& t) {
        grad_sum.emplace_back(t.shape());
      });
      for (std::size_t b = 0; b < batch; ++b) {
        const PreparedBag& pb = train_bags[order[pos + b]];
        Tape tape;
        ParamIds ids = register_params(tape, params);
        ForwardOptions opts;
        opts.training = true;
        opts.dropout_rng = &dropout_rng;
        ForwardIds fwd = kat_forward_tape(tape, pb.bag.features_f64(),
                                          pb.masks, ids, kat_config, opts);
        Tape::Id loss = tape.cross_entropy(fwd.logits, pb.bag.label);
        loss_sum += tape.value(loss)[0];
        tape.backward(loss);
        const auto flat = flat_param_ids(ids);
        for (std::size_t p = 0; p < flat.size(); ++p) {
          const Tensor& g = tape.grad(flat[p]);
          for (std::size_t i = 0; i < g.numel(); ++i) grad_sum[p][i] += g[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(batch);
      for (auto& g : grad_sum)
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= inv;
      adam_step(params, grad_sum, state, ++step, train_config);
      pos += batch;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val = evaluate(params, kat_config, val_bags, eval_threads);
    rec.val_loss = rec.val.mean_loss;
    if (log) write_history_line(*log, rec);
    result.history.push_back(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = params;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= train_config.patience) break;
  }

  result.params = std::move(best);
  result.best_epoch = best_epoch;
  result.best_val_loss = best_val;
  return result;
}

}  // namespace kat
