#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "kat/train.hpp"
#include "support/oracles.hpp"

using namespace kat;

namespace {

// Small, cleanly separable two-class dataset.
PreparedDataset make_bags(std::size_t n, std::size_t d_f, double strength,
                          std::uint64_t seed, std::size_t n_scales,
                          MaskMode mode = MaskMode::kGaussian) {
  SynthConfig cfg;
  cfg.n_bags = n;
  cfg.n_classes = 2;
  cfg.d_f = d_f;
  cfg.side_min = 8;
  cfg.side_max = 12;
  cfg.motif_radius = 3;
  cfg.motif_strength = strength;
  cfg.seed = seed;
  SynthDataset ds = synth_dataset(cfg);
  PreparedDataset out;
  for (auto& bag : ds.bags)
    out.push_back(prepare_bag(std::move(bag), 8, n_scales, seed, mode));
  return out;
}

KatConfig tiny_config(std::size_t d_f) {
  KatConfig cfg;
  cfg.d_f = d_f;
  cfg.d_e = 16;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.n_classes = 2;
  return cfg;
}

}  // namespace

TEST_CASE("eight-bag overfit reaches training accuracy 1.0") {
  // Validating on the training bags makes the restored checkpoint the
  // training optimum, which is what an overfit sanity check is about.
  PreparedDataset train_bags = make_bags(8, 16, 3.0, 3, 2);
  KatConfig cfg = tiny_config(16);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 200;
  tc.patience = 200;
  tc.batch_size = 4;
  tc.seed = 7;
  TrainResult result = train(train_bags, train_bags, cfg, tc);
  Metrics final_train = evaluate(result.params, cfg, train_bags);
  CHECK(final_train.accuracy == 1.0);
  CHECK(result.history.size() <= 200);
}

TEST_CASE("training is bit-deterministic under the seed") {
  PreparedDataset train_bags = make_bags(6, 8, 2.5, 11, 2);
  PreparedDataset val_bags = make_bags(4, 8, 2.5, 12, 2);
  KatConfig cfg = tiny_config(8);
  TrainConfig tc;
  tc.learning_rate = 5e-4;
  tc.max_epochs = 5;
  tc.patience = 5;
  tc.batch_size = 2;
  tc.seed = 21;

  std::ostringstream log_a, log_b;
  TrainResult a = train(train_bags, val_bags, cfg, tc, &log_a);
  TrainResult b = train(train_bags, val_bags, cfg, tc, &log_b);
  CHECK(log_a.str() == log_b.str());
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    // Bit-for-bit equality of the recorded losses.
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_loss == b.history[e].val_loss);
  }
  std::vector<const Tensor*> ta, tb;
  a.params.for_each(
      [&ta](const std::string&, const Tensor& t) { ta.push_back(&t); });
  b.params.for_each(
      [&tb](const std::string&, const Tensor& t) { tb.push_back(&t); });
  for (std::size_t p = 0; p < ta.size(); ++p)
    CHECK(ta[p]->values() == tb[p]->values());
}

TEST_CASE("restored checkpoint is no worse than the final epoch") {
  PreparedDataset train_bags = make_bags(10, 8, 1.0, 31, 2);
  PreparedDataset val_bags = make_bags(6, 8, 1.0, 32, 2);
  KatConfig cfg = tiny_config(8);
  TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.max_epochs = 12;
  tc.patience = 3;
  tc.seed = 5;
  TrainResult result = train(train_bags, val_bags, cfg, tc);
  REQUIRE(!result.history.empty());
  CHECK(result.best_val_loss <= result.history.back().val_loss + 1e-15);
  CHECK(result.best_epoch >= 1);
  // The restored parameters reproduce the recorded best validation loss.
  Metrics m = evaluate(result.params, cfg, val_bags);
  CHECK(m.mean_loss == doctest::Approx(result.best_val_loss).epsilon(1e-12));
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
  PreparedDataset train_bags = make_bags(6, 8, 0.1, 41, 2);
  PreparedDataset val_bags = make_bags(4, 8, 0.1, 42, 2);
  KatConfig cfg = tiny_config(8);
  TrainConfig tc;
  tc.learning_rate = 0.5;  // wild steps so validation degrades quickly
  tc.max_epochs = 100;
  tc.patience = 2;
  tc.seed = 9;
  TrainResult result = train(train_bags, val_bags, cfg, tc);
  CHECK(result.history.size() < 100);
  CHECK(result.history.size() ==
        result.best_epoch + tc.patience);
}

TEST_CASE("evaluate is independent of the thread cap") {
  PreparedDataset bags = make_bags(10, 8, 2.0, 51, 2);
  KatConfig cfg = tiny_config(8);
  cfg.n_blocks = 2;
  KatParams params = init_params(cfg, 3);
  Metrics serial = evaluate(params, cfg, bags, 1);
  Metrics parallel = evaluate(params, cfg, bags, 4);
  CHECK(serial.accuracy == parallel.accuracy);
  CHECK(serial.mean_loss == parallel.mean_loss);
  CHECK(serial.macro_auc == parallel.macro_auc);
}

TEST_CASE("empty splits are data errors") {
  PreparedDataset bags = make_bags(4, 8, 1.0, 61, 2);
  KatConfig cfg = tiny_config(8);
  TrainConfig tc;
  CHECK_THROWS_AS(train({}, bags, cfg, tc), data_error);
  CHECK_THROWS_AS(train(bags, {}, cfg, tc), data_error);
  KatParams params = init_params(cfg, 1);
  CHECK_THROWS_AS(evaluate(params, cfg, {}), data_error);
}

TEST_CASE("history lines are machine-parsable key=value pairs") {
  EpochRecord rec;
  rec.epoch = 3;
  rec.train_loss = 0.25;
  rec.val_loss = 0.5;
  rec.val.accuracy = 0.75;
  rec.val.macro_auc = 0.8;
  rec.val.weighted_auc = 0.8;
  std::ostringstream os;
  write_history_line(os, rec);
  const std::string line = os.str();
  CHECK(line.find("epoch=3") != std::string::npos);
  CHECK(line.find("train_loss=0.25") != std::string::npos);
  CHECK(line.find("val_loss=0.5") != std::string::npos);
  CHECK(line.find("val_acc=0.75") != std::string::npos);
  CHECK(line.back() == '\n');
}
