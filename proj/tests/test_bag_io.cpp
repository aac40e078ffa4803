#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "kat/bag.hpp"
#include "kat/rng.hpp"
#include "support/oracles.hpp"

using namespace kat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("kat_bag_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

FeatureBag random_bag(Rng& rng, std::size_t n_p, std::size_t d_f) {
  FeatureBag bag;
  bag.coords = oracle::random_grid(rng, n_p, 40);
  bag.d_f = d_f;
  bag.label = static_cast<std::uint32_t>(rng.below(3));
  bag.id = "test_bag";
  bag.features.resize(n_p * d_f);
  for (auto& f : bag.features) f = static_cast<float>(rng.normal());
  return bag;
}

}  // namespace

TEST_CASE("bag round trip is exact") {
  TempDir tmp;
  Rng rng(1);
  FeatureBag bag = random_bag(rng, 17, 9);
  const std::string path = (tmp.path / "test_bag.katb").string();
  write_bag(bag, path);
  FeatureBag back = read_bag(path);
  CHECK(back.coords.coords == bag.coords.coords);
  CHECK(back.features == bag.features);
  CHECK(back.label == bag.label);
  CHECK(back.d_f == bag.d_f);
  CHECK(back.id == "test_bag");
}

TEST_CASE("bag file layout: magic, offsets, size") {
  TempDir tmp;
  Rng rng(2);
  const std::size_t n_p = 11, d_f = 5;
  FeatureBag bag = random_bag(rng, n_p, d_f);
  const std::string path = (tmp.path / "layout.katb").string();
  write_bag(bag, path);

  CHECK(fs::file_size(path) == 4 * 4 + 4 + 8 * n_p + 4 * n_p * d_f);

  std::ifstream is(path, std::ios::binary);
  char head[20];
  is.read(head, 20);
  CHECK(std::string(head, 4) == "KATB");
  auto u32at = [&head](int off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(head[off])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(head[off + 1]))
            << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(head[off + 2]))
            << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(head[off + 3]))
            << 24);
  };
  CHECK(u32at(4) == 1);          // version
  CHECK(u32at(8) == n_p);
  CHECK(u32at(12) == d_f);
  CHECK(u32at(16) == bag.label);
}

TEST_CASE("bad magic and truncation are format errors naming the offset") {
  TempDir tmp;
  const std::string bad = (tmp.path / "bad.katb").string();
  {
    std::ofstream os(bad, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(read_bag(bad), format_error);

  Rng rng(3);
  FeatureBag bag = random_bag(rng, 4, 3);
  const std::string trunc = (tmp.path / "trunc.katb").string();
  write_bag(bag, trunc);
  fs::resize_file(trunc, 30);  // cut inside the coords block
  bool threw = false;
  try {
    read_bag(trunc);
  } catch (const format_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  CHECK(threw);
  CHECK_THROWS_AS(read_bag((tmp.path / "missing.katb").string()), data_error);
}

TEST_CASE("golden bag file: frozen bytes parse to the frozen content") {
  const std::string path = std::string(KAT_TEST_DATA_DIR) + "/golden.katb";
  // Every byte of the 68-byte golden file, per the documented layout.
  const unsigned char expect[68] = {
      'K',  'A',  'T',  'B',  0x01, 0x00, 0x00, 0x00,  // magic, version
      0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,  // n_p, d_f
      0x01, 0x00, 0x00, 0x00,                          // label
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,  // (0,0)
      0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,  // (1,2)
      0x03, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00,  // (3,1)
      0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0xa0, 0xbf,  // 0.5, -1.25
      0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x60, 0x40,  // 2.0, 3.5
      0x00, 0x00, 0x40, 0xbf, 0x00, 0x00, 0x00, 0x3e,  // -0.75, 0.125
  };
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 68);
  for (std::size_t i = 0; i < 68; ++i) CHECK(bytes[i] == expect[i]);

  FeatureBag bag = read_bag(path);
  CHECK(bag.n_p() == 3);
  CHECK(bag.d_f == 2);
  CHECK(bag.label == 1);
  CHECK(bag.coords.coords ==
        std::vector<Coord>{{0, 0}, {1, 2}, {3, 1}});
  CHECK(bag.features ==
        std::vector<float>{0.5f, -1.25f, 2.0f, 3.5f, -0.75f, 0.125f});
}

TEST_CASE("synthetic dataset is a pure function of its config") {
  SynthConfig cfg;
  cfg.n_bags = 12;
  cfg.d_f = 8;
  cfg.side_min = 8;
  cfg.side_max = 12;
  cfg.seed = 99;
  SynthDataset a = synth_dataset(cfg);
  SynthDataset b = synth_dataset(cfg);
  REQUIRE(a.bags.size() == 12);
  for (std::size_t i = 0; i < a.bags.size(); ++i) {
    CHECK(a.bags[i].coords.coords == b.bags[i].coords.coords);
    CHECK(a.bags[i].features == b.bags[i].features);
    CHECK(a.bags[i].label == b.bags[i].label);
  }
}

TEST_CASE("synthetic labels round-robin within one of each other") {
  SynthConfig cfg;
  cfg.n_bags = 11;
  cfg.n_classes = 3;
  cfg.d_f = 4;
  cfg.side_min = 6;
  cfg.side_max = 8;
  SynthDataset ds = synth_dataset(cfg);
  std::vector<std::size_t> counts(3, 0);
  for (const auto& bag : ds.bags) ++counts[bag.label];
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  CHECK(*mx - *mn <= 1);
  for (const auto& bag : ds.bags) CHECK_NOTHROW(bag.coords.validate());
}

TEST_CASE("motif lifts the mean feature inside the disc by its strength") {
  SynthConfig cfg;
  cfg.n_bags = 200;  // 100 bags of class 1
  cfg.n_classes = 2;
  cfg.d_f = 64;
  cfg.seed = 42;
  SynthDataset ds = synth_dataset(cfg);

  std::vector<double> mean_in(cfg.d_f, 0.0), mean_out(cfg.d_f, 0.0);
  std::size_t count_in = 0, count_out = 0;
  const double r2 = static_cast<double>(cfg.motif_radius * cfg.motif_radius);
  for (std::size_t b = 0; b < ds.bags.size(); ++b) {
    const auto& bag = ds.bags[b];
    if (bag.label != 1) continue;
    REQUIRE(ds.motif_centers[b].has_value());
    const Coord center = *ds.motif_centers[b];
    for (std::size_t i = 0; i < bag.n_p(); ++i) {
      const bool inside = sq_dist(bag.coords.coords[i], center) <= r2;
      auto& acc = inside ? mean_in : mean_out;
      for (std::size_t j = 0; j < cfg.d_f; ++j)
        acc[j] += bag.features[i * cfg.d_f + j];
      (inside ? count_in : count_out) += 1;
    }
  }
  double norm_in = 0.0, norm_out = 0.0;
  for (std::size_t j = 0; j < cfg.d_f; ++j) {
    norm_in += std::pow(mean_in[j] / count_in, 2);
    norm_out += std::pow(mean_out[j] / count_out, 2);
  }
  norm_in = std::sqrt(norm_in);
  norm_out = std::sqrt(norm_out);
  CHECK(std::abs(norm_in - norm_out - cfg.motif_strength) <
        0.15 * cfg.motif_strength);
}

TEST_CASE("class 0 has no motif") {
  SynthConfig cfg;
  cfg.n_bags = 6;
  cfg.d_f = 4;
  SynthDataset ds = synth_dataset(cfg);
  for (std::size_t b = 0; b < ds.bags.size(); ++b)
    CHECK(ds.motif_centers[b].has_value() == (ds.bags[b].label >= 1));
}

TEST_CASE("split 100 bags at 6:1:3 gives 60/10/30") {
  SynthConfig cfg;
  cfg.n_bags = 100;
  cfg.d_f = 4;
  cfg.side_min = 6;
  cfg.side_max = 8;
  SynthDataset ds = synth_dataset(cfg);
  DatasetManifest m = split_dataset(ds.bags, {6, 1, 3}, 7, 2, 4);
  std::array<std::size_t, 3> counts{};
  for (const auto& e : m.entries) ++counts[static_cast<int>(e.split)];
  CHECK(counts[0] == 60);
  CHECK(counts[1] == 10);
  CHECK(counts[2] == 30);
}

TEST_CASE("split ratios (1,0,0) put everything in train") {
  SynthConfig cfg;
  cfg.n_bags = 9;
  cfg.d_f = 4;
  cfg.side_min = 6;
  cfg.side_max = 8;
  SynthDataset ds = synth_dataset(cfg);
  DatasetManifest m = split_dataset(ds.bags, {1, 0, 0}, 7, 2, 4);
  for (const auto& e : m.entries) CHECK(e.split == Split::kTrain);
}

TEST_CASE("split is a stratified partition within one bag of the ratios") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    SynthConfig cfg;
    cfg.n_bags = 40 + rng.below(60);
    cfg.n_classes = 2 + rng.below(3);
    cfg.d_f = 4;
    cfg.side_min = 6;
    cfg.side_max = 8;
    cfg.seed = trial;
    SynthDataset ds = synth_dataset(cfg);
    DatasetManifest m = split_dataset(ds.bags, {6, 1, 3}, trial,
                                      cfg.n_classes, cfg.d_f);
    REQUIRE(m.entries.size() == ds.bags.size());  // partition: each bag once
    std::vector<std::array<double, 3>> per_class(cfg.n_classes,
                                                 {0.0, 0.0, 0.0});
    std::vector<double> class_total(cfg.n_classes, 0.0);
    for (const auto& e : m.entries) {
      per_class[e.label][static_cast<int>(e.split)] += 1.0;
      class_total[e.label] += 1.0;
    }
    const std::array<double, 3> want{0.6, 0.1, 0.3};
    for (std::size_t c = 0; c < cfg.n_classes; ++c)
      for (int s = 0; s < 3; ++s)
        CHECK(std::abs(per_class[c][s] - want[s] * class_total[c]) <=
              1.0 + 1e-9);
  }
}

TEST_CASE("small classes degrade with a warning") {
  SynthConfig cfg;
  cfg.n_bags = 4;
  cfg.n_classes = 4;  // one bag per class
  cfg.d_f = 4;
  cfg.side_min = 6;
  cfg.side_max = 8;
  SynthDataset ds = synth_dataset(cfg);
  std::vector<std::string> warnings;
  DatasetManifest m = split_dataset(ds.bags, {6, 1, 3}, 7, 4, 4, &warnings);
  CHECK(warnings.size() == 4);
  CHECK(m.entries.size() == 4);
}

TEST_CASE("manifest round trip and missing-file validation") {
  TempDir tmp;
  SynthConfig cfg;
  cfg.n_bags = 6;
  cfg.d_f = 4;
  cfg.side_min = 6;
  cfg.side_max = 8;
  SynthDataset ds = synth_dataset(cfg);
  for (const auto& bag : ds.bags)
    write_bag(bag, (tmp.path / (bag.id + ".katb")).string());
  DatasetManifest m = split_dataset(ds.bags, {6, 1, 3}, 7, 2, 4);
  const std::string mpath = (tmp.path / "manifest.tsv").string();
  write_manifest(m, mpath);

  DatasetManifest back = read_manifest(mpath);
  CHECK(back.n_classes == 2);
  CHECK(back.d_f == 4);
  REQUIRE(back.entries.size() == m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(back.entries[i].path == m.entries[i].path);
    CHECK(back.entries[i].split == m.entries[i].split);
    CHECK(back.entries[i].label == m.entries[i].label);
  }

  fs::remove(tmp.path / "bag_0000.katb");
  CHECK_THROWS_AS(read_manifest(mpath), data_error);
}
