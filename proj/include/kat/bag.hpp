#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kat/masks.hpp"
#include "kat/tensor.hpp"

namespace kat {

// One slide's worth of tokens. Features live in the f32 storage domain and
// are promoted to f64 tensors only when entering the model.
struct FeatureBag {
  PatchGrid coords;
  std::vector<float> features;  // n_p x d_f row-major
  std::size_t d_f = 0;
  std::uint32_t label = 0;
  std::string id;

  std::size_t n_p() const { return coords.size(); }
  Tensor features_f64() const;
  void validate() const;
};

// KATB binary layout, little-endian:
//   offset 0   magic "KATB"
//   offset 4   version u32 (= 1)
//   offset 8   n_p u32
//   offset 12  d_f u32
//   offset 16  label u32
//   offset 20  coords, n_p pairs of i32 (m, n)
//   offset 20 + 8*n_p  features, n_p*d_f f32 row-major
void write_bag(const FeatureBag& bag, const std::string& path);
FeatureBag read_bag(const std::string& path);

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
  std::string path;  // relative to the manifest file
  Split split = Split::kTrain;
  std::uint32_t label = 0;
};

// Text manifest: header "classes=<C> dim=<d_f>", then one
// "<path>\t<split>\t<label>" line per bag.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t n_classes = 0;
  std::size_t d_f = 0;
  std::string base_dir;  // set on load; used to resolve entry paths

  std::string resolve(const ManifestEntry& e) const;
  std::vector<std::size_t> indices_of(Split s) const;
};

void write_manifest(const DatasetManifest& m, const std::string& path);
// Verifies every referenced bag file exists.
DatasetManifest read_manifest(const std::string& path);

// Synthetic stand-in for the out-of-scope CNN feature extractor.
struct SynthConfig {
  std::size_t n_bags = 512;
  std::size_t n_classes = 2;
  std::size_t d_f = 64;
  std::int64_t side_min = 15;
  std::int64_t side_max = 28;
  double fill = 0.5;            // target fraction of grid cells made tissue
  std::int64_t motif_radius = 4;
  double motif_strength = 2.0;
  double noise_std = 1.0;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthDataset {
  std::vector<FeatureBag> bags;
  // Motif disc center per bag (empty for class 0); test instrumentation only,
  // never persisted.
  std::vector<std::optional<Coord>> motif_centers;
};

// Tissue shapes are seeded random-walk unions of grid cells; class y >= 1
// adds strength * u_y (a fixed unit direction per class) on a disc of the
// configured radius around a random tissue patch. Labels round-robin.
SynthDataset synth_dataset(const SynthConfig& config);

// Stratified split with seeded shuffle and largest-remainder apportionment
// per class. Ratios are normalized; order is (train, val, test). Classes too
// small to reach every split are reported through `warnings`.
DatasetManifest split_dataset(const std::vector<FeatureBag>& bags,
                              const std::array<double, 3>& ratios,
                              std::uint64_t seed, std::size_t n_classes,
                              std::size_t d_f,
                              std::vector<std::string>* warnings = nullptr);

}  // namespace kat
