#include "kat/bag.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kat/rng.hpp"

namespace fs = std::filesystem;

namespace kat {

namespace {

constexpr char kBagMagic[4] = {'K', 'A', 'T', 'B'};
constexpr std::uint32_t kBagVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& os, std::int32_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is, std::size_t offset,
                      const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw format_error(std::string("bag file: truncated reading ") + what +
                       " at offset " + std::to_string(offset));
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::int32_t get_i32(std::istream& is, std::size_t offset, const char* what) {
  return static_cast<std::int32_t>(get_u32(is, offset, what));
}

float get_f32(std::istream& is, std::size_t offset, const char* what) {
  std::uint32_t bits = get_u32(is, offset, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

Tensor FeatureBag::features_f64() const {
  Tensor t({n_p(), d_f});
  for (std::size_t i = 0; i < features.size(); ++i)
    t[i] = static_cast<double>(features[i]);
  return t;
}

void FeatureBag::validate() const {
  coords.validate();
  if (features.size() != n_p() * d_f)
    throw data_error("bag " + id + ": feature matrix is " +
                     std::to_string(features.size()) + " values, expected " +
                     std::to_string(n_p() * d_f));
}

void write_bag(const FeatureBag& bag, const std::string& path) {
  bag.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for writing: " + path);
  os.write(kBagMagic, 4);
  put_u32(os, kBagVersion);
  put_u32(os, static_cast<std::uint32_t>(bag.n_p()));
  put_u32(os, static_cast<std::uint32_t>(bag.d_f));
  put_u32(os, bag.label);
  for (const Coord& c : bag.coords.coords) {
    put_i32(os, static_cast<std::int32_t>(c.m));
    put_i32(os, static_cast<std::int32_t>(c.n));
  }
  for (float f : bag.features) put_f32(os, f);
  if (!os) throw data_error("write failed: " + path);
}

FeatureBag read_bag(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kBagMagic, 4) != 0)
    throw format_error("bag file " + path + ": bad magic at offset 0");
  const std::uint32_t version = get_u32(is, 4, "version");
  if (version != kBagVersion)
    throw format_error("bag file " + path + ": unsupported version " +
                       std::to_string(version) + " at offset 4");
  FeatureBag bag;
  const std::uint32_t n_p = get_u32(is, 8, "n_p");
  const std::uint32_t d_f = get_u32(is, 12, "d_f");
  bag.label = get_u32(is, 16, "label");
  bag.d_f = d_f;
  bag.coords.coords.resize(n_p);
  std::size_t off = 20;
  for (std::uint32_t i = 0; i < n_p; ++i) {
    bag.coords.coords[i].m = get_i32(is, off, "coords");
    bag.coords.coords[i].n = get_i32(is, off + 4, "coords");
    off += 8;
  }
  bag.features.resize(static_cast<std::size_t>(n_p) * d_f);
  for (auto& f : bag.features) {
    f = get_f32(is, off, "features");
    off += 4;
  }
  bag.id = fs::path(path).stem().string();
  bag.validate();
  return bag;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw format_error("unknown split tag: " + name);
}

std::string DatasetManifest::resolve(const ManifestEntry& e) const {
  fs::path p(e.path);
  if (p.is_absolute() || base_dir.empty()) return e.path;
  return (fs::path(base_dir) / p).string();
}

std::vector<std::size_t> DatasetManifest::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == s) out.push_back(i);
  return out;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open for writing: " + path);
  os << "classes=" << m.n_classes << " dim=" << m.d_f << "\n";
  for (const auto& e : m.entries)
    os << e.path << "\t" << split_name(e.split) << "\t" << e.label << "\n";
  if (!os) throw data_error("write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open: " + path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::string header;
  if (!std::getline(is, header))
    throw format_error("manifest " + path + ": empty file");
  if (std::sscanf(header.c_str(), "classes=%zu dim=%zu", &m.n_classes,
                  &m.d_f) != 2)
    throw format_error("manifest " + path + ": bad header '" + header + "'");
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string split_tag, label_str;
    if (!std::getline(ls, e.path, '\t') || !std::getline(ls, split_tag, '\t') ||
        !std::getline(ls, label_str))
      throw format_error("manifest " + path + ": bad record at line " +
                         std::to_string(lineno));
    e.split = parse_split(split_tag);
    e.label = static_cast<std::uint32_t>(std::stoul(label_str));
    if (e.label >= m.n_classes)
      throw format_error("manifest " + path + ": label " + label_str +
                         " out of range at line " + std::to_string(lineno));
    m.entries.push_back(std::move(e));
  }
  for (const auto& e : m.entries)
    if (!fs::exists(m.resolve(e)))
      throw data_error("manifest " + path + ": missing bag file " +
                       m.resolve(e));
  return m;
}

void SynthConfig::validate() const {
  if (n_classes < 2) throw parameter_error("synth: need at least 2 classes");
  if (motif_radius < 1) throw parameter_error("synth: motif radius must be >= 1");
  if (n_bags == 0) throw parameter_error("synth: need at least 1 bag");
  if (d_f == 0) throw parameter_error("synth: d_f must be >= 1");
  if (side_min < 2 || side_max < side_min)
    throw parameter_error("synth: bad grid side range");
  if (!(fill > 0.0) || fill > 1.0)
    throw parameter_error("synth: fill must be in (0, 1]");
  if (noise_std < 0.0) throw parameter_error("synth: negative noise std");
}

namespace {

// Unit direction in feature space for one class, fixed by the dataset seed.
std::vector<double> class_direction(std::uint64_t seed, std::size_t cls,
                                    std::size_t d_f) {
  Rng rng(Rng::mix(seed, 0x10000 + cls));
  std::vector<double> u(d_f);
  double norm2 = 0.0;
  for (auto& v : u) {
    v = rng.normal();
    norm2 += v * v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& v : u) v *= inv;
  return u;
}

// Random-walk union of grid cells, irregular like a tissue mask.
std::vector<Coord> tissue_walk(Rng& rng, std::int64_t side,
                               std::size_t target) {
  std::set<Coord> cells;
  Coord cur{side / 2, side / 2};
  cells.insert(cur);
  const std::size_t max_steps = 200 * target + 1000;
  for (std::size_t step = 0; cells.size() < target && step < max_steps;
       ++step) {
    switch (rng.below(4)) {
      case 0: cur.m += 1; break;
      case 1: cur.m -= 1; break;
      case 2: cur.n += 1; break;
      default: cur.n -= 1; break;
    }
    cur.m = std::clamp<std::int64_t>(cur.m, 0, side - 1);
    cur.n = std::clamp<std::int64_t>(cur.n, 0, side - 1);
    cells.insert(cur);
  }
  return {cells.begin(), cells.end()};
}

}  // namespace

SynthDataset synth_dataset(const SynthConfig& config) {
  config.validate();
  std::vector<std::vector<double>> directions(config.n_classes);
  for (std::size_t c = 1; c < config.n_classes; ++c)
    directions[c] = class_direction(config.seed, c, config.d_f);

  SynthDataset out;
  out.bags.reserve(config.n_bags);
  out.motif_centers.reserve(config.n_bags);
  for (std::size_t b = 0; b < config.n_bags; ++b) {
    Rng rng(Rng::mix(config.seed, b));
    FeatureBag bag;
    bag.label = static_cast<std::uint32_t>(b % config.n_classes);
    {
      char buf[32];
      std::snprintf(buf, sizeof buf, "bag_%04zu", b);
      bag.id = buf;
    }
    const std::int64_t side =
        config.side_min +
        static_cast<std::int64_t>(
            rng.below(static_cast<std::uint64_t>(config.side_max -
                                                 config.side_min + 1)));
    const auto target = static_cast<std::size_t>(std::max<double>(
        1.0, std::floor(config.fill * static_cast<double>(side * side) + 0.5)));
    bag.coords.coords = tissue_walk(rng, side, target);
    if (bag.coords.coords.empty())
      throw data_error("synth: tissue walk produced an empty grid");
    bag.d_f = config.d_f;
    const std::size_t n_p = bag.n_p();
    bag.features.resize(n_p * config.d_f);
    for (auto& f : bag.features)
      f = static_cast<float>(rng.normal(0.0, config.noise_std));

    std::optional<Coord> center;
    if (bag.label >= 1) {
      center = bag.coords.coords[rng.below(n_p)];
      const auto& u = directions[bag.label];
      const double r2 = static_cast<double>(config.motif_radius) *
                        static_cast<double>(config.motif_radius);
      for (std::size_t i = 0; i < n_p; ++i) {
        if (sq_dist(bag.coords.coords[i], *center) > r2) continue;
        for (std::size_t j = 0; j < config.d_f; ++j)
          bag.features[i * config.d_f + j] += static_cast<float>(
              config.motif_strength * u[j]);
      }
    }
    out.motif_centers.push_back(center);
    out.bags.push_back(std::move(bag));
  }
  return out;
}

DatasetManifest split_dataset(const std::vector<FeatureBag>& bags,
                              const std::array<double, 3>& ratios,
                              std::uint64_t seed, std::size_t n_classes,
                              std::size_t d_f,
                              std::vector<std::string>* warnings) {
  double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0.0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw parameter_error("split: ratios must be non-negative with positive sum");
  if (bags.empty()) throw data_error("split: no bags");

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (bags[i].label >= n_classes)
      throw data_error("split: bag " + bags[i].id + " has label " +
                       std::to_string(bags[i].label) + " >= n_classes");
    by_class[bags[i].label].push_back(i);
  }

  std::vector<Split> assigned(bags.size(), Split::kTrain);
  std::size_t n_splits_used = 0;
  for (double r : ratios) n_splits_used += r > 0 ? 1 : 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    Rng rng(Rng::mix(seed, c));
    rng.shuffle(idx);

    // Largest-remainder apportionment of this class across the three splits.
    std::array<std::size_t, 3> take{};
    std::array<double, 3> frac{};
    std::size_t given = 0;
    for (int s = 0; s < 3; ++s) {
      const double quota = static_cast<double>(idx.size()) * ratios[s] / total;
      take[s] = static_cast<std::size_t>(std::floor(quota));
      frac[s] = quota - std::floor(quota);
      given += take[s];
    }
    while (given < idx.size()) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (frac[s] > frac[best]) best = s;
      ++take[best];
      frac[best] = -1.0;
      ++given;
    }
    if (warnings && idx.size() < n_splits_used) {
      warnings->push_back("class " + std::to_string(c) + " has only " +
                          std::to_string(idx.size()) +
                          " bags and cannot reach every split");
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < take[s]; ++j)
        assigned[idx[pos++]] = static_cast<Split>(s);
  }

  DatasetManifest m;
  m.n_classes = n_classes;
  m.d_f = d_f;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    ManifestEntry e;
    e.path = bags[i].id + ".katb";
    e.split = assigned[i];
    e.label = bags[i].label;
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace kat
