#include "kat/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace kat {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error("config: bad numeric value for " + key + ": '" + v +
                       "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw config_error("config: bad integer value for " + key + ": '" + v +
                       "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw config_error("config: bad integer value for " + key + ": '" + v +
                       "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw config_error("config: bad boolean value for " + key + ": '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string v = trim(raw_value);
  if (key == "d_e") d_e = parse_uint(key, v);
  else if (key == "n_blocks") n_blocks = parse_uint(key, v);
  else if (key == "n_heads") n_heads = parse_uint(key, v);
  else if (key == "d_ff") d_ff = parse_uint(key, v);
  else if (key == "n_classes") n_classes = parse_uint(key, v);
  else if (key == "dropout") dropout = parse_double(key, v);
  else if (key == "separate_qkv") separate_qkv = parse_bool(key, v);
  else if (key == "cls_attn_residual") cls_attn_residual = parse_bool(key, v);
  else if (key == "nk_bar") nk_bar = parse_uint(key, v);
  else if (key == "scales") scales = parse_uint(key, v);
  else if (key == "deltas") deltas = parse_list(key, v);
  else if (key == "mask_mode") {
    if (v != "gaussian" && v != "ones")
      throw config_error("config: mask_mode must be 'gaussian' or 'ones'");
    mask_mode = v;
  } else if (key == "lr") lr = parse_double(key, v);
  else if (key == "beta1") beta1 = parse_double(key, v);
  else if (key == "beta2") beta2 = parse_double(key, v);
  else if (key == "eps_adam") eps_adam = parse_double(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "max_epochs") max_epochs = parse_uint(key, v);
  else if (key == "patience") patience = parse_uint(key, v);
  else if (key == "batch_size") batch_size = parse_uint(key, v);
  else if (key == "split_ratios") {
    auto list = parse_list(key, v);
    if (list.size() != 3)
      throw config_error("config: split_ratios needs three values");
    split_ratios = {list[0], list[1], list[2]};
  } else if (key == "seed") seed = parse_uint(key, v);
  else if (key == "synth_seed") synth_seed = parse_uint(key, v);
  else if (key == "mask_seed") mask_seed = parse_uint(key, v);
  else if (key == "train_seed") train_seed = parse_uint(key, v);
  else if (key == "synth_bags") synth_bags = parse_uint(key, v);
  else if (key == "synth_classes") synth_classes = parse_uint(key, v);
  else if (key == "synth_df") synth_df = parse_uint(key, v);
  else if (key == "side_min") side_min = parse_int(key, v);
  else if (key == "side_max") side_max = parse_int(key, v);
  else if (key == "fill") fill = parse_double(key, v);
  else if (key == "motif_radius") motif_radius = parse_int(key, v);
  else if (key == "motif_strength") motif_strength = parse_double(key, v);
  else if (key == "noise_std") noise_std = parse_double(key, v);
  else
    throw config_error("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open config: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error("config " + path + ": line " +
                         std::to_string(lineno) + " is not 'key = value'");
    set(t.substr(0, eq), t.substr(eq + 1));
  }
}

KatConfig RunConfig::kat_config(std::size_t d_f,
                                std::size_t manifest_classes) const {
  KatConfig c;
  c.d_f = d_f;
  c.d_e = d_e;
  c.n_blocks = n_blocks;
  c.n_heads = n_heads;
  c.d_ff = d_ff;
  c.n_classes = n_classes ? n_classes : manifest_classes;
  c.dropout = dropout;
  c.separate_qkv = separate_qkv;
  c.cls_attn_residual = cls_attn_residual;
  c.validate();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = lr;
  t.beta1 = beta1;
  t.beta2 = beta2;
  t.eps_adam = eps_adam;
  t.weight_decay = weight_decay;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.batch_size = batch_size;
  t.seed = seed_for_train();
  t.validate();
  return t;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s;
  s.n_bags = synth_bags;
  s.n_classes = synth_classes;
  s.d_f = synth_df;
  s.side_min = side_min;
  s.side_max = side_max;
  s.fill = fill;
  s.motif_radius = motif_radius;
  s.motif_strength = motif_strength;
  s.noise_std = noise_std;
  s.seed = seed_for_synth();
  s.validate();
  return s;
}

MaskMode RunConfig::mask_mode_enum() const {
  return mask_mode == "ones" ? MaskMode::kOnes : MaskMode::kGaussian;
}

void RunConfig::write_resolved(std::ostream& os) const {
  os.precision(17);
  os << "# resolved run configuration\n";
  os << "d_e = " << d_e << "\n";
  os << "n_blocks = " << n_blocks << "\n";
  os << "n_heads = " << n_heads << "\n";
  os << "d_ff = " << d_ff << "\n";
  os << "n_classes = " << n_classes << "\n";
  os << "dropout = " << dropout << "\n";
  os << "separate_qkv = " << (separate_qkv ? "true" : "false") << "\n";
  os << "cls_attn_residual = " << (cls_attn_residual ? "true" : "false")
     << "\n";
  os << "nk_bar = " << nk_bar << "\n";
  os << "scales = " << scales << "\n";
  if (!deltas.empty()) {
    os << "deltas = ";
    for (std::size_t i = 0; i < deltas.size(); ++i)
      os << (i ? "," : "") << deltas[i];
    os << "\n";
  }
  os << "mask_mode = " << mask_mode << "\n";
  os << "lr = " << lr << "\n";
  os << "beta1 = " << beta1 << "\n";
  os << "beta2 = " << beta2 << "\n";
  os << "eps_adam = " << eps_adam << "\n";
  os << "weight_decay = " << weight_decay << "\n";
  os << "max_epochs = " << max_epochs << "\n";
  os << "patience = " << patience << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "split_ratios = " << split_ratios[0] << "," << split_ratios[1] << ","
     << split_ratios[2] << "\n";
  os << "seed = " << seed << "\n";
  if (synth_seed) os << "synth_seed = " << *synth_seed << "\n";
  if (mask_seed) os << "mask_seed = " << *mask_seed << "\n";
  if (train_seed) os << "train_seed = " << *train_seed << "\n";
  os << "synth_bags = " << synth_bags << "\n";
  os << "synth_classes = " << synth_classes << "\n";
  os << "synth_df = " << synth_df << "\n";
  os << "side_min = " << side_min << "\n";
  os << "side_max = " << side_max << "\n";
  os << "fill = " << fill << "\n";
  os << "motif_radius = " << motif_radius << "\n";
  os << "motif_strength = " << motif_strength << "\n";
  os << "noise_std = " << noise_std << "\n";
}

void RunConfig::write_resolved_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open for writing: " + path);
  write_resolved(os);
}

}  // namespace kat
