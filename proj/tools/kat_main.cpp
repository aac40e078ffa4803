// kat: synthesize bags, build anchor masks, train, evaluate and run the
// cost bench from one binary.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kat/config.hpp"
#include "kat/flops.hpp"
#include "kat/metrics.hpp"
#include "kat/model.hpp"
#include "kat/train.hpp"

namespace fs = std::filesystem;
using namespace kat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const CommonOpts& common) {
  RunConfig cfg;
  if (!common.config_path.empty()) cfg.load_file(common.config_path);
  for (const auto& kv : common.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw config_error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int eval_threads_from_env() {
  const char* env = std::getenv("KAT_THREADS");
  if (!env) return 0;
  const int t = std::atoi(env);
  return t > 0 ? t : 1;
}

void require_scales_match_blocks(const RunConfig& cfg, std::size_t n_blocks) {
  if (cfg.resolved_scales() != n_blocks)
    throw config_error("scales (" + std::to_string(cfg.resolved_scales()) +
                       ") must equal the block count (" +
                       std::to_string(n_blocks) +
                       "): each block consumes one mask scale");
}

int run_synth(const CommonOpts& common, const std::string& out_dir) {
  RunConfig cfg = resolve_config(common);
  SynthConfig scfg = cfg.synth_config();
  fs::create_directories(out_dir);
  SynthDataset ds = synth_dataset(scfg);
  for (const auto& bag : ds.bags)
    write_bag(bag, (fs::path(out_dir) / (bag.id + ".katb")).string());
  std::vector<std::string> warnings;
  DatasetManifest manifest =
      split_dataset(ds.bags, cfg.split_ratios, cfg.seed_for_synth(),
                    scfg.n_classes, scfg.d_f, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  write_manifest(manifest, (fs::path(out_dir) / "manifest.tsv").string());
  cfg.write_resolved_file((fs::path(out_dir) / "run.ini").string());
  std::cout << "synth: wrote " << ds.bags.size() << " bags to " << out_dir
            << " (classes=" << scfg.n_classes << ", d_f=" << scfg.d_f << ")\n";
  return kExitOk;
}

int run_maskgen(const CommonOpts& common, const std::string& bag_path,
                const std::string& out_path, bool plot) {
  RunConfig cfg = resolve_config(common);
  FeatureBag bag = read_bag(bag_path);
  const std::size_t n_scales = cfg.resolved_scales();
  PreparedBag pb = prepare_bag(bag, cfg.nk_bar, n_scales, cfg.seed_for_masks(),
                               cfg.mask_mode_enum(), cfg.deltas);
  write_mask_stack_file(out_path, pb.masks);
  cfg.write_resolved_file(out_path + ".run.ini");
  if (plot) {
    std::ofstream os(out_path + ".plot.txt");
    if (!os) throw data_error("cannot open for writing: " + out_path +
                              ".plot.txt");
    os << "# anchors: A m n   patch values: P scale m n max_over_anchors\n";
    for (const Coord& a : pb.anchors.anchors)
      os << "A " << a.m << " " << a.n << "\n";
    for (std::size_t s = 0; s < pb.masks.scales(); ++s)
      for (std::size_t i = 0; i < bag.n_p(); ++i) {
        double mx = 0.0;
        for (std::size_t k = 0; k < pb.masks.K(); ++k)
          mx = std::max(mx, pb.masks.masks[s].at(k, i));
        os << "P " << s << " " << bag.coords.coords[i].m << " "
           << bag.coords.coords[i].n << " " << mx << "\n";
      }
  }
  std::cout << "maskgen: K=" << pb.anchors.K() << " n_p=" << bag.n_p()
            << " scales=" << n_scales << " -> " << out_path << "\n";
  return kExitOk;
}

int run_train(const CommonOpts& common, const std::string& manifest_path,
              const std::string& out_path, const std::string& log_path) {
  RunConfig cfg = resolve_config(common);
  DatasetManifest manifest = read_manifest(manifest_path);
  KatConfig kcfg = cfg.kat_config(manifest.d_f, manifest.n_classes);
  require_scales_match_blocks(cfg, kcfg.n_blocks);

  PreparedDataset train_bags =
      prepare_split(manifest, Split::kTrain, cfg.nk_bar, kcfg.n_blocks,
                    cfg.seed_for_masks(), cfg.mask_mode_enum(), cfg.deltas);
  PreparedDataset val_bags =
      prepare_split(manifest, Split::kVal, cfg.nk_bar, kcfg.n_blocks,
                    cfg.seed_for_masks(), cfg.mask_mode_enum(), cfg.deltas);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw data_error("cannot open for writing: " + log_path);
  }
  TrainResult result = train(train_bags, val_bags, kcfg, cfg.train_config(),
                             log_path.empty() ? nullptr : &log, 1);
  save_model(result.params, kcfg, out_path);
  cfg.write_resolved_file(out_path + ".run.ini");
  std::cout << "train: " << result.history.size() << " epochs, best epoch "
            << result.best_epoch << " (val loss " << result.best_val_loss
            << ") -> " << out_path << "\n";
  return kExitOk;
}

int run_eval(const CommonOpts& common, const std::string& manifest_path,
             const std::string& model_path, const std::string& split_name_str,
             const std::string& out_path) {
  RunConfig cfg = resolve_config(common);
  DatasetManifest manifest = read_manifest(manifest_path);
  auto [params, kcfg] = load_model(model_path);
  if (manifest.d_f != kcfg.d_f)
    throw data_error("manifest d_f " + std::to_string(manifest.d_f) +
                     " does not match model d_f " + std::to_string(kcfg.d_f));
  require_scales_match_blocks(cfg, kcfg.n_blocks);
  const Split split = parse_split(split_name_str);
  PreparedDataset bags =
      prepare_split(manifest, split, cfg.nk_bar, kcfg.n_blocks,
                    cfg.seed_for_masks(), cfg.mask_mode_enum(), cfg.deltas);
  Metrics m = evaluate(params, kcfg, bags, eval_threads_from_env());

  std::ostringstream table;
  table.setf(std::ios::fixed);
  table.precision(3);
  table << "split=" << split_name_str << " bags=" << m.n_items
        << " loss=" << m.mean_loss << "\n";
  table << "Acc.\tmAUC\twAUC\n";
  table << m.accuracy << "\t" << m.macro_auc << "\t" << m.weighted_auc << "\n";
  for (std::size_t c = 0; c < m.per_class_auc.size(); ++c) {
    table << "class " << c << ": ";
    if (!m.class_present[c])
      table << "absent\n";
    else if (std::isnan(m.per_class_auc[c]))
      table << "auc undefined\n";
    else
      table << "auc=" << m.per_class_auc[c] << "\n";
  }
  std::cout << table.str();
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw data_error("cannot open for writing: " + out_path);
    os << table.str() << "\n";
    cfg.write_resolved(os);
  }
  return kExitOk;
}

int run_bench(const std::vector<std::uint64_t>& np_list, std::uint64_t k,
              std::uint64_t d_e, std::uint64_t heads, std::uint64_t blocks,
              std::uint64_t d_ff, const std::string& out_path,
              const std::string& plot_path) {
  CostReport report = scaling_report(np_list, k, d_e, heads, blocks, d_ff);
  std::ofstream os(out_path);
  if (!os) throw data_error("cannot open for writing: " + out_path);
  write_cost_report(os, report);
  if (!plot_path.empty()) {
    std::ofstream plot(plot_path);
    if (!plot) throw data_error("cannot open for writing: " + plot_path);
    write_cost_plot(plot, report);
  }
  std::cout << "bench: ka slope " << report.ka_fit.slope << ", sa tail slope "
            << report.sa_tail_fit.slope << ", kernel attention cheaper from "
            << "n_p >= " << report.ka_cheaper_from << " -> " << out_path
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel attention transformer reference tool"};
  app.require_subcommand(1);

  CommonOpts common;

  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path,
                    "INI config file (key = value)");
    sub->add_option("--set", common.sets, "override a config key, key=value");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  add_common(synth);
  std::uint64_t opt_bags = 0, opt_classes = 0, opt_df = 0, opt_seed = 0;
  synth->add_option("--bags", opt_bags, "number of bags");
  synth->add_option("--classes", opt_classes, "number of classes");
  synth->add_option("--df", opt_df, "feature dimension");
  synth->add_option("--seed", opt_seed, "dataset seed");

  // maskgen
  auto* maskgen = app.add_subcommand("maskgen",
                                     "anchors and hierarchical masks for one bag");
  std::string mg_bag, mg_out;
  bool mg_plot = false;
  std::uint64_t mg_nk = 0, mg_scales = 0, mg_seed = 0;
  maskgen->add_option("--bag", mg_bag, "input .katb bag")->required();
  maskgen->add_option("--out", mg_out, "output mask file")->required();
  maskgen->add_option("--nk", mg_nk, "desired patches per kernel");
  maskgen->add_option("--scales", mg_scales, "number of scales");
  maskgen->add_option("--seed", mg_seed, "clustering seed");
  maskgen->add_flag("--plot", mg_plot, "emit mask heatmap coordinates");
  add_common(maskgen);

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a manifest");
  std::string tr_manifest, tr_out, tr_log;
  std::uint64_t tr_seed = 0, tr_nk = 0;
  train_cmd->add_option("--manifest", tr_manifest, "dataset manifest")
      ->required();
  train_cmd->add_option("--out", tr_out, "output model (.katm)")->required();
  train_cmd->add_option("--log", tr_log, "epoch history log");
  train_cmd->add_option("--seed", tr_seed, "training seed");
  train_cmd->add_option("--nk", tr_nk, "desired patches per kernel");
  add_common(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a split");
  std::string ev_manifest, ev_model, ev_split = "test", ev_out;
  eval_cmd->add_option("--manifest", ev_manifest, "dataset manifest")
      ->required();
  eval_cmd->add_option("--model", ev_model, "model file (.katm)")->required();
  eval_cmd->add_option("--split", ev_split, "train|val|test");
  eval_cmd->add_option("--out", ev_out, "also write metrics + config here");
  add_common(eval_cmd);

  // bench
  auto* bench = app.add_subcommand("bench", "analytic FLOP scaling report");
  std::string bn_np = "256,512,1024,2048", bn_out, bn_plot;
  std::uint64_t bn_k = 8, bn_de = 256, bn_heads = 8, bn_blocks = 4,
                bn_dff = 0;
  bench->add_option("--np", bn_np, "comma list of token counts");
  bench->add_option("--k", bn_k, "kernel count");
  bench->add_option("--de", bn_de, "embedding dimension");
  bench->add_option("--heads", bn_heads, "head count");
  bench->add_option("--blocks", bn_blocks, "block count");
  bench->add_option("--dff", bn_dff, "feed-forward width (0 = 4*de)");
  bench->add_option("--out", bn_out, "report file")->required();
  bench->add_option("--plot", bn_plot, "plot coordinates file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      if (synth->count("--bags"))
        common.sets.push_back("synth_bags=" + std::to_string(opt_bags));
      if (synth->count("--classes"))
        common.sets.push_back("synth_classes=" + std::to_string(opt_classes));
      if (synth->count("--df"))
        common.sets.push_back("synth_df=" + std::to_string(opt_df));
      if (synth->count("--seed"))
        common.sets.push_back("seed=" + std::to_string(opt_seed));
      return run_synth(common, synth_out);
    }
    if (maskgen->parsed()) {
      if (maskgen->count("--nk"))
        common.sets.push_back("nk_bar=" + std::to_string(mg_nk));
      if (maskgen->count("--scales"))
        common.sets.push_back("scales=" + std::to_string(mg_scales));
      if (maskgen->count("--seed"))
        common.sets.push_back("mask_seed=" + std::to_string(mg_seed));
      return run_maskgen(common, mg_bag, mg_out, mg_plot);
    }
    if (train_cmd->parsed()) {
      if (train_cmd->count("--nk"))
        common.sets.push_back("nk_bar=" + std::to_string(tr_nk));
      if (train_cmd->count("--seed"))
        common.sets.push_back("seed=" + std::to_string(tr_seed));
      return run_train(common, tr_manifest, tr_out, tr_log);
    }
    if (eval_cmd->parsed())
      return run_eval(common, ev_manifest, ev_model, ev_split, ev_out);
    if (bench->parsed()) {
      std::vector<std::uint64_t> np_list;
      std::stringstream ss(bn_np);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) np_list.push_back(std::stoull(item));
      return run_bench(np_list, bn_k, bn_de, bn_heads, bn_blocks, bn_dff,
                       bn_out, bn_plot);
    }
  } catch (const numeric_error& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const format_error& e) {
    std::cerr << "error: format: " << e.what() << "\n";
    return kExitData;
  } catch (const data_error& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return kExitData;
  } catch (const config_error& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const parameter_error& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const error& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: unexpected: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
