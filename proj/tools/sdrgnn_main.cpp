// Command-line driver: synthetic data generation, training, missing-rate
// sweeps, gradient verification and checkpoint evaluation.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdrgnn/data.hpp"
#include "sdrgnn/eval.hpp"
#include "sdrgnn/gradcheck.hpp"
#include "sdrgnn/graph.hpp"
#include "sdrgnn/model.hpp"
#include "sdrgnn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdrgnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string default_out_root() {
  if (const char* env = std::getenv("SDRGNN_OUT")) return env;
  return "runs";
}

fs::path ensure_dir(const std::string& path) {
  fs::path p(path);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory " + path + ": " + ec.message());
  return p;
}

// "convs=8,val=4,test=4,utts=10,speakers=2,classes=4,dims=8x8x8,signal=5"
struct SynthSpec {
  SynthConfig base;
  int val_convs = 4;
  int test_convs = 4;
};

SynthSpec parse_synth_spec(const std::string& spec) {
  SynthSpec out;
  if (spec.empty() || spec == "default") return out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("synth spec entry '" + item + "' is not k=v");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    try {
      if (key == "convs") out.base.conversations = std::stoi(val);
      else if (key == "val") out.val_convs = std::stoi(val);
      else if (key == "test") out.test_convs = std::stoi(val);
      else if (key == "utts") out.base.utterances = std::stoi(val);
      else if (key == "speakers") out.base.speakers = std::stoi(val);
      else if (key == "classes") out.base.classes = std::stoi(val);
      else if (key == "signal") out.base.signal = std::stod(val);
      else if (key == "dims") {
        std::stringstream ds(val);
        std::string d;
        int m = 0;
        while (std::getline(ds, d, 'x')) {
          if (m >= kNumModalities) throw ConfigError("synth dims must have 3 entries");
          out.base.dims[m++] = std::stoll(d);
        }
        if (m != kNumModalities) throw ConfigError("synth dims must have 3 entries");
      } else {
        throw ConfigError("unknown synth key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("synth spec value for '" + key + "' is not a number: " + val);
    }
  }
  return out;
}

struct Splits {
  Dataset train, val, test;
  int classes = 0;
};

Splits make_synth_splits_shared(const SynthSpec& spec, uint64_t seed) {
  SynthConfig cfg = spec.base;
  cfg.seed = Rng(seed).fork(100).next_u64();
  SynthSplits raw = synth_generate_splits(cfg, spec.val_convs, spec.test_convs);
  Splits s;
  s.classes = cfg.classes;
  s.train = std::move(raw.train);
  s.val = std::move(raw.val);
  s.test = std::move(raw.test);
  return s;
}

Splits load_splits(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream mf(root / "manifest.json");
  if (!mf) throw DataError("cannot open " + (root / "manifest.json").string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError((root / "manifest.json").string() + ": " + e.what());
  }
  const int classes = manifest.at("classes").get<int>();
  Splits s;
  s.classes = classes;
  s.train = load_dataset((root / manifest.at("files").at("train").get<std::string>()).string(),
                         classes);
  s.val = load_dataset((root / manifest.at("files").at("val").get<std::string>()).string(),
                       classes);
  s.test = load_dataset((root / manifest.at("files").at("test").get<std::string>()).string(),
                        classes);
  return s;
}

struct MaskedSplits {
  Dataset train, val, test;
  MaskPlan plan_train, plan_val, plan_test;
};

MaskedSplits mask_splits(const Splits& s, double rate, uint64_t seed) {
  MaskedSplits m;
  std::tie(m.train, m.plan_train) = apply_missing(s.train, rate, Rng(seed).fork(201).next_u64());
  std::tie(m.val, m.plan_val) = apply_missing(s.val, rate, Rng(seed).fork(202).next_u64());
  std::tie(m.test, m.plan_test) = apply_missing(s.test, rate, Rng(seed).fork(203).next_u64());
  return m;
}

void save_masks(const MaskedSplits& m, const std::string& path) {
  auto plan_json = [](const MaskPlan& p) {
    json j;
    j["seed"] = p.seed;
    j["requested_rate"] = p.requested_rate;
    json drops = json::array();
    for (const auto& [conv, utt, mod] : p.dropped) drops.push_back({conv, utt, kModalityNames[mod]});
    j["dropped"] = std::move(drops);
    return j;
  };
  json j;
  j["train"] = plan_json(m.plan_train);
  j["val"] = plan_json(m.plan_val);
  j["test"] = plan_json(m.plan_test);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mask sidecar: " + path);
  out << j.dump(2) << '\n';
}

MaskPlan plan_from_json(const json& j) {
  MaskPlan p;
  p.seed = j.value("seed", 0ULL);
  p.requested_rate = j.value("requested_rate", 0.0);
  for (const auto& d : j.at("dropped"))
    p.dropped.emplace_back(d[0].get<std::string>(), d[1].get<int>(),
                           modality_index(d[2].get<std::string>()));
  return p;
}

MaskedSplits replay_masks(const Splits& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mask sidecar: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  MaskedSplits m;
  m.plan_train = plan_from_json(j.at("train"));
  m.plan_val = plan_from_json(j.at("val"));
  m.plan_test = plan_from_json(j.at("test"));
  m.train = apply_plan(s.train, m.plan_train);
  m.val = apply_plan(s.val, m.plan_val);
  m.test = apply_plan(s.test, m.plan_test);
  return m;
}

struct CommonOpts {
  std::string data_dir;
  std::string synth_spec;
  double missing_rate = 0.0;
  int64_t hidden = 16;
  int window = 2;
  int heads = 4;
  int hyper_layers = 2;
  int attn_width = 0;
  double dropout = 0.5;
  double loss_weight = 0.5;
  std::string rec_scope = "all";
  int epochs = 150;
  int patience = 20;
  uint64_t seed = 1;
  int repeats = 1;
  std::vector<std::string> ablate;
  bool lower_bound = false;
  std::string out_dir;
  std::string mask_plan_file;
  double lr = 0.001;
  double weight_decay = 0.00001;
  bool clip = false;
};

void add_model_options(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--data", o.data_dir, "dataset directory (manifest.json + split files)");
  cmd->add_option("--synth", o.synth_spec,
                  "generate synthetic data, e.g. convs=8,val=4,test=4,utts=10,classes=4,"
                  "dims=8x8x8,speakers=2,signal=5 (or 'default')");
  cmd->add_option("--missing-rate", o.missing_rate, "missing rate M in [0, 0.7]");
  cmd->add_option("--hidden", o.hidden, "stream width h");
  cmd->add_option("--window", o.window, "interaction window w");
  cmd->add_option("--heads", o.heads, "attention heads k");
  cmd->add_option("--hyper-layers", o.hyper_layers, "hypergraph propagation depth l");
  cmd->add_option("--attn-width", o.attn_width,
                  "total attention width (default: heads * ceil(D/heads))");
  cmd->add_option("--dropout", o.dropout, "dropout rate");
  cmd->add_option("--loss-weight", o.loss_weight, "reconstruction weight e in [0,1]");
  cmd->add_option("--rec-scope", o.rec_scope, "reconstruction scope: all | masked")
      ->check(CLI::IsMember({"all", "masked"}));
  cmd->add_option("--epochs", o.epochs, "epoch cap");
  cmd->add_option("--patience", o.patience, "early-stop patience on validation WAF1");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--repeats", o.repeats, "number of seeds to run and aggregate");
  cmd->add_option("--ablate", o.ablate, "disable components: sp co fre op")
      ->delimiter(',')
      ->check(CLI::IsMember({"sp", "co", "fre", "op"}));
  cmd->add_flag("--lower-bound", o.lower_bound, "drop modality-incomplete utterances");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--mask-plan", o.mask_plan_file, "replay a recorded mask sidecar");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--weight-decay", o.weight_decay, "decoupled weight decay");
  cmd->add_flag("--clip", o.clip, "clip gradient norm at 5");
}

ModelConfig model_config_from(const CommonOpts& o, const Splits& s,
                              const std::vector<std::string>& ablate) {
  ModelConfig cfg;
  cfg.hidden = o.hidden;
  cfg.window = o.window;
  cfg.heads = o.heads;
  cfg.hyper_layers = o.hyper_layers;
  cfg.attn_inner = o.attn_width;
  cfg.dropout = o.dropout;
  cfg.dims = s.train.dims;
  cfg.classes = s.classes;
  cfg.max_speakers =
      std::max({s.train.max_speakers(), s.val.max_speakers(), s.test.max_speakers()});
  for (const auto& a : ablate) {
    if (a == "sp") cfg.use_speaker = false;
    else if (a == "co") cfg.use_context = false;
    else if (a == "fre") cfg.use_freq_gate = false;
    else if (a == "op") cfg.use_self_opt = false;
  }
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from(const CommonOpts& o, uint64_t seed) {
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.loss_weight = o.loss_weight;
  tc.seed = seed;
  tc.rec_scope = o.rec_scope == "masked" ? RecScope::kMaskedOnly : RecScope::kAllSlots;
  tc.patience = o.patience;
  tc.adam.lr = o.lr;
  tc.adam.weight_decay = o.weight_decay;
  tc.clip = o.clip;
  return tc;
}

json resolved_config(const std::string& command, const CommonOpts& o, uint64_t seed) {
  json j;
  j["command"] = command;
  j["data"] = o.data_dir;
  j["synth"] = o.synth_spec;
  j["missing_rate"] = o.missing_rate;
  j["hidden"] = o.hidden;
  j["window"] = o.window;
  j["heads"] = o.heads;
  j["hyper_layers"] = o.hyper_layers;
  j["attn_width"] = o.attn_width;
  j["dropout"] = o.dropout;
  j["loss_weight"] = o.loss_weight;
  j["rec_scope"] = o.rec_scope;
  j["epochs"] = o.epochs;
  j["patience"] = o.patience;
  j["seed"] = seed;
  j["repeats"] = o.repeats;
  j["ablate"] = o.ablate;
  j["lower_bound"] = o.lower_bound;
  j["mask_plan"] = o.mask_plan_file;
  j["lr"] = o.lr;
  j["weight_decay"] = o.weight_decay;
  j["clip"] = o.clip;
  return j;
}

Splits obtain_splits(const CommonOpts& o, uint64_t seed) {
  if (!o.data_dir.empty() && !o.synth_spec.empty())
    throw ConfigError("--data and --synth are mutually exclusive");
  if (!o.data_dir.empty()) return load_splits(o.data_dir);
  if (!o.synth_spec.empty()) return make_synth_splits_shared(parse_synth_spec(o.synth_spec), seed);
  throw ConfigError("one of --data or --synth is required");
}

struct SingleRunResult {
  MetricsReport report;
  RunRecord record;
};

// Full train+eval cycle for one seed; writes all artifacts into `dir`.
SingleRunResult run_single_training(const CommonOpts& o, uint64_t seed, const fs::path& dir,
                                    const std::vector<std::string>& ablate) {
  Splits splits = obtain_splits(o, seed);
  MaskedSplits masked = o.mask_plan_file.empty() ? mask_splits(splits, o.missing_rate, seed)
                                                 : replay_masks(splits, o.mask_plan_file);
  save_masks(masked, (dir / "masks.json").string());

  Dataset train_ds = masked.train, val_ds = masked.val, test_ds = masked.test;
  if (o.lower_bound) {
    train_ds = drop_incomplete(train_ds);
    val_ds = drop_incomplete(val_ds);
    test_ds = drop_incomplete(test_ds);
    if (train_ds.convs.empty() || val_ds.convs.empty() || test_ds.convs.empty())
      throw DataError("lower-bound mode removed every conversation from a split");
  }

  ModelConfig mcfg = model_config_from(o, splits, ablate);
  Model model(mcfg, seed);
  TrainConfig tcfg = train_config_from(o, seed);
  RunRecord record = train(model, train_ds, val_ds, tcfg);
  write_run_record(record, (dir / "record.csv").string());
  save_checkpoint(model, (dir / "checkpoint.bin").string());

  MetricsReport report = evaluate_model(model, test_ds);
  write_metrics_files(report, dir.string());
  return {std::move(report), std::move(record)};
}

int cmd_synth(const CommonOpts& o) {
  if (o.synth_spec.empty()) throw ConfigError("synth requires --synth");
  const fs::path dir = ensure_dir(o.out_dir.empty()
                                      ? default_out_root() + "/synth-" + std::to_string(o.seed)
                                      : o.out_dir);
  SynthSpec spec = parse_synth_spec(o.synth_spec);
  Splits s = make_synth_splits_shared(spec, o.seed);
  save_dataset(s.train, (dir / "train.jsonl").string());
  save_dataset(s.val, (dir / "val.jsonl").string());
  save_dataset(s.test, (dir / "test.jsonl").string());
  json manifest;
  manifest["classes"] = s.classes;
  manifest["dims"] = s.train.dims;
  manifest["seed"] = o.seed;
  manifest["files"] = {{"train", "train.jsonl"}, {"val", "val.jsonl"}, {"test", "test.jsonl"}};
  manifest["synth"] = o.synth_spec;
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw DataError("cannot write manifest");
  mf << manifest.dump(2) << '\n';
  std::cout << "wrote " << dir.string() << " (" << s.train.convs.size() << "/"
            << s.val.convs.size() << "/" << s.test.convs.size() << " conversations)\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& o) {
  if (o.repeats < 1) throw ConfigError("--repeats must be >= 1");
  const fs::path dir = ensure_dir(o.out_dir.empty()
                                      ? default_out_root() + "/train-" + std::to_string(o.seed)
                                      : o.out_dir);
  {
    std::ofstream cf(dir / "config.json");
    cf << resolved_config("train", o, o.seed).dump(2) << '\n';
  }
  std::vector<MetricsReport> reports;
  for (int r = 0; r < o.repeats; ++r) {
    const uint64_t seed = o.seed + static_cast<uint64_t>(r);
    const fs::path run_dir = o.repeats == 1 ? dir : ensure_dir((dir / ("seed-" + std::to_string(seed))).string());
    if (o.repeats > 1) {
      std::ofstream cf(run_dir / "config.json");
      cf << resolved_config("train", o, seed).dump(2) << '\n';
    }
    auto result = run_single_training(o, seed, run_dir, o.ablate);
    std::cout << "seed " << seed << ": test WAF1 " << std::fixed << std::setprecision(4)
              << result.report.waf1 << ", ACC " << result.report.accuracy << ", best epoch "
              << result.record.best_epoch << "\n";
    reports.push_back(std::move(result.report));
  }
  if (o.repeats > 1) {
    double mean = 0, mean_acc = 0;
    for (const auto& r : reports) {
      mean += r.waf1;
      mean_acc += r.accuracy;
    }
    mean /= reports.size();
    mean_acc /= reports.size();
    double var = 0;
    for (const auto& r : reports) var += (r.waf1 - mean) * (r.waf1 - mean);
    const double stddev = reports.size() > 1 ? std::sqrt(var / (reports.size() - 1)) : 0.0;
    std::ofstream agg(dir / "aggregate.csv");
    agg << std::setprecision(17);
    agg << "metric,mean,std\nwaf1," << mean << ',' << stddev << "\nacc," << mean_acc << ",\n";
    std::cout << "aggregate over " << reports.size() << " seeds: WAF1 " << std::fixed
              << std::setprecision(4) << mean << " +/- " << stddev << "\n";
  }
  return kExitOk;
}

int cmd_sweep(const CommonOpts& o, const std::vector<double>& rates) {
  if (rates.empty()) throw ConfigError("--sweep requires a non-empty rate list");
  for (double r : rates)
    if (r < 0.0 || r > missing_rate_request_limit())
      throw ConfigError("sweep rate " + std::to_string(r) + " outside [0, 0.7]");
  const fs::path dir = ensure_dir(o.out_dir.empty()
                                      ? default_out_root() + "/sweep-" + std::to_string(o.seed)
                                      : o.out_dir);
  {
    std::ofstream cf(dir / "config.json");
    json j = resolved_config("sweep", o, o.seed);
    j["sweep"] = rates;
    cf << j.dump(2) << '\n';
  }

  std::vector<std::pair<std::string, std::vector<std::string>>> variants;
  variants.emplace_back("SDR-GNN", std::vector<std::string>{});
  for (const auto& a : o.ablate) {
    std::string label = a == "sp" ? "w/o Sp" : a == "co" ? "w/o Co" : a == "fre" ? "w/o Fre"
                                                                                 : "w/o Op";
    variants.emplace_back(label, std::vector<std::string>{a});
  }

  auto slug = [](std::string s) {
    for (char& c : s)
      if (c == '/' || c == ' ') c = '_';
    return s;
  };

  std::map<std::string, std::vector<std::string>> grid;  // variant -> one cell per rate
  for (const auto& [label, ablate] : variants) {
    double total = 0;
    int ok_cells = 0;
    std::vector<std::string> row;
    for (double rate : rates) {
      CommonOpts cell = o;
      cell.missing_rate = rate;
      try {
        double mean = 0;
        for (int r = 0; r < o.repeats; ++r) {
          const uint64_t seed = o.seed + static_cast<uint64_t>(r);
          fs::path cell_dir = ensure_dir(
              (dir / ("cell-" + slug(label) + "-M" + std::to_string(rate) + "-s" +
                      std::to_string(seed))).string());
          auto result = run_single_training(cell, seed, cell_dir, ablate);
          mean += result.report.waf1;
        }
        mean /= o.repeats;
        total += mean;
        ++ok_cells;
        std::ostringstream v;
        v << std::fixed << std::setprecision(4) << mean;
        row.push_back(v.str());
      } catch (const std::exception& e) {
        std::cerr << "cell " << label << " M=" << rate << " failed: " << e.what() << "\n";
        row.push_back("ERR");
      }
    }
    std::ostringstream avg;
    if (ok_cells > 0)
      avg << std::fixed << std::setprecision(4) << total / ok_cells;
    else
      avg << "ERR";
    row.push_back(avg.str());
    grid[label] = std::move(row);
  }

  std::ofstream csv(dir / "sweep.csv");
  csv << "method";
  for (double r : rates) csv << ',' << r;
  csv << ",average\n";
  std::cout << "\nmethod";
  for (double r : rates) std::cout << "\tM=" << r;
  std::cout << "\tavg\n";
  for (const auto& [label, _] : variants) {
    csv << label;
    std::cout << label;
    for (const auto& cell : grid[label]) {
      csv << ',' << cell;
      std::cout << '\t' << cell;
    }
    csv << '\n';
    std::cout << '\n';
  }
  std::cout << "grid written to " << (dir / "sweep.csv").string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(double eps, double tol, const std::string& corrupt) {
  auto report = run_gradcheck_suite(eps, tol, corrupt);
  bool pass = true;
  for (const auto& g : report.groups) {
    const bool ok = g.max_rel_err < tol;
    pass = pass && ok;
    std::cout << (ok ? "ok   " : "FAIL ") << std::left << std::setw(18) << g.name << " max rel err "
              << std::scientific << std::setprecision(3) << g.max_rel_err << "  (" << g.checked
              << " elements";
    if (!ok) std::cout << ", worst " << g.worst_param;
    std::cout << ")\n";
  }
  if (report.groups.empty()) {
    std::cout << "no parameter groups checked\n";
    return kExitNumeric;
  }
  std::cout << (pass ? "gradient check passed" : "gradient check FAILED") << " at tolerance "
            << std::scientific << std::setprecision(1) << tol << "\n";
  return pass ? kExitOk : kExitNumeric;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint_path) {
  const fs::path dir = ensure_dir(o.out_dir.empty()
                                      ? default_out_root() + "/eval-" + std::to_string(o.seed)
                                      : o.out_dir);
  Model model = load_checkpoint(checkpoint_path);
  Splits splits = obtain_splits(o, o.seed);
  if (splits.classes != model.cfg.classes)
    throw ConfigError("class count mismatch: checkpoint expects " +
                      std::to_string(model.cfg.classes) + ", dataset has " +
                      std::to_string(splits.classes));
  if (splits.train.dims != model.cfg.dims)
    throw ConfigError("modality dims mismatch between checkpoint and dataset");
  MaskedSplits masked = o.mask_plan_file.empty() ? mask_splits(splits, o.missing_rate, o.seed)
                                                 : replay_masks(splits, o.mask_plan_file);
  Dataset test_ds = o.lower_bound ? drop_incomplete(masked.test) : masked.test;
  if (test_ds.convs.empty()) throw DataError("evaluation split is empty");
  {
    std::ofstream cf(dir / "config.json");
    json j = resolved_config("eval", o, o.seed);
    j["checkpoint"] = checkpoint_path;
    cf << j.dump(2) << '\n';
  }
  save_masks(masked, (dir / "masks.json").string());
  MetricsReport report = evaluate_model(model, test_ds);
  write_metrics_files(report, dir.string());
  std::cout << metrics_table(report);
  return kExitOk;
}

int cmd_export_graph(const CommonOpts& o, const std::string& split, int conv_index) {
  Splits splits = obtain_splits(o, o.seed);
  const Dataset& ds = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;
  if (conv_index < 0 || conv_index >= static_cast<int>(ds.convs.size()))
    throw ConfigError("conversation index out of range (split has " +
                      std::to_string(ds.convs.size()) + ")");
  const Conversation& conv = ds.convs[static_cast<size_t>(conv_index)];
  auto ig = build_interaction_graph(conv, o.window);
  auto hg = build_hypergraph(conv, o.window);
  const std::string path = o.out_dir.empty() ? "graph-" + conv.id + ".txt" : o.out_dir;
  export_graph(ig, hg, path);
  std::cout << "wrote " << path << " (" << ig.edges.size() << " edges, " << hg.edges.size()
            << " hyperedges)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incomplete-multimodal conversation pipeline: spectral graph model, "
               "masking protocol, training and evaluation"};
  app.require_subcommand(1);

  CommonOpts synth_o, train_o, sweep_o, eval_o, graph_o;
  std::vector<double> sweep_rates;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::string gc_corrupt;
  std::string eval_checkpoint;
  std::string graph_split = "train";
  int graph_conv = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
  add_model_options(synth, synth_o);

  auto* train_cmd = app.add_subcommand("train", "train and evaluate on the test split");
  add_model_options(train_cmd, train_o);

  auto* sweep = app.add_subcommand("sweep", "train across a list of missing rates");
  add_model_options(sweep, sweep_o);
  sweep->add_option("--sweep", sweep_rates, "missing rates, e.g. 0.0,0.1,0.2")
      ->delimiter(',')
      ->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--eps", gc_eps, "central-difference step");
  gradcheck->add_option("--tolerance", gc_tol, "max relative error allowed");
  gradcheck->add_option("--corrupt", gc_corrupt,
                        "test hook: bias one group's gradient to prove the check detects it");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved checkpoint");
  add_model_options(eval_cmd, eval_o);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();

  auto* graph_cmd = app.add_subcommand("export-graph", "dump a conversation's graphs");
  add_model_options(graph_cmd, graph_o);
  graph_cmd->add_option("--split", graph_split, "train | val | test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  graph_cmd->add_option("--conv", graph_conv, "conversation index within the split");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_o);
    if (train_cmd->parsed()) return cmd_train(train_o);
    if (sweep->parsed()) return cmd_sweep(sweep_o, sweep_rates);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_eps, gc_tol, gc_corrupt);
    if (eval_cmd->parsed()) return cmd_eval(eval_o, eval_checkpoint);
    if (graph_cmd->parsed()) return cmd_export_graph(graph_o, graph_split, graph_conv);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
