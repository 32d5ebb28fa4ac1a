// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criteria 5-8 train real models on synthetic conversations,
// so this binary takes a few minutes.

#include <chrono>
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

#include "sdrgnn/data.hpp"
#include "sdrgnn/eval.hpp"
#include "sdrgnn/gradcheck.hpp"
#include "sdrgnn/model.hpp"
#include "sdrgnn/training.hpp"

using namespace sdrgnn;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<CriterionResult> g_results;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  g_results.push_back({id, name, pass, detail});
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << ": " << name;
  if (!detail.empty()) std::cout << " -- " << detail;
  std::cout << std::endl;
}

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Shared synthetic protocol for the training-based criteria. Signal strength
// is set so the task is comfortably learnable with all three modalities but
// degrades visibly once most of them are masked.

struct ProtocolRun {
  double test_waf1 = 0;
  double test_acc = 0;
  std::optional<double> test_mse;
  std::optional<double> zero_fill;
};

SynthConfig protocol_synth(uint64_t seed) {
  SynthConfig cfg;
  cfg.conversations = 24;
  cfg.utterances = 16;
  cfg.speakers = 2;
  cfg.classes = 6;
  cfg.dims = {6, 6, 6};
  cfg.signal = 1.0;
  cfg.seed = seed;
  return cfg;
}

ModelConfig protocol_model(const SynthSplits& s, const std::vector<std::string>& ablate) {
  ModelConfig cfg;
  cfg.hidden = 12;
  cfg.window = 2;
  cfg.hyper_layers = 2;
  cfg.heads = 4;
  cfg.dropout = 0.2;
  cfg.dims = s.train.dims;
  cfg.classes = 6;
  cfg.max_speakers = 2;
  for (const auto& a : ablate) {
    if (a == "sp") cfg.use_speaker = false;
    if (a == "co") cfg.use_context = false;
    if (a == "fre") cfg.use_freq_gate = false;
    if (a == "op") cfg.use_self_opt = false;
  }
  return cfg;
}

ProtocolRun run_protocol(uint64_t seed, double missing_rate,
                         const std::vector<std::string>& ablate = {}) {
  SynthSplits splits = synth_generate_splits(protocol_synth(Rng(seed).fork(1).next_u64()),
                                             /*val_convs=*/8, /*test_convs=*/16);
  auto [train_ds, plan_tr] = apply_missing(splits.train, missing_rate, Rng(seed).fork(2).next_u64());
  auto [val_ds, plan_va] = apply_missing(splits.val, missing_rate, Rng(seed).fork(3).next_u64());
  auto [test_ds, plan_te] = apply_missing(splits.test, missing_rate, Rng(seed).fork(4).next_u64());

  Model model(protocol_model(splits, ablate), seed);
  TrainConfig tc;
  tc.epochs = 150;
  tc.patience = 30;
  tc.seed = seed;
  RunRecord rec = train(model, train_ds, val_ds, tc);
  (void)rec;

  MetricsReport rep = evaluate_model(model, test_ds);
  ProtocolRun out;
  out.test_waf1 = rep.waf1;
  out.test_acc = rep.accuracy;
  out.test_mse = rep.mse_pooled;
  out.zero_fill = zero_fill_mse(test_ds);
  return out;
}

// ---------------------------------------------------------------------------

void criterion_1_gradient_suite() {
  const double t0 = now_seconds();
  GradSuiteReport report = run_gradcheck_suite(1e-5, 1e-4);
  const double elapsed = now_seconds() - t0;
  double worst = 0;
  std::string worst_group;
  for (const auto& g : report.groups)
    if (g.max_rel_err > worst) {
      worst = g.max_rel_err;
      worst_group = g.name;
    }
  const bool pass = report.passed() && elapsed < 30.0;
  std::ostringstream os;
  os << report.groups.size() << " groups, worst " << std::scientific << std::setprecision(2)
     << worst << " (" << worst_group << "), " << fmt(elapsed, 1) << "s";
  record(1, "gradient suite (layers + composed loss, rel err < 1e-4, < 30 s)", pass, os.str());
}

void criterion_2_masking_protocol() {
  Rng rng(8121);
  bool pass = true;
  std::string detail;
  int plans = 0;
  const double grid[7] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  while (plans < 1000 && pass) {
    SynthConfig cfg;
    cfg.conversations = 1;
    cfg.utterances = 3 + static_cast<int>(rng.uniform_int(8));  // n <= 10
    cfg.classes = 2;
    cfg.dims = {2, 2, 2};
    cfg.seed = rng.next_u64();
    Dataset ds = synth_generate(cfg);
    const double rate = grid[plans % 7];
    auto [masked, plan] = apply_missing(ds, rate, rng.next_u64());
    const int64_t n = ds.num_utterances();
    for (const auto& conv : masked.convs)
      for (const auto& u : conv.utts)
        if (u.available_count() < 1) {
          pass = false;
          detail = "utterance lost every modality";
        }
    if (std::abs(missing_rate(masked) - rate) > 1.0 / static_cast<double>(3 * n) + 1e-12) {
      pass = false;
      detail = "realized rate " + fmt(missing_rate(masked)) + " vs requested " + fmt(rate) +
               " at n=" + std::to_string(n);
    }
    ++plans;
  }
  if (pass) {
    SynthConfig cfg;
    cfg.seed = 5;
    Dataset ds = synth_generate(cfg);
    for (double bad : {0.75, 0.8, 1.0}) {
      try {
        apply_missing(ds, bad, 1);
        pass = false;
        detail = "rate " + fmt(bad) + " was accepted";
        break;
      } catch (const DataError&) {
      }
    }
    if (pass) detail = std::to_string(plans) + " plans ok; rates above 0.7 rejected";
  }
  record(2, "masking protocol (retention, realized rate, cap)", pass, detail);
}

void criterion_3_degenerate_graphs() {
  bool pass = true;
  std::string detail = "identity hypergraph, zero gates, single-neighbor aggregation all exact";

  // Identity hypergraph: propagation reduces to elementwise LeakyReLU.
  {
    WeightedHypergraph hg;
    hg.n = 1;
    hg.edges.push_back({{0}, false, 0});
    hg.incidences = {{0, 0}};
    Var v = constant(Tensor::matrix({{1, -1}}));
    Var out = hypergraph_conv(v, hg, constant(Tensor::full({1}, 1.0)),
                              constant(Tensor::full({1}, 1.0)), 1, 0.01);
    if (out->value.at(0, 0) != 1.0 || out->value.at(0, 1) != -0.01) {
      pass = false;
      detail = "identity hypergraph did not reduce to LeakyReLU";
    }
    Rng rng(31);
    WeightedHypergraph hg3;
    hg3.n = 3;
    for (int i = 0; i < 3; ++i) {
      hg3.edges.push_back({{i}, false, i});
      hg3.incidences.emplace_back(i, i);
    }
    Tensor x({3, 4});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    Var out3 = hypergraph_conv(constant(x), hg3, constant(Tensor::full({3}, 1.0)),
                               constant(Tensor::full({3}, 1.0)), 1, 0.01);
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double expect = x[i] >= 0 ? x[i] : 0.01 * x[i];
      if (out3->value[i] != expect) {
        pass = false;
        detail = "identity hypergraph mismatch on random input";
      }
    }
  }

  // Zero gate weights leave the input untouched, bit for bit.
  {
    Rng rng(32);
    Tensor x({4, 5});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    std::vector<std::vector<std::pair<int, int>>> edges{
        {{0, 1}, {1, 0}, {2, 3}}, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}};
    std::vector<std::vector<double>> norms{{0.7, 0.7, 1.0}, {1, 1, 1, 1}};
    Var out = freq_gate(constant(x), edges, norms,
                        {constant(Tensor::zeros({10, 1})), constant(Tensor::zeros({10, 1}))});
    if (!approx_equal(out->value, x, 0.0)) {
      pass = false;
      detail = "zero gates are not the identity";
    }
  }

  // Single relation, single neighbor: exactly ReLU(W h_j).
  {
    Rng rng(33);
    Tensor h({2, 3});
    for (int64_t i = 0; i < h.numel(); ++i) h[i] = rng.normal();
    Tensor w({3, 3});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
    std::vector<std::vector<std::pair<int, int>>> edges{{{0, 1}}};
    std::vector<std::vector<int>> counts{{1, 0}};
    Var out = rgcn(constant(h), edges, counts, {constant(w)});
    for (int64_t j = 0; j < 3; ++j) {
      double pre = 0;
      for (int64_t k = 0; k < 3; ++k) pre += h.at(1, k) * w.at(k, j);
      const double expect = pre > 0 ? pre : 0.0;
      if (out->value.at(0, j) != expect) {
        pass = false;
        detail = "single-neighbor aggregation mismatch";
      }
    }
  }
  record(3, "degenerate-graph oracles (exact)", pass, detail);
}

void criterion_4_metric_oracles() {
  bool pass = true;
  std::string detail;
  Rng rng(4441);
  for (int trial = 0; trial < 1000 && pass; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform_int(5));
    const int n = 1 + static_cast<int>(rng.uniform_int(50));
    ConfusionMatrix cm(classes);
    std::vector<int> truth, pred;
    for (int i = 0; i < n; ++i) {
      truth.push_back(1 + static_cast<int>(rng.uniform_int(classes)));
      pred.push_back(1 + static_cast<int>(rng.uniform_int(classes)));
      cm.add(truth.back(), pred.back());
    }
    // Brute force straight from the pairs.
    double num = 0, den = 0;
    int64_t hits = 0;
    for (int c = 1; c <= classes; ++c) {
      int64_t tp = 0, fp = 0, fn = 0, support = 0;
      for (int i = 0; i < n; ++i) {
        support += truth[static_cast<size_t>(i)] == c;
        tp += truth[static_cast<size_t>(i)] == c && pred[static_cast<size_t>(i)] == c;
        fp += truth[static_cast<size_t>(i)] != c && pred[static_cast<size_t>(i)] == c;
        fn += truth[static_cast<size_t>(i)] == c && pred[static_cast<size_t>(i)] != c;
      }
      const double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
      const double r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
      num += double(support) * (p + r > 0 ? 2 * p * r / (p + r) : 0.0);
      den += double(support);
    }
    for (int i = 0; i < n; ++i) hits += truth[static_cast<size_t>(i)] == pred[static_cast<size_t>(i)];
    if (std::abs(waf1(cm) - num / den) > 1e-12 ||
        std::abs(accuracy(cm) - double(hits) / n) > 1e-12) {
      pass = false;
      detail = "mismatch at trial " + std::to_string(trial);
    }
  }
  if (pass) {
    const double hand = weighted_f1({0.8, 0.4}, {3, 1});
    if (std::abs(hand - 0.7) > 1e-12) {
      pass = false;
      detail = "hand case gave " + fmt(hand);
    } else {
      detail = "1000 trials match brute force; hand case 0.7 exact";
    }
  }
  record(4, "metric oracle equivalence (WAF1/ACC vs brute force)", pass, detail);
}

void criterion_5_toy_overfit() {
  const double t0 = now_seconds();
  SynthConfig cfg;
  cfg.conversations = 8;
  cfg.utterances = 10;
  cfg.classes = 4;
  cfg.dims = {8, 8, 8};
  cfg.signal = 5.0;
  cfg.seed = 551;
  Dataset train_ds = synth_generate(cfg);

  ModelConfig mcfg;
  mcfg.hidden = 16;
  mcfg.window = 2;
  mcfg.hyper_layers = 2;
  mcfg.heads = 4;
  mcfg.dims = cfg.dims;
  mcfg.classes = 4;
  mcfg.max_speakers = 2;
  mcfg.dropout = 0.0;  // capacity probe: regularization off
  Model model(mcfg, 552);

  TrainConfig tc;
  tc.epochs = 300;
  tc.patience = 300;
  tc.seed = 553;
  // Mostly-classification loss; the unnormalized squared error at signal 5 is
  // ~50x the cross entropy and starves the classification path of trunk
  // gradient within the epoch budget otherwise.
  tc.loss_weight = 0.1;
  RunRecord rec = train(model, train_ds, train_ds, tc);  // overfit: select on train
  const double train_acc = evaluate_model(model, train_ds).accuracy;
  const double elapsed = now_seconds() - t0;
  const bool pass = train_acc >= 0.99 && elapsed < 60.0;
  record(5, "toy overfit (train acc >= 0.99 within 300 epochs, < 60 s)", pass,
         "train acc " + fmt(train_acc) + " after " + std::to_string(rec.epochs.size()) +
             " epochs, " + fmt(elapsed, 1) + "s");
}

void criterion_6_degradation_trend() {
  const int seeds = 5;
  double mean_full = 0, mean_masked = 0;
  int ordered = 0;
  std::ostringstream per_seed;
  for (int s = 0; s < seeds; ++s) {
    const uint64_t seed = 660 + static_cast<uint64_t>(s);
    ProtocolRun full = run_protocol(seed, 0.0);
    ProtocolRun masked = run_protocol(seed, 0.7);
    mean_full += full.test_waf1;
    mean_masked += masked.test_waf1;
    ordered += full.test_waf1 >= masked.test_waf1;
    per_seed << " [" << fmt(full.test_waf1, 3) << ">=" << fmt(masked.test_waf1, 3) << "]";
  }
  mean_full /= seeds;
  mean_masked /= seeds;
  const bool pass = mean_masked <= mean_full + 0.02 && ordered >= 4;
  record(6, "degradation trend (WAF1 at M=0.7 vs M=0.0, 5 seeds)", pass,
         "mean " + fmt(mean_full) + " -> " + fmt(mean_masked) + ", ordered " +
             std::to_string(ordered) + "/5:" + per_seed.str());
}

void criterion_7_reconstruction_beats_zero_fill() {
  bool pass = true;
  std::ostringstream detail;
  for (int s = 0; s < 3; ++s) {
    ProtocolRun run = run_protocol(770 + static_cast<uint64_t>(s), 0.3);
    if (!run.test_mse || !run.zero_fill) {
      pass = false;
      detail << " seed " << s << ": missing MSE";
      continue;
    }
    detail << " [" << fmt(*run.test_mse, 3) << "<" << fmt(*run.zero_fill, 3) << "]";
    if (!(*run.test_mse < *run.zero_fill)) pass = false;
  }
  record(7, "reconstruction beats zero-fill (masked-slot MSE at M=0.3, 3 seeds)", pass,
         detail.str());
}

void criterion_8_ablation_direction() {
  const int seeds = 5;
  const std::vector<std::pair<std::string, std::vector<std::string>>> variants = {
      {"full", {}}, {"w/o Sp", {"sp"}}, {"w/o Co", {"co"}}, {"w/o Fre", {"fre"}},
      {"w/o Op", {"op"}}};
  std::map<std::string, double> means;
  for (const auto& [label, ablate] : variants) {
    double sum = 0;
    for (int s = 0; s < seeds; ++s)
      sum += run_protocol(880 + static_cast<uint64_t>(s), 0.4, ablate).test_waf1;
    means[label] = sum / seeds;
  }
  const bool pass = means["full"] >= means["w/o Fre"] && means["full"] >= means["w/o Co"];
  std::ostringstream os;
  os << "full " << fmt(means["full"]) << " vs w/o Fre " << fmt(means["w/o Fre"]) << ", w/o Co "
     << fmt(means["w/o Co"]) << " (hard); w/o Sp " << fmt(means["w/o Sp"]) << ", w/o Op "
     << fmt(means["w/o Op"]) << " (reported)";
  record(8, "ablation direction (full >= w/o Fre, w/o Co at M=0.4, 5 seeds)", pass, os.str());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// record.csv without its wall-clock column.
std::string strip_seconds_column(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto last_comma = line.rfind(',');
    out << (last_comma == std::string::npos ? line : line.substr(0, last_comma)) << '\n';
  }
  return out.str();
}

void criterion_9_determinism_replay() {
  const char* cli = std::getenv("SDRGNN_CLI");
  if (!cli) {
    record(9, "determinism and replay", false, "SDRGNN_CLI not set; run through ctest");
    return;
  }
  const fs::path root = fs::temp_directory_path() / "sdrgnn-acceptance-c9";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string args =
      " train --synth convs=4,val=2,test=3,utts=8,classes=3,dims=4x4x4,signal=2"
      " --missing-rate 0.3 --epochs 4 --hidden 6 --window 2 --heads 2 --seed 77 --out ";
  auto run_cli = [&](const std::string& extra, const fs::path& dir) {
    const std::string cmd = std::string(cli) + args + dir.string() + extra + " > " +
                            (root / "log.txt").string() + " 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  const fs::path a = root / "a", b = root / "b", c = root / "c";
  bool pass = run_cli("", a) == 0 && run_cli("", b) == 0;
  std::string detail;
  if (!pass) {
    detail = "training run failed: " + read_file(root / "log.txt").substr(0, 200);
  } else {
    if (read_file(a / "metrics.csv") != read_file(b / "metrics.csv")) {
      pass = false;
      detail = "metrics differ between identical runs";
    } else if (read_file(a / "masks.json") != read_file(b / "masks.json")) {
      pass = false;
      detail = "mask sidecars differ between identical runs";
    } else if (strip_seconds_column(read_file(a / "record.csv")) !=
               strip_seconds_column(read_file(b / "record.csv"))) {
      pass = false;
      detail = "per-epoch records differ between identical runs";
    } else if (read_file(a / "confusion.csv") != read_file(b / "confusion.csv")) {
      pass = false;
      detail = "confusion grids differ";
    }
  }
  if (pass) {
    // Replay from the recorded sidecar instead of re-sampling.
    pass = run_cli(" --mask-plan " + (a / "masks.json").string(), c) == 0;
    if (!pass) {
      detail = "replay run failed";
    } else if (read_file(a / "metrics.csv") != read_file(c / "metrics.csv")) {
      pass = false;
      detail = "sidecar replay changed the metrics";
    } else {
      detail = "identical reruns and sidecar replay reproduce metrics byte-for-byte";
    }
  }
  record(9, "determinism and replay (seed + config + mask sidecar)", pass, detail);
}

void criterion_10_loss_sanity() {
  SynthSplits splits = synth_generate_splits(protocol_synth(1001), 4, 4);
  Model model(protocol_model(splits, {}), 1002);
  bool pass = true;
  std::string detail;

  // Untrained cross entropy near ln(c).
  double ce_sum = 0;
  Rng r(0);
  for (const auto& conv : splits.train.convs) {
    auto graphs = model.build_graphs(conv);
    auto out = model.forward(conv, graphs, false, r);
    ce_sum += loss_ce(out.probs, conversation_labels(conv))->value.item();
  }
  const double ce0 = ce_sum / static_cast<double>(splits.train.convs.size());
  const double lnc = std::log(6.0);
  if (std::abs(ce0 - lnc) > 0.2 * lnc) {
    pass = false;
    detail = "untrained CE " + fmt(ce0) + " vs ln c " + fmt(lnc);
  }

  auto grad_norm_of = [&](Model& m, const std::string& prefix, double e) {
    const Conversation& conv = splits.train.convs[0];
    auto graphs = m.build_graphs(conv);
    Rng rr(0);
    auto out = m.forward(conv, graphs, false, rr);
    backward(loss_total(loss_ce(out.probs, conversation_labels(conv)),
                        loss_rec(out.recon, conv, RecScope::kAllSlots), e));
    double norm = 0;
    for (const auto& p : m.store.all())
      if (p->name.rfind(prefix, 0) == 0 && p->node->grad_live)
        for (int64_t i = 0; i < p->node->grad.numel(); ++i) norm += std::abs(p->node->grad[i]);
    m.store.zero_grads();
    return norm;
  };

  Model m0(protocol_model(splits, {}), 1003);
  if (grad_norm_of(m0, "rec.", 0.0) != 0.0 || grad_norm_of(m0, "attn.", 0.0) != 0.0) {
    pass = false;
    detail += " reconstruction path got gradient at e=0;";
  }
  Model m1(protocol_model(splits, {}), 1004);
  if (grad_norm_of(m1, "cls.", 1.0) != 0.0) {
    pass = false;
    detail += " classifier got gradient at e=1;";
  }
  if (pass)
    detail = "untrained CE " + fmt(ce0) + " ~ ln c " + fmt(lnc) +
             "; gradient routing exact at e=0 and e=1";
  record(10, "loss sanity (untrained CE, gradient routing by loss weight)", pass, detail);
}

}  // namespace

int main() {
  std::cout << "acceptance suite" << std::endl;
  const double t0 = now_seconds();
  criterion_1_gradient_suite();
  criterion_2_masking_protocol();
  criterion_3_degenerate_graphs();
  criterion_4_metric_oracles();
  criterion_5_toy_overfit();
  criterion_6_degradation_trend();
  criterion_7_reconstruction_beats_zero_fill();
  criterion_8_ablation_direction();
  criterion_9_determinism_replay();
  criterion_10_loss_sanity();

  int failed = 0;
  for (const auto& r : g_results) failed += !r.pass;
  std::cout << "\n" << (g_results.size() - static_cast<size_t>(failed)) << "/" << g_results.size()
            << " criteria passed in " << fmt(now_seconds() - t0, 1) << "s" << std::endl;
  return failed == 0 ? 0 : 1;
}
