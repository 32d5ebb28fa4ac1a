#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sdrgnn/data.hpp"
#include "sdrgnn/eval.hpp"
#include "sdrgnn/model.hpp"

using namespace sdrgnn;

namespace {

// Independent metric route: tallies per-class precision/recall straight from
// the label pairs, never touching the confusion-matrix class.
struct BruteForceMetrics {
  double waf1 = 0;
  double acc = 0;
};

BruteForceMetrics brute_force(const std::vector<int>& truth, const std::vector<int>& pred,
                              int classes) {
  BruteForceMetrics out;
  int64_t hits = 0;
  for (size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
  out.acc = static_cast<double>(hits) / static_cast<double>(truth.size());
  double num = 0, den = 0;
  for (int c = 1; c <= classes; ++c) {
    int64_t tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == c) ++support;
      if (truth[i] == c && pred[i] == c) ++tp;
      if (truth[i] != c && pred[i] == c) ++fp;
      if (truth[i] == c && pred[i] != c) ++fn;
    }
    const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    num += static_cast<double>(support) * f1;
    den += static_cast<double>(support);
  }
  out.waf1 = num / den;
  return out;
}

}  // namespace

TEST(PerClassF1, DiagonalIsPerfect) {
  ConfusionMatrix cm(3);
  cm.add(1, 1);
  cm.add(2, 2);
  cm.add(3, 3);
  for (double f : per_class_f1(cm)) EXPECT_DOUBLE_EQ(f, 1.0);
  EXPECT_DOUBLE_EQ(waf1(cm), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(cm), 1.0);
}

TEST(PerClassF1, AbsentClassIsZeroByConvention) {
  ConfusionMatrix cm(3);
  cm.add(1, 1);
  cm.add(2, 2);  // class 3 never true, never predicted
  auto f1 = per_class_f1(cm);
  EXPECT_DOUBLE_EQ(f1[2], 0.0);
  EXPECT_DOUBLE_EQ(waf1(cm), 1.0);  // zero-support class contributes nothing
}

TEST(PerClassF1, HandEvaluatedSymmetricCase) {
  ConfusionMatrix cm(2);
  for (int i = 0; i < 3; ++i) cm.add(1, 1);
  cm.add(1, 2);
  cm.add(2, 1);
  for (int i = 0; i < 3; ++i) cm.add(2, 2);
  auto f1 = per_class_f1(cm);
  EXPECT_NEAR(f1[0], 0.75, 1e-12);
  EXPECT_NEAR(f1[1], 0.75, 1e-12);
}

TEST(Waf1, HandEvaluatedWeighting) {
  EXPECT_NEAR(weighted_f1({0.8, 0.4}, {3, 1}), 0.7, 1e-12);
  // Equal supports reduce to the unweighted mean.
  EXPECT_NEAR(weighted_f1({0.6, 0.8}, {5, 5}), 0.7, 1e-12);
}

TEST(Waf1, SingleClassPerfect) {
  ConfusionMatrix cm(4);
  for (int i = 0; i < 5; ++i) cm.add(2, 2);
  EXPECT_DOUBLE_EQ(waf1(cm), 1.0);
}

TEST(Waf1, EmptyMatrixRejected) {
  ConfusionMatrix cm(3);
  EXPECT_THROW(waf1(cm), DataError);
  EXPECT_THROW(accuracy(cm), DataError);
}

TEST(Accuracy, HandCases) {
  ConfusionMatrix cm(2);
  cm.add(1, 1);
  cm.add(1, 2);
  cm.add(2, 1);
  cm.add(2, 2);
  EXPECT_DOUBLE_EQ(accuracy(cm), 0.5);
}

TEST(Accuracy, RandomPredictionsApproachChance) {
  Rng rng(400);
  const int classes = 5;
  ConfusionMatrix cm(classes);
  for (int i = 0; i < 200000; ++i)
    cm.add(1 + static_cast<int>(rng.uniform_int(classes)),
           1 + static_cast<int>(rng.uniform_int(classes)));
  EXPECT_NEAR(accuracy(cm), 1.0 / classes, 0.01);
}

TEST(MetricOracle, ConfusionMatrixMatchesBruteForce) {
  Rng rng(500);
  for (int trial = 0; trial < 1000; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform_int(5));
    const int n = 1 + static_cast<int>(rng.uniform_int(60));
    std::vector<int> truth, pred;
    ConfusionMatrix cm(classes);
    for (int i = 0; i < n; ++i) {
      truth.push_back(1 + static_cast<int>(rng.uniform_int(classes)));
      pred.push_back(1 + static_cast<int>(rng.uniform_int(classes)));
      cm.add(truth.back(), pred.back());
    }
    const auto bf = brute_force(truth, pred, classes);
    ASSERT_NEAR(waf1(cm), bf.waf1, 1e-12);
    ASSERT_NEAR(accuracy(cm), bf.acc, 1e-12);
  }
}

TEST(MetricOracle, Waf1InvariantUnderClassRelabeling) {
  Rng rng(600);
  const int classes = 4;
  std::vector<int> truth, pred;
  for (int i = 0; i < 200; ++i) {
    truth.push_back(1 + static_cast<int>(rng.uniform_int(classes)));
    pred.push_back(1 + static_cast<int>(rng.uniform_int(classes)));
  }
  ConfusionMatrix cm(classes);
  for (size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  const std::vector<int> perm{3, 1, 4, 2};
  ConfusionMatrix cm2(classes);
  for (size_t i = 0; i < truth.size(); ++i)
    cm2.add(perm[static_cast<size_t>(truth[i] - 1)], perm[static_cast<size_t>(pred[i] - 1)]);
  EXPECT_NEAR(waf1(cm), waf1(cm2), 1e-12);
  EXPECT_NEAR(accuracy(cm), accuracy(cm2), 1e-12);
}

TEST(ReconstructionMse, HandCasesAndAbsence) {
  ReconstructionMse mse;
  EXPECT_FALSE(mse.per_modality(0).has_value());
  EXPECT_FALSE(mse.pooled().has_value());

  mse.add(0, Tensor::vector({1, -1}), Tensor::vector({0, 0}));
  ASSERT_TRUE(mse.per_modality(0).has_value());
  EXPECT_NEAR(*mse.per_modality(0), 1.0, 1e-15);
  EXPECT_FALSE(mse.per_modality(1).has_value());

  ReconstructionMse exact;
  exact.add(2, Tensor::vector({3, 4}), Tensor::vector({3, 4}));
  EXPECT_NEAR(*exact.per_modality(2), 0.0, 1e-15);
}

TEST(ReconstructionMse, OrderInvariantAndMaskedOnly) {
  SynthConfig cfg;
  cfg.conversations = 3;
  cfg.utterances = 6;
  cfg.seed = 700;
  Dataset ds = synth_generate(cfg);
  auto [masked, plan] = apply_missing(ds, 0.4, 11);

  auto collect = [](const Dataset& d) {
    ReconstructionMse m;
    for (const auto& conv : d.convs)
      for (const auto& u : conv.utts)
        for (int mod = 0; mod < kNumModalities; ++mod)
          if (!u.mask[mod]) m.add(mod, Tensor::zeros({u.features[mod].extent(0)}), u.features[mod]);
    return m;
  };
  ReconstructionMse a = collect(masked);
  Dataset reversed = masked;
  std::reverse(reversed.convs.begin(), reversed.convs.end());
  for (auto& conv : reversed.convs) std::reverse(conv.utts.begin(), conv.utts.end());
  ReconstructionMse b = collect(reversed);
  EXPECT_NEAR(*a.pooled(), *b.pooled(), 1e-12);

  // Corrupting an observed slot's "prediction" cannot change the metric
  // because observed slots are never added.
  EXPECT_EQ(zero_fill_mse(masked).has_value(), true);
}

TEST(CountParams, ElementTotals) {
  ParamStore store(1);
  store.create("w", Tensor({2, 3}));
  EXPECT_EQ(store.count_trainable_elements(), 6);
  store.create("b", Tensor({3}));
  EXPECT_EQ(store.count_trainable_elements(), 9);
  store.create("frozen", Tensor({100}), /*trainable=*/false);
  EXPECT_EQ(store.count_trainable_elements(), 9);
}

TEST(EvaluateModel, EndToEndReportShape) {
  SynthConfig scfg;
  scfg.conversations = 3;
  scfg.utterances = 5;
  scfg.classes = 3;
  scfg.dims = {3, 3, 3};
  scfg.seed = 800;
  Dataset ds = synth_generate(scfg);
  auto [masked, plan] = apply_missing(ds, 0.3, 12);

  ModelConfig mcfg;
  mcfg.hidden = 4;
  mcfg.window = 2;
  mcfg.hyper_layers = 1;
  mcfg.heads = 3;
  mcfg.dropout = 0.0;
  mcfg.dims = scfg.dims;
  mcfg.classes = scfg.classes;
  mcfg.max_speakers = masked.max_speakers();
  Model model(mcfg, 801);

  MetricsReport rep = evaluate_model(model, masked);
  EXPECT_GE(rep.waf1, 0.0);
  EXPECT_LE(rep.waf1, 1.0);
  EXPECT_GE(rep.accuracy, 0.0);
  EXPECT_LE(rep.accuracy, 1.0);
  EXPECT_EQ(rep.cm.total(), masked.num_utterances());
  EXPECT_TRUE(rep.mse_pooled.has_value());
  EXPECT_NEAR(rep.realized_missing_rate, 0.3, 1.0 / (masked.num_utterances() * 3.0));
  EXPECT_EQ(rep.param_count, model.store.count_trainable_elements());

  const auto dir = std::filesystem::temp_directory_path() / "sdrgnn-eval-test";
  std::filesystem::create_directories(dir);
  write_metrics_files(rep, dir.string());
  for (const char* name : {"metrics.txt", "metrics.csv", "confusion.csv"}) {
    std::ifstream in(dir / name);
    EXPECT_TRUE(in.good()) << name;
  }
  // The confusion grid is c rows of c comma-separated counts.
  std::ifstream grid(dir / "confusion.csv");
  std::string line;
  int rows = 0;
  while (std::getline(grid, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, mcfg.classes);
}

TEST(EvaluateModel, EmptyDatasetRejected) {
  ModelConfig mcfg;
  mcfg.hidden = 3;
  mcfg.window = 1;
  mcfg.hyper_layers = 1;
  mcfg.heads = 2;
  mcfg.dropout = 0.0;
  mcfg.dims = {2, 2, 2};
  mcfg.classes = 2;
  mcfg.max_speakers = 2;
  Model model(mcfg, 1);
  Dataset empty;
  empty.classes = 2;
  empty.dims = {2, 2, 2};
  EXPECT_THROW(evaluate_model(model, empty), DataError);
}

TEST(EvaluateModel, NoMaskedSlotsReportsAbsentMse) {
  SynthConfig scfg;
  scfg.conversations = 2;
  scfg.utterances = 4;
  scfg.classes = 2;
  scfg.dims = {2, 2, 2};
  scfg.seed = 900;
  Dataset ds = synth_generate(scfg);
  ModelConfig mcfg;
  mcfg.hidden = 3;
  mcfg.window = 1;
  mcfg.hyper_layers = 1;
  mcfg.heads = 2;
  mcfg.dropout = 0.0;
  mcfg.dims = scfg.dims;
  mcfg.classes = 2;
  mcfg.max_speakers = 2;
  Model model(mcfg, 901);
  MetricsReport rep = evaluate_model(model, ds);
  for (int m = 0; m < kNumModalities; ++m) EXPECT_FALSE(rep.mse[m].has_value());
  EXPECT_FALSE(rep.mse_pooled.has_value());
  EXPECT_DOUBLE_EQ(rep.realized_missing_rate, 0.0);
}
