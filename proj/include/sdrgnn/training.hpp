#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdrgnn/autodiff.hpp"
#include "sdrgnn/data.hpp"
#include "sdrgnn/errors.hpp"
#include "sdrgnn/eval.hpp"
#include "sdrgnn/model.hpp"
#include "sdrgnn/optim.hpp"

namespace sdrgnn {

enum class RecScope { kAllSlots, kMaskedOnly };

struct TrainConfig {
  int epochs = 150;
  double loss_weight = 0.5;  // weight of the reconstruction term; 1 - it goes to cross entropy
  AdamConfig adam;
  uint64_t seed = 1;
  RecScope rec_scope = RecScope::kAllSlots;
  int patience = 20;  // epochs without a new best validation WAF1
  bool clip = false;
  double clip_norm = 5.0;
};

// Mean negative log of the probability assigned to the true class; the log
// is clamped at 1e-12 so a confidently wrong model yields a large finite
// value instead of an infinity.
inline Var loss_ce(const Var& probs, const std::vector<int>& labels) {
  require_rank2(probs, "loss_ce");
  const int64_t n = probs->value.extent(0);
  const int64_t c = probs->value.extent(1);
  if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("loss_ce: one label per row");
  std::vector<int64_t> cols;
  for (int label : labels) {
    if (label < 1 || label > c)
      throw DataError("loss_ce: label " + std::to_string(label) + " outside 1.." +
                      std::to_string(c));
    cols.push_back(label - 1);
  }
  Var picked = select_per_row(probs, std::move(cols));
  return scale(sum(log_clamped(picked, 1e-12)), -1.0 / static_cast<double>(n));
}

// Per-modality mean squared reconstruction error. All-slots scope averages
// over every utterance; masked-only restricts the sum to dropped slots and
// divides by their count instead.
inline Var loss_rec(const std::array<Var, kNumModalities>& recon, const Conversation& truth,
                    RecScope scope) {
  const int64_t n = truth.size();
  Var total;
  for (int m = 0; m < kNumModalities; ++m) {
    if (!recon[m]) throw ShapeError("loss_rec: missing reconstruction stream");
    const int64_t dm = recon[m]->value.extent(1);
    if (recon[m]->value.extent(0) != n) throw ShapeError("loss_rec: row count mismatch");
    Tensor target({n, dm});
    Tensor row_select({n, dm});
    int64_t rows_counted = 0;
    for (int64_t i = 0; i < n; ++i) {
      const auto& u = truth.utts[static_cast<size_t>(i)];
      if (u.features[m].extent(0) != dm)
        throw ShapeError("loss_rec: ground truth dim mismatch for modality " +
                         std::string(kModalityNames[m]));
      const bool counted = scope == RecScope::kAllSlots || !u.mask[m];
      if (counted) ++rows_counted;
      for (int64_t j = 0; j < dm; ++j) {
        target.at(i, j) = u.features[m][j];
        row_select.at(i, j) = counted ? 1.0 : 0.0;
      }
    }
    if (rows_counted == 0) continue;
    Var diff = sub(recon[m], constant(std::move(target)));
    if (scope == RecScope::kMaskedOnly) diff = mul(diff, constant(std::move(row_select)));
    Var term = scale(sum(mul(diff, diff)),
                     1.0 / (static_cast<double>(dm) * static_cast<double>(rows_counted)));
    total = total ? add(total, term) : term;
  }
  return total ? total : constant(Tensor::scalar(0.0));
}

// (1-e) * ce + e * rec. Terms with a zero coefficient are dropped outright,
// so the other path receives exactly no gradient.
inline Var loss_total(const Var& ce, const Var& rec, double e) {
  if (e < 0.0 || e > 1.0) throw ConfigError("loss weight must lie in [0, 1]");
  if (e == 0.0) return ce;
  if (e == 1.0) return rec;
  return add(scale(ce, 1.0 - e), scale(rec, e));
}

struct EpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_waf1 = 0.0;
  double seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochStat> epochs;
  int best_epoch = 0;  // 1-based; 0 = no epoch ran
  double best_val_waf1 = 0.0;
};

inline std::vector<int> conversation_labels(const Conversation& conv) {
  std::vector<int> labels;
  for (const auto& u : conv.utts) labels.push_back(u.label);
  return labels;
}

// One optimization pass over a dataset: per conversation, forward, combined
// loss, backward, one optimizer step. Validation WAF1 picks the best
// checkpoint; training stops once `patience` epochs pass without a new best.
// Single-threaded and fully seed-deterministic; the model ends up holding
// the best parameters.
inline RunRecord train(Model& model, const Dataset& train_ds, const Dataset& val_ds,
                       const TrainConfig& tc) {
  if (train_ds.convs.empty()) throw DataError("train: empty training split");
  if (val_ds.convs.empty()) throw DataError("train: empty validation split");
  if (tc.loss_weight < 0.0 || tc.loss_weight > 1.0)
    throw ConfigError("loss weight must lie in [0, 1]");
  if (tc.epochs < 0) throw ConfigError("epochs must be >= 0");

  RunRecord record;
  if (tc.epochs == 0) return record;

  std::vector<ConvGraphs> graphs;
  for (const auto& conv : train_ds.convs) graphs.push_back(model.build_graphs(conv));

  Rng order_rng = Rng(tc.seed).fork(1);
  Rng drop_rng = Rng(tc.seed).fork(2);
  Adam opt(tc.adam);

  std::unordered_map<std::string, Tensor> best_snapshot;
  int epochs_since_best = 0;

  std::vector<size_t> order(train_ds.convs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t k : order) {
      const Conversation& conv = train_ds.convs[k];
      auto out = model.forward(conv, graphs[k], /*training=*/true, drop_rng);
      Var ce = loss_ce(out.probs, conversation_labels(conv));
      Var rec = loss_rec(out.recon, conv, tc.rec_scope);
      Var loss = loss_total(ce, rec, tc.loss_weight);
      if (!loss->value.all_finite()) throw NumericError("train: non-finite loss");
      loss_sum += loss->value.item();
      backward(loss);
      if (tc.clip) clip_gradients(model.store, tc.clip_norm);
      opt.step(model.store);
    }

    double val_loss_sum = 0.0;
    ConfusionMatrix cm(model.cfg.classes);
    for (const auto& conv : val_ds.convs) {
      auto vg = model.build_graphs(conv);
      auto out = model.forward(conv, vg, /*training=*/false, drop_rng);
      Var ce = loss_ce(out.probs, conversation_labels(conv));
      Var rec = loss_rec(out.recon, conv, tc.rec_scope);
      val_loss_sum += loss_total(ce, rec, tc.loss_weight)->value.item();
      for (int64_t i = 0; i < conv.size(); ++i)
        cm.add(conv.utts[static_cast<size_t>(i)].label, argmax_row(out.probs->value, i) + 1);
    }
    const double val_waf1 = waf1(cm);

    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = loss_sum / static_cast<double>(train_ds.convs.size());
    stat.val_loss = val_loss_sum / static_cast<double>(val_ds.convs.size());
    stat.val_waf1 = val_waf1;
    stat.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record.epochs.push_back(stat);

    if (record.best_epoch == 0 || val_waf1 > record.best_val_waf1) {
      record.best_epoch = epoch;
      record.best_val_waf1 = val_waf1;
      best_snapshot = model.store.snapshot();
      epochs_since_best = 0;
    } else if (++epochs_since_best >= tc.patience) {
      break;
    }
  }

  if (!best_snapshot.empty()) model.store.restore(best_snapshot);
  return record;
}

inline void write_run_record(const RunRecord& record, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write run record: " + path);
  out << std::setprecision(17);
  out << "epoch,train_loss,val_loss,val_waf1,seconds\n";
  for (const auto& s : record.epochs)
    out << s.epoch << ',' << s.train_loss << ',' << s.val_loss << ',' << s.val_waf1 << ','
        << s.seconds << '\n';
}

}  // namespace sdrgnn
