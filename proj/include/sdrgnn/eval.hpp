#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sdrgnn/data.hpp"
#include "sdrgnn/errors.hpp"
#include "sdrgnn/model.hpp"

namespace sdrgnn {

// Rows are true labels, columns are predictions; labels are 1-based outside,
// 0-based inside.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes)
      : classes_(classes), counts_(static_cast<size_t>(classes) * classes, 0) {
    if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
  }

  void add(int true_label, int predicted_label) {
    if (true_label < 1 || true_label > classes_ || predicted_label < 1 ||
        predicted_label > classes_)
      throw DataError("confusion matrix: label outside 1.." + std::to_string(classes_));
    ++counts_[static_cast<size_t>((true_label - 1) * classes_ + (predicted_label - 1))];
  }

  int64_t at(int true_label, int predicted_label) const {
    return counts_[static_cast<size_t>((true_label - 1) * classes_ + (predicted_label - 1))];
  }

  int classes() const { return classes_; }

  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : counts_) t += c;
    return t;
  }

  int64_t support(int label) const {
    int64_t s = 0;
    for (int p = 1; p <= classes_; ++p) s += at(label, p);
    return s;
  }

  int64_t predicted_count(int label) const {
    int64_t s = 0;
    for (int t = 1; t <= classes_; ++t) s += at(t, label);
    return s;
  }

 private:
  int classes_;
  std::vector<int64_t> counts_;
};

// F1 per class; a class that is never predicted and never true gets 0 by
// convention (and contributes nothing to the weighted mean since its support
// is 0).
inline std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<double> f1(static_cast<size_t>(cm.classes()), 0.0);
  for (int c = 1; c <= cm.classes(); ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double pred = static_cast<double>(cm.predicted_count(c));
    const double truth = static_cast<double>(cm.support(c));
    const double precision = pred > 0 ? tp / pred : 0.0;
    const double recall = truth > 0 ? tp / truth : 0.0;
    f1[static_cast<size_t>(c - 1)] =
        precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

// Support-weighted mean of per-class scores.
inline double weighted_f1(const std::vector<double>& f1, const std::vector<int64_t>& support) {
  if (f1.size() != support.size()) throw ShapeError("weighted_f1: one support per class");
  double num = 0.0, den = 0.0;
  for (size_t c = 0; c < f1.size(); ++c) {
    num += static_cast<double>(support[c]) * f1[c];
    den += static_cast<double>(support[c]);
  }
  if (den == 0.0) throw DataError("weighted_f1: no support");
  return num / den;
}

inline double waf1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("waf1: empty confusion matrix");
  std::vector<int64_t> support;
  for (int c = 1; c <= cm.classes(); ++c) support.push_back(cm.support(c));
  return weighted_f1(per_class_f1(cm), support);
}

inline double accuracy(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total == 0) throw DataError("accuracy: empty confusion matrix");
  int64_t hits = 0;
  for (int c = 1; c <= cm.classes(); ++c) hits += cm.at(c, c);
  return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Reconstruction error over masked slots only

class ReconstructionMse {
 public:
  void add(int modality, const Tensor& predicted, const Tensor& truth) {
    if (!predicted.same_shape(truth))
      throw ShapeError("mse: prediction " + predicted.shape_str() + " vs truth " +
                       truth.shape_str());
    for (int64_t i = 0; i < predicted.numel(); ++i) {
      const double d = predicted[i] - truth[i];
      sq_[static_cast<size_t>(modality)] += d * d;
    }
    elems_[static_cast<size_t>(modality)] += predicted.numel();
  }

  // Absent (not zero) when no slot of that modality was masked.
  std::optional<double> per_modality(int m) const {
    if (elems_[static_cast<size_t>(m)] == 0) return std::nullopt;
    return sq_[static_cast<size_t>(m)] / static_cast<double>(elems_[static_cast<size_t>(m)]);
  }

  std::optional<double> pooled() const {
    int64_t n = elems_[0] + elems_[1] + elems_[2];
    if (n == 0) return std::nullopt;
    return (sq_[0] + sq_[1] + sq_[2]) / static_cast<double>(n);
  }

 private:
  std::array<double, kNumModalities> sq_{0, 0, 0};
  std::array<int64_t, kNumModalities> elems_{0, 0, 0};
};

struct MetricsReport {
  double waf1 = 0.0;
  double accuracy = 0.0;
  std::vector<double> f1;
  std::vector<int64_t> support;
  std::array<std::optional<double>, kNumModalities> mse;
  std::optional<double> mse_pooled;
  double realized_missing_rate = 0.0;
  int64_t param_count = 0;
  ConfusionMatrix cm{1};
};

inline int argmax_row(const Tensor& m, int64_t row) {
  int best = 0;
  for (int64_t j = 1; j < m.extent(1); ++j)
    if (m.at(row, j) > m.at(row, best)) best = static_cast<int>(j);
  return best;
}

// Full evaluation pass: eval-mode forward per conversation, confusion-based
// classification metrics plus masked-slot reconstruction error.
inline MetricsReport evaluate_model(Model& model, const Dataset& ds) {
  if (ds.convs.empty()) throw DataError("evaluate: empty dataset");
  ConfusionMatrix cm(model.cfg.classes);
  ReconstructionMse mse;
  Rng unused(0);  // dropout is off outside training
  for (const auto& conv : ds.convs) {
    auto graphs = model.build_graphs(conv);
    auto out = model.forward(conv, graphs, /*training=*/false, unused);
    for (int64_t i = 0; i < conv.size(); ++i) {
      const auto& u = conv.utts[static_cast<size_t>(i)];
      cm.add(u.label, argmax_row(out.probs->value, i) + 1);
      for (int m = 0; m < kNumModalities; ++m) {
        if (u.mask[m]) continue;
        Tensor pred({model.cfg.dims[m]});
        for (int64_t j = 0; j < pred.numel(); ++j) pred[j] = out.recon[m]->value.at(i, j);
        mse.add(m, pred, u.features[m]);
      }
    }
  }
  MetricsReport rep;
  rep.cm = cm;
  rep.waf1 = waf1(cm);
  rep.accuracy = accuracy(cm);
  rep.f1 = per_class_f1(cm);
  for (int c = 1; c <= cm.classes(); ++c) rep.support.push_back(cm.support(c));
  for (int m = 0; m < kNumModalities; ++m) rep.mse[m] = mse.per_modality(m);
  rep.mse_pooled = mse.pooled();
  rep.realized_missing_rate = missing_rate(ds);
  rep.param_count = model.store.count_trainable_elements();
  return rep;
}

// Masked-slot error of the trivial zero-vector imputation; the reference
// point reconstruction has to beat.
inline std::optional<double> zero_fill_mse(const Dataset& ds) {
  ReconstructionMse mse;
  for (const auto& conv : ds.convs)
    for (const auto& u : conv.utts)
      for (int m = 0; m < kNumModalities; ++m)
        if (!u.mask[m]) mse.add(m, Tensor::zeros({u.features[m].extent(0)}), u.features[m]);
  return mse.pooled();
}

// ---------------------------------------------------------------------------
// Report files

inline std::string metrics_table(const MetricsReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "WAF1                 " << rep.waf1 << "\n";
  os << "ACC                  " << rep.accuracy << "\n";
  for (size_t c = 0; c < rep.f1.size(); ++c)
    os << "F1[class " << c + 1 << "]          " << rep.f1[c] << "  (support " << rep.support[c]
       << ")\n";
  for (int m = 0; m < kNumModalities; ++m) {
    os << "MSE[" << kModalityNames[m] << "]               ";
    if (rep.mse[m])
      os << *rep.mse[m] << "\n";
    else
      os << "absent (no masked slots)\n";
  }
  os << "MSE[pooled]          ";
  if (rep.mse_pooled)
    os << *rep.mse_pooled << "\n";
  else
    os << "absent (no masked slots)\n";
  os << "missing rate         " << rep.realized_missing_rate << "\n";
  os << "trainable params     " << rep.param_count << "\n";
  return os.str();
}

inline void write_metrics_files(const MetricsReport& rep, const std::string& dir) {
  {
    std::ofstream txt(dir + "/metrics.txt");
    if (!txt) throw DataError("cannot write " + dir + "/metrics.txt");
    txt << metrics_table(rep);
  }
  {
    std::ofstream csv(dir + "/metrics.csv");
    if (!csv) throw DataError("cannot write " + dir + "/metrics.csv");
    csv << std::setprecision(17);
    csv << "metric,value\n";
    csv << "waf1," << rep.waf1 << "\n";
    csv << "acc," << rep.accuracy << "\n";
    for (size_t c = 0; c < rep.f1.size(); ++c) {
      csv << "f1_class_" << c + 1 << "," << rep.f1[c] << "\n";
      csv << "support_class_" << c + 1 << "," << rep.support[c] << "\n";
    }
    for (int m = 0; m < kNumModalities; ++m) {
      csv << "mse_" << kModalityNames[m] << ",";
      if (rep.mse[m])
        csv << *rep.mse[m] << "\n";
      else
        csv << "absent\n";
    }
    csv << "mse_pooled,";
    if (rep.mse_pooled)
      csv << *rep.mse_pooled << "\n";
    else
      csv << "absent\n";
    csv << "missing_rate," << rep.realized_missing_rate << "\n";
    csv << "param_count," << rep.param_count << "\n";
  }
  {
    std::ofstream grid(dir + "/confusion.csv");
    if (!grid) throw DataError("cannot write " + dir + "/confusion.csv");
    for (int t = 1; t <= rep.cm.classes(); ++t) {
      for (int p = 1; p <= rep.cm.classes(); ++p) {
        if (p > 1) grid << ',';
        grid << rep.cm.at(t, p);
      }
      grid << '\n';
    }
  }
}

}  // namespace sdrgnn
