#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdrgnn/autodiff.hpp"
#include "sdrgnn/data.hpp"
#include "sdrgnn/errors.hpp"
#include "sdrgnn/model.hpp"
#include "sdrgnn/optim.hpp"
#include "sdrgnn/training.hpp"

namespace sdrgnn {

// abs error over the larger magnitude, floored so a near-zero pair compares
// absolutely at 1e-8 scale rather than blowing up.
inline double gradcheck_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t checked = 0;
};

// Central finite differences against the tape's gradients. `loss_fn` must
// rebuild the loss from the parameters' current values on every call;
// `group_of` buckets parameter names for reporting; `include` limits which
// parameters are perturbed (nullptr = all trainable).
inline std::vector<GradCheckGroup> finite_difference_check(
    ParamStore& store, const std::function<Var()>& loss_fn, double eps,
    const std::function<std::string(const std::string&)>& group_of,
    const std::function<bool(const std::string&)>& include = nullptr,
    const std::string& corrupt_group = "") {
  // Analytic pass.
  store.zero_grads();
  Var loss = loss_fn();
  backward(loss);
  std::unordered_map<std::string, Tensor> analytic;
  for (const auto& p : store.all()) {
    if (!p->trainable) continue;
    analytic[p->name] = p->node->grad_live ? p->node->grad : Tensor::zeros(p->node->value.shape());
  }
  store.zero_grads();

  if (!corrupt_group.empty()) {
    // Negative-control hook: bias one group's analytic gradient so the check
    // must flag it.
    for (auto& [name, grad] : analytic)
      if (group_of(name) == corrupt_group && grad.numel() > 0) grad[0] += 0.5;
  }

  std::map<std::string, GradCheckGroup> groups;
  for (const auto& p : store.all()) {
    if (!p->trainable) continue;
    if (include && !include(p->name)) continue;
    const std::string group = group_of(p->name);
    auto& g = groups[group];
    g.name = group;
    Tensor& value = p->node->value;
    const Tensor& a = analytic[p->name];
    for (int64_t i = 0; i < value.numel(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double f_plus = loss_fn()->value.item();
      value[i] = orig - eps;
      const double f_minus = loss_fn()->value.item();
      value[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double rel = gradcheck_relative_error(a[i], numeric);
      ++g.checked;
      if (rel > g.max_rel_err) {
        g.max_rel_err = rel;
        g.worst_param = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }

  std::vector<GradCheckGroup> out;
  for (auto& [_, g] : groups) out.push_back(std::move(g));
  return out;
}

// ---------------------------------------------------------------------------
// The layer-by-layer suite at small dimensions

namespace gradcheck_detail {

inline Conversation tiny_conversation(int n, std::array<int64_t, kNumModalities> dims,
                                      int classes, uint64_t seed) {
  Rng rng(seed);
  Conversation conv;
  conv.id = "gradcheck";
  conv.num_speakers = 2;
  for (int i = 0; i < n; ++i) {
    Utterance u;
    u.speaker = i % 2;
    u.label = 1 + static_cast<int>(rng.uniform_int(classes));
    for (int m = 0; m < kNumModalities; ++m) {
      Tensor f({dims[m]});
      for (int64_t j = 0; j < f.numel(); ++j) f[j] = rng.normal();
      u.features[m] = std::move(f);
    }
    // Mask one modality on every other utterance so imputation and the
    // masked-slot paths participate.
    if (i % 2 == 1) u.mask[static_cast<size_t>(i % kNumModalities)] = 0;
    conv.utts.push_back(std::move(u));
  }
  return conv;
}

inline Tensor random_like(const std::vector<int64_t>& shape, Rng& rng) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

// Projects a matrix output to a scalar with fixed random weights so every
// output element influences the loss.
inline Var project_to_scalar(const Var& out, Rng& rng) {
  return sum(mul(out, constant(random_like(out->value.shape(), rng))));
}

}  // namespace gradcheck_detail

struct GradSuiteReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 1e-4;

  bool passed() const {
    for (const auto& g : groups)
      if (g.max_rel_err >= tolerance) return false;
    return !groups.empty();
  }
};

// Checks each layer in isolation and then the composed model loss, at the
// reference desk dimensions (5 utterances, dims 3/3/3, hidden 4, 2 heads).
inline GradSuiteReport run_gradcheck_suite(double eps = 1e-5, double tol = 1e-4,
                                           const std::string& corrupt_group = "") {
  GradSuiteReport report;
  report.tolerance = tol;

  ModelConfig cfg;
  cfg.hidden = 4;
  cfg.window = 2;
  cfg.hyper_layers = 2;
  cfg.heads = 2;
  cfg.dropout = 0.0;  // finite differences need a deterministic map
  cfg.dims = {3, 3, 3};
  cfg.classes = 3;
  cfg.max_speakers = 2;
  Model model(cfg, /*seed=*/7);

  Conversation conv = gradcheck_detail::tiny_conversation(5, cfg.dims, cfg.classes, 11);
  ConvGraphs graphs = model.build_graphs(conv);
  Rng proj_rng(23);

  auto group_of = [](const std::string& name) {
    return name.substr(0, name.find('.'));
  };
  auto prefix_filter = [](const std::string& prefix) {
    return [prefix](const std::string& name) { return name.rfind(prefix, 0) == 0; };
  };
  auto run_layer = [&](const std::string& label, const std::function<Var()>& loss_fn,
                       const std::string& prefix) {
    auto groups = finite_difference_check(
        model.store, loss_fn, eps, [label](const std::string&) { return label; },
        prefix_filter(prefix), corrupt_group == label ? label : "");
    for (auto& g : groups) report.groups.push_back(std::move(g));
  };

  // Encoder (GRU cell pair + projections), driven through real inputs.
  {
    Tensor proj = gradcheck_detail::random_like({5, cfg.feature_dim()}, proj_rng);
    Rng none(0);
    run_layer("encoder", [&] {
      return sum(mul(model.encode_context(conv, false, none), constant(proj)));
    }, "enc.");
  }

  // R-GCN over fixed node features.
  {
    Tensor input = gradcheck_detail::random_like({5, cfg.feature_dim()}, proj_rng);
    Tensor proj = gradcheck_detail::random_like({5, cfg.hidden}, proj_rng);
    run_layer("rgcn", [&] {
      Var h = constant(input);
      Var sp = rgcn(h, graphs.ig.edges_by_speaker_rel, graphs.ig.neighbor_count_speaker,
                    model.rgcn_sp);
      Var co = rgcn(h, graphs.ig.edges_by_context_rel, graphs.ig.neighbor_count_context,
                    model.rgcn_co);
      return add(sum(mul(sp, constant(proj))), sum(mul(co, constant(proj))));
    }, "rgcn.");
  }

  // Hypergraph propagation including both weight families.
  {
    model.hyper_weights_raw(conv, graphs.hg);  // ensure the parameters exist
    Tensor input = gradcheck_detail::random_like({5, cfg.hidden}, proj_rng);
    Tensor proj = gradcheck_detail::random_like({5, cfg.hidden}, proj_rng);
    run_layer("hyper", [&] {
      auto [gamma_raw, lambda_raw] = model.hyper_weights_raw(conv, graphs.hg);
      Var v = hypergraph_conv(constant(input), graphs.hg, exp_op(gamma_raw), exp_op(lambda_raw),
                              cfg.hyper_layers, cfg.leaky_slope);
      return sum(mul(v, constant(proj)));
    }, "hyper.");
  }

  // Frequency gates on both streams.
  {
    Tensor input = gradcheck_detail::random_like({5, cfg.hidden}, proj_rng);
    Tensor proj = gradcheck_detail::random_like({5, cfg.hidden}, proj_rng);
    const int vocab = cfg.max_speakers;
    auto rev_sp = [vocab](int r) { return (r % vocab) * vocab + r / vocab; };
    auto rev_co = [](int r) { return r == kBackward ? kForward : (r == kForward ? kBackward : kPresent); };
    run_layer("gate", [&] {
      Var v = constant(input);
      Var sp = freq_gate(v, graphs.ig.edges_by_speaker_rel,
                         Model::gate_norms(graphs.ig.edges_by_speaker_rel,
                                           graphs.ig.neighbor_count_speaker, rev_sp),
                         model.gate_sp);
      Var co = freq_gate(v, graphs.ig.edges_by_context_rel,
                         Model::gate_norms(graphs.ig.edges_by_context_rel,
                                           graphs.ig.neighbor_count_context, rev_co),
                         model.gate_co);
      return add(sum(mul(sp, constant(proj))), sum(mul(co, constant(proj))));
    }, "gate.");
  }

  // Reconstruction head.
  {
    Tensor latent = gradcheck_detail::random_like({5, cfg.latent_dim()}, proj_rng);
    Tensor proj = gradcheck_detail::random_like({5, cfg.feature_dim()}, proj_rng);
    run_layer("rec", [&] {
      std::vector<Var> parts;
      for (int m = 0; m < kNumModalities; ++m)
        parts.push_back(add_rowwise(matmul(constant(latent), model.rec_W[m]), model.rec_b[m]));
      return sum(mul(concat(parts, 1), constant(proj)));
    }, "rec.");
  }

  // Attention block.
  {
    Tensor f = gradcheck_detail::random_like({5, cfg.feature_dim()}, proj_rng);
    Tensor proj = gradcheck_detail::random_like({5, cfg.feature_dim()}, proj_rng);
    run_layer("attn", [&] {
      Var out = attention_fuse(constant(f), cfg.heads, model.attn_Wq, model.attn_Wk,
                               model.attn_Wv, model.attn_Wo);
      return sum(mul(out, constant(proj)));
    }, "attn.");
  }

  // Classifier through the cross-entropy loss.
  {
    Tensor latent = gradcheck_detail::random_like({5, cfg.latent_dim()}, proj_rng);
    run_layer("cls", [&] {
      return loss_ce(classify(constant(latent), model.cls_W, model.cls_b),
                     conversation_labels(conv));
    }, "cls.");
  }

  // Composed pipeline under the combined training loss; every parameter.
  {
    Rng none(0);
    auto composed = [&] {
      auto out = model.forward(conv, graphs, /*training=*/false, none);
      Var ce = loss_ce(out.probs, conversation_labels(conv));
      Var rec = loss_rec(out.recon, conv, RecScope::kAllSlots);
      return loss_total(ce, rec, 0.5);
    };
    auto groups = finite_difference_check(
        model.store, composed, eps,
        [&group_of](const std::string& name) { return "composed/" + group_of(name); }, nullptr,
        corrupt_group);
    for (auto& g : groups) report.groups.push_back(std::move(g));
  }

  return report;
}

}  // namespace sdrgnn
