#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdrgnn/autodiff.hpp"
#include "sdrgnn/data.hpp"
#include "sdrgnn/errors.hpp"
#include "sdrgnn/graph.hpp"
#include "sdrgnn/optim.hpp"

namespace sdrgnn {

struct ModelConfig {
  int64_t hidden = 100;    // per-stream node representation width
  int window = 2;          // interaction window
  int hyper_layers = 2;    // hypergraph propagation depth
  int heads = 4;           // attention heads
  int attn_inner = 0;      // total attention width; 0 = heads * ceil(D/heads)
  double dropout = 0.5;
  double leaky_slope = 0.01;
  bool use_speaker = true;
  bool use_context = true;
  bool use_freq_gate = true;
  bool use_self_opt = true;

  // Data-derived, fixed at model creation.
  std::array<int64_t, kNumModalities> dims{0, 0, 0};
  int classes = 0;
  int max_speakers = 2;

  int64_t feature_dim() const { return dims[0] + dims[1] + dims[2]; }
  int64_t gru_hidden() const { return (feature_dim() + 1) / 2; }
  int64_t latent_dim() const {
    return hidden * ((use_speaker ? 1 : 0) + (use_context ? 1 : 0));
  }
  int64_t head_dim() const { return attention_width() / heads; }
  int64_t attention_width() const {
    if (attn_inner > 0) return attn_inner;
    const int64_t d = feature_dim();
    return heads * ((d + heads - 1) / heads);
  }

  void validate() const {
    if (hidden < 1) throw ConfigError("hidden must be positive");
    if (window < 1) throw ConfigError("window must be positive");
    if (hyper_layers < 0) throw ConfigError("hyper-layers must be >= 0");
    if (heads < 1) throw ConfigError("heads must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (leaky_slope <= 0.0) throw ConfigError("leaky slope must be positive");
    if (!use_speaker && !use_context)
      throw ConfigError("at least one of the speaker/context streams must stay enabled");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (max_speakers < 1) throw ConfigError("max speakers must be positive");
    for (int64_t d : dims)
      if (d < 1) throw ConfigError("modality dims must be positive");
    if (attn_inner > 0 && attn_inner % heads != 0)
      throw ConfigError("attention width " + std::to_string(attn_inner) +
                        " is not divisible by " + std::to_string(heads) + " heads");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},
                     {"window", c.window},
                     {"hyper_layers", c.hyper_layers},
                     {"heads", c.heads},
                     {"attn_inner", c.attn_inner},
                     {"dropout", c.dropout},
                     {"leaky_slope", c.leaky_slope},
                     {"use_speaker", c.use_speaker},
                     {"use_context", c.use_context},
                     {"use_freq_gate", c.use_freq_gate},
                     {"use_self_opt", c.use_self_opt},
                     {"dims", c.dims},
                     {"classes", c.classes},
                     {"max_speakers", c.max_speakers}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("hidden").get_to(c.hidden);
  j.at("window").get_to(c.window);
  j.at("hyper_layers").get_to(c.hyper_layers);
  j.at("heads").get_to(c.heads);
  c.attn_inner = j.value("attn_inner", 0);
  j.at("dropout").get_to(c.dropout);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("use_speaker").get_to(c.use_speaker);
  j.at("use_context").get_to(c.use_context);
  j.at("use_freq_gate").get_to(c.use_freq_gate);
  j.at("use_self_opt").get_to(c.use_self_opt);
  j.at("dims").get_to(c.dims);
  j.at("classes").get_to(c.classes);
  j.at("max_speakers").get_to(c.max_speakers);
}

// ---------------------------------------------------------------------------
// Layers (free functions, each testable in isolation)

inline Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = Tensor::from_data(std::move(shape), a->value.data());
  return detail::make_node(std::move(out), {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
  });
}

struct GruParams {
  Var Wz, Uz, bz;  // update gate
  Var Wr, Ur, br;  // reset gate
  Var Wh, Uh, bh;  // candidate
};

// One step of the standard gated recurrence.
inline Var gru_cell(const Var& x, const Var& h_prev, const GruParams& p) {
  Var z = sigmoid(add_rowwise(add(matmul(x, p.Wz), matmul(h_prev, p.Uz)), p.bz));
  Var r = sigmoid(add_rowwise(add(matmul(x, p.Wr), matmul(h_prev, p.Ur)), p.br));
  Var cand = tanh_op(add_rowwise(add(matmul(x, p.Wh), matmul(mul(r, h_prev), p.Uh)), p.bh));
  Var keep = constant(Tensor::full(z->value.shape(), 1.0));
  return add(mul(sub(keep, z), h_prev), mul(z, cand));
}

// Runs the cell over the rows of x (n x d) and returns the per-step hidden
// states as an n x hidden matrix in natural order, regardless of direction.
inline Var gru_sequence(const Var& x, const GruParams& p, bool reverse) {
  require_rank2(x, "gru_sequence");
  const int64_t n = x->value.extent(0);
  const int64_t hidden = p.Uz->value.extent(0);
  Var h = constant(Tensor::zeros({1, hidden}));
  std::vector<Var> states(static_cast<size_t>(n));
  for (int64_t step = 0; step < n; ++step) {
    const int64_t t = reverse ? n - 1 - step : step;
    h = gru_cell(slice(x, 0, t, 1), h, p);
    states[static_cast<size_t>(t)] = h;
  }
  return concat(states, 0);
}

// Relation-typed neighbor averaging with a per-relation transform; relations
// with no edges contribute nothing.
inline Var rgcn(const Var& h, const std::vector<std::vector<std::pair<int, int>>>& edges_by_rel,
                const std::vector<std::vector<int>>& neighbor_count,
                const std::vector<Var>& rel_weights) {
  require_rank2(h, "rgcn");
  const int64_t n = h->value.extent(0);
  if (edges_by_rel.size() != rel_weights.size())
    throw ShapeError("rgcn: one weight matrix per relation required");
  Var acc;
  for (size_t r = 0; r < edges_by_rel.size(); ++r) {
    const auto& edges = edges_by_rel[r];
    if (edges.empty()) continue;
    std::vector<int64_t> src, dst;
    Tensor inv_count({static_cast<int64_t>(edges.size())});
    for (size_t k = 0; k < edges.size(); ++k) {
      src.push_back(edges[k].first);
      dst.push_back(edges[k].second);
      inv_count[static_cast<int64_t>(k)] =
          1.0 / static_cast<double>(neighbor_count[r][static_cast<size_t>(edges[k].first)]);
    }
    Var neighbor_rows = gather_rows(h, std::move(dst));
    Var averaged = scatter_add_rows(scale_rows(neighbor_rows, constant(std::move(inv_count))),
                                    std::move(src), n);
    Var transformed = matmul(averaged, rel_weights[r]);
    acc = acc ? add(acc, transformed) : transformed;
  }
  if (!acc) throw ShapeError("rgcn: graph has no edges");
  return relu(acc);
}

// Spectral-style propagation over the weighted hypergraph. The propagation
// matrix is rebuilt from the current weights on every call, so gradients
// reach both the per-incidence and the per-edge weights through the degree
// normalizations as well.
inline Var hypergraph_conv(Var v, const WeightedHypergraph& hg, const Var& gamma_pos,
                           const Var& lambda_pos, int layers, double leaky_slope) {
  require_rank2(v, "hypergraph_conv");
  if (v->value.extent(0) != hg.n) throw ShapeError("hypergraph_conv: node count mismatch");
  if (layers == 0) return v;
  const int64_t n = hg.n, e = hg.num_edges();
  std::vector<int64_t> rows, cols;
  rows.reserve(static_cast<size_t>(hg.nnz()));
  cols.reserve(static_cast<size_t>(hg.nnz()));
  for (const auto& [node, edge] : hg.incidences) {
    rows.push_back(node);
    cols.push_back(edge);
  }
  Var pattern = constant(hg.incidence_pattern());                    // n x E, binary
  Var weighted = scatter_matrix(gamma_pos, rows, cols, n, e);        // n x E
  Var node_deg = reshape(matmul(pattern, reshape(lambda_pos, {e, 1})), {n});
  Var edge_deg = reshape(matmul(constant(Tensor::full({1, n}, 1.0)), weighted), {e});
  for (int64_t i = 0; i < node_deg->value.numel(); ++i)
    if (node_deg->value[i] <= 0.0) throw NumericError("hypergraph_conv: singular node degree");
  for (int64_t i = 0; i < edge_deg->value.numel(); ++i)
    if (edge_deg->value[i] <= 0.0) throw NumericError("hypergraph_conv: singular edge degree");
  Var right = scale_rows(transpose(weighted), reciprocal(edge_deg));  // E x n
  Var left = scale_cols(pattern, lambda_pos);                         // n x E
  Var prop = scale_rows(matmul(left, right), reciprocal(node_deg));   // n x n
  for (int l = 0; l < layers; ++l) v = leaky_relu(matmul(prop, v), leaky_slope);
  return v;
}

// Residual neighbor aggregation with signed scalar gates in (-1, 1): a
// negative gate subtracts the neighbor (difference emphasis), a positive one
// smooths. `edge_norms[r][k]` scales the gate pre-activation of edge k.
inline Var freq_gate(const Var& v,
                     const std::vector<std::vector<std::pair<int, int>>>& edges_by_rel,
                     const std::vector<std::vector<double>>& edge_norms,
                     const std::vector<Var>& gate_weights) {
  require_rank2(v, "freq_gate");
  const int64_t n = v->value.extent(0);
  if (edges_by_rel.size() != gate_weights.size())
    throw ShapeError("freq_gate: one gate vector per relation required");
  Var out = v;
  for (size_t r = 0; r < edges_by_rel.size(); ++r) {
    const auto& edges = edges_by_rel[r];
    if (edges.empty()) continue;
    std::vector<int64_t> src, dst;
    Tensor norms({static_cast<int64_t>(edges.size()), 1});
    for (size_t k = 0; k < edges.size(); ++k) {
      src.push_back(edges[k].first);
      dst.push_back(edges[k].second);
      norms.at(static_cast<int64_t>(k), 0) = edge_norms[r][k];
    }
    Var vi = gather_rows(v, src);
    Var vj = gather_rows(v, dst);
    Var pre = matmul(concat({vi, vj}, 1), gate_weights[r]);  // m x 1
    Var gate = tanh_op(mul(pre, constant(std::move(norms))));
    Var contrib = scale_rows(vj, reshape(gate, {static_cast<int64_t>(edges.size())}));
    out = add(out, scatter_add_rows(contrib, std::move(src), n));
  }
  return out;
}

inline Var fuse_streams(const Var& speaker_stream, const Var& context_stream) {
  if (speaker_stream && context_stream) {
    if (speaker_stream->value.extent(0) != context_stream->value.extent(0))
      throw ShapeError("fuse: row counts differ");
    return concat({speaker_stream, context_stream}, 1);
  }
  if (speaker_stream) return speaker_stream;
  if (context_stream) return context_stream;
  throw ConfigError("fuse: both streams disabled");
}

// Multi-head scaled dot-product self-attention over utterance positions.
inline Var attention_fuse(const Var& f, int heads, const Var& wq, const Var& wk, const Var& wv,
                          const Var& wo) {
  require_rank2(f, "attention_fuse");
  const int64_t inner = wq->value.extent(1);
  if (inner % heads != 0)
    throw ConfigError("attention width " + std::to_string(inner) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  const int64_t dh = inner / heads;
  Var q = matmul(f, wq);
  Var k = matmul(f, wk);
  Var v = matmul(f, wv);
  std::vector<Var> head_out;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice(q, 1, h * dh, dh);
    Var kh = slice(k, 1, h * dh, dh);
    Var vh = slice(v, 1, h * dh, dh);
    Var weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    head_out.push_back(matmul(weights, vh));
  }
  return matmul(concat(head_out, 1), wo);
}

inline Var classify(const Var& latent, const Var& wc, const Var& bc) {
  return softmax(add_rowwise(matmul(latent, wc), bc), 1);
}

// ---------------------------------------------------------------------------
// The assembled model

struct ConvGraphs {
  InteractionGraph ig;
  WeightedHypergraph hg;
};

struct ForwardOutput {
  Var latent;                             // n x latent_dim
  std::array<Var, kNumModalities> recon;  // n x d_m each
  Var probs;                              // n x classes, rows sum to 1
};

class Model {
 public:
  Model(ModelConfig config, uint64_t seed) : cfg(std::move(config)), store(seed) {
    cfg.validate();
    const int64_t d = cfg.feature_dim();
    const int64_t s = cfg.max_speakers;
    const int64_t gh = cfg.gru_hidden();
    const int64_t h = cfg.hidden;

    enc_spk_W = store.create_uniform("enc.spk.W", {d + s, d}, d + s);
    enc_spk_b = store.create_zeros("enc.spk.b", {d});
    auto make_gru = [&](const std::string& prefix) {
      GruParams p;
      p.Wz = store.create_uniform(prefix + ".Wz", {d, gh}, d);
      p.Uz = store.create_uniform(prefix + ".Uz", {gh, gh}, gh);
      p.bz = store.create_zeros(prefix + ".bz", {gh});
      p.Wr = store.create_uniform(prefix + ".Wr", {d, gh}, d);
      p.Ur = store.create_uniform(prefix + ".Ur", {gh, gh}, gh);
      p.br = store.create_zeros(prefix + ".br", {gh});
      p.Wh = store.create_uniform(prefix + ".Wh", {d, gh}, d);
      p.Uh = store.create_uniform(prefix + ".Uh", {gh, gh}, gh);
      p.bh = store.create_zeros(prefix + ".bh", {gh});
      return p;
    };
    gru_fwd = make_gru("enc.gru.fwd");
    gru_bwd = make_gru("enc.gru.bwd");
    enc_out_W = store.create_uniform("enc.out.W", {2 * gh, d}, 2 * gh);
    enc_out_b = store.create_zeros("enc.out.b", {d});

    if (cfg.use_speaker) {
      const int rels = static_cast<int>(s * s);
      for (int r = 0; r < rels; ++r)
        rgcn_sp.push_back(store.create_uniform("rgcn.sp.W." + std::to_string(r), {d, h}, d));
      if (cfg.use_freq_gate)
        for (int r = 0; r < rels; ++r)
          gate_sp.push_back(
              store.create_uniform("gate.sp.W." + std::to_string(r), {2 * h, 1}, 2 * h));
    }
    if (cfg.use_context) {
      for (int r = 0; r < kNumContextRels; ++r)
        rgcn_co.push_back(store.create_uniform("rgcn.co.W." + std::to_string(r), {d, h}, d));
      if (cfg.use_freq_gate)
        for (int r = 0; r < kNumContextRels; ++r)
          gate_co.push_back(
              store.create_uniform("gate.co.W." + std::to_string(r), {2 * h, 1}, 2 * h));
    }

    const int64_t dl = cfg.latent_dim();
    for (int m = 0; m < kNumModalities; ++m) {
      rec_W[m] = store.create_uniform(std::string("rec.W.") + kModalityNames[m],
                                      {dl, cfg.dims[m]}, dl);
      rec_b[m] = store.create_zeros(std::string("rec.b.") + kModalityNames[m], {cfg.dims[m]});
    }
    if (cfg.use_self_opt) {
      const int64_t inner = cfg.attention_width();
      attn_Wq = store.create_uniform("attn.Wq", {d, inner}, d);
      attn_Wk = store.create_uniform("attn.Wk", {d, inner}, d);
      attn_Wv = store.create_uniform("attn.Wv", {d, inner}, d);
      attn_Wo = store.create_uniform("attn.Wo", {inner, d}, inner);
    }
    cls_W = store.create_uniform("cls.W", {dl, cfg.classes}, dl);
    cls_b = store.create_zeros("cls.b", {cfg.classes});
  }

  ConvGraphs build_graphs(const Conversation& conv) const {
    ConvGraphs g;
    g.ig = build_interaction_graph(conv, cfg.window, cfg.max_speakers);
    g.hg = build_hypergraph(conv, cfg.window);
    return g;
  }

  // Per-conversation hypergraph weights, created on first use with raw value
  // 0 (weight exp(0) = 1).
  std::pair<Var, Var> hyper_weights_raw(const Conversation& conv, const WeightedHypergraph& hg) {
    const std::string key = conv.id + "." + hg.structure_key();
    Var gamma = store.get_or_create("hyper.gamma." + key,
                                    [&] { return Tensor::zeros({hg.nnz()}); });
    Var lambda = store.get_or_create("hyper.lambda." + key,
                                     [&] { return Tensor::zeros({hg.num_edges()}); });
    return {gamma, lambda};
  }

  // Speaker one-hot appended to the imputed features, projected back to the
  // feature width, then both recurrent passes with a final projection.
  Var encode_context(const Conversation& conv, bool training, Rng& drop_rng) {
    const int64_t n = conv.size();
    if (n == 0) throw DataError("encode: empty conversation");
    const int64_t d = cfg.feature_dim();
    Tensor input({n, d + cfg.max_speakers});
    for (int64_t i = 0; i < n; ++i) {
      const auto& u = conv.utts[static_cast<size_t>(i)];
      if (u.speaker >= cfg.max_speakers)
        throw DataError("encode: speaker id " + std::to_string(u.speaker) +
                        " outside model roster of size " + std::to_string(cfg.max_speakers));
      auto imputed = impute_input(u);
      int64_t off = 0;
      for (int m = 0; m < kNumModalities; ++m)
        for (int64_t j = 0; j < cfg.dims[m]; ++j) input.at(i, off++) = imputed[m][j];
      input.at(i, d + u.speaker) = 1.0;
    }
    Var x = add_rowwise(matmul(constant(std::move(input)), enc_spk_W), enc_spk_b);
    Var fwd = gru_sequence(x, gru_fwd, false);
    Var bwd = gru_sequence(x, gru_bwd, true);
    Var enc = add_rowwise(matmul(concat({fwd, bwd}, 1), enc_out_W), enc_out_b);
    return dropout(enc, cfg.dropout, training, drop_rng);
  }

  // Pre-activation scale for the gate of edge (i, j): 1/sqrt of the product
  // of both endpoints' neighbor counts, each taken under the relation as
  // seen from that endpoint (reversed direction for the far end), so the
  // count is never zero.
  static std::vector<std::vector<double>> gate_norms(
      const std::vector<std::vector<std::pair<int, int>>>& edges_by_rel,
      const std::vector<std::vector<int>>& neighbor_count,
      const std::function<int(int)>& reverse_rel) {
    std::vector<std::vector<double>> norms(edges_by_rel.size());
    for (size_t r = 0; r < edges_by_rel.size(); ++r) {
      const int rr = reverse_rel(static_cast<int>(r));
      for (const auto& [i, j] : edges_by_rel[r]) {
        const double di = neighbor_count[r][static_cast<size_t>(i)];
        const double dj = neighbor_count[static_cast<size_t>(rr)][static_cast<size_t>(j)];
        norms[r].push_back(1.0 / std::sqrt(di * dj));
      }
    }
    return norms;
  }

  ForwardOutput forward(const Conversation& conv, const ConvGraphs& graphs, bool training,
                        Rng& drop_rng) {
    const auto& ig = graphs.ig;
    Var enc = encode_context(conv, training, drop_rng);
    auto [gamma_raw, lambda_raw] = hyper_weights_raw(conv, graphs.hg);
    Var gamma_pos = exp_op(gamma_raw);
    Var lambda_pos = exp_op(lambda_raw);

    const int vocab = cfg.max_speakers;
    auto reverse_speaker = [vocab](int r) { return (r % vocab) * vocab + r / vocab; };
    auto reverse_context = [](int r) {
      return r == kBackward ? kForward : (r == kForward ? kBackward : kPresent);
    };

    Var stream_sp, stream_co;
    if (cfg.use_speaker) {
      stream_sp = rgcn(enc, ig.edges_by_speaker_rel, ig.neighbor_count_speaker, rgcn_sp);
      stream_sp = hypergraph_conv(stream_sp, graphs.hg, gamma_pos, lambda_pos, cfg.hyper_layers,
                                  cfg.leaky_slope);
      if (cfg.use_freq_gate)
        stream_sp = freq_gate(stream_sp, ig.edges_by_speaker_rel,
                              gate_norms(ig.edges_by_speaker_rel, ig.neighbor_count_speaker,
                                         reverse_speaker),
                              gate_sp);
    }
    if (cfg.use_context) {
      stream_co = rgcn(enc, ig.edges_by_context_rel, ig.neighbor_count_context, rgcn_co);
      stream_co = hypergraph_conv(stream_co, graphs.hg, gamma_pos, lambda_pos, cfg.hyper_layers,
                                  cfg.leaky_slope);
      if (cfg.use_freq_gate)
        stream_co = freq_gate(stream_co, ig.edges_by_context_rel,
                              gate_norms(ig.edges_by_context_rel, ig.neighbor_count_context,
                                         reverse_context),
                              gate_co);
    }
    Var latent = dropout(fuse_streams(stream_sp, stream_co), cfg.dropout, training, drop_rng);

    ForwardOutput out;
    out.latent = latent;
    std::vector<Var> parts;
    for (int m = 0; m < kNumModalities; ++m)
      parts.push_back(add_rowwise(matmul(latent, rec_W[m]), rec_b[m]));
    Var recon = concat(parts, 1);
    if (cfg.use_self_opt)
      recon = attention_fuse(recon, cfg.heads, attn_Wq, attn_Wk, attn_Wv, attn_Wo);
    int64_t off = 0;
    for (int m = 0; m < kNumModalities; ++m) {
      out.recon[m] = slice(recon, 1, off, cfg.dims[m]);
      off += cfg.dims[m];
    }
    out.probs = classify(latent, cls_W, cls_b);
    return out;
  }

  ModelConfig cfg;
  ParamStore store;

  Var enc_spk_W, enc_spk_b;
  GruParams gru_fwd, gru_bwd;
  Var enc_out_W, enc_out_b;
  std::vector<Var> rgcn_sp, rgcn_co;
  std::vector<Var> gate_sp, gate_co;
  std::array<Var, kNumModalities> rec_W, rec_b;
  Var attn_Wq, attn_Wk, attn_Wv, attn_Wo;
  Var cls_W, cls_b;
};

// ---------------------------------------------------------------------------
// Checkpoints: a small binary container; raw little-endian doubles keep the
// round trip bit-exact.

inline constexpr uint32_t kCheckpointMagic = 0x53445247;  // "SDRG"
inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_i64 = [&](int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  put_u32(kCheckpointMagic);
  put_u32(kCheckpointVersion);
  const std::string cfg_json = nlohmann::json(model.cfg).dump();
  put_u32(static_cast<uint32_t>(cfg_json.size()));
  out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  put_i64(static_cast<int64_t>(model.store.all().size()));
  for (const auto& p : model.store.all()) {
    put_u32(static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(p->trainable ? 1 : 0);
    put_u32(static_cast<uint32_t>(p->node->value.rank()));
    for (int64_t e : p->node->value.shape()) put_i64(e);
    out.write(reinterpret_cast<const char*>(p->node->value.data().data()),
              static_cast<std::streamsize>(p->node->value.numel() * sizeof(double)));
  }
  if (!out) throw DataError("short write on checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  auto get_u32 = [&] {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_i64 = [&] {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  if (get_u32() != kCheckpointMagic) throw DataError(path + ": not a checkpoint file");
  if (get_u32() != kCheckpointVersion) throw DataError(path + ": unsupported checkpoint version");
  const uint32_t cfg_len = get_u32();
  std::string cfg_json(cfg_len, '\0');
  in.read(cfg_json.data(), cfg_len);
  ModelConfig cfg;
  try {
    from_json(nlohmann::json::parse(cfg_json), cfg);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad config block: " + e.what());
  }
  Model model(cfg, /*seed=*/0);
  const int64_t count = get_i64();
  for (int64_t k = 0; k < count; ++k) {
    const uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const bool trainable = get_u32() != 0;
    const uint32_t rank = get_u32();
    std::vector<int64_t> shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = get_i64();
    Tensor t(shape.empty() ? std::vector<int64_t>{} : shape);
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated checkpoint at parameter " + name);
    if (auto p = model.store.find(name)) {
      if (!p->node->value.same_shape(t))
        throw ShapeError(path + ": parameter " + name + " has shape " + t.shape_str() +
                         ", expected " + p->node->value.shape_str());
      p->node->value = std::move(t);
    } else {
      model.store.create(name, std::move(t), trainable);
    }
  }
  return model;
}

}  // namespace sdrgnn
