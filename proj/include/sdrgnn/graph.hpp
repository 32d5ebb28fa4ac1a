#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sdrgnn/data.hpp"
#include "sdrgnn/errors.hpp"
#include "sdrgnn/tensor.hpp"

namespace sdrgnn {

// Temporal relation of an edge (i -> j): j before i, j == i, j after i.
enum ContextRel : int { kBackward = 0, kPresent = 1, kForward = 2 };
inline constexpr int kNumContextRels = 3;

inline const char* context_rel_name(int r) {
  static const char* names[kNumContextRels] = {"backward", "present", "forward"};
  return names[r];
}

struct TypedEdge {
  int src = 0;  // 0-based utterance index
  int dst = 0;
  int speaker_rel = 0;  // ordered pair (speaker(src), speaker(dst)) as src*S + dst
  int context_rel = kPresent;
};

// Windowed directed graph over the utterances of one conversation. Every
// node connects to all nodes within `window` positions, itself included.
// Each directed edge carries a speaker-pair relation and a temporal
// relation; neighbor counts per (node, relation) are cached because both
// aggregation layers normalize by them.
struct InteractionGraph {
  int n = 0;
  int window = 0;
  int speaker_vocab = 0;  // speaker ids are < this; speaker relations < this^2
  std::vector<TypedEdge> edges;

  // edges_by_*_rel[r] lists (src, dst) pairs of relation r.
  std::vector<std::vector<std::pair<int, int>>> edges_by_speaker_rel;
  std::vector<std::vector<std::pair<int, int>>> edges_by_context_rel;
  // neighbor_count_*[r][i] = |N_i^r|.
  std::vector<std::vector<int>> neighbor_count_speaker;
  std::vector<std::vector<int>> neighbor_count_context;

  int num_speaker_rels() const { return speaker_vocab * speaker_vocab; }
};

inline InteractionGraph build_interaction_graph(const Conversation& conv, int window,
                                                int speaker_vocab = 0) {
  if (conv.utts.empty()) throw DataError("interaction graph: empty conversation");
  if (window < 1) throw ConfigError("interaction graph: window must be positive");
  if (window > 4)
    std::cerr << "warning: window " << window << " outside the usual grid {1,2,3,4}\n";

  InteractionGraph g;
  g.n = static_cast<int>(conv.utts.size());
  g.window = window;
  g.speaker_vocab = std::max(speaker_vocab, conv.num_speakers);
  for (const auto& u : conv.utts)
    if (u.speaker >= g.speaker_vocab)
      throw DataError("interaction graph: speaker id " + std::to_string(u.speaker) +
                      " outside vocabulary of size " + std::to_string(g.speaker_vocab));

  const int sp_rels = g.num_speaker_rels();
  g.edges_by_speaker_rel.assign(static_cast<size_t>(sp_rels), {});
  g.edges_by_context_rel.assign(kNumContextRels, {});
  g.neighbor_count_speaker.assign(static_cast<size_t>(sp_rels),
                                  std::vector<int>(static_cast<size_t>(g.n), 0));
  g.neighbor_count_context.assign(kNumContextRels,
                                  std::vector<int>(static_cast<size_t>(g.n), 0));

  for (int i = 0; i < g.n; ++i) {
    const int lo = std::max(i - window, 0);
    const int hi = std::min(i + window, g.n - 1);
    for (int j = lo; j <= hi; ++j) {
      TypedEdge e;
      e.src = i;
      e.dst = j;
      e.speaker_rel = conv.utts[static_cast<size_t>(i)].speaker * g.speaker_vocab +
                      conv.utts[static_cast<size_t>(j)].speaker;
      e.context_rel = j < i ? kBackward : (j == i ? kPresent : kForward);
      g.edges_by_speaker_rel[static_cast<size_t>(e.speaker_rel)].emplace_back(i, j);
      g.edges_by_context_rel[static_cast<size_t>(e.context_rel)].emplace_back(i, j);
      ++g.neighbor_count_speaker[static_cast<size_t>(e.speaker_rel)][static_cast<size_t>(i)];
      ++g.neighbor_count_context[static_cast<size_t>(e.context_rel)][static_cast<size_t>(i)];
      g.edges.push_back(e);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Weighted hypergraph

struct Hyperedge {
  std::vector<int> nodes;  // ascending
  bool is_speaker = false;
  int tag = 0;  // window center or speaker id
};

// Incidence structure only; the per-incidence node weights and per-edge
// weights live in the parameter store (positive via exp, so weight 1 means a
// raw parameter of 0). `incidences` is the fixed sparsity pattern of both H
// and the weighted incidence matrix.
struct WeightedHypergraph {
  int n = 0;
  std::vector<Hyperedge> edges;
  std::vector<std::pair<int, int>> incidences;  // (node, edge), edge-major order

  int64_t num_edges() const { return static_cast<int64_t>(edges.size()); }
  int64_t nnz() const { return static_cast<int64_t>(incidences.size()); }

  // Binary incidence as a dense tensor (n x |E|).
  Tensor incidence_pattern() const {
    Tensor h({static_cast<int64_t>(n), num_edges()});
    for (const auto& [v, e] : incidences) h.at(v, e) = 1.0;
    return h;
  }

  // Distinguishes graphs with different structure when parameters are keyed
  // per conversation.
  std::string structure_key() const {
    return std::to_string(n) + "u" + std::to_string(num_edges()) + "e" + std::to_string(nnz());
  }
};

// One context hyperedge per window position (duplicates at the conversation
// boundary collapse), one speaker hyperedge per distinct speaker covering all
// of that speaker's utterances.
inline WeightedHypergraph build_hypergraph(const Conversation& conv, int window) {
  if (conv.utts.empty()) throw DataError("hypergraph: empty conversation");
  if (window < 1) throw ConfigError("hypergraph: window must be positive");

  WeightedHypergraph hg;
  hg.n = static_cast<int>(conv.utts.size());

  std::set<std::vector<int>> seen_windows;
  for (int i = 0; i < hg.n; ++i) {
    const int lo = std::max(i - window, 0);
    const int hi = std::min(i + window, hg.n - 1);
    std::vector<int> nodes;
    for (int j = lo; j <= hi; ++j) nodes.push_back(j);
    if (!seen_windows.insert(nodes).second) continue;
    Hyperedge e;
    e.nodes = std::move(nodes);
    e.is_speaker = false;
    e.tag = i;
    hg.edges.push_back(std::move(e));
  }

  std::vector<std::vector<int>> by_speaker(static_cast<size_t>(conv.num_speakers));
  for (int i = 0; i < hg.n; ++i)
    by_speaker[static_cast<size_t>(conv.utts[static_cast<size_t>(i)].speaker)].push_back(i);
  for (int s = 0; s < conv.num_speakers; ++s) {
    if (by_speaker[static_cast<size_t>(s)].empty()) continue;
    Hyperedge e;
    e.nodes = by_speaker[static_cast<size_t>(s)];
    e.is_speaker = true;
    e.tag = s;
    hg.edges.push_back(std::move(e));
  }

  for (size_t e = 0; e < hg.edges.size(); ++e)
    for (int v : hg.edges[e].nodes) hg.incidences.emplace_back(v, static_cast<int>(e));

  // Context windows cover every node and each node has a speaker edge, so
  // degeneracy would indicate construction breakage.
  std::vector<int> node_deg(static_cast<size_t>(hg.n), 0);
  for (const auto& [v, e] : hg.incidences) ++node_deg[static_cast<size_t>(v)];
  for (int v = 0; v < hg.n; ++v)
    if (node_deg[static_cast<size_t>(v)] == 0)
      throw NumericError("hypergraph: node " + std::to_string(v) + " in no hyperedge");
  return hg;
}

// Diagonals of the node-degree and edge-degree matrices for the current
// weights: D_ii = sum_e H_ie * lambda_e, B_ee = sum_v weighted incidences.
// `gamma` holds one positive weight per incidence (in hg.incidences order),
// `lambda` one per hyperedge.
inline std::pair<Tensor, Tensor> degree_matrices(const WeightedHypergraph& hg,
                                                 const Tensor& gamma, const Tensor& lambda) {
  if (gamma.numel() != hg.nnz())
    throw ShapeError("degree_matrices: gamma has " + std::to_string(gamma.numel()) +
                     " entries, expected " + std::to_string(hg.nnz()));
  if (lambda.numel() != hg.num_edges())
    throw ShapeError("degree_matrices: lambda has " + std::to_string(lambda.numel()) +
                     " entries, expected " + std::to_string(hg.num_edges()));
  Tensor node_deg({static_cast<int64_t>(hg.n)});
  Tensor edge_deg({hg.num_edges()});
  for (size_t k = 0; k < hg.incidences.size(); ++k) {
    const auto& [v, e] = hg.incidences[k];
    node_deg[v] += lambda[e];
    edge_deg[e] += gamma[static_cast<int64_t>(k)];
  }
  for (int64_t v = 0; v < node_deg.numel(); ++v)
    if (node_deg[v] <= 0.0)
      throw NumericError("degree_matrices: node " + std::to_string(v) + " has degree " +
                         std::to_string(node_deg[v]));
  for (int64_t e = 0; e < edge_deg.numel(); ++e)
    if (edge_deg[e] <= 0.0)
      throw NumericError("degree_matrices: hyperedge " + std::to_string(e) + " has degree " +
                         std::to_string(edge_deg[e]));
  return {std::move(node_deg), std::move(edge_deg)};
}

// ---------------------------------------------------------------------------
// Debug export

inline void export_graph(const InteractionGraph& ig, const WeightedHypergraph& hg,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write graph export: " + path);
  out << "# edges: src dst speaker_rel context_rel\n";
  for (const auto& e : ig.edges)
    out << e.src + 1 << ' ' << e.dst + 1 << ' ' << e.speaker_rel << ' '
        << context_rel_name(e.context_rel) << '\n';
  out << "# hyperedges: kind tag nodes...\n";
  for (const auto& e : hg.edges) {
    out << (e.is_speaker ? "speaker" : "context") << ' ' << e.tag;
    for (int v : e.nodes) out << ' ' << v + 1;
    out << '\n';
  }
}

}  // namespace sdrgnn
