#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdrgnn/errors.hpp"
#include "sdrgnn/rng.hpp"
#include "sdrgnn/tensor.hpp"

namespace sdrgnn {

inline constexpr int kNumModalities = 3;
inline constexpr const char* kModalityNames[kNumModalities] = {"a", "v", "t"};

inline int modality_index(const std::string& name) {
  for (int m = 0; m < kNumModalities; ++m)
    if (name == kModalityNames[m]) return m;
  throw DataError("unknown modality '" + name + "'");
}

// One conversational turn. Features are always present; the mask says which
// modalities an observer is allowed to see. Masking hides, it never deletes,
// which is what makes reconstruction supervision and masked-slot MSE
// computable later.
struct Utterance {
  int speaker = 0;                       // 0-based id within the conversation roster
  int label = 1;                         // class id in 1..c
  std::array<uint8_t, kNumModalities> mask{1, 1, 1};
  std::array<Tensor, kNumModalities> features;
  std::optional<double> score;           // raw sentiment score, when the corpus has one

  int available_count() const { return mask[0] + mask[1] + mask[2]; }
  bool complete() const { return available_count() == kNumModalities; }
};

struct Conversation {
  std::string id;
  int num_speakers = 0;  // roster size; utterance speaker ids are < this
  std::vector<Utterance> utts;

  int64_t size() const { return static_cast<int64_t>(utts.size()); }
};

struct Dataset {
  std::vector<Conversation> convs;
  int classes = 0;
  std::array<int64_t, kNumModalities> dims{0, 0, 0};

  int64_t num_utterances() const {
    int64_t n = 0;
    for (const auto& c : convs) n += c.size();
    return n;
  }

  int max_speakers() const {
    int m = 0;
    for (const auto& c : convs) m = std::max(m, c.num_speakers);
    return m;
  }

  int64_t feature_dim() const { return dims[0] + dims[1] + dims[2]; }
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_dataset(const Dataset& ds, const std::string& origin = "dataset") {
  if (ds.classes < 1) throw DataError(origin + ": class count must be positive");
  for (const auto& conv : ds.convs) {
    if (conv.utts.empty()) throw DataError(origin + ": conversation '" + conv.id + "' is empty");
    for (size_t i = 0; i < conv.utts.size(); ++i) {
      const auto& u = conv.utts[i];
      const std::string where =
          origin + ": conversation '" + conv.id + "' utterance " + std::to_string(i + 1);
      if (u.available_count() == 0)
        throw DataError(where + " has no available modality");
      if (u.label < 1 || u.label > ds.classes)
        throw DataError(where + " label " + std::to_string(u.label) + " outside 1.." +
                        std::to_string(ds.classes));
      if (u.speaker < 0 || u.speaker >= conv.num_speakers)
        throw DataError(where + " speaker id " + std::to_string(u.speaker) +
                        " outside roster of size " + std::to_string(conv.num_speakers));
      for (int m = 0; m < kNumModalities; ++m) {
        if (u.features[m].rank() != 1 || u.features[m].extent(0) != ds.dims[m])
          throw DataError(where + " modality " + kModalityNames[m] + " has shape " +
                          u.features[m].shape_str() + ", expected [" +
                          std::to_string(ds.dims[m]) + "]");
        if (!u.features[m].all_finite())
          throw DataError(where + " modality " + kModalityNames[m] + " has non-finite values");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// On-disk format: one conversation per line, JSON object per line.
//
//   {"id": "...", "speakers": N,
//    "utterances": [{"speaker": 0, "label": 1, "mask": [1,1,1],
//                    "a": [..], "v": [..], "t": [..], "score": 0.5}, ...]}
//
// A dataset directory additionally carries manifest.json with the class
// count, modality dims and split file names.

inline Dataset load_dataset(const std::string& path, int expected_classes = 0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  Dataset ds;
  std::string line;
  int64_t line_no = 0;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
    }
    try {
      Conversation conv;
      conv.id = j.value("id", "line-" + std::to_string(line_no));
      for (const auto& ju : j.at("utterances")) {
        Utterance u;
        u.speaker = ju.at("speaker").get<int>();
        u.label = ju.at("label").get<int>();
        if (ju.contains("mask")) {
          const auto& jm = ju.at("mask");
          if (jm.size() != kNumModalities)
            throw DataError("mask must have " + std::to_string(kNumModalities) + " entries");
          for (int m = 0; m < kNumModalities; ++m) u.mask[m] = jm[m].get<int>() ? 1 : 0;
        }
        for (int m = 0; m < kNumModalities; ++m) {
          std::vector<double> vals = ju.at(kModalityNames[m]).get<std::vector<double>>();
          const int64_t extent = static_cast<int64_t>(vals.size());
          u.features[m] = Tensor::from_data({extent}, std::move(vals), /*checked=*/true);
        }
        if (ju.contains("score")) u.score = ju.at("score").get<double>();
        max_label = std::max(max_label, u.label);
        conv.num_speakers = std::max(conv.num_speakers, u.speaker + 1);
        conv.utts.push_back(std::move(u));
      }
      if (j.contains("speakers")) conv.num_speakers = j.at("speakers").get<int>();
      ds.convs.push_back(std::move(conv));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.convs.empty()) throw DataError(path + ": no conversations");
  for (int m = 0; m < kNumModalities; ++m) ds.dims[m] = ds.convs[0].utts[0].features[m].extent(0);
  ds.classes = expected_classes > 0 ? expected_classes : max_label;
  validate_dataset(ds, path);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const auto& conv : ds.convs) {
    nlohmann::json j;
    j["id"] = conv.id;
    j["speakers"] = conv.num_speakers;
    nlohmann::json utts = nlohmann::json::array();
    for (const auto& u : conv.utts) {
      nlohmann::json ju;
      ju["speaker"] = u.speaker;
      ju["label"] = u.label;
      ju["mask"] = {static_cast<int>(u.mask[0]), static_cast<int>(u.mask[1]),
                    static_cast<int>(u.mask[2])};
      for (int m = 0; m < kNumModalities; ++m) ju[kModalityNames[m]] = u.features[m].data();
      if (u.score) ju["score"] = *u.score;
      utts.push_back(std::move(ju));
    }
    j["utterances"] = std::move(utts);
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic conversations

struct SynthConfig {
  int conversations = 8;
  int utterances = 10;   // per conversation
  int speakers = 2;      // roster size, >= 2
  int classes = 4;
  std::array<int64_t, kNumModalities> dims{8, 8, 8};
  double signal = 5.0;   // class-prototype scale; 0 means pure noise
  double label_repeat = 0.7;
  uint64_t seed = 1;
};

// Class prototypes are fixed per (class, modality) given the seed; utterance
// features are prototype * signal + unit Gaussian noise. Labels persist
// locally so that context carries information, and speakers take turns of
// random length 1..3.
inline Dataset synth_generate(const SynthConfig& cfg) {
  if (cfg.speakers < 2) throw ConfigError("synth: speakers must be >= 2");
  if (cfg.classes < 2) throw ConfigError("synth: classes must be >= 2");
  if (cfg.signal < 0) throw ConfigError("synth: signal must be >= 0");
  if (cfg.conversations < 1 || cfg.utterances < 1)
    throw ConfigError("synth: conversations and utterances must be positive");
  for (int64_t d : cfg.dims)
    if (d < 1) throw ConfigError("synth: modality dims must be positive");

  Rng master(cfg.seed);
  Rng proto_rng = master.fork(0xA);
  std::vector<std::array<Tensor, kNumModalities>> prototypes(static_cast<size_t>(cfg.classes));
  for (int c = 0; c < cfg.classes; ++c)
    for (int m = 0; m < kNumModalities; ++m) {
      Tensor p({cfg.dims[m]});
      for (int64_t i = 0; i < p.numel(); ++i) p[i] = proto_rng.normal();
      prototypes[static_cast<size_t>(c)][m] = std::move(p);
    }

  Dataset ds;
  ds.classes = cfg.classes;
  ds.dims = cfg.dims;
  Rng conv_rng = master.fork(0xB);
  for (int k = 0; k < cfg.conversations; ++k) {
    Conversation conv;
    conv.id = "synth-" + std::to_string(k);
    conv.num_speakers = cfg.speakers;
    int speaker = static_cast<int>(conv_rng.uniform_int(cfg.speakers));
    int turn_left = 1 + static_cast<int>(conv_rng.uniform_int(3));
    int label = 1 + static_cast<int>(conv_rng.uniform_int(cfg.classes));
    for (int i = 0; i < cfg.utterances; ++i) {
      if (turn_left == 0) {
        int next = static_cast<int>(conv_rng.uniform_int(cfg.speakers - 1));
        speaker = next >= speaker ? next + 1 : next;  // any speaker but the current one
        turn_left = 1 + static_cast<int>(conv_rng.uniform_int(3));
      }
      --turn_left;
      if (i > 0 && !conv_rng.bernoulli(cfg.label_repeat)) {
        int next = static_cast<int>(conv_rng.uniform_int(cfg.classes - 1));
        label = next + 1 >= label ? next + 2 : next + 1;  // any label but the current one
      }
      Utterance u;
      u.speaker = speaker;
      u.label = label;
      for (int m = 0; m < kNumModalities; ++m) {
        Tensor f({cfg.dims[m]});
        const Tensor& p = prototypes[static_cast<size_t>(label - 1)][m];
        for (int64_t d = 0; d < f.numel(); ++d) f[d] = p[d] * cfg.signal + conv_rng.normal();
        u.features[m] = std::move(f);
      }
      conv.utts.push_back(std::move(u));
    }
    ds.convs.push_back(std::move(conv));
  }
  validate_dataset(ds, "synth");
  return ds;
}

struct SynthSplits {
  Dataset train, val, test;
};

// Train/val/test drawn from one generation run so every split shares the
// same class prototypes.
inline SynthSplits synth_generate_splits(const SynthConfig& base, int val_convs, int test_convs) {
  if (val_convs < 1 || test_convs < 1)
    throw ConfigError("synth: val and test splits need at least one conversation");
  SynthConfig cfg = base;
  cfg.conversations = base.conversations + val_convs + test_convs;
  Dataset all = synth_generate(cfg);
  SynthSplits s;
  auto grab = [&](int from, int count, const char* tag) {
    Dataset d;
    d.classes = all.classes;
    d.dims = all.dims;
    for (int i = 0; i < count; ++i) {
      Conversation conv = all.convs[static_cast<size_t>(from + i)];
      conv.id = std::string(tag) + "-" + std::to_string(i);
      d.convs.push_back(std::move(conv));
    }
    return d;
  };
  s.train = grab(0, base.conversations, "train");
  s.val = grab(base.conversations, val_convs, "val");
  s.test = grab(base.conversations + val_convs, test_convs, "test");
  return s;
}

// ---------------------------------------------------------------------------
// Missing-modality protocol

inline double missing_rate_cap() {
  return static_cast<double>(kNumModalities - 1) / kNumModalities;
}

// The evaluation grid tops out at 0.7, which the protocol treats as the
// practical stand-in for the (Mods-1)/Mods cap; anything above it is
// rejected.
inline double missing_rate_request_limit() { return 0.7; }

struct MaskPlan {
  uint64_t seed = 0;
  double requested_rate = 0.0;
  // (conversation id, utterance index 1-based, modality index)
  std::vector<std::tuple<std::string, int, int>> dropped;
};

inline double missing_rate(const Dataset& ds) {
  const int64_t n = ds.num_utterances();
  if (n == 0) throw DataError("missing_rate: empty dataset");
  int64_t available = 0;
  for (const auto& conv : ds.convs)
    for (const auto& u : conv.utts) available += u.available_count();
  return 1.0 - static_cast<double>(available) / static_cast<double>(n * kNumModalities);
}

// Drops exactly round(rate * n * Mods) modality slots, sampled one at a time
// uniformly over the slots whose utterance still has at least two available
// modalities. Requires a fully observed input; the cap (Mods-1)/Mods is the
// point where every utterance is down to a single modality.
inline std::pair<Dataset, MaskPlan> apply_missing(const Dataset& ds, double rate, uint64_t seed) {
  if (rate < 0.0 || rate > missing_rate_request_limit() + 1e-12)
    throw DataError("missing rate " + std::to_string(rate) +
                    " exceeds the protocol cap (Mods-1)/Mods: with at least one modality kept "
                    "per utterance, rates above " +
                    std::to_string(missing_rate_request_limit()) + " are not realizable");
  for (const auto& conv : ds.convs)
    for (const auto& u : conv.utts)
      if (!u.complete())
        throw DataError("apply_missing: input must be fully observed (conversation '" + conv.id +
                        "')");

  Dataset out = ds;
  MaskPlan plan;
  plan.seed = seed;
  plan.requested_rate = rate;

  const int64_t n = ds.num_utterances();
  // Exact target count; requests between (Mods-1)/Mods and the 0.7 grid top
  // clamp to the structural maximum of Mods-1 drops per utterance.
  const int64_t target =
      std::min(static_cast<int64_t>(std::llround(rate * static_cast<double>(n * kNumModalities))),
               n * (kNumModalities - 1));

  struct Slot {
    int conv;
    int utt;
    int mod;
  };
  std::vector<Slot> candidates;
  candidates.reserve(static_cast<size_t>(n * kNumModalities));
  for (size_t c = 0; c < out.convs.size(); ++c)
    for (size_t i = 0; i < out.convs[c].utts.size(); ++i)
      for (int m = 0; m < kNumModalities; ++m)
        candidates.push_back({static_cast<int>(c), static_cast<int>(i), m});

  Rng rng(seed);
  int64_t dropped = 0;
  while (dropped < target) {
    if (candidates.empty())
      throw NumericError("apply_missing: ran out of droppable slots");  // unreachable under the cap
    const size_t pick = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(candidates.size())));
    const Slot s = candidates[pick];
    candidates[pick] = candidates.back();
    candidates.pop_back();
    Utterance& u = out.convs[static_cast<size_t>(s.conv)].utts[static_cast<size_t>(s.utt)];
    if (u.available_count() <= 1) continue;  // slot no longer droppable
    u.mask[s.mod] = 0;
    plan.dropped.emplace_back(out.convs[static_cast<size_t>(s.conv)].id, s.utt + 1, s.mod);
    ++dropped;
  }
  return {std::move(out), std::move(plan)};
}

// Replays a recorded plan on a fully observed dataset.
inline Dataset apply_plan(const Dataset& ds, const MaskPlan& plan) {
  Dataset out = ds;
  std::unordered_map<std::string, size_t> by_id;
  for (size_t c = 0; c < out.convs.size(); ++c) by_id[out.convs[c].id] = c;
  for (const auto& [conv_id, utt_1based, mod] : plan.dropped) {
    auto it = by_id.find(conv_id);
    if (it == by_id.end()) throw DataError("mask plan names unknown conversation '" + conv_id + "'");
    auto& conv = out.convs[it->second];
    if (utt_1based < 1 || utt_1based > static_cast<int>(conv.utts.size()))
      throw DataError("mask plan utterance index out of range in '" + conv_id + "'");
    if (mod < 0 || mod >= kNumModalities) throw DataError("mask plan modality out of range");
    auto& u = conv.utts[static_cast<size_t>(utt_1based - 1)];
    u.mask[static_cast<size_t>(mod)] = 0;
    if (u.available_count() == 0)
      throw DataError("mask plan leaves an utterance with no modality in '" + conv_id + "'");
  }
  return out;
}

inline void save_mask_plan(const MaskPlan& plan, const std::string& path) {
  nlohmann::json j;
  j["seed"] = plan.seed;
  j["requested_rate"] = plan.requested_rate;
  nlohmann::json drops = nlohmann::json::array();
  for (const auto& [conv, utt, mod] : plan.dropped)
    drops.push_back({conv, utt, kModalityNames[mod]});
  j["dropped"] = std::move(drops);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mask plan: " + path);
  out << j.dump(2) << '\n';
}

inline MaskPlan load_mask_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mask plan: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": parse error: " + e.what());
  }
  MaskPlan plan;
  plan.seed = j.value("seed", 0ULL);
  plan.requested_rate = j.value("requested_rate", 0.0);
  for (const auto& d : j.at("dropped"))
    plan.dropped.emplace_back(d[0].get<std::string>(), d[1].get<int>(),
                              modality_index(d[2].get<std::string>()));
  return plan;
}

// ---------------------------------------------------------------------------
// Model-input helpers

// Encoder input for one utterance: masked slots become zero vectors, the
// recovery of their content is the reconstruction head's job.
inline std::array<Tensor, kNumModalities> impute_input(const Utterance& u) {
  std::array<Tensor, kNumModalities> out;
  for (int m = 0; m < kNumModalities; ++m)
    out[m] = u.mask[m] ? u.features[m] : Tensor::zeros({u.features[m].extent(0)});
  return out;
}

// Keeps only modality-complete utterances; conversations left empty vanish.
inline Dataset drop_incomplete(const Dataset& ds) {
  Dataset out;
  out.classes = ds.classes;
  out.dims = ds.dims;
  for (const auto& conv : ds.convs) {
    Conversation kept;
    kept.id = conv.id;
    kept.num_speakers = conv.num_speakers;
    for (const auto& u : conv.utts)
      if (u.complete()) kept.utts.push_back(u);
    if (!kept.utts.empty()) out.convs.push_back(std::move(kept));
  }
  return out;
}

// Sentiment-score datasets become a 2-class problem: negative scores map to
// class 1, positive to class 2, exact zeros are excluded.
inline Dataset binarize_scores(const Dataset& ds) {
  Dataset out;
  out.classes = 2;
  out.dims = ds.dims;
  for (const auto& conv : ds.convs) {
    Conversation kept;
    kept.id = conv.id;
    kept.num_speakers = conv.num_speakers;
    for (const auto& u : conv.utts) {
      if (!u.score) throw DataError("binarize: utterance in '" + conv.id + "' has no score");
      if (*u.score == 0.0) continue;
      Utterance b = u;
      b.label = *u.score < 0.0 ? 1 : 2;
      kept.utts.push_back(std::move(b));
    }
    if (!kept.utts.empty()) out.convs.push_back(std::move(kept));
  }
  return out;
}

}  // namespace sdrgnn
