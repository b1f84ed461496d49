// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nassist/metrics.hpp"
#include "nassist/session.hpp"
#include "nassist/trainer.hpp"

namespace nassist {

inline constexpr const char* kEntityF1Variant =
    "micro-averaged over per-example entity sets; greedy longest exact token match against KB subjects and objects";
inline constexpr const char* kActionF1Variant = "micro-averaged over (name) and (name, slot, value) items";

struct EvalSettings {
  SliceMode kb_mode = SliceMode::Sampled;
  std::size_t kb_size = 100;
  DecodeSettings decode;
  std::uint64_t seed = 1;
  std::size_t max_history = kDefaultMaxHistory;
  /// Evaluate at most this many turns; 0 means all.
  std::size_t limit = 0;
};

struct ExampleRecord {
  std::string dialog_id;
  std::size_t turn_index = 0;
  std::string reference;
  std::string hypothesis;
  std::optional<ActionCall> reference_action;
  std::optional<ActionCall> predicted_action;
  std::string action_raw;
  bool action_malformed = false;
  std::vector<std::string> matched_entities, missed_entities, spurious_entities;
  std::vector<std::string> missing_action_items, extra_action_items;
  std::size_t kb_slots = 0;
};

struct EvalReport {
  double bleu = 0.0;
  double action_f1 = 0.0;
  double entity_f1 = 0.0;
  SliceMode kb_mode = SliceMode::Sampled;
  std::size_t kb_size = 0;
  std::string decode;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_step = 0;
  std::vector<ExampleRecord> records;

  /// S, BLEU, Action F-1, Entity F-1 (tab separated).
  std::string summary_row() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s\t%.2f\t%.4f\t%.4f", size_label().c_str(), bleu, action_f1, entity_f1);
    return buf;
  }

  static std::string summary_header() { return "S\tBLEU\tActionF1\tEntityF1"; }

  std::string size_label() const {
    switch (kb_mode) {
      case SliceMode::Sampled: return std::to_string(kb_size);
      default: return std::string(to_string(kb_mode));
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bleu"] = bleu;
    j["action_f1"] = action_f1;
    j["entity_f1"] = entity_f1;
    j["kb_mode"] = to_string(kb_mode);
    j["kb_size"] = kb_size;
    j["decode"] = decode;
    j["seed"] = seed;
    j["checkpoint_step"] = checkpoint_step;
    j["variants"] = {{"bleu", kBleuVariant}, {"entity_f1", kEntityF1Variant}, {"action_f1", kActionF1Variant}};
    j["summary"] = summary_row();
    auto& ex = j["examples"] = nlohmann::json::array();
    for (const auto& r : records) {
      ex.push_back({{"dialog_id", r.dialog_id},
                    {"turn_index", r.turn_index},
                    {"reference", r.reference},
                    {"hypothesis", r.hypothesis},
                    {"reference_action", r.reference_action ? nlohmann::json(r.reference_action->to_string()) : nlohmann::json()},
                    {"predicted_action", r.predicted_action ? nlohmann::json(r.predicted_action->to_string()) : nlohmann::json()},
                    {"action_raw", r.action_raw},
                    {"action_malformed", r.action_malformed},
                    {"matched_entities", r.matched_entities},
                    {"missed_entities", r.missed_entities},
                    {"spurious_entities", r.spurious_entities},
                    {"missing_action_items", r.missing_action_items},
                    {"extra_action_items", r.extra_action_items},
                    {"kb_slots", r.kb_slots}});
    }
    return j;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report " + path);
    out << to_json().dump(2) << '\n';
  }
};

namespace detail {

inline std::string item_string(const ActionItem& it) {
  const auto& [name, slot, value] = it;
  return slot.empty() ? name : name + "." + slot + "=" + value;
}

}  // namespace detail

/// Turn-level evaluation: each assistant turn is decoded from its
/// ground-truth history, parsed, and scored against the reference.
template <typename T>
EvalReport evaluate(const Assistant<T>& assistant, std::span<const Dialog> dialogs, const EvalSettings& s) {
  const auto examples = make_examples(dialogs, assistant.kb(), assistant.vocab(), s.kb_mode, s.kb_size, s.seed, s.max_history);
  if (examples.empty()) throw std::invalid_argument("evaluate: no assistant turns to score");
  const std::size_t n = s.limit ? std::min(s.limit, examples.size()) : examples.size();
  const auto lexicon = assistant.kb().entity_lexicon();
  const EntityMatcher matcher(lexicon);

  EvalReport rep;
  rep.kb_mode = s.kb_mode;
  rep.kb_size = s.kb_size;
  rep.decode = s.decode.describe();
  rep.seed = s.seed;
  std::vector<std::vector<std::string>> refs, hyps;
  F1Counts ent, act;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = examples[i];
    const auto hyp = assistant.generate(ex.history, ex.slice, s.decode);
    const auto parsed = parse_output(hyp.tokens, assistant.vocab());

    ExampleRecord r;
    r.dialog_id = ex.dialog_id;
    r.turn_index = ex.turn_index;
    r.reference = ex.response;
    r.hypothesis = parsed.response;
    r.reference_action = ex.action;
    r.predicted_action = parsed.action;
    r.action_raw = parsed.action_raw;
    r.action_malformed = parsed.action_malformed;
    r.kb_slots = ex.slice.size();

    const auto re = matcher.extract(r.reference), he = matcher.extract(r.hypothesis);
    for (const auto& e : re) (he.contains(e) ? r.matched_entities : r.missed_entities).push_back(e);
    for (const auto& e : he)
      if (!re.contains(e)) r.spurious_entities.push_back(e);
    ent += entity_counts(r.reference, r.hypothesis, matcher);

    const auto ri = action_items(r.reference_action), pi = action_items(r.predicted_action);
    for (const auto& it : ri)
      if (std::find(pi.begin(), pi.end(), it) == pi.end()) r.missing_action_items.push_back(detail::item_string(it));
    for (const auto& it : pi)
      if (std::find(ri.begin(), ri.end(), it) == ri.end()) r.extra_action_items.push_back(detail::item_string(it));
    act += action_counts(r.reference_action, r.predicted_action);

    refs.push_back(tokenize(r.reference));
    hyps.push_back(tokenize(r.hypothesis));
    rep.records.push_back(std::move(r));
  }
  rep.bleu = bleu(std::span<const std::vector<std::string>>(refs), std::span<const std::vector<std::string>>(hyps));
  rep.entity_f1 = ent.f1();
  rep.action_f1 = act.f1();
  return rep;
}

/// Checkpoint entry point. When `vocab` is given it must be the vocabulary
/// the checkpoint was trained with.
template <typename T = float>
EvalReport evaluate(const Checkpoint& c, const KnowledgeBase& kb, std::span<const Dialog> dialogs, const EvalSettings& s,
                    const Vocabulary* vocab = nullptr) {
  if (vocab && vocab->hash() != c.vocab_hash) {
    throw CheckpointError("vocabulary hash " + std::to_string(vocab->hash()) + " does not match the checkpoint's " +
                          std::to_string(c.vocab_hash));
  }
  ServingConfig sc;
  sc.seed = s.seed;
  sc.max_history = s.max_history;
  const auto assistant = Assistant<T>::from_checkpoint(c, kb, sc);
  auto rep = evaluate(assistant, dialogs, s);
  rep.checkpoint_step = c.step;
  return rep;
}

}  // namespace nassist
