/*
 * Copyright 2026 The Neural Assistant Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "nassist/dialog.hpp"
#include "nassist/tensor.hpp"
#include "nassist/tokenizer.hpp"
#include "nassist/vocab.hpp"

namespace nassist {

/// (subject, relation, object) fact with its tokenized surface forms.
struct Triple {
  std::size_t id = 0;
  std::string subject, relation, object;
  std::vector<std::string> subject_tokens, relation_tokens, object_tokens;

  /// subject ∥ relation ∥ object tokens.
  std::vector<std::string> tokens() const {
    std::vector<std::string> out = subject_tokens;
    out.insert(out.end(), relation_tokens.begin(), relation_tokens.end());
    out.insert(out.end(), object_tokens.begin(), object_tokens.end());
    return out;
  }
};

/// Distant-supervision label: 1 iff some subject or object token occurs in
/// the target. Relation tokens never count.
inline bool weak_label(const Triple& t, std::span<const std::string> target_tokens) {
  const std::unordered_set<std::string> target(target_tokens.begin(), target_tokens.end());
  for (const auto& w : t.subject_tokens)
    if (target.contains(w)) return true;
  for (const auto& w : t.object_tokens)
    if (target.contains(w)) return true;
  return false;
}

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  /// Adds a fact unless an identical (tokenized) fact is already present.
  /// Returns false for duplicates.
  bool add(std::string_view subject, std::string_view relation, std::string_view object) {
    Triple t;
    t.subject_tokens = tokenize(subject);
    t.relation_tokens = tokenize(relation);
    t.object_tokens = tokenize(object);
    if (t.subject_tokens.empty() || t.relation_tokens.empty() || t.object_tokens.empty()) {
      throw DataError("triple has an empty field: (" + std::string(subject) + " | " + std::string(relation) + " | " +
                      std::string(object) + ")");
    }
    t.subject = detokenize(t.subject_tokens);
    t.relation = detokenize(t.relation_tokens);
    t.object = detokenize(t.object_tokens);
    const std::string key = t.subject + '\t' + t.relation + '\t' + t.object;
    if (!keys_.insert(key).second) {
      ++duplicates_;
      return false;
    }
    t.id = triples_.size();
    std::set<std::string> entity_words(t.subject_tokens.begin(), t.subject_tokens.end());
    entity_words.insert(t.object_tokens.begin(), t.object_tokens.end());
    for (const auto& w : entity_words) entity_index_[w].push_back(t.id);
    triples_.push_back(std::move(t));
    return true;
  }

  std::size_t size() const { return triples_.size(); }
  bool empty() const { return triples_.empty(); }
  const Triple& operator[](std::size_t id) const { return triples_.at(id); }
  std::span<const Triple> triples() const { return triples_; }
  std::size_t duplicates_dropped() const { return duplicates_; }

  /// Ids of every triple weak_label marks positive for the target, ascending.
  std::vector<std::size_t> weak_positives(std::span<const std::string> target_tokens) const {
    std::vector<std::size_t> ids;
    std::unordered_set<std::string> seen;
    for (const auto& w : target_tokens) {
      if (!seen.insert(w).second) continue;
      auto it = entity_index_.find(w);
      if (it != entity_index_.end()) ids.insert(ids.end(), it->second.begin(), it->second.end());
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  /// Tokenized surface forms of every subject and object.
  std::vector<std::vector<std::string>> entity_lexicon() const {
    std::set<std::vector<std::string>> lex;
    for (const auto& t : triples_) {
      lex.insert(t.subject_tokens);
      lex.insert(t.object_tokens);
    }
    return {lex.begin(), lex.end()};
  }

 private:
  std::vector<Triple> triples_;
  std::unordered_set<std::string> keys_;
  std::unordered_map<std::string, std::vector<std::size_t>> entity_index_;
  std::size_t duplicates_ = 0;
};

/// Reads one triple per line, either tab-separated `subject\trelation\tobject`
/// or a JSON array / object ({"subject","relation","object"}). Blank lines and
/// lines starting with '#' are skipped.
inline KnowledgeBase parse_triples(std::istream& in) {
  KnowledgeBase kb;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::array<std::string, 3> f;
    if (line[first] == '[' || line[first] == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw DataError("triple row " + std::to_string(row) + ": " + e.what());
      }
      try {
        if (j.is_array() && j.size() == 3) {
          for (int k = 0; k < 3; ++k) f[k] = j[k].get<std::string>();
        } else if (j.is_object()) {
          f = {j.at("subject").get<std::string>(), j.at("relation").get<std::string>(), j.at("object").get<std::string>()};
        } else {
          throw DataError("triple row " + std::to_string(row) + ": expected [s, r, o] or {subject, relation, object}");
        }
      } catch (const nlohmann::json::exception& e) {
        throw DataError("triple row " + std::to_string(row) + ": " + e.what());
      }
    } else {
      std::size_t a = line.find('\t');
      std::size_t b = a == std::string::npos ? a : line.find('\t', a + 1);
      if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos) {
        throw DataError("triple row " + std::to_string(row) + ": expected three tab-separated fields");
      }
      f = {line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)};
    }
    static constexpr std::array<const char*, 3> kNames = {"subject", "relation", "object"};
    for (int k = 0; k < 3; ++k) {
      if (tokenize(f[k]).empty()) {
        throw DataError("triple row " + std::to_string(row) + ": empty " + kNames[k] + " field");
      }
    }
    kb.add(f[0], f[1], f[2]);
  }
  return kb;
}

inline KnowledgeBase load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file " + path);
  return parse_triples(in);
}

inline void save_triples(const std::string& path, const KnowledgeBase& kb) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write triple file " + path);
  for (const auto& t : kb.triples()) out << t.subject << '\t' << t.relation << '\t' << t.object << '\n';
}

/// Token ids of every triple under one vocabulary, indexed by triple id.
using EncodedKB = std::vector<std::vector<TokenId>>;

inline EncodedKB encode_triples(const KnowledgeBase& kb, const Vocabulary& vocab) {
  EncodedKB out;
  out.reserve(kb.size());
  for (const auto& t : kb.triples()) out.push_back(vocab.encode(t.tokens()));
  return out;
}

/// Mean of the embedding rows of the triple's tokens (unknown words use UNK).
template <typename T>
std::vector<T> embed_triple(const Triple& t, const Vocabulary& vocab, const Tensor<T>& table) {
  const auto ids = vocab.encode(t.tokens());
  std::vector<T> out(table.cols(), T(0));
  for (auto id : ids) {
    const auto row = table.row_span(id);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  for (auto& v : out) v /= static_cast<T>(ids.size());
  return out;
}

enum class SliceMode {
  None,          ///< no KB at all (Transformer ablation)
  Oracle,        ///< gold-annotated relevant triples
  WeakPositive,  ///< exactly the distant-supervision positives
  Sampled,       ///< positives plus random negatives up to a fixed size
  Full,          ///< the entire KB
};

inline std::string_view to_string(SliceMode m) {
  switch (m) {
    case SliceMode::None: return "none";
    case SliceMode::Oracle: return "oracle";
    case SliceMode::WeakPositive: return "weak-positive";
    case SliceMode::Sampled: return "sampled";
    case SliceMode::Full: return "full";
  }
  return "unknown";
}

inline SliceMode slice_mode_from_string(std::string_view s) {
  if (s == "none") return SliceMode::None;
  if (s == "oracle") return SliceMode::Oracle;
  if (s == "weak-positive" || s == "weak") return SliceMode::WeakPositive;
  if (s == "sampled") return SliceMode::Sampled;
  if (s == "full") return SliceMode::Full;
  throw std::invalid_argument("unknown KB mode '" + std::string(s) + "' (none|oracle|weak-positive|sampled|full)");
}

/// The triples one example may attend to, with their weak labels.
struct KBSlice {
  SliceMode mode = SliceMode::None;
  std::size_t requested_size = 0;
  std::vector<std::size_t> triple_ids;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> warnings;

  std::size_t size() const { return triple_ids.size(); }
  std::size_t positives() const {
    std::size_t n = 0;
    for (auto y : labels) n += y;
    return n;
  }
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Builds the per-example KB slice.
///
/// `target_tokens` drives the weak labels (and the positives in
/// weak-positive / sampled modes). In sampled mode the slice holds every
/// positive plus negatives drawn uniformly without replacement from the rest
/// of the KB, shuffled by `seed`; when there are more positives than `size`
/// all positives are kept and a warning is recorded.
inline KBSlice build_slice(const KnowledgeBase& kb, std::span<const std::string> target_tokens,
                           const std::optional<std::vector<std::size_t>>& gold, SliceMode mode, std::size_t size,
                           std::uint64_t seed) {
  KBSlice s;
  s.mode = mode;
  s.requested_size = size;
  if (mode == SliceMode::None) return s;
  if (mode == SliceMode::Sampled && size == 0) throw std::invalid_argument("build_slice: KB size must be positive");

  const auto positives = kb.weak_positives(target_tokens);
  switch (mode) {
    case SliceMode::None: break;
    case SliceMode::Oracle:
      if (gold) {
        std::set<std::size_t> seen;
        for (auto id : *gold) {
          if (id >= kb.size()) throw DataError("gold triple id " + std::to_string(id) + " outside KB of " + std::to_string(kb.size()));
          if (seen.insert(id).second) s.triple_ids.push_back(id);
        }
      } else {
        s.warnings.push_back("no gold relevant triples annotated; using weak positives");
        s.triple_ids = positives;
      }
      break;
    case SliceMode::WeakPositive: s.triple_ids = positives; break;
    case SliceMode::Full:
      s.triple_ids.resize(kb.size());
      std::iota(s.triple_ids.begin(), s.triple_ids.end(), std::size_t{0});
      break;
    case SliceMode::Sampled: {
      std::mt19937_64 rng(seed);
      s.triple_ids = positives;
      if (positives.size() > size) {
        s.warnings.push_back(std::to_string(positives.size()) + " weak positives exceed KB size " + std::to_string(size) +
                             "; keeping all positives");
      }
      const std::size_t target = std::min(std::max(size, positives.size()), kb.size());
      if (size > kb.size()) {
        s.warnings.push_back("KB size " + std::to_string(size) + " exceeds KB of " + std::to_string(kb.size()) + " triples");
      }
      const std::size_t need = target - positives.size();
      const std::size_t pool = kb.size() - positives.size();
      if (need > 0 && 4 * need < pool) {
        // Sparse draw: rejection sampling over ids.
        std::unordered_set<std::size_t> taken(positives.begin(), positives.end());
        std::uniform_int_distribution<std::size_t> pick(0, kb.size() - 1);
        while (s.triple_ids.size() < target) {
          const auto id = pick(rng);
          if (taken.insert(id).second) s.triple_ids.push_back(id);
        }
      } else if (need > 0) {
        std::vector<std::size_t> rest;
        rest.reserve(pool);
        std::size_t p = 0;
        for (std::size_t id = 0; id < kb.size(); ++id) {
          if (p < positives.size() && positives[p] == id) {
            ++p;
            continue;
          }
          rest.push_back(id);
        }
        for (std::size_t i = 0; i < need; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
          std::swap(rest[i], rest[pick(rng)]);
          s.triple_ids.push_back(rest[i]);
        }
      }
      std::shuffle(s.triple_ids.begin(), s.triple_ids.end(), rng);
      break;
    }
  }
  const std::unordered_set<std::size_t> pos(positives.begin(), positives.end());
  s.labels.reserve(s.triple_ids.size());
  for (auto id : s.triple_ids) s.labels.push_back(pos.contains(id) ? 1 : 0);
  return s;
}

/// Vocabulary over dialog text, action strings and triple surface forms.
inline Vocabulary build_vocab(std::span<const Dialog> dialogs, const KnowledgeBase& kb, std::size_t min_count) {
  VocabularyBuilder b;
  for (const auto& d : dialogs) {
    for (const auto& t : d.turns) {
      b.add(tokenize(t.text));
      if (t.action) b.add(tokenize(t.action->to_string()));
    }
  }
  for (const auto& t : kb.triples()) b.add(t.tokens());
  if (b.documents() == 0) throw std::invalid_argument("build_vocab: empty corpus");
  return b.build(min_count);
}

}  // namespace nassist
