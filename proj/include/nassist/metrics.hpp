// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "nassist/dialog.hpp"
#include "nassist/tokenizer.hpp"

namespace nassist {

inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr const char* kBleuVariant = "corpus BLEU-4, uniform weights, standard brevity penalty, epsilon=1e-9 for zero n-gram matches";

struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

inline BleuStats bleu_stats(std::span<const std::vector<std::string>> refs, std::span<const std::vector<std::string>> hyps) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("bleu: reference and hypothesis counts differ");
  BleuStats s;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& r = refs[i];
    const auto& h = hyps[i];
    s.hyp_len += h.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[{r.begin() + k, r.begin() + k + n}];
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t k = 0; k + n <= h.size(); ++k) ++hyp_counts[{h.begin() + k, h.begin() + k + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) s.matches[n - 1] += std::min(c, it->second);
        s.totals[n - 1] += c;
      }
    }
  }
  return s;
}

/// Corpus BLEU-4 on token lists, 0..100. An n-gram order with no matches
/// contributes precision ε instead of zero.
inline double bleu(std::span<const std::vector<std::string>> refs, std::span<const std::vector<std::string>> hyps) {
  if (refs.empty()) throw std::invalid_argument("bleu: empty corpus");
  const auto s = bleu_stats(refs, hyps);
  if (s.hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = s.matches[n] == 0 ? kBleuEpsilon
                                       : static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    log_p += std::log(p) / 4.0;
  }
  const double c = static_cast<double>(s.hyp_len), r = static_cast<double>(s.ref_len);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_p);
}

inline double bleu(std::span<const std::string> refs, std::span<const std::string> hyps) {
  std::vector<std::vector<std::string>> r, h;
  for (const auto& x : refs) r.push_back(tokenize(x));
  for (const auto& x : hyps) h.push_back(tokenize(x));
  return bleu(std::span<const std::vector<std::string>>(r), std::span<const std::vector<std::string>>(h));
}

/// Entities found by a greedy longest-match scan of the tokenized text
/// against the lexicon, returned as a set of detokenized strings.
class EntityMatcher {
 public:
  explicit EntityMatcher(std::span<const std::vector<std::string>> lexicon) {
    for (const auto& e : lexicon) {
      if (e.empty()) continue;
      entries_.insert(e);
      longest_ = std::max(longest_, e.size());
    }
  }

  std::set<std::string> extract(std::string_view text) const {
    const auto toks = tokenize(text);
    std::set<std::string> out;
    std::size_t i = 0;
    while (i < toks.size()) {
      std::size_t matched = 0;
      for (std::size_t n = std::min(longest_, toks.size() - i); n > 0; --n) {
        if (entries_.contains(std::vector<std::string>(toks.begin() + i, toks.begin() + i + n))) {
          matched = n;
          break;
        }
      }
      if (matched) {
        out.insert(detokenize(std::vector<std::string>(toks.begin() + i, toks.begin() + i + matched)));
        i += matched;
      } else {
        ++i;
      }
    }
    return out;
  }

 private:
  std::set<std::vector<std::string>> entries_;
  std::size_t longest_ = 0;
};

inline std::set<std::string> extract_entities(std::string_view text, std::span<const std::vector<std::string>> lexicon) {
  return EntityMatcher(lexicon).extract(text);
}

/// Micro-averaged F-1 over per-example item multisets. Two empty sides
/// score 1.
struct F1Counts {
  std::size_t overlap = 0;
  std::size_t predicted = 0;
  std::size_t reference = 0;

  double precision() const { return predicted ? static_cast<double>(overlap) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return reference ? static_cast<double>(overlap) / static_cast<double>(reference) : 0.0; }
  double f1() const {
    if (predicted + reference == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(predicted + reference);
  }
  F1Counts& operator+=(const F1Counts& o) {
    overlap += o.overlap;
    predicted += o.predicted;
    reference += o.reference;
    return *this;
  }
};

template <typename Item>
F1Counts multiset_overlap(const std::vector<Item>& ref, const std::vector<Item>& hyp) {
  std::map<Item, std::size_t> counts;
  for (const auto& x : ref) ++counts[x];
  F1Counts c{0, hyp.size(), ref.size()};
  for (const auto& x : hyp) {
    auto it = counts.find(x);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++c.overlap;
    }
  }
  return c;
}

inline F1Counts entity_counts(std::string_view ref, std::string_view hyp, const EntityMatcher& m) {
  const auto r = m.extract(ref), h = m.extract(hyp);
  return multiset_overlap(std::vector<std::string>(r.begin(), r.end()), std::vector<std::string>(h.begin(), h.end()));
}

inline double entity_f1(std::span<const std::string> refs, std::span<const std::string> hyps,
                        std::span<const std::vector<std::string>> lexicon) {
  if (refs.empty()) throw std::invalid_argument("entity_f1: empty corpus");
  if (refs.size() != hyps.size()) throw std::invalid_argument("entity_f1: reference and hypothesis counts differ");
  const EntityMatcher m(lexicon);
  F1Counts total;
  for (std::size_t i = 0; i < refs.size(); ++i) total += entity_counts(refs[i], hyps[i], m);
  return total.f1();
}

/// (name) and (name, slot, value) items of one action.
using ActionItem = std::tuple<std::string, std::string, std::string>;

inline std::vector<ActionItem> action_items(const std::optional<ActionCall>& a) {
  std::vector<ActionItem> out;
  if (!a) return out;
  const auto c = canonical_action(*a);
  out.emplace_back(c.name, "", "");
  for (const auto& [slot, value] : c.slots) out.emplace_back(c.name, slot, value);
  return out;
}

inline F1Counts action_counts(const std::optional<ActionCall>& ref, const std::optional<ActionCall>& hyp) {
  return multiset_overlap(action_items(ref), action_items(hyp));
}

inline double action_f1(std::span<const std::optional<ActionCall>> refs, std::span<const std::optional<ActionCall>> hyps) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("action_f1: reference and prediction counts differ");
  F1Counts total;
  for (std::size_t i = 0; i < refs.size(); ++i) total += action_counts(refs[i], hyps[i]);
  return total.f1();
}

}  // namespace nassist
