// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nassist/model.hpp"

namespace nassist {

/// Maps a decoder prefix (starting with <bos>) to log-probabilities of the
/// next token over the whole vocabulary.
using Scorer = std::function<std::vector<double>(std::span<const TokenId>)>;

struct DecodeSettings {
  enum class Strategy { Greedy, Beam };
  Strategy strategy = Strategy::Greedy;
  std::size_t beam_width = 4;
  std::size_t max_length = 64;
  double length_penalty = 0.6;

  std::string describe() const {
    if (strategy == Strategy::Greedy) return "greedy(max_length=" + std::to_string(max_length) + ")";
    std::ostringstream os;
    os << "beam(width=" << beam_width << ", max_length=" << max_length << ", length_penalty=" << length_penalty << ")";
    return os.str();
  }
};

struct Hypothesis {
  /// Generated tokens, excluding <bos>; ends with <eos> when finished.
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  bool finished = false;

  double normalized(double alpha) const {
    if (tokens.empty()) return log_prob;
    return log_prob / std::pow(static_cast<double>(tokens.size()), alpha);
  }
};

/// Log-softmax of one row of logits.
template <typename T>
std::vector<double> log_softmax_row(const Tensor<T>& logits, std::size_t row) {
  const auto r = logits.row_span(row);
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : r) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (T v : r) z += std::exp(static_cast<double>(v) - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = static_cast<double>(r[i]) - lz;
  return out;
}

/// Scores prefixes with a trained model. Encoder states and KB vectors are
/// computed once; each call runs the decoder over the prefix in inference
/// mode. Parameters are only read, so one model may back many scorers.
template <typename T>
class ModelScorer {
 public:
  ModelScorer(const NeuralAssistant<T>& model, std::span<const TokenId> history,
              std::span<const std::vector<TokenId>> kb)
      : model_(model) {
    Graph<T> g(false);
    history_ = model.encode(g, history).value();
    kb_ = model.embed_kb(g, kb).value();
  }

  std::vector<double> operator()(std::span<const TokenId> prefix) const {
    Graph<T> g(false);
    const auto out = model_.decode(g, g.constant(history_), g.constant(kb_), prefix);
    return log_softmax_row(out.logits.value(), prefix.size() - 1);
  }

 private:
  const NeuralAssistant<T>& model_;
  Tensor<T> history_, kb_;
};

/// Appends the argmax token (lowest id on ties) until <eos> or max_length.
inline Hypothesis greedy_decode(const Scorer& score, std::size_t max_length) {
  if (max_length == 0) throw std::invalid_argument("greedy_decode: max_length must be at least 1");
  Hypothesis h;
  std::vector<TokenId> prefix{special::kBos};
  while (h.tokens.size() < max_length) {
    const auto lp = score(prefix);
    const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.log_prob += lp[best];
    prefix.push_back(best);
    if (best == special::kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

/// Length-normalized beam search. Returns the best finished hypothesis (or
/// the best unfinished one at max_length), and never anything that scores
/// below the greedy sequence under the same normalization.
inline Hypothesis beam_decode(const Scorer& score, std::size_t width, std::size_t max_length,
                              double length_penalty = 0.6) {
  if (width == 0) throw std::invalid_argument("beam_decode: width must be at least 1");
  if (max_length == 0) throw std::invalid_argument("beam_decode: max_length must be at least 1");

  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_length && !alive.empty() && finished.size() < width; ++step) {
    struct Candidate {
      std::size_t beam;
      TokenId token;
      double log_prob;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      std::vector<TokenId> prefix{special::kBos};
      prefix.insert(prefix.end(), alive[b].tokens.begin(), alive[b].tokens.end());
      const auto lp = score(prefix);
      std::vector<TokenId> ids(lp.size());
      std::iota(ids.begin(), ids.end(), TokenId{0});
      const std::size_t k = std::min(width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                        [&](TokenId a, TokenId c) { return lp[a] != lp[c] ? lp[a] > lp[c] : a < c; });
      for (std::size_t i = 0; i < k; ++i) cands.push_back({b, ids[i], alive[b].log_prob + lp[ids[i]]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& c) { return a.log_prob > c.log_prob; });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < std::min(width, cands.size()); ++i) {
      Hypothesis h = alive[cands[i].beam];
      h.tokens.push_back(cands[i].token);
      h.log_prob = cands[i].log_prob;
      if (cands[i].token == special::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }

  auto better = [&](const Hypothesis& a, const Hypothesis& b) {
    return a.normalized(length_penalty) > b.normalized(length_penalty);
  };
  const auto& pool = finished.empty() ? alive : finished;
  Hypothesis best = pool.front();
  for (const auto& h : pool)
    if (better(h, best)) best = h;
  if (width > 1) {
    Hypothesis greedy = greedy_decode(score, max_length);
    if (better(greedy, best)) best = std::move(greedy);
  }
  return best;
}

inline Hypothesis decode(const Scorer& score, const DecodeSettings& s) {
  return s.strategy == DecodeSettings::Strategy::Greedy ? greedy_decode(score, s.max_length)
                                                        : beam_decode(score, s.beam_width, s.max_length, s.length_penalty);
}

}  // namespace nassist
