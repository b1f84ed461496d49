// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nassist/checkpoint.hpp"
#include "nassist/decoding.hpp"
#include "nassist/dialog.hpp"
#include "nassist/kb.hpp"
#include "nassist/serialize.hpp"

namespace nassist {

inline constexpr std::string_view kFallbackResponse = "sorry, i did not catch that. could you rephrase?";

struct ServingConfig {
  SliceMode kb_mode = SliceMode::Sampled;
  std::size_t kb_size = 100;
  DecodeSettings decode;
  std::size_t max_history = kDefaultMaxHistory;
  std::uint64_t seed = 1;
};

/// One conversation. Turns alternate user / assistant; user turns are
/// UserTyped and assistant turns ModelGenerated.
struct Session {
  std::string id;
  std::vector<Turn> turns;
  SliceMode kb_mode = SliceMode::Sampled;
  std::size_t kb_size = 100;
  DecodeSettings decode;
};

struct Reply {
  std::string response;
  ParsedOutput parsed;
  std::size_t turn_index = 0;
  bool fallback = false;
  std::vector<std::size_t> kb_triples;
  std::vector<std::string> warnings;
};

/// A loaded model with its vocabulary and KB, ready to answer sessions.
/// respond() only reads the model, so one instance serves many sessions
/// concurrently as long as each session has a single writer.
template <typename T = float>
class Assistant {
 public:
  Assistant(NeuralAssistant<T> model, Vocabulary vocab, const KnowledgeBase& kb, ServingConfig config = {})
      : model_(std::move(model)), vocab_(std::move(vocab)), kb_(kb), encoded_kb_(encode_triples(kb, vocab_)), config_(config) {
    if (vocab_.size() != model_.config().vocab_size) {
      throw std::invalid_argument("assistant: vocabulary of " + std::to_string(vocab_.size()) +
                                  " tokens does not fit a model with vocab_size " + std::to_string(model_.config().vocab_size));
    }
  }

  static Assistant from_checkpoint(const Checkpoint& c, const KnowledgeBase& kb, ServingConfig config = {}) {
    return Assistant(model_from_checkpoint<T>(c), checkpoint_vocabulary(c), kb, config);
  }

  Session new_session(std::string id) const {
    return Session{std::move(id), {}, config_.kb_mode, config_.kb_size, config_.decode};
  }

  /// KB slice for a serving history. With no reference text available the
  /// weak positives come from the history itself; the sampling seed depends
  /// only on the service seed and the history content.
  KBSlice serving_slice(std::span<const Turn> history, SliceMode mode, std::size_t size) const {
    std::vector<std::string> words;
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : history) {
      for (auto& w : tokenize(t.text)) {
        for (unsigned char c : w) h = (h ^ c) * 1099511628211ull;
        h = (h ^ ' ') * 1099511628211ull;
        words.push_back(std::move(w));
      }
      h = (h ^ '\n') * 1099511628211ull;
    }
    return build_slice(kb_, words, std::nullopt, mode, size, mix_seed(config_.seed, h));
  }

  /// Decodes a target for an encoded history and KB slice.
  Hypothesis generate(std::span<const TokenId> history, const KBSlice& slice, const DecodeSettings& settings) const {
    std::vector<std::vector<TokenId>> kb_tokens;
    kb_tokens.reserve(slice.size());
    for (auto id : slice.triple_ids) kb_tokens.push_back(encoded_kb_[id]);
    const ModelScorer<T> scorer(model_, history, kb_tokens);
    DecodeSettings s = settings;
    s.max_length = std::min(s.max_length, model_.config().max_positions);
    return decode([&](std::span<const TokenId> prefix) { return scorer(prefix); }, s);
  }

  Reply respond(Session& session, std::string_view user_text) const {
    auto words = tokenize(user_text);
    if (words.empty()) throw std::invalid_argument("text is empty");
    if (!session.turns.empty() && session.turns.back().speaker != Speaker::Assistant) {
      throw std::logic_error("session '" + session.id + "' is waiting for an assistant turn");
    }
    Reply reply;
    const std::size_t budget = std::min(config_.max_history, model_.config().max_positions);
    if (words.size() + 1 > budget) {
      words.resize(budget - 1);
      reply.warnings.push_back("user message truncated to " + std::to_string(budget - 1) + " tokens");
    }
    std::vector<Turn> history = session.turns;
    history.push_back(Turn{Speaker::User, detokenize(words), std::nullopt, std::nullopt, Provenance::UserTyped});

    const auto ids = encode_history(history, vocab_, budget);
    const auto slice = serving_slice(history, session.kb_mode, session.kb_size);
    reply.kb_triples = slice.triple_ids;
    for (const auto& w : slice.warnings) reply.warnings.push_back(w);

    const auto hyp = generate(ids, slice, session.decode);
    reply.parsed = parse_output(hyp.tokens, vocab_);
    reply.response = reply.parsed.response;
    if (reply.parsed.missing_response || tokenize(reply.response).empty()) {
      reply.fallback = true;
      reply.response = std::string(kFallbackResponse);
      reply.warnings.push_back("decoder produced no response; returned the fallback text");
    }

    session.turns.push_back(history.back());
    session.turns.push_back(Turn{Speaker::Assistant, reply.response, reply.parsed.action, std::nullopt, Provenance::ModelGenerated});
    reply.turn_index = session.turns.size() - 1;
    return reply;
  }

  const NeuralAssistant<T>& model() const { return model_; }
  const Vocabulary& vocab() const { return vocab_; }
  const KnowledgeBase& kb() const { return kb_; }
  const EncodedKB& encoded_kb() const { return encoded_kb_; }
  const ServingConfig& config() const { return config_; }

 private:
  NeuralAssistant<T> model_;
  Vocabulary vocab_;
  const KnowledgeBase& kb_;
  EncodedKB encoded_kb_;
  ServingConfig config_;
};

}  // namespace nassist
