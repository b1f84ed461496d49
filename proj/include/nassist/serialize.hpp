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

// Token-level layout of model inputs and outputs.
//
//   history: <user> u1 <assistant> a1 ... <user> uk
//   target:  [<action> name ( slot = value , ... )] <response> r1 ... rn <eos>

#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nassist/dialog.hpp"
#include "nassist/tokenizer.hpp"
#include "nassist/vocab.hpp"

namespace nassist {

inline constexpr std::size_t kDefaultMaxHistory = 512;

/// Serializes a history prefix ending in a user turn. When the prefix is
/// longer than max_tokens, whole turns are dropped from the front; a final
/// user turn that alone exceeds the budget is an error.
inline std::vector<TokenId> encode_history(std::span<const Turn> turns, const Vocabulary& vocab,
                                           std::size_t max_tokens = kDefaultMaxHistory) {
  if (turns.empty()) throw std::invalid_argument("encode_history: empty history");
  if (turns.back().speaker != Speaker::User) {
    throw std::invalid_argument("encode_history: history must end with a user turn");
  }
  std::vector<std::vector<TokenId>> blocks;
  blocks.reserve(turns.size());
  for (const auto& t : turns) {
    std::vector<TokenId> b{t.speaker == Speaker::User ? special::kUser : special::kAssistant};
    const auto toks = tokenize(t.text);
    const auto ids = vocab.encode(toks);
    b.insert(b.end(), ids.begin(), ids.end());
    blocks.push_back(std::move(b));
  }
  if (blocks.back().size() > max_tokens) {
    throw std::length_error("encode_history: final user turn has " + std::to_string(blocks.back().size()) +
                            " tokens, over the " + std::to_string(max_tokens) + "-token limit");
  }
  std::size_t first = blocks.size() - 1, total = blocks.back().size();
  while (first > 0 && total + blocks[first - 1].size() <= max_tokens) total += blocks[--first].size();
  std::vector<TokenId> out;
  out.reserve(total);
  for (std::size_t i = first; i < blocks.size(); ++i) out.insert(out.end(), blocks[i].begin(), blocks[i].end());
  return out;
}

inline std::vector<TokenId> serialize_target(const std::optional<ActionCall>& action, std::string_view response,
                                             const Vocabulary& vocab) {
  const auto resp = tokenize(response);
  if (resp.empty()) throw std::invalid_argument("serialize_target: empty response");
  std::vector<TokenId> out;
  if (action) {
    action->validate();
    out.push_back(special::kAction);
    const auto ids = vocab.encode(tokenize(action->to_string()));
    out.insert(out.end(), ids.begin(), ids.end());
  }
  out.push_back(special::kResponse);
  const auto ids = vocab.encode(resp);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(special::kEos);
  return out;
}

/// Decoded model output. Parsing never fails; problems are flagged.
struct ParsedOutput {
  std::optional<ActionCall> action;
  std::string response;
  /// Detokenized action segment exactly as generated (empty when absent).
  std::string action_raw;
  bool action_malformed = false;
  bool missing_response = false;

  bool operator==(const ParsedOutput&) const = default;
};

inline ParsedOutput parse_output(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::size_t end = ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == special::kEos) {
      end = i;
      break;
    }
  }
  const auto seq = ids.first(end);
  std::size_t resp_at = seq.size();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] == special::kResponse) {
      resp_at = i;
      break;
    }
  }
  auto words = [&](std::span<const TokenId> part) {
    std::vector<std::string> out;
    for (auto id : part)
      if (!Vocabulary::is_special(id) || id == special::kUnk) out.push_back(vocab.token(id));
    return out;
  };

  ParsedOutput out;
  out.missing_response = resp_at == seq.size();
  const auto head = seq.first(resp_at);
  if (!head.empty()) {
    if (head[0] == special::kAction) {
      const auto toks = words(head.subspan(1));
      out.action = parse_action_tokens(toks);
      out.action_malformed = !out.action.has_value();
      out.action_raw = out.action ? out.action->to_string() : detokenize(toks);
    } else {
      out.action_raw = detokenize(words(head));
      out.action_malformed = true;
    }
  }
  if (!out.missing_response) out.response = detokenize(words(seq.subspan(resp_at + 1)));
  return out;
}

}  // namespace nassist
