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
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nassist {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kUser = 4;
inline constexpr TokenId kAssistant = 5;
inline constexpr TokenId kAction = 6;
inline constexpr TokenId kResponse = 7;
inline constexpr TokenId kCount = 8;

inline constexpr std::array<std::string_view, kCount> kNames = {
    "<pad>", "<bos>", "<eos>", "<unk>", "<user>", "<assistant>", "<action>", "<response>"};
}  // namespace special

/// Token <-> id map. Specials occupy ids 0..7; everything else follows in a
/// fixed order and the table never changes after construction.
class Vocabulary {
 public:
  Vocabulary() {
    for (auto name : special::kNames) push(std::string(name));
  }

  /// Builds from non-special tokens in id order.
  explicit Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
    for (const auto& t : tokens) {
      if (to_id_.contains(t)) throw std::invalid_argument("duplicate vocabulary token: " + t);
      push(t);
    }
  }

  std::size_t size() const { return to_token_.size(); }

  TokenId id(std::string_view token) const {
    auto it = to_id_.find(std::string(token));
    return it == to_id_.end() ? special::kUnk : it->second;
  }

  bool contains(std::string_view token) const { return to_id_.contains(std::string(token)); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= to_token_.size()) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    }
    return to_token_[id];
  }

  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> decode(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto i : ids) out.push_back(token(i));
    return out;
  }

  /// FNV-1a over every token, newline separated. Stored in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : to_token_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ull;
      }
      h ^= '\n';
      h *= 1099511628211ull;
    }
    return h;
  }

  /// One non-special token per line; line i holds id 8 + i.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file " + path);
    for (std::size_t i = special::kCount; i < to_token_.size(); ++i) out << to_token_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      tokens.push_back(line);
    }
    return Vocabulary(tokens);
  }

  std::span<const std::string> tokens() const { return to_token_; }

 private:
  void push(std::string t) {
    to_id_.emplace(t, static_cast<TokenId>(to_token_.size()));
    to_token_.push_back(std::move(t));
  }

  std::vector<std::string> to_token_;
  std::unordered_map<std::string, TokenId> to_id_;
};

/// Counts tokens and produces a vocabulary of those seen at least min_count
/// times, ordered by descending frequency then lexicographically.
class VocabularyBuilder {
 public:
  void add(std::span<const std::string> tokens) {
    for (const auto& t : tokens) ++counts_[t];
    ++documents_;
  }

  std::size_t documents() const { return documents_; }

  Vocabulary build(std::size_t min_count) const {
    if (documents_ == 0) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : counts_) {
      if (n < std::max<std::size_t>(min_count, 1)) continue;
      bool reserved = false;
      for (auto name : special::kNames) reserved = reserved || tok == name;
      if (!reserved) kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [tok, n] : kept) tokens.push_back(tok);
    return Vocabulary(tokens);
  }

 private:
  std::map<std::string, std::size_t> counts_;
  std::size_t documents_ = 0;
};

}  // namespace nassist
