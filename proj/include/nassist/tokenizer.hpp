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

#include <cctype>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nassist {

/// Characters emitted as standalone tokens.
inline constexpr std::string_view kPunctuation = "(),=:?.!";

inline bool is_punct_char(char c) { return kPunctuation.find(c) != std::string_view::npos; }

inline bool is_punct_token(std::string_view tok) { return tok.size() == 1 && is_punct_char(tok[0]); }

/// Lowercases, splits on whitespace and breaks out `(),=:?.!` as their own
/// tokens. Non-ASCII bytes pass through unchanged.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      flush();
    } else if (is_punct_char(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : ch);
    }
  }
  flush();
  return out;
}

/// Inverse of tokenize for text written in canonical spacing: no space
/// before `),.?!:=`, none after `(:=`.
inline std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& tok : tokens) {
    const bool attach_left = tok == ")" || tok == "," || tok == "." || tok == "?" || tok == "!" || tok == ":" || tok == "=";
    if (!out.empty() && !glue_next && !attach_left) out.push_back(' ');
    out += tok;
    glue_next = tok == "(" || tok == ":" || tok == "=";
  }
  return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
  return detokenize(std::span<const std::string>(tokens));
}

/// Canonical form of a piece of text: detokenize(tokenize(text)).
inline std::string normalize_text(std::string_view text) { return detokenize(tokenize(text)); }

}  // namespace nassist
