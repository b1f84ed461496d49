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

// Dialog corpus types and the JSON / JSON-lines corpus reader.
//
// Record schema:
//   {"id": "...",
//    "turns": [{"speaker": "user"|"assistant", "text": "...",
//               "action": "name(slot=value, ...)" | {"name":..,"slots":[{"slot":..,"value":..}]} | null,
//               "relevant_triples": [triple ids]}]}
// A file is either one JSON array of records or one record per line.

#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nassist/tokenizer.hpp"

namespace nassist {

/// Corpus or schema problem; the message names the record and field.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Speaker { User, Assistant };

/// Where a history turn came from. Training histories hold only
/// GroundTruth turns; serving histories hold UserTyped / ModelGenerated.
enum class Provenance { GroundTruth, UserTyped, ModelGenerated };

inline std::string_view to_string(Speaker s) { return s == Speaker::User ? "user" : "assistant"; }

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::GroundTruth: return "ground-truth";
    case Provenance::UserTyped: return "user-typed";
    case Provenance::ModelGenerated: return "model-generated";
  }
  return "unknown";
}

/// A system action such as restaurant-book(people=4, time=19:30, day=monday).
struct ActionCall {
  std::string name;
  std::vector<std::pair<std::string, std::string>> slots;

  void validate() const {
    if (name.empty()) throw std::invalid_argument("action name is empty");
    std::set<std::string> seen;
    for (const auto& [slot, value] : slots) {
      if (slot.empty()) throw std::invalid_argument("action '" + name + "' has an empty slot name");
      if (!seen.insert(slot).second) throw std::invalid_argument("action '" + name + "' repeats slot '" + slot + "'");
    }
  }

  /// name(slot=value, slot=value)
  std::string to_string() const {
    std::string s = name + "(";
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (i) s += ", ";
      s += slots[i].first + "=" + slots[i].second;
    }
    return s + ")";
  }

  bool operator==(const ActionCall&) const = default;
};

/// Parses the token form of an action: name ( slot = value {, slot = value} ).
/// A bare name (no parenthesis) is accepted as a slot-less call. Returns
/// nullopt when the tokens do not follow the grammar.
inline std::optional<ActionCall> parse_action_tokens(std::span<const std::string> toks) {
  if (toks.empty() || is_punct_token(toks[0])) return std::nullopt;
  ActionCall call;
  call.name = toks[0];
  if (toks.size() == 1) return call;
  if (toks[1] != "(" || toks.back() != ")") return std::nullopt;
  const auto body = toks.subspan(2, toks.size() - 3);
  if (body.empty()) return call;
  std::size_t i = 0;
  std::set<std::string> seen;
  while (true) {
    if (i + 1 >= body.size() || is_punct_token(body[i]) || body[i + 1] != "=") return std::nullopt;
    std::string slot = body[i];
    i += 2;
    std::vector<std::string> value;
    while (i < body.size() && body[i] != "," && body[i] != "=" && body[i] != "(" && body[i] != ")") value.push_back(body[i++]);
    if (value.empty()) return std::nullopt;
    if (!seen.insert(slot).second) return std::nullopt;
    call.slots.emplace_back(std::move(slot), detokenize(value));
    if (i == body.size()) break;
    if (body[i] != ",") return std::nullopt;
    ++i;
  }
  return call;
}

inline std::optional<ActionCall> parse_action(std::string_view text) {
  const auto toks = tokenize(text);
  return parse_action_tokens(toks);
}

/// Canonical (tokenized and re-joined) copy of an action.
inline ActionCall canonical_action(const ActionCall& a) {
  ActionCall out{normalize_text(a.name), {}};
  for (const auto& [s, v] : a.slots) out.slots.emplace_back(normalize_text(s), normalize_text(v));
  return out;
}

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;
  std::optional<ActionCall> action;
  /// Gold relevant-triple ids for this assistant turn, when annotated.
  std::optional<std::vector<std::size_t>> relevant_triples;
  Provenance provenance = Provenance::GroundTruth;
};

struct Dialog {
  std::string id;
  std::vector<Turn> turns;

  std::size_t assistant_turns() const {
    std::size_t n = 0;
    for (const auto& t : turns) n += t.speaker == Speaker::Assistant;
    return n;
  }

  /// Turns alternate starting with the user, and every assistant turn has text.
  void validate() const {
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const Speaker expected = i % 2 == 0 ? Speaker::User : Speaker::Assistant;
      if (turns[i].speaker != expected) {
        throw DataError("dialog '" + id + "': turns[" + std::to_string(i) + "].speaker is " +
                        std::string(to_string(turns[i].speaker)) + ", expected " + std::string(to_string(expected)) +
                        " (turns must alternate starting with the user)");
      }
      if (turns[i].speaker == Speaker::Assistant && tokenize(turns[i].text).empty()) {
        throw DataError("dialog '" + id + "': turns[" + std::to_string(i) + "].text is empty");
      }
    }
  }
};

namespace detail {

inline ActionCall action_from_json(const nlohmann::json& j, const std::string& where) {
  if (j.is_string()) {
    auto parsed = parse_action(j.get<std::string>());
    if (!parsed) throw DataError(where + ": cannot parse action '" + j.get<std::string>() + "'");
    return *parsed;
  }
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string()) {
    throw DataError(where + ": action must be a string or an object with a string 'name'");
  }
  ActionCall a{j["name"].get<std::string>(), {}};
  if (j.contains("slots")) {
    if (!j["slots"].is_array()) throw DataError(where + ".slots: expected an array");
    for (std::size_t k = 0; k < j["slots"].size(); ++k) {
      const auto& s = j["slots"][k];
      if (!s.is_object() || !s.contains("slot") || !s.contains("value") || !s["slot"].is_string()) {
        throw DataError(where + ".slots[" + std::to_string(k) + "]: expected {slot, value}");
      }
      std::string value = s["value"].is_string() ? s["value"].get<std::string>() : s["value"].dump();
      a.slots.emplace_back(s["slot"].get<std::string>(), value);
    }
  }
  a = canonical_action(a);
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(where + ": " + e.what());
  }
  return a;
}

}  // namespace detail

inline nlohmann::json action_to_json(const ActionCall& a) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& [s, v] : a.slots) slots.push_back({{"slot", s}, {"value", v}});
  return {{"name", a.name}, {"slots", slots}};
}

inline Dialog dialog_from_json(const nlohmann::json& rec, std::size_t index) {
  const std::string where0 = "record " + std::to_string(index);
  if (!rec.is_object()) throw DataError(where0 + ": expected an object");
  Dialog d;
  if (!rec.contains("id")) throw DataError(where0 + ": missing field 'id'");
  d.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
  const std::string where = where0 + " (id=" + d.id + ")";
  if (!rec.contains("turns") || !rec["turns"].is_array()) throw DataError(where + ": field 'turns' must be an array");
  const auto& turns = rec["turns"];
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& tj = turns[i];
    const std::string tw = where + ": turns[" + std::to_string(i) + "]";
    if (!tj.is_object()) throw DataError(tw + ": expected an object");
    Turn t;
    if (!tj.contains("speaker") || !tj["speaker"].is_string()) throw DataError(tw + ".speaker: missing or not a string");
    const auto sp = tj["speaker"].get<std::string>();
    if (sp == "user") {
      t.speaker = Speaker::User;
    } else if (sp == "assistant" || sp == "system") {
      t.speaker = Speaker::Assistant;
    } else {
      throw DataError(tw + ".speaker: unknown speaker '" + sp + "'");
    }
    if (!tj.contains("text") || !tj["text"].is_string()) throw DataError(tw + ".text: missing or not a string");
    t.text = tj["text"].get<std::string>();
    if (tj.contains("action") && !tj["action"].is_null()) {
      if (t.speaker != Speaker::Assistant) throw DataError(tw + ".action: only assistant turns carry actions");
      t.action = detail::action_from_json(tj["action"], tw + ".action");
    }
    if (tj.contains("relevant_triples") && !tj["relevant_triples"].is_null()) {
      const auto& rt = tj["relevant_triples"];
      if (!rt.is_array()) throw DataError(tw + ".relevant_triples: expected an array of triple ids");
      std::vector<std::size_t> ids;
      for (const auto& x : rt) {
        if (!x.is_number_unsigned()) throw DataError(tw + ".relevant_triples: ids must be non-negative integers");
        ids.push_back(x.get<std::size_t>());
      }
      t.relevant_triples = std::move(ids);
    }
    d.turns.push_back(std::move(t));
  }
  try {
    d.validate();
  } catch (const DataError& e) {
    throw DataError(where0 + ": " + e.what());
  }
  return d;
}

inline nlohmann::json dialog_to_json(const Dialog& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns) {
    nlohmann::json tj = {{"speaker", to_string(t.speaker)}, {"text", t.text}};
    if (t.action) tj["action"] = t.action->to_string();
    if (t.relevant_triples) tj["relevant_triples"] = *t.relevant_triples;
    turns.push_back(std::move(tj));
  }
  return {{"id", d.id}, {"turns", std::move(turns)}};
}

inline std::vector<Dialog> parse_dialogs(std::istream& in) {
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  std::vector<Dialog> out;
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return out;
  if (content[first] == '[') {
    nlohmann::json arr;
    try {
      arr = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(std::string("malformed dialog corpus: ") + e.what());
    }
    for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(dialog_from_json(arr[i], i));
    return out;
  }
  std::istringstream lines(content);
  std::string line;
  std::size_t lineno = 0, index = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("record " + std::to_string(index) + " (line " + std::to_string(lineno) + "): " + e.what());
    }
    out.push_back(dialog_from_json(rec, index++));
  }
  return out;
}

inline std::vector<Dialog> load_dialogs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dialog corpus " + path);
  return parse_dialogs(in);
}

/// Writes one record per line.
inline void save_dialogs(const std::string& path, std::span<const Dialog> dialogs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dialog corpus " + path);
  for (const auto& d : dialogs) out << dialog_to_json(d).dump() << '\n';
}

}  // namespace nassist
