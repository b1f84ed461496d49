// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP chat service. ChatService::handle() implements the API on plain
// (method, path, body) triples; mount() wires it into an httplib server.
//
//   POST   /sessions                 -> 201 {session_id}
//   POST   /sessions/{id}/messages   {text} -> 200 {response, action, action_raw,
//                                     action_malformed, fallback, turn_index, warnings}
//   GET    /sessions/{id}            -> 200 {session_id, turns: [...]}
//   DELETE /sessions/{id}            -> 200 {deleted}
//   GET    /health                   -> 200 {status}

#pragma once

#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "nassist/session.hpp"

namespace nassist {

struct ServiceConfig {
  std::chrono::seconds session_ttl{3600};
  /// Append-only JSONL transcript log; empty disables persistence.
  std::string transcript_path;
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

inline nlohmann::json action_json(const std::optional<ActionCall>& a) {
  if (!a) return nullptr;
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& [s, v] : a->slots) slots.push_back({{"slot", s}, {"value", v}});
  return {{"name", a->name}, {"slots", slots}};
}

inline nlohmann::json turn_json(const Turn& t, std::size_t index) {
  return {{"turn_index", index},
          {"speaker", to_string(t.speaker)},
          {"text", t.text},
          {"action", action_json(t.action)},
          {"provenance", to_string(t.provenance)}};
}

template <typename T = float>
class ChatService {
 public:
  using Clock = std::chrono::steady_clock;

  explicit ChatService(const Assistant<T>& assistant, ServiceConfig config = {})
      : assistant_(assistant), config_(std::move(config)), id_rng_(std::random_device{}()) {}

  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body) {
    try {
      return route(method, path, body);
    } catch (const std::exception& e) {
      return error(500, std::string("internal error: ") + e.what());
    }
  }

  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t reclaim_expired(Clock::time_point now = Clock::now()) {
    std::unique_lock lock(table_mutex_);
    std::size_t dropped = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::lock_guard entry_lock(it->second->mutex);
      if (now - it->second->last_used > config_.session_ttl) {
        it->second->closed = true;
        it = sessions_.erase(it);
        ++dropped;
      } else {
        ++it;
      }
    }
    return dropped;
  }

  std::size_t session_count() const {
    std::shared_lock lock(table_mutex_);
    return sessions_.size();
  }

 private:
  struct Entry {
    std::mutex mutex;
    Session session;
    Clock::time_point last_used;
    bool closed = false;
  };

  static HttpResponse error(int status, std::string message, std::optional<std::string> field = std::nullopt) {
    nlohmann::json j{{"error", std::move(message)}};
    j["field"] = field ? nlohmann::json(*field) : nlohmann::json();
    return {status, j};
  }

  static std::vector<std::string_view> split_path(std::string_view path) {
    if (auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
    std::vector<std::string_view> parts;
    std::size_t i = 0;
    while (i < path.size()) {
      while (i < path.size() && path[i] == '/') ++i;
      const auto j = path.find('/', i);
      const auto end = j == std::string_view::npos ? path.size() : j;
      if (end > i) parts.push_back(path.substr(i, end - i));
      i = end;
    }
    return parts;
  }

  HttpResponse route(std::string_view method, std::string_view path, std::string_view body) {
    const auto parts = split_path(path);
    if (parts.size() == 1 && parts[0] == "health") {
      if (method != "GET") return error(405, "method not allowed");
      return {200, {{"status", "ok"}, {"sessions", session_count()}}};
    }
    if (parts.empty() || parts[0] != "sessions") return error(404, "no such endpoint: " + std::string(path));
    if (parts.size() == 1) {
      if (method != "POST") return error(405, "method not allowed");
      return create(body);
    }
    const std::string id(parts[1]);
    if (parts.size() == 2) {
      if (method == "GET") return transcript(id);
      if (method == "DELETE") return remove(id);
      return error(405, "method not allowed");
    }
    if (parts.size() == 3 && parts[2] == "messages") {
      if (method != "POST") return error(405, "method not allowed");
      return message(id, body);
    }
    return error(404, "no such endpoint: " + std::string(path));
  }

  HttpResponse create(std::string_view body) {
    Session s = assistant_.new_session("");
    if (!body.empty() && body.find_first_not_of(" \t\r\n") != std::string_view::npos) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(body);
      } catch (const nlohmann::json::parse_error& e) {
        return error(400, std::string("malformed JSON body: ") + e.what());
      }
      if (!j.is_object()) return error(400, "body must be a JSON object");
      if (j.contains("kb_mode")) {
        if (!j["kb_mode"].is_string()) return error(400, "kb_mode must be a string", "kb_mode");
        try {
          s.kb_mode = slice_mode_from_string(j["kb_mode"].get<std::string>());
        } catch (const std::invalid_argument& e) {
          return error(400, e.what(), "kb_mode");
        }
      }
      if (j.contains("kb_size")) {
        if (!j["kb_size"].is_number_unsigned() || j["kb_size"].get<std::size_t>() == 0) {
          return error(400, "kb_size must be a positive integer", "kb_size");
        }
        s.kb_size = j["kb_size"].get<std::size_t>();
      }
      if (j.contains("beam_width")) {
        if (!j["beam_width"].is_number_unsigned() || j["beam_width"].get<std::size_t>() == 0) {
          return error(400, "beam_width must be a positive integer", "beam_width");
        }
        s.decode.strategy = j["beam_width"].get<std::size_t>() > 1 ? DecodeSettings::Strategy::Beam
                                                                    : DecodeSettings::Strategy::Greedy;
        s.decode.beam_width = j["beam_width"].get<std::size_t>();
      }
      if (j.contains("max_length")) {
        if (!j["max_length"].is_number_unsigned() || j["max_length"].get<std::size_t>() == 0) {
          return error(400, "max_length must be a positive integer", "max_length");
        }
        s.decode.max_length = j["max_length"].get<std::size_t>();
      }
    }
    auto entry = std::make_shared<Entry>();
    entry->last_used = Clock::now();
    std::unique_lock lock(table_mutex_);
    std::string id;
    do {
      id = new_id();
    } while (sessions_.contains(id));
    s.id = id;
    entry->session = std::move(s);
    sessions_.emplace(id, std::move(entry));
    return {201, {{"session_id", id}}};
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(table_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  HttpResponse not_found(const std::string& id) const { return error(404, "unknown or expired session '" + id + "'"); }

  HttpResponse message(const std::string& id, std::string_view body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return error(400, std::string("malformed JSON body: ") + e.what());
    }
    if (!j.is_object()) return error(400, "body must be a JSON object");
    if (!j.contains("text")) return error(400, "missing field 'text'", "text");
    if (!j["text"].is_string()) return error(400, "field 'text' must be a string", "text");
    const auto text = j["text"].get<std::string>();
    if (tokenize(text).empty()) return error(400, "field 'text' is empty", "text");

    const auto entry = find(id);
    if (!entry) return not_found(id);
    std::lock_guard lock(entry->mutex);
    if (entry->closed) return not_found(id);
    const std::size_t before = entry->session.turns.size();
    const Reply reply = assistant_.respond(entry->session, text);
    entry->last_used = Clock::now();
    persist(entry->session, before);

    nlohmann::json warnings = reply.warnings;
    return {200,
            {{"session_id", id},
             {"response", reply.response},
             {"action", action_json(reply.parsed.action)},
             {"action_raw", reply.parsed.action_raw},
             {"action_malformed", reply.parsed.action_malformed},
             {"fallback", reply.fallback},
             {"turn_index", reply.turn_index},
             {"warnings", warnings}}};
  }

  HttpResponse transcript(const std::string& id) {
    const auto entry = find(id);
    if (!entry) return not_found(id);
    std::lock_guard lock(entry->mutex);
    if (entry->closed) return not_found(id);
    entry->last_used = Clock::now();
    nlohmann::json turns = nlohmann::json::array();
    for (std::size_t i = 0; i < entry->session.turns.size(); ++i) turns.push_back(turn_json(entry->session.turns[i], i));
    return {200, {{"session_id", id}, {"turns", turns}}};
  }

  HttpResponse remove(const std::string& id) {
    std::shared_ptr<Entry> entry;
    {
      std::unique_lock lock(table_mutex_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) return not_found(id);
      entry = it->second;
      sessions_.erase(it);
    }
    std::lock_guard lock(entry->mutex);
    entry->closed = true;
    return {200, {{"deleted", id}}};
  }

  void persist(const Session& s, std::size_t from) {
    if (config_.transcript_path.empty()) return;
    std::lock_guard lock(log_mutex_);
    std::ofstream out(config_.transcript_path, std::ios::app);
    for (std::size_t i = from; i < s.turns.size(); ++i) {
      auto j = turn_json(s.turns[i], i);
      j["session_id"] = s.id;
      out << j.dump() << '\n';
    }
  }

  std::string new_id() {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 2; ++i) {
      std::uint64_t v = id_rng_();
      for (int k = 0; k < 16; ++k, v >>= 4) id.push_back(kHex[v & 15]);
    }
    return id;
  }

  const Assistant<T>& assistant_;
  ServiceConfig config_;
  mutable std::shared_mutex table_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mt19937_64 id_rng_;
  std::mutex log_mutex_;
};

}  // namespace nassist
