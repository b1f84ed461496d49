// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Small generated corpora for smoke tests and sanity runs.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "nassist/dialog.hpp"
#include "nassist/kb.hpp"

namespace nassist::synthetic {

struct Task {
  std::vector<Dialog> train;
  std::vector<Dialog> test;
  KnowledgeBase kb;
};

/// Sixteen two-exchange booking dialogs (32 assistant turns) over a
/// restaurant KB. Every turn carries an action.
inline Task booking_task() {
  static const char* kNames[] = {"la mimosa",   "pizza hut",   "the gardenia", "curry garden", "golden wok", "bedouin",
                                 "the nirala",  "meghna",      "cote",         "saigon city",  "yippee noodle bar",
                                 "tang chinese", "la raza",    "hk fusion",    "royal spice",  "the copper kettle"};
  static const char* kDays[] = {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};
  static const char* kAreas[] = {"north", "south", "east", "west", "centre"};
  static const char* kFoods[] = {"italian", "indian", "chinese", "thai", "french", "mediterranean"};
  Task t;
  for (int i = 0; i < 16; ++i) {
    const std::string name = kNames[i];
    const std::string day = kDays[(i * 3) % 7];
    const std::string time = std::to_string(17 + i % 5) + ":" + (i % 2 ? "30" : "00");
    const std::string people = std::to_string(2 + i % 6);
    const std::string area = kAreas[i % 5];
    const std::string food = kFoods[(i * 5) % 6];
    t.kb.add(name, "area", area);
    t.kb.add(name, "food", food);

    Dialog d;
    d.id = "booking-" + std::to_string(i);
    d.turns.push_back({Speaker::User, "can you book " + name + " for " + people + " people on " + day + " at " + time + " ?",
                       std::nullopt, std::nullopt, Provenance::GroundTruth});
    d.turns.push_back({Speaker::Assistant,
                       "done . " + name + " is booked for " + day + " at " + time + " . it is in the " + area + " .",
                       ActionCall{"restaurant-book", {{"name", name}, {"people", people}, {"day", day}, {"time", time}}},
                       std::nullopt, Provenance::GroundTruth});
    d.turns.push_back({Speaker::User, "great , what food do they serve ?", std::nullopt, std::nullopt, Provenance::GroundTruth});
    d.turns.push_back({Speaker::Assistant, name + " serves " + food + " food . enjoy your meal !",
                       ActionCall{"restaurant-inform", {{"name", name}, {"food", food}}}, std::nullopt,
                       Provenance::GroundTruth});
    t.train.push_back(std::move(d));
  }
  t.test = t.train;
  return t;
}

struct GroundingOptions {
  std::size_t entities = 600;
  std::size_t values = 32;
  std::size_t train_entities = 400;
  std::uint64_t seed = 7;
};

/// Question answering over a KB of (placeK, area, districtX) and
/// (placeK, food, cuisineY) facts. Test dialogs ask about entities never
/// seen in training dialogs, so answers must come from the KB.
inline Task grounding_task(const GroundingOptions& o = {}) {
  if (o.train_entities > o.entities) throw std::invalid_argument("grounding_task: more training entities than entities");
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> value(0, o.values - 1);
  std::vector<std::size_t> ids(o.entities);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::shuffle(ids.begin(), ids.end(), rng);

  Task t;
  std::vector<std::pair<std::string, std::string>> facts(o.entities);
  for (std::size_t e = 0; e < o.entities; ++e) {
    facts[e] = {"district" + std::to_string(value(rng)), "cuisine" + std::to_string(value(rng))};
    const std::string place = "place" + std::to_string(e);
    t.kb.add(place, "area", facts[e].first);
    t.kb.add(place, "food", facts[e].second);
  }
  auto dialog = [&](std::size_t e, bool area) {
    const std::string place = "place" + std::to_string(e);
    Dialog d;
    d.id = place + (area ? "-area" : "-food");
    d.turns.push_back({Speaker::User, area ? "which area is " + place + " in ?" : "what food does " + place + " serve ?",
                       std::nullopt, std::nullopt, Provenance::GroundTruth});
    d.turns.push_back({Speaker::Assistant,
                       area ? "it is in " + facts[e].first + " ." : "they serve " + facts[e].second + " food .",
                       std::nullopt, std::vector<std::size_t>{2 * e + (area ? 0 : 1)}, Provenance::GroundTruth});
    return d;
  };
  for (std::size_t i = 0; i < o.entities; ++i) {
    auto& split = i < o.train_entities ? t.train : t.test;
    split.push_back(dialog(ids[i], true));
    split.push_back(dialog(ids[i], false));
  }
  return t;
}

}  // namespace nassist::synthetic
