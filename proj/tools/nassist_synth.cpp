// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Writes the generated booking or grounding corpus as train/test dialog
// files plus a KB file.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "nassist/synthetic.hpp"

namespace fs = std::filesystem;
using namespace nassist;

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic dialog corpora"};
  std::string task = "booking";
  std::string out;
  synthetic::GroundingOptions g;
  app.add_option("task", task, "booking | grounding")->check(CLI::IsMember({"booking", "grounding"}));
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--entities", g.entities, "Grounding: number of places");
  app.add_option("--train-entities", g.train_entities, "Grounding: places used in training dialogs");
  app.add_option("--values", g.values, "Grounding: distinct districts and cuisines");
  app.add_option("--seed", g.seed, "Grounding: generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto t = task == "booking" ? synthetic::booking_task() : synthetic::grounding_task(g);
    fs::create_directories(out);
    save_dialogs((fs::path(out) / "train.jsonl").string(), t.train);
    save_dialogs((fs::path(out) / "test.jsonl").string(), t.test);
    save_triples((fs::path(out) / "kb.tsv").string(), t.kb);
    std::cout << t.train.size() << " train dialogs, " << t.test.size() << " test dialogs, " << t.kb.size() << " triples\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
