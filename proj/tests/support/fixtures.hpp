// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Tiny model configs and random inputs shared by the model tests and the
// acceptance run.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nassist/model.hpp"

namespace fixtures {

using namespace nassist;

inline ModelConfig tiny(std::size_t vocab = 16, std::size_t d = 8, std::size_t layers = 1, std::size_t heads = 2) {
  ModelConfig c;
  c.d_model = d;
  c.layers = layers;
  c.heads = heads;
  c.ff_width = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = 32;
  c.dropout = 0.0;
  return c;
}

// The output projection starts at zero; give it (and the bias) random values
// so logits depend on every parameter.
template <typename T>
void randomize_output(NeuralAssistant<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto* name : {"output.proj", "output.bias"})
    for (auto& v : m.params().at(name).value.data()) v = static_cast<T>(n(rng));
  for (auto& p : m.params()) {
    if (p->name.ends_with(".gain") || p->name.ends_with(".b1") || p->name.ends_with(".b2") || p->name.ends_with(".bias")) {
      for (auto& v : p->value.data()) v += static_cast<T>(0.2 * n(rng));
    }
  }
}

inline std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> d(special::kCount, static_cast<TokenId>(vocab) - 1);
  std::vector<TokenId> out(n);
  for (auto& x : out) x = d(rng);
  return out;
}

inline std::vector<std::vector<TokenId>> random_kb(std::mt19937_64& rng, std::size_t m, std::size_t vocab) {
  std::vector<std::vector<TokenId>> kb;
  std::uniform_int_distribution<std::size_t> len(1, 4);
  for (std::size_t i = 0; i < m; ++i) kb.push_back(random_ids(rng, len(rng), vocab));
  return kb;
}

struct Sample {
  std::vector<TokenId> history, target;
  std::vector<std::vector<TokenId>> kb;
  std::vector<std::uint8_t> labels;
};

inline Sample random_sample(std::mt19937_64& rng, std::size_t P, std::size_t M, std::size_t T, std::size_t vocab) {
  Sample s{random_ids(rng, P, vocab), random_ids(rng, T, vocab), random_kb(rng, M, vocab), {}};
  for (std::size_t i = 0; i < M; ++i) s.labels.push_back(i % 2 == 0 ? 1 : 0);
  return s;
}

}  // namespace fixtures
