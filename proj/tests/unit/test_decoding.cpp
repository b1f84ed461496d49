// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "nassist/decoding.hpp"

using namespace nassist;
using Catch::Approx;

namespace {

constexpr TokenId kA = 4, kB = 5;

std::vector<double> logs(std::size_t vocab, std::map<TokenId, double> probs) {
  std::vector<double> out(vocab, -1e9);
  for (auto [t, p] : probs) out[t] = std::log(p);
  return out;
}

// Tabulated scorer keyed by the full prefix; random rows are filled in on
// first use so repeated queries agree.
class RandomScorer {
 public:
  RandomScorer(std::size_t vocab, std::uint64_t seed) : vocab_(vocab), rng_(seed) {}

  std::vector<double> operator()(std::span<const TokenId> prefix) {
    const std::vector<TokenId> key(prefix.begin(), prefix.end());
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    std::gamma_distribution<double> g(0.5, 1.0);
    std::vector<double> p(vocab_);
    double z = 0;
    for (auto& x : p) z += (x = g(rng_) + 1e-6);
    for (auto& x : p) x = std::log(x / z);
    return table_[key] = p;
  }

 private:
  std::size_t vocab_;
  std::mt19937_64 rng_;
  std::map<std::vector<TokenId>, std::vector<double>> table_;
};

void enumerate(Scorer& score, std::vector<TokenId>& prefix, double lp, std::size_t max_len, std::size_t vocab,
               const std::function<void(const Hypothesis&)>& visit) {
  const auto row = score(prefix);
  for (TokenId t = 0; t < static_cast<TokenId>(vocab); ++t) {
    const double next = lp + row[t];
    prefix.push_back(t);
    Hypothesis h{{prefix.begin() + 1, prefix.end()}, next, t == special::kEos};
    if (t == special::kEos) {
      visit(h);
    } else if (prefix.size() - 1 < max_len) {
      enumerate(score, prefix, next, max_len, vocab, visit);
    }
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("greedy follows a rigged chain and stops at eos") {
  const std::vector<TokenId> chain = {7, 4, 9, 5, special::kEos};
  Scorer score = [&](std::span<const TokenId> prefix) {
    const std::size_t step = prefix.size() - 1;
    return logs(10, {{chain[step], 0.9}, {3, 0.1}});
  };
  const auto h = greedy_decode(score, 20);
  CHECK(h.tokens == chain);
  CHECK(h.finished);
  CHECK(h.log_prob == Approx(5 * std::log(0.9)));
}

TEST_CASE("greedy breaks ties toward the lowest id") {
  Scorer score = [](std::span<const TokenId>) { return logs(8, {{6, 0.5}, {special::kEos, 0.5}}); };
  const auto h = greedy_decode(score, 5);
  CHECK(h.tokens == std::vector<TokenId>{special::kEos});
}

TEST_CASE("decoding stops at max_length without eos") {
  Scorer score = [](std::span<const TokenId>) { return logs(6, {{kA, 0.99}, {special::kEos, 0.01}}); };
  for (std::size_t len : {1, 3, 8}) {
    const auto g = greedy_decode(score, len);
    CHECK(g.tokens.size() == len);
    CHECK_FALSE(g.finished);
    const auto b = beam_decode(score, 3, len);
    CHECK(b.tokens.size() <= len);
  }
  CHECK_THROWS_AS(greedy_decode(score, 0), std::invalid_argument);
  CHECK_THROWS_AS(beam_decode(score, 2, 0), std::invalid_argument);
}

TEST_CASE("beam width zero is rejected") {
  Scorer score = [](std::span<const TokenId>) { return logs(6, {{special::kEos, 1.0}}); };
  CHECK_THROWS_AS(beam_decode(score, 0, 5), std::invalid_argument);
  DecodeSettings s;
  s.strategy = DecodeSettings::Strategy::Beam;
  s.beam_width = 0;
  CHECK_THROWS_AS(decode(score, s), std::invalid_argument);
}

TEST_CASE("beam search finds the sequence greedy misses") {
  // Greedy picks a (0.6) and then eos (0.4): 0.24. Beam keeps b (0.4)
  // whose eos has 0.95: 0.38.
  Scorer score = [](std::span<const TokenId> prefix) {
    if (prefix.size() == 1) return logs(6, {{kA, 0.6}, {kB, 0.4}});
    if (prefix[1] == kA) return logs(6, {{special::kEos, 0.4}, {kA, 0.3}, {kB, 0.3}});
    return logs(6, {{special::kEos, 0.95}, {kA, 0.05}});
  };
  const auto g = greedy_decode(score, 5);
  CHECK(g.tokens == std::vector<TokenId>{kA, special::kEos});
  CHECK(g.log_prob == Approx(std::log(0.24)));
  const auto b = beam_decode(score, 2, 5);
  CHECK(b.tokens == std::vector<TokenId>{kB, special::kEos});
  CHECK(b.log_prob == Approx(std::log(0.38)));
  CHECK(b.finished);
}

TEST_CASE("beam width one equals greedy") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomScorer table(7, seed);
    Scorer score = std::ref(table);
    const auto g = greedy_decode(score, 6);
    const auto b = beam_decode(score, 1, 6);
    CHECK(b.tokens == g.tokens);
    CHECK(b.log_prob == g.log_prob);
  }
}

TEST_CASE("beam never scores below greedy under length normalization") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RandomScorer table(6, seed);
    Scorer score = std::ref(table);
    const auto g = greedy_decode(score, 5);
    for (std::size_t width : {2, 3, 5}) {
      const auto b = beam_decode(score, width, 5, 0.6);
      CHECK(b.normalized(0.6) >= g.normalized(0.6) - 1e-12);
    }
  }
}

TEST_CASE("a beam wide enough to keep every prefix matches exhaustive search") {
  constexpr std::size_t vocab = 5, max_len = 3;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    RandomScorer table(vocab, seed);
    Scorer score = std::ref(table);
    std::optional<Hypothesis> best;
    std::vector<TokenId> prefix{special::kBos};
    enumerate(score, prefix, 0.0, max_len, vocab, [&](const Hypothesis& h) {
      if (!best || h.normalized(0.6) > best->normalized(0.6)) best = h;
    });
    const auto g = greedy_decode(score, max_len);
    if (!best || g.normalized(0.6) > best->normalized(0.6)) best = g;
    const auto b = beam_decode(score, 1000, max_len, 0.6);
    CHECK(b.normalized(0.6) == Approx(best->normalized(0.6)).epsilon(1e-12));
    CHECK(b.tokens == best->tokens);
  }
}

TEST_CASE("model scorer agrees with a full decoder pass") {
  ModelConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff_width = 16;
  c.vocab_size = 12;
  c.max_positions = 16;
  c.dropout = 0.0;
  NeuralAssistant<double> m(c, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto* name : {"output.proj", "output.bias"})
    for (auto& v : m.params().at(name).value.data()) v = n(rng);
  const std::vector<TokenId> history = {5, 6, 7, 8};
  const std::vector<std::vector<TokenId>> kb = {{9, 10}, {11}};
  const ModelScorer<double> scorer(m, history, kb);
  const std::vector<TokenId> prefix = {special::kBos, 4, 9, 10};

  Graph<double> g(false);
  const auto out = m.decode(g, m.encode(g, history), m.embed_kb(g, kb), prefix);
  for (std::size_t t = 1; t <= prefix.size(); ++t) {
    const auto row = scorer(std::span<const TokenId>(prefix.data(), t));
    const auto ref = log_softmax_row(out.logits.value(), t - 1);
    REQUIRE(row.size() == c.vocab_size);
    double z = 0;
    for (std::size_t v = 0; v < row.size(); ++v) {
      CHECK(row[v] == Approx(ref[v]).margin(1e-12));
      z += std::exp(row[v]);
    }
    CHECK(z == Approx(1.0).margin(1e-12));
  }

  Scorer score = [&](std::span<const TokenId> p) { return scorer(p); };
  const auto h = greedy_decode(score, 6);
  std::vector<TokenId> manual{special::kBos};
  while (manual.size() <= 6) {
    const auto row = scorer(manual);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    manual.push_back(best);
    if (best == special::kEos) break;
  }
  CHECK(h.tokens == std::vector<TokenId>(manual.begin() + 1, manual.end()));
}

TEST_CASE("decode settings describe themselves") {
  DecodeSettings s;
  CHECK(s.describe() == "greedy(max_length=64)");
  s.strategy = DecodeSettings::Strategy::Beam;
  CHECK(s.describe() == "beam(width=4, max_length=64, length_penalty=0.6)");
}
