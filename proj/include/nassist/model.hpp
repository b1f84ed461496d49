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

// Transformer encoder-decoder whose decoder cross-attention ranges over the
// encoded history and the KB triple vectors together: every head runs one
// softmax over the P + M memory slots [h_1..h_P, v_1..v_M].
//
// Layers are pre-normalized. One embedding table feeds the encoder, the
// decoder, the triple vectors and (transposed) the output layer; the output
// layer applies a zero-initialized d×d projection before the tied table so a
// fresh model predicts the uniform distribution.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nassist/autodiff.hpp"
#include "nassist/vocab.hpp"

namespace nassist {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 512;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 512;
  double dropout = 0.1;
  /// Weight of the generation loss against the distant-supervision loss.
  double alpha = 0.5;

  void validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || ff_width == 0 || max_positions == 0) {
      throw std::invalid_argument("model config: sizes must be positive");
    }
    if (d_model % heads != 0) {
      throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " is not divisible by " +
                                  std::to_string(heads) + " heads");
    }
    if (vocab_size <= special::kCount) throw std::invalid_argument("model config: vocab_size must exceed the specials");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("model config: alpha must lie in [0,1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0,1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model}, {"layers", c.layers},         {"heads", c.heads},     {"ff_width", c.ff_width},
       {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions}, {"dropout", c.dropout}, {"alpha", c.alpha}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.ff_width = j.value("ff_width", d.ff_width);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.dropout = j.value("dropout", d.dropout);
  c.alpha = j.value("alpha", d.alpha);
}

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <typename T>
struct DecoderOutput {
  Var<T> logits;
  /// [layer][head] -> T×(P+M) attention probabilities.
  std::vector<std::vector<Var<T>>> cross_attention;
  std::size_t history_len = 0;
  std::size_t kb_len = 0;
};

/// Plain-value copy of the decoder's cross-attention maps.
template <typename T>
struct AttentionRecord {
  std::size_t history_len = 0;
  std::size_t kb_len = 0;
  std::vector<std::vector<Tensor<T>>> layers;

  static AttentionRecord from(const DecoderOutput<T>& out) {
    AttentionRecord r{out.history_len, out.kb_len, {}};
    for (const auto& layer : out.cross_attention) {
      auto& dst = r.layers.emplace_back();
      for (const auto& head : layer) dst.push_back(head.value());
    }
    return r;
  }
};

template <typename T>
class NeuralAssistant {
 public:
  explicit NeuralAssistant(ModelConfig config, std::uint64_t seed = 1) : config_(std::move(config)) {
    config_.validate();
    build_positions();
    init(seed);
  }

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  /// Encoder over the serialized history; returns P×d.
  Var<T> encode(Graph<T>& g, std::span<const TokenId> history, const ForwardOptions& opt = {}) const {
    if (history.empty()) throw std::invalid_argument("encode: empty history");
    if (history.size() > config_.max_positions) {
      throw std::invalid_argument("encode: history of " + std::to_string(history.size()) + " tokens exceeds " +
                                  std::to_string(config_.max_positions) + " positions");
    }
    Var<T> x = drop(embed_sequence(g, history), opt);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "encoder." + std::to_string(l) + ".";
      Var<T> a = norm(g, p + "ln1", x);
      x = add(x, drop(attention(g, p + "self_attn", a, a, nullptr, nullptr), opt));
      Var<T> f = norm(g, p + "ln2", x);
      x = add(x, drop(feed_forward(g, p + "ffn", f), opt));
    }
    return norm(g, "encoder.final_ln", x);
  }

  /// Triple vectors: mean token embedding of each triple, M×d. No positional
  /// signal is added.
  Var<T> embed_kb(Graph<T>& g, std::span<const std::vector<TokenId>> triples) const {
    if (triples.empty()) return g.constant(Tensor<T>(0, config_.d_model));
    const Var<T> table = g.parameter(params_.at("embedding"));
    return scale(segment_mean(table, triples), std::sqrt(static_cast<T>(config_.d_model)));
  }

  /// Teacher-forced decoder pass. `inputs` is the shifted target
  /// (<bos> y_1 .. y_{T-1}); row t of the logits scores y_{t+1}.
  /// `kb_valid`, when given, masks padded KB slots out of every softmax.
  DecoderOutput<T> decode(Graph<T>& g, const Var<T>& history, const Var<T>& kb, std::span<const TokenId> inputs,
                          const ForwardOptions& opt = {}, const std::vector<std::uint8_t>* kb_valid = nullptr) const {
    const std::size_t d = config_.d_model;
    if (inputs.empty()) throw std::invalid_argument("decode: empty decoder input");
    if (inputs.size() > config_.max_positions) throw std::invalid_argument("decode: target longer than max positions");
    if (history.cols() != d) throw std::invalid_argument("decode: history width " + std::to_string(history.cols()) + " != d_model");
    if (kb.rows() > 0 && kb.cols() != d) throw std::invalid_argument("decode: KB width " + std::to_string(kb.cols()) + " != d_model");
    if (kb_valid && kb_valid->size() != kb.rows()) throw std::invalid_argument("decode: KB mask length differs from KB rows");

    DecoderOutput<T> out;
    out.history_len = history.rows();
    out.kb_len = kb.rows();
    const Var<T> memory = kb.rows() > 0 ? concat_rows(history, kb) : history;
    const auto causal = AttentionMask::causal(inputs.size());
    std::optional<AttentionMask> cross_mask;
    if (kb_valid) {
      std::vector<std::uint8_t> keys(history.rows(), 1);
      keys.insert(keys.end(), kb_valid->begin(), kb_valid->end());
      cross_mask = AttentionMask::keys(inputs.size(), keys);
    }

    Var<T> y = drop(embed_sequence(g, inputs), opt);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "decoder." + std::to_string(l) + ".";
      Var<T> a = norm(g, p + "ln1", y);
      y = add(y, drop(attention(g, p + "self_attn", a, a, &causal, nullptr), opt));
      Var<T> c = norm(g, p + "ln2", y);
      auto& heads = out.cross_attention.emplace_back();
      y = add(y, drop(attention(g, p + "cross_attn", c, memory, cross_mask ? &*cross_mask : nullptr, &heads), opt));
      Var<T> f = norm(g, p + "ln3", y);
      y = add(y, drop(feed_forward(g, p + "ffn", f), opt));
    }
    y = norm(g, "decoder.final_ln", y);
    const Var<T> projected = matmul(y, g.parameter(params_.at("output.proj")));
    out.logits = add_row(matmul_nt(projected, g.parameter(params_.at("embedding"))), g.parameter(params_.at("output.bias")));
    return out;
  }

  /// <bos> followed by all but the last target token.
  static std::vector<TokenId> shift_right(std::span<const TokenId> target) {
    std::vector<TokenId> in{special::kBos};
    if (!target.empty()) in.insert(in.end(), target.begin(), target.end() - 1);
    return in;
  }

 private:
  Var<T> drop(const Var<T>& x, const ForwardOptions& opt) const {
    if (!opt.training || !opt.rng || config_.dropout <= 0.0) return x;
    return dropout(x, config_.dropout, *opt.rng);
  }

  Var<T> embed_sequence(Graph<T>& g, std::span<const TokenId> ids) const {
    const Var<T> table = g.parameter(params_.at("embedding"));
    const Var<T> tok = scale(gather_rows(table, ids), std::sqrt(static_cast<T>(config_.d_model)));
    Tensor<T> pos(ids.size(), config_.d_model);
    std::copy_n(positions_.data().begin(), pos.size(), pos.data().begin());
    return add(tok, g.constant(std::move(pos)));
  }

  Var<T> norm(Graph<T>& g, const std::string& name, const Var<T>& x) const {
    return layer_norm(x, g.parameter(params_.at(name + ".gain")), g.parameter(params_.at(name + ".bias")), T(1e-6));
  }

  Var<T> feed_forward(Graph<T>& g, const std::string& name, const Var<T>& x) const {
    Var<T> h = relu(add_row(matmul(x, g.parameter(params_.at(name + ".w1"))), g.parameter(params_.at(name + ".b1"))));
    return add_row(matmul(h, g.parameter(params_.at(name + ".w2"))), g.parameter(params_.at(name + ".b2")));
  }

  Var<T> attention(Graph<T>& g, const std::string& name, const Var<T>& query, const Var<T>& memory,
                   const AttentionMask* mask, std::vector<Var<T>>* probs_out) const {
    const std::size_t heads = config_.heads;
    const std::size_t dk = config_.d_model / heads;
    const Var<T> q = matmul(query, g.parameter(params_.at(name + ".wq")));
    const Var<T> k = matmul(memory, g.parameter(params_.at(name + ".wk")));
    const Var<T> v = matmul(memory, g.parameter(params_.at(name + ".wv")));
    const T inv = T(1) / std::sqrt(static_cast<T>(dk));
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Var<T> qh = slice_cols(q, h * dk, (h + 1) * dk);
      const Var<T> kh = slice_cols(k, h * dk, (h + 1) * dk);
      const Var<T> vh = slice_cols(v, h * dk, (h + 1) * dk);
      const Var<T> probs = softmax_rows(scale(matmul_nt(qh, kh), inv), mask);
      if (probs_out) probs_out->push_back(probs);
      outs.push_back(matmul(probs, vh));
    }
    const Var<T> joined = heads == 1 ? outs[0] : concat_cols<T>(outs);
    return matmul(joined, g.parameter(params_.at(name + ".wo")));
  }

  void build_positions() {
    const std::size_t d = config_.d_model;
    positions_ = Tensor<T>(config_.max_positions, d);
    for (std::size_t pos = 0; pos < config_.max_positions; ++pos) {
      for (std::size_t i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        positions_(pos, i) = static_cast<T>(std::sin(pos * freq));
        if (i + 1 < d) positions_(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
      }
    }
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = config_.d_model, ff = config_.ff_width, V = config_.vocab_size;
    auto normal = [&](std::size_t r, std::size_t c, double stddev) {
      std::normal_distribution<double> dist(0.0, stddev);
      Tensor<T> t(r, c);
      for (auto& x : t.data()) x = static_cast<T>(dist(rng));
      return t;
    };
    auto xavier = [&](std::size_t r, std::size_t c) { return normal(r, c, std::sqrt(2.0 / static_cast<double>(r + c))); };
    auto add_norm = [&](const std::string& n) {
      params_.add(n + ".gain", Tensor<T>(1, d, T(1)));
      params_.add(n + ".bias", Tensor<T>(1, d, T(0)));
    };
    auto add_attn = [&](const std::string& n) {
      for (const char* w : {".wq", ".wk", ".wv", ".wo"}) params_.add(n + w, xavier(d, d));
    };
    auto add_ffn = [&](const std::string& n) {
      params_.add(n + ".w1", xavier(d, ff));
      params_.add(n + ".b1", Tensor<T>(1, ff, T(0)));
      params_.add(n + ".w2", xavier(ff, d));
      params_.add(n + ".b2", Tensor<T>(1, d, T(0)));
    };

    params_.add("embedding", normal(V, d, 1.0 / std::sqrt(static_cast<double>(d))));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "encoder." + std::to_string(l) + ".";
      add_norm(p + "ln1");
      add_attn(p + "self_attn");
      add_norm(p + "ln2");
      add_ffn(p + "ffn");
    }
    add_norm("encoder.final_ln");
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "decoder." + std::to_string(l) + ".";
      add_norm(p + "ln1");
      add_attn(p + "self_attn");
      add_norm(p + "ln2");
      add_attn(p + "cross_attn");
      add_norm(p + "ln3");
      add_ffn(p + "ffn");
    }
    add_norm("decoder.final_ln");
    params_.add("output.proj", Tensor<T>(d, d, T(0)));
    params_.add("output.bias", Tensor<T>(1, V, T(0)));
  }

  ModelConfig config_;
  ParameterSet<T> params_;
  Tensor<T> positions_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kKbProbabilityFloor = 1e-7;

/// Mean token negative log-likelihood under teacher forcing.
template <typename T>
Var<T> generation_loss(const Var<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
  return cross_entropy(logits, targets, mask);
}

/// q_1..q_M from the final decoder layer: attention averaged over heads and
/// unmasked target rows, restricted to the KB slots, renormalized to sum to
/// one, then clamped into [ε, 1-ε].
template <typename T>
Var<T> kb_attention_summary(const DecoderOutput<T>& out, const std::vector<std::uint8_t>& row_mask) {
  if (out.kb_len == 0) throw std::invalid_argument("kb_attention_summary: no KB slots");
  const auto& heads = out.cross_attention.back();
  const std::size_t P = out.history_len, M = out.kb_len;
  Var<T> acc;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const Var<T> kb_cols = masked_row_mean(slice_cols(heads[h], P, P + M), row_mask);
    acc = h == 0 ? kb_cols : add(acc, kb_cols);
  }
  const Var<T> avg = scale(acc, T(1) / static_cast<T>(heads.size()));
  const T eps = static_cast<T>(kKbProbabilityFloor);
  return clamp(normalize_sum(avg), eps, T(1) - eps);
}

/// Value-level counterpart of kb_attention_summary over a stored record.
template <typename T>
std::vector<T> kb_attention_summary(const AttentionRecord<T>& rec, const std::vector<std::uint8_t>& row_mask) {
  if (rec.kb_len == 0) throw std::invalid_argument("kb_attention_summary: no KB slots");
  if (rec.layers.empty() || rec.layers.back().empty()) throw std::invalid_argument("kb_attention_summary: empty record");
  const auto& heads = rec.layers.back();
  const std::size_t P = rec.history_len, M = rec.kb_len;
  std::size_t rows = 0;
  for (auto m : row_mask) rows += m ? 1 : 0;
  if (rows == 0) throw std::invalid_argument("kb_attention_summary: every row is masked");
  std::vector<double> acc(M, 0.0);
  for (const auto& a : heads) {
    if (a.cols() != P + M || a.rows() != row_mask.size()) throw std::invalid_argument("kb_attention_summary: record shape mismatch");
    for (std::size_t r = 0; r < a.rows(); ++r)
      if (row_mask[r])
        for (std::size_t m = 0; m < M; ++m) acc[m] += static_cast<double>(a(r, P + m));
  }
  double total = 0.0;
  for (auto v : acc) total += v;
  if (!(total > 0.0)) throw std::invalid_argument("kb_attention_summary: no attention mass on the KB");
  std::vector<T> q(M);
  for (std::size_t m = 0; m < M; ++m) {
    q[m] = static_cast<T>(std::clamp(acc[m] / total, kKbProbabilityFloor, 1.0 - kKbProbabilityFloor));
  }
  return q;
}

/// Mean binary cross-entropy between q_m and the weak labels y_m.
template <typename T>
Var<T> distant_supervision_loss(const Var<T>& q, std::span<const std::uint8_t> labels) {
  return binary_cross_entropy(q, labels);
}

/// α·L_gen + (1-α)·L_d; the endpoints return the selected term itself so no
/// gradient path to the other term exists.
template <typename T>
Var<T> total_loss(const Var<T>& gen, const Var<T>& distant, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("total_loss: alpha must lie in [0,1]");
  if (alpha == 1.0) return gen;
  if (alpha == 0.0) return distant;
  return add(scale(gen, static_cast<T>(alpha)), scale(distant, static_cast<T>(1.0 - alpha)));
}

/// One turn-level example as the model sees it.
struct ExampleView {
  std::span<const TokenId> history;
  std::span<const std::vector<TokenId>> kb;
  std::span<const TokenId> target;
  std::span<const std::uint8_t> labels;
};

template <typename T>
struct ExampleLoss {
  Var<T> total;
  Var<T> gen;
  /// Absent when the example has no KB slots; its value then counts as 0.
  std::optional<Var<T>> distant;
  DecoderOutput<T> decoder;
};

/// Full forward pass and loss for one example.
template <typename T>
ExampleLoss<T> example_loss(const NeuralAssistant<T>& model, Graph<T>& g, const ExampleView& ex, double alpha,
                            const ForwardOptions& opt = {}) {
  if (ex.target.empty()) throw std::invalid_argument("example_loss: empty target");
  if (!ex.labels.empty() && ex.labels.size() != ex.kb.size()) {
    throw std::invalid_argument("example_loss: " + std::to_string(ex.labels.size()) + " labels for " +
                                std::to_string(ex.kb.size()) + " KB triples");
  }
  const Var<T> h = model.encode(g, ex.history, opt);
  const Var<T> kb = model.embed_kb(g, ex.kb);
  const auto inputs = NeuralAssistant<T>::shift_right(ex.target);
  ExampleLoss<T> out;
  out.decoder = model.decode(g, h, kb, inputs, opt);
  const std::vector<std::uint8_t> mask(ex.target.size(), 1);
  out.gen = generation_loss(out.decoder.logits, ex.target, mask);
  if (!ex.kb.empty() && !ex.labels.empty()) {
    out.distant = distant_supervision_loss(kb_attention_summary(out.decoder, mask), ex.labels);
    out.total = total_loss(out.gen, *out.distant, alpha);
  } else {
    out.total = alpha == 1.0 ? out.gen : scale(out.gen, static_cast<T>(alpha));
  }
  return out;
}

/// Fraction of rows whose argmax (lowest id on ties) equals the target.
template <typename T>
std::pair<std::size_t, std::size_t> argmax_matches(const Tensor<T>& logits, std::span<const TokenId> targets) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    hits += static_cast<TokenId>(best) == targets[r];
  }
  return {hits, logits.rows()};
}

}  // namespace nassist
