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

// Loop-based encoder-decoder forward pass that shares only the parameter
// values with the library. Used as an oracle for logits and attention.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nassist/model.hpp"

namespace reference {

using Mat = std::vector<std::vector<double>>;

inline Mat from(const nassist::Tensor<double>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat add_bias(Mat a, const Mat& bias) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
  return a;
}

class Transformer {
 public:
  explicit Transformer(const nassist::NeuralAssistant<double>& model) : model_(model), cfg_(model.config()) {}

  Mat param(const std::string& name) const { return from(model_.params().at(name).value); }

  Mat embed(std::span<const nassist::TokenId> ids) const {
    const auto table = param("embedding");
    const double d = static_cast<double>(cfg_.d_model);
    Mat out;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      std::vector<double> row(cfg_.d_model);
      for (std::size_t j = 0; j < cfg_.d_model; ++j) {
        const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(j - j % 2) / d);
        row[j] = table[ids[p]][j] * std::sqrt(d) + (j % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
      out.push_back(row);
    }
    return out;
  }

  Mat kb_vectors(std::span<const std::vector<nassist::TokenId>> triples) const {
    const auto table = param("embedding");
    Mat out;
    for (const auto& t : triples) {
      std::vector<double> row(cfg_.d_model, 0.0);
      for (auto id : t)
        for (std::size_t j = 0; j < cfg_.d_model; ++j) row[j] += table[id][j];
      for (auto& v : row) v = v / static_cast<double>(t.size()) * std::sqrt(static_cast<double>(cfg_.d_model));
      out.push_back(row);
    }
    return out;
  }

  Mat layer_norm(const std::string& name, const Mat& x) const {
    const auto gain = param(name + ".gain"), bias = param(name + ".bias");
    Mat out = x;
    for (auto& row : out) {
      double mu = 0, var = 0;
      for (double v : row) mu += v;
      mu /= static_cast<double>(row.size());
      for (double v : row) var += (v - mu) * (v - mu);
      var /= static_cast<double>(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + 1e-6) * gain[0][j] + bias[0][j];
    }
    return out;
  }

  /// probs[h] receives the per-head attention matrix when non-null.
  Mat attention(const std::string& name, const Mat& query, const Mat& memory, bool causal,
                std::vector<Mat>* probs = nullptr) const {
    const auto q = mul(query, param(name + ".wq"));
    const auto k = mul(memory, param(name + ".wk"));
    const auto v = mul(memory, param(name + ".wv"));
    const std::size_t H = cfg_.heads, dk = cfg_.d_model / H;
    Mat joined(query.size(), std::vector<double>(cfg_.d_model, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      Mat a(query.size(), std::vector<double>(memory.size(), 0.0));
      for (std::size_t i = 0; i < query.size(); ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < memory.size(); ++j) {
          if (causal && j > i) continue;
          double s = 0;
          for (std::size_t c = 0; c < dk; ++c) s += q[i][h * dk + c] * k[j][h * dk + c];
          a[i][j] = s / std::sqrt(static_cast<double>(dk));
          mx = std::max(mx, a[i][j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < memory.size(); ++j) {
          a[i][j] = (causal && j > i) ? 0.0 : std::exp(a[i][j] - mx);
          z += a[i][j];
        }
        for (auto& x : a[i]) x /= z;
        for (std::size_t j = 0; j < memory.size(); ++j)
          for (std::size_t c = 0; c < dk; ++c) joined[i][h * dk + c] += a[i][j] * v[j][h * dk + c];
      }
      if (probs) probs->push_back(a);
    }
    return mul(joined, param(name + ".wo"));
  }

  Mat ffn(const std::string& name, const Mat& x) const {
    auto h = add_bias(mul(x, param(name + ".w1")), param(name + ".b1"));
    for (auto& row : h)
      for (auto& v : row) v = std::max(v, 0.0);
    return add_bias(mul(h, param(name + ".w2")), param(name + ".b2"));
  }

  Mat encode(std::span<const nassist::TokenId> history) const {
    Mat x = embed(history);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "encoder." + std::to_string(l) + ".";
      const auto a = layer_norm(p + "ln1", x);
      x = add(x, attention(p + "self_attn", a, a, false));
      x = add(x, ffn(p + "ffn", layer_norm(p + "ln2", x)));
    }
    return layer_norm("encoder.final_ln", x);
  }

  /// Logits for the decoder inputs given history and KB token ids. `cross`
  /// receives [layer][head] attention over the P+M memory slots.
  Mat logits(std::span<const nassist::TokenId> history, std::span<const std::vector<nassist::TokenId>> kb,
             std::span<const nassist::TokenId> inputs, std::vector<std::vector<Mat>>* cross = nullptr) const {
    Mat memory = encode(history);
    for (auto& row : kb_vectors(kb)) memory.push_back(row);
    Mat y = embed(inputs);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "decoder." + std::to_string(l) + ".";
      const auto a = layer_norm(p + "ln1", y);
      y = add(y, attention(p + "self_attn", a, a, true));
      std::vector<Mat> heads;
      y = add(y, attention(p + "cross_attn", layer_norm(p + "ln2", y), memory, false, &heads));
      if (cross) cross->push_back(heads);
      y = add(y, ffn(p + "ffn", layer_norm(p + "ln3", y)));
    }
    y = layer_norm("decoder.final_ln", y);
    const auto projected = mul(y, param("output.proj"));
    const auto table = param("embedding");
    const auto bias = param("output.bias");
    Mat out(projected.size(), std::vector<double>(table.size(), 0.0));
    for (std::size_t i = 0; i < projected.size(); ++i)
      for (std::size_t v = 0; v < table.size(); ++v) {
        double s = bias[0][v];
        for (std::size_t j = 0; j < cfg_.d_model; ++j) s += projected[i][j] * table[v][j];
        out[i][v] = s;
      }
    return out;
  }

 private:
  const nassist::NeuralAssistant<double>& model_;
  nassist::ModelConfig cfg_;
};

}  // namespace reference
