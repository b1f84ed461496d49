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

// Tape-based reverse-mode differentiation over matrix-shaped tensors.
//
// A Graph records nodes in creation order, so the tape is already a
// topological order: walking it backwards guarantees a node's gradient is
// complete before it is propagated to its inputs.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "nassist/tensor.hpp"

namespace nassist {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

/// A trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Ordered, name-addressable parameter collection with stable addresses.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;
  /// Deep copy; the copy's parameters are independent of the original's.
  ParameterSet(const ParameterSet& other) : index_(other.index_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
  }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this != &other) *this = ParameterSet(other);
    return *this;
  }

  Parameter<T>& add(std::string name, Tensor<T> init) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor<T> grad(init.shape(), std::vector<T>(init.size(), T(0)));
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter<T>>(Parameter<T>{std::move(name), std::move(init), std::move(grad)}));
    return *params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(T(0));
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return graph_->value(*this); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Boolean mask over an attention score matrix; true = slot may be attended.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask causal(std::size_t n) {
    AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
    return m;
  }

  static AttentionMask keys(std::size_t rows, const std::vector<std::uint8_t>& key_valid) {
    AttentionMask m{rows, key_valid.size(), {}};
    m.allowed.reserve(rows * key_valid.size());
    for (std::size_t r = 0; r < rows; ++r) m.allowed.insert(m.allowed.end(), key_valid.begin(), key_valid.end());
    return m;
  }

  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), {}, nullptr); }

  /// Leaf referencing a parameter's storage. Repeated calls reuse the node.
  /// Parameter::grad is written only by backward(), so a const parameter may
  /// be read from any number of gradient-free graphs concurrently.
  Var<T> parameter(const Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.op = "parameter";
    n.external = &p.value;
    if (grad_enabled_) n.param = const_cast<Parameter<T>*>(&p);
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Appends an op node. The backward closure reads grad(self) and adds into
  /// the gradients of the node's inputs.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, Backward backward) {
    require_finite(value, op);
    return push(op, std::move(value), std::move(inputs), grad_enabled_ ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(const Var<T>& v) const { return nodes_.at(v.id()).get(); }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].get(); }

  /// Gradient accumulator for a node, allocated on first use.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad) n.grad = std::make_unique<Tensor<T>>(n.get().shape(), std::vector<T>(n.get().size(), T(0)));
    return *n.grad;
  }
  bool has_grad(std::size_t id) const { return static_cast<bool>(nodes_[id].grad); }

  /// Reverse sweep from a scalar loss; parameter gradients are added to
  /// Parameter::grad.
  void backward(const Var<T>& loss, T seed = T(1)) {
    if (!grad_enabled_) throw std::logic_error("backward on a graph built without gradients");
    if (value(loss).size() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_string(value(loss).shape()));
    }
    grad(loss.id())[0] += seed;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += *n.grad;
    }
  }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    std::unique_ptr<Tensor<T>> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter<T>* param = nullptr;

    const Tensor<T>& get() const { return external ? *external : owned; }
  };

  Var<T> push(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, Backward backward) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

/// Runs backward on a fresh gradient state and returns a copy of every
/// parameter's gradient. Parameters the loss does not reach come back zero.
template <typename T>
std::map<std::string, Tensor<T>> gradients(const Var<T>& loss, ParameterSet<T>& params) {
  params.zero_grad();
  loss.graph().backward(loss);
  std::map<std::string, Tensor<T>> out;
  for (const auto& p : params) out.emplace(p->name, p->grad);
  return out;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace detail

/// a (m×k) · b (k×n)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& g = a.graph();
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(A.shape()) + " vs " +
                                shape_string(B.shape()));
  }
  Tensor<T> out(A.rows(), B.cols());
  if (!out.empty()) as_matrix(out).noalias() = as_matrix(A) * as_matrix(B);
  const auto ia = a.id(), ib = b.id();
  return g.record("matmul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& dC = g.grad(self);
    if (dC.empty()) return;
    as_matrix(g.grad(ia)).noalias() += as_matrix(dC) * as_matrix(g.value(ib)).transpose();
    as_matrix(g.grad(ib)).noalias() += as_matrix(g.value(ia)).transpose() * as_matrix(dC);
  });
}

/// a (m×k) · bᵀ where b is (n×k)
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  auto& g = a.graph();
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) {
    throw std::invalid_argument("matmul_nt: column counts differ " + shape_string(A.shape()) + " vs " +
                                shape_string(B.shape()));
  }
  Tensor<T> out(A.rows(), B.rows());
  if (!out.empty()) as_matrix(out).noalias() = as_matrix(A) * as_matrix(B).transpose();
  const auto ia = a.id(), ib = b.id();
  return g.record("matmul_nt", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& dC = g.grad(self);
    if (dC.empty()) return;
    as_matrix(g.grad(ia)).noalias() += as_matrix(dC) * as_matrix(g.value(ib));
    as_matrix(g.grad(ib)).noalias() += as_matrix(dC).transpose() * as_matrix(g.value(ia));
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    g.grad(ia) += d;
    g.grad(ib) += d;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("sub", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    g.grad(ia) += d;
    auto gb = g.grad(ib).data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= d[i];
  });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    const auto av = g.value(ia).data();
    const auto bv = g.value(ib).data();
    auto ga = g.grad(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d[i] * bv[i];
    auto gb = g.grad(ib).data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d[i] * av[i];
  });
}

/// a (m×n) + broadcast row b (1×n)
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (B.rows() != 1 || B.cols() != A.cols()) {
    throw std::invalid_argument("add_row: bias shape " + shape_string(B.shape()) + " incompatible with " +
                                shape_string(A.shape()));
  }
  Tensor<T> out = A;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += B[c];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("add_row", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    g.grad(ia) += d;
    auto& gb = g.grad(ib);
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c) gb[c] += d(r, c);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  const auto ia = a.id();
  return a.graph().record("scale", std::move(out), {ia}, [ia, s](Graph<T>& g, std::size_t self) {
    const auto d = g.grad(self).data();
    auto ga = g.grad(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * d[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  const auto ia = a.id();
  return a.graph().record("relu", std::move(out), {ia}, [ia](Graph<T>& g, std::size_t self) {
    const auto d = g.grad(self).data();
    const auto x = g.value(ia).data();
    auto ga = g.grad(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > T(0)) ga[i] += d[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  const auto& A = a.value();
  T s = T(0);
  for (T v : A.data()) s += v;
  const auto ia = a.id();
  return a.graph().record("sum", Tensor<T>::scalar(s), {ia}, [ia](Graph<T>& g, std::size_t self) {
    const T d = g.grad(self)[0];
    for (auto& v : g.grad(ia).data()) v += d;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a.value().empty()) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

/// Numerically stable row softmax (max subtracted per row). Masked slots get
/// probability zero and receive no gradient.
template <typename T>
Var<T> softmax_rows(const Var<T>& a, const AttentionMask* mask = nullptr) {
  const auto& X = a.value();
  if (!all_finite(X)) throw NonFiniteError("softmax: non-finite input");
  if (mask && (mask->rows != X.rows() || mask->cols != X.cols())) {
    throw std::invalid_argument("softmax: mask shape does not match input " + shape_string(X.shape()));
  }
  Tensor<T> out(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < X.cols(); ++c)
      if (!mask || (*mask)(r, c)) mx = std::max(mx, X(r, c));
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax: row " + std::to_string(r) + " is fully masked");
    T z = T(0);
    for (std::size_t c = 0; c < X.cols(); ++c) {
      const T e = (!mask || (*mask)(r, c)) ? std::exp(X(r, c) - mx) : T(0);
      out(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) /= z;
  }
  const auto ia = a.id();
  return a.graph().record("softmax", std::move(out), {ia}, [ia](Graph<T>& g, std::size_t self) {
    const auto& P = g.value(self);
    const auto& d = g.grad(self);
    auto& gx = g.grad(ia);
    for (std::size_t r = 0; r < P.rows(); ++r) {
      T dot = T(0);
      for (std::size_t c = 0; c < P.cols(); ++c) dot += d(r, c) * P(r, c);
      for (std::size_t c = 0; c < P.cols(); ++c) gx(r, c) += P(r, c) * (d(r, c) - dot);
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (both 1×n).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-6)) {
  const auto& X = x.value();
  const std::size_t n = X.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw std::invalid_argument("layer_norm: gain/bias width differs from input " + shape_string(X.shape()));
  }
  Tensor<T> xhat(X.rows(), n);
  std::vector<T> inv_std(X.rows());
  Tensor<T> out(X.rows(), n);
  const auto& G = gain.value();
  const auto& B = bias.value();
  for (std::size_t r = 0; r < X.rows(); ++r) {
    T mu = T(0);
    for (std::size_t c = 0; c < n; ++c) mu += X(r, c);
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) var += (X(r, c) - mu) * (X(r, c) - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (X(r, c) - mu) * inv_std[r];
      out(r, c) = xhat(r, c) * G[c] + B[c];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        const auto& G = g.value(ig);
        auto& gx = g.grad(ix);
        auto& gg = g.grad(ig);
        auto& gb = g.grad(ib);
        const std::size_t n = d.cols();
        for (std::size_t r = 0; r < d.rows(); ++r) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::size_t c = 0; c < n; ++c) {
            const T dy = d(r, c) * G[c];
            sum_dy += dy;
            sum_dy_xhat += dy * xhat(r, c);
            gg[c] += d(r, c) * xhat(r, c);
            gb[c] += d(r, c);
          }
          for (std::size_t c = 0; c < n; ++c) {
            const T dy = d(r, c) * G[c];
            gx(r, c) += inv_std[r] * (dy - sum_dy / static_cast<T>(n) - xhat(r, c) * sum_dy_xhat / static_cast<T>(n));
          }
        }
      });
}

/// Selects rows of a table (embedding lookup); backward scatters.
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> ids) {
  const auto& W = table.value();
  Tensor<T> out(ids.size(), W.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(W.rows()) + " rows");
    }
    std::copy_n(W.row_span(ids[i]).begin(), W.cols(), out.row_span(i).begin());
  }
  const auto it = table.id();
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return table.graph().record("gather_rows", std::move(out), {it}, [it, idx = std::move(idx)](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gw = g.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gw.row_span(idx[i]);
      auto src = d.row_span(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

/// Each output row is the arithmetic mean of the table rows named by one
/// group. Empty groups are rejected.
template <typename T>
Var<T> segment_mean(const Var<T>& table, std::span<const std::vector<std::int32_t>> groups) {
  const auto& W = table.value();
  Tensor<T> out(groups.size(), W.cols());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& grp = groups[gi];
    if (grp.empty()) throw std::invalid_argument("segment_mean: empty group " + std::to_string(gi));
    auto dst = out.row_span(gi);
    for (auto id : grp) {
      if (id < 0 || static_cast<std::size_t>(id) >= W.rows()) throw std::out_of_range("segment_mean: id out of range");
      auto src = W.row_span(id);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    const T inv = T(1) / static_cast<T>(grp.size());
    for (auto& v : dst) v *= inv;
  }
  const auto it = table.id();
  std::vector<std::vector<std::int32_t>> copy(groups.begin(), groups.end());
  return table.graph().record("segment_mean", std::move(out), {it},
                              [it, groups = std::move(copy)](Graph<T>& g, std::size_t self) {
                                const auto& d = g.grad(self);
                                auto& gw = g.grad(it);
                                for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                                  const T inv = T(1) / static_cast<T>(groups[gi].size());
                                  auto src = d.row_span(gi);
                                  for (auto id : groups[gi]) {
                                    auto dst = gw.row_span(id);
                                    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += inv * src[c];
                                  }
                                }
                              });
}

/// Stacks b's rows under a's rows.
template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) {
    throw std::invalid_argument("concat_rows: widths differ " + shape_string(A.shape()) + " vs " +
                                shape_string(B.shape()));
  }
  std::vector<T> data(A.data().begin(), A.data().end());
  data.insert(data.end(), B.data().begin(), B.data().end());
  Tensor<T> out({A.rows() + B.rows(), A.cols()}, std::move(data));
  const auto ia = a.id(), ib = b.id();
  const std::size_t split = A.size();
  return a.graph().record("concat_rows", std::move(out), {ia, ib}, [ia, ib, split](Graph<T>& g, std::size_t self) {
    const auto d = g.grad(self).data();
    auto ga = g.grad(ia).data();
    auto gb = g.grad(ib).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d[split + i];
  });
}

/// Columns [begin, end) of a.
template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  if (begin > end || end > A.cols()) {
    throw std::out_of_range("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                            shape_string(A.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out(A.rows(), w);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = A(r, begin + c);
  const auto ia = a.id();
  return a.graph().record("slice_cols", std::move(out), {ia}, [ia, begin, w](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& ga = g.grad(ia);
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) ga(r, begin + c) += d(r, c);
  });
}

/// Side-by-side concatenation of equal-height blocks.
template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t width = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    width += p.cols();
  }
  Tensor<T> out(rows, width);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) out(r, off + c) = P(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += P.cols();
  }
  auto inputs = ids;
  return parts[0].graph().record("concat_cols", std::move(out), std::move(inputs),
                                 [ids, offsets](Graph<T>& g, std::size_t self) {
                                   const auto& d = g.grad(self);
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     auto& gp = g.grad(ids[k]);
                                     for (std::size_t r = 0; r < gp.rows(); ++r)
                                       for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += d(r, offsets[k] + c);
                                   }
                                 });
}

/// Inverted dropout: kept units are scaled by 1/(1-rate).
template <typename T>
Var<T> dropout(const Var<T>& a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = T(1) / static_cast<T>(1.0 - rate);
  std::vector<T> mask(a.value().size());
  for (auto& m : mask) m = keep(rng) ? s : T(0);
  Tensor<T> out = a.value();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  const auto ia = a.id();
  return a.graph().record("dropout", std::move(out), {ia}, [ia, mask = std::move(mask)](Graph<T>& g, std::size_t self) {
    const auto d = g.grad(self).data();
    auto ga = g.grad(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d[i] * mask[i];
  });
}

/// Mean over the rows selected by row_mask, giving a 1×n row.
template <typename T>
Var<T> masked_row_mean(const Var<T>& a, const std::vector<std::uint8_t>& row_mask) {
  const auto& A = a.value();
  if (row_mask.size() != A.rows()) throw std::invalid_argument("masked_row_mean: mask length differs from rows");
  std::size_t count = 0;
  for (auto m : row_mask) count += m ? 1 : 0;
  if (count == 0) throw std::invalid_argument("masked_row_mean: every row is masked");
  const T inv = T(1) / static_cast<T>(count);
  Tensor<T> out(1, A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r)
    if (row_mask[r])
      for (std::size_t c = 0; c < A.cols(); ++c) out[c] += A(r, c) * inv;
  const auto ia = a.id();
  return a.graph().record("masked_row_mean", std::move(out), {ia}, [ia, row_mask, inv](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& ga = g.grad(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      if (row_mask[r])
        for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += d[c] * inv;
  });
}

/// x / Σx for a positive row vector.
template <typename T>
Var<T> normalize_sum(const Var<T>& a) {
  const auto& A = a.value();
  T s = T(0);
  for (T v : A.data()) s += v;
  if (!(s > T(0))) throw std::invalid_argument("normalize_sum: non-positive total");
  Tensor<T> out = A;
  for (auto& v : out.data()) v /= s;
  const auto ia = a.id();
  return a.graph().record("normalize_sum", std::move(out), {ia}, [ia, s](Graph<T>& g, std::size_t self) {
    const auto y = g.value(self).data();
    const auto d = g.grad(self).data();
    T dot = T(0);
    for (std::size_t i = 0; i < y.size(); ++i) dot += d[i] * y[i];
    auto ga = g.grad(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (d[i] - dot) / s;
  });
}

/// Clamp into [lo, hi]; gradient flows only where the input was inside.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  const auto ia = a.id();
  return a.graph().record("clamp", std::move(out), {ia}, [ia, lo, hi](Graph<T>& g, std::size_t self) {
    const auto x = g.value(ia).data();
    const auto d = g.grad(self).data();
    auto ga = g.grad(ia).data();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > lo && x[i] < hi) ga[i] += d[i];
  });
}

/// Mean negative log-likelihood of target ids under row-softmax(logits),
/// averaged over rows whose mask entry is nonzero.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  const auto& L = logits.value();
  const std::size_t rows = L.rows(), vocab = L.cols();
  if (targets.size() != rows || mask.size() != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                                std::to_string(mask.size()) + " mask entries for " + std::to_string(rows) + " rows");
  }
  if (!all_finite(L)) throw NonFiniteError("cross_entropy: non-finite logits");
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " at position " +
                              std::to_string(r) + " outside vocabulary of " + std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is masked");
  Tensor<T> probs(rows, vocab);
  T total = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    T mx = L(r, 0);
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, L(r, c));
    T z = T(0);
    for (std::size_t c = 0; c < vocab; ++c) {
      probs(r, c) = std::exp(L(r, c) - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < vocab; ++c) probs(r, c) /= z;
    total += -(L(r, targets[r]) - mx - std::log(z));
  }
  const T inv = T(1) / static_cast<T>(count);
  const auto il = logits.id();
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return logits.graph().record(
      "cross_entropy", Tensor<T>::scalar(total * inv), {il},
      [il, inv, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk)](Graph<T>& g, std::size_t self) {
        const T d = g.grad(self)[0] * inv;
        auto& gl = g.grad(il);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          if (!msk[r]) continue;
          for (std::size_t c = 0; c < probs.cols(); ++c) gl(r, c) += d * probs(r, c);
          gl(r, tgt[r]) -= d;
        }
      });
}

/// Mean binary cross-entropy of probabilities q (any shape) against 0/1 labels.
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& q, std::span<const std::uint8_t> labels) {
  const auto& Q = q.value();
  if (labels.size() != Q.size()) {
    throw std::invalid_argument("binary_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(Q.size()) + " probabilities");
  }
  if (Q.empty()) throw std::invalid_argument("binary_cross_entropy: empty input");
  T total = T(0);
  for (std::size_t i = 0; i < Q.size(); ++i) {
    const T p = Q[i];
    if (!(p > T(0) && p < T(1))) {
      throw std::domain_error("binary_cross_entropy: probability " + std::to_string(p) + " at index " +
                              std::to_string(i) + " outside (0,1)");
    }
    total += labels[i] ? -std::log(p) : -std::log1p(-p);
  }
  const T inv = T(1) / static_cast<T>(Q.size());
  const auto iq = q.id();
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return q.graph().record("binary_cross_entropy", Tensor<T>::scalar(total * inv), {iq},
                          [iq, inv, y = std::move(y)](Graph<T>& g, std::size_t self) {
                            const T d = g.grad(self)[0] * inv;
                            const auto p = g.value(iq).data();
                            auto gq = g.grad(iq).data();
                            for (std::size_t i = 0; i < gq.size(); ++i)
                              gq[i] += y[i] ? -d / p[i] : d / (T(1) - p[i]);
                          });
}

}  // namespace nassist
