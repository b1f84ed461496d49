// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "nassist/autodiff.hpp"

namespace nassist {

/// Linear warmup followed by inverse square-root decay, peaking at `base`
/// when step == warmup.
struct LearningRateSchedule {
  double base = 2e-3;
  std::uint64_t warmup = 4000;

  double operator()(std::uint64_t step) const {
    const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
    const double w = static_cast<double>(std::max<std::uint64_t>(warmup, 1));
    return base * std::min(s / w, std::sqrt(w / s));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// Adam with bias correction. Moments are kept per parameter name so state
/// can be saved and restored independently of parameter order.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}, LearningRateSchedule schedule = {}) : config_(config), schedule_(schedule) {}

  const AdamConfig& config() const { return config_; }
  const LearningRateSchedule& schedule() const { return schedule_; }
  std::uint64_t step() const { return step_; }
  double last_rate() const { return last_rate_; }

  /// Applies one update from the accumulated gradients and returns the
  /// learning rate used.
  double update(ParameterSet<T>& params) {
    ++step_;
    double scale = 1.0;
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params)
        for (T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
    }
    const double lr = schedule_(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& p : params) {
      auto [it, fresh] = moments_.try_emplace(p->name);
      if (fresh) {
        it->second.m = Tensor<T>(p->value.shape(), std::vector<T>(p->value.size(), T(0)));
        it->second.v = it->second.m;
      }
      auto m = it->second.m.data();
      auto v = it->second.v.data();
      auto w = p->value.data();
      const auto g = p->grad.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * scale;
        m[i] = static_cast<T>(config_.beta1 * m[i] + (1.0 - config_.beta1) * gi);
        v[i] = static_cast<T>(config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
      }
      require_finite(p->value, "adam update of " + p->name);
    }
    last_rate_ = lr;
    return lr;
  }

  struct Moments {
    Tensor<T> m, v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void restore(std::uint64_t step, std::map<std::string, Moments> moments) {
    step_ = step;
    moments_ = std::move(moments);
  }

 private:
  AdamConfig config_;
  LearningRateSchedule schedule_;
  std::uint64_t step_ = 0;
  double last_rate_ = 0.0;
  std::map<std::string, Moments> moments_;
};

}  // namespace nassist
