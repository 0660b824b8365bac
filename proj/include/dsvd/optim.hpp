// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace dsvd {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam over a fixed list of flat parameter buffers.
template <class T>
class AdamW {
 public:
  struct Param {
    std::span<T> value;
    bool decay = true;
  };

  AdamW(std::vector<Param> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value.size(), T{0});
      v_.emplace_back(p.value.size(), T{0});
    }
  }

  /// One update with learning rate `lr` (the schedule lives with the caller).
  void step(const std::vector<std::span<const T>>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto value = params_[i].value;
      const auto grad = grads[i];
      auto& m = m_[i];
      auto& v = v_[i];
      const double decay = params_[i].decay ? lr * config_.weight_decay : 0.0;
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        m[j] = static_cast<T>(config_.beta1 * m[j] + (1.0 - config_.beta1) * g);
        v[j] = static_cast<T>(config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] = static_cast<T>(value[j] * (1.0 - decay) - lr * mhat / (std::sqrt(vhat) + config_.eps));
      }
    }
  }

  const AdamWConfig& config() const { return config_; }

 private:
  std::vector<Param> params_;
  AdamWConfig config_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

}  // namespace dsvd
