// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/lm/forward.hpp"
#include "dsvd/lm/weights.hpp"
#include "dsvd/optim.hpp"

namespace dsvd {

struct LmTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 3e-3;
  double min_lr_ratio = 0.1;  // cosine decay floor
  int warmup_steps = 20;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  std::function<void(int epoch, double loss)> on_epoch;
};

struct LmTrainResult {
  TransformerWeights<float> weights;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

/// Mean next-token loss of `weights` over `corpus`, evaluated in chunks.
inline double corpus_loss(const TransformerWeights<float>& weights, const std::vector<std::vector<TokenId>>& corpus,
                          int chunk = 64) {
  double total = 0.0;
  std::size_t targets = 0;
  for (std::size_t begin = 0; begin < corpus.size(); begin += static_cast<std::size_t>(chunk)) {
    const auto end = std::min(corpus.size(), begin + static_cast<std::size_t>(chunk));
    std::span<const std::vector<TokenId>> batch(corpus.data() + begin, end - begin);
    std::size_t n = 0;
    for (const auto& s : batch) n += s.size() > 1 ? s.size() - 1 : 0;
    if (n == 0) continue;
    auto r = lm_math::forward<float>(weights, batch);
    total += lm_math::next_token_loss<float>(r.logits, batch, nullptr) * static_cast<double>(n);
    targets += n;
  }
  require(targets > 0, ErrorCode::kEmptyInput, "corpus has no next-token targets");
  return total / static_cast<double>(targets);
}

/// Trains the reference transformer with AdamW on next-token prediction.
/// Deterministic for a fixed seed (single-threaded, fixed shuffle order).
inline LmTrainResult train_reference_lm(const std::vector<std::vector<TokenId>>& corpus,
                                        const TransformerConfig& model_config, const LmTrainConfig& config) {
  require(!corpus.empty(), ErrorCode::kEmptyInput, "training corpus is empty");
  for (const auto& s : corpus) {
    require(s.size() >= 2, ErrorCode::kInvalidArgument, "training sequences need at least two tokens");
    for (TokenId t : s)
      require(t >= 0 && t < model_config.vocab_size, ErrorCode::kTokenOutOfRange,
              "corpus token " + std::to_string(t) + " outside vocabulary");
  }
  require(config.epochs >= 1 && config.batch_size >= 1 && config.lr > 0, ErrorCode::kInvalidArgument,
          "bad training config");

  LmTrainResult result;
  result.weights = TransformerWeights<float>::random(model_config, config.seed);
  auto grads = TransformerWeights<float>::zeros(result.weights.config);
  result.initial_loss = corpus_loss(result.weights, corpus);

  std::vector<AdamW<float>::Param> params;
  result.weights.for_each([&](auto& t, bool is_gain) {
    params.push_back({std::span<float>(t.data(), static_cast<std::size_t>(t.size())), !is_gain});
  });
  std::vector<std::span<const float>> grad_views;
  grads.for_each([&](auto& t, bool) {
    grad_views.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  AdamW<float> opt(std::move(params), {config.lr, 0.9, 0.98, 1e-8, config.weight_decay});

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((corpus.size() + bs - 1) / bs);
  const long total_steps = steps_per_epoch * config.epochs;
  long step = 0;

  std::vector<std::vector<TokenId>> batch;
  lm_math::ForwardCache<float> cache;
  Mat<float> dlogits;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      batch.clear();
      for (std::size_t i = begin; i < std::min(order.size(), begin + bs); ++i) batch.push_back(corpus[order[i]]);
      grads.for_each([](auto& t, bool) { t.setZero(); });
      auto fw = lm_math::forward<float>(result.weights, batch, &cache);
      const double loss = lm_math::next_token_loss<float>(fw.logits, batch, &dlogits);
      require(std::isfinite(loss), ErrorCode::kDivergence, "loss became non-finite at epoch " + std::to_string(epoch));
      lm_math::backward<float>(result.weights, batch, cache, dlogits, grads);

      double norm2 = 0.0;
      grads.for_each([&](const auto& t, bool) { norm2 += static_cast<double>(t.squaredNorm()); });
      const double norm = std::sqrt(norm2);
      require(std::isfinite(norm), ErrorCode::kDivergence, "gradient became non-finite");
      if (config.grad_clip > 0 && norm > config.grad_clip) {
        const auto s = static_cast<float>(config.grad_clip / norm);
        grads.for_each([&](auto& t, bool) { t *= s; });
      }

      double lr = config.lr;
      if (step < config.warmup_steps) {
        lr *= static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
      } else {
        const double progress = static_cast<double>(step - config.warmup_steps) /
                                static_cast<double>(std::max<long>(1, total_steps - config.warmup_steps));
        const double floor = config.min_lr_ratio;
        lr *= floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(1.0, progress)));
      }
      opt.step(grad_views, lr);
      ++step;
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    result.epoch_losses.push_back(epoch_loss);
    if (config.on_epoch) config.on_epoch(epoch, epoch_loss);
  }
  result.final_loss = corpus_loss(result.weights, corpus);
  require(std::isfinite(result.final_loss), ErrorCode::kDivergence, "final loss non-finite");
  return result;
}

}  // namespace dsvd
