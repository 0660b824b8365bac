// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <vector>

#include "dsvd/common.hpp"

namespace dsvd {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;

/// Hidden states of every layer at one position. Row 0 is the embedding
/// output, row l (l >= 1) is the residual stream after block l, taken before
/// the final norm.
struct LayerStates {
  RowMatrixF rows;  // (L+1) x d

  int layer_count() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
  auto layer(int l) const { return rows.row(l); }
};

struct StepOutput {
  VectorF logits;
  LayerStates states;
  /// Number of tokens held by the state after this step.
  int position = 0;
};

/// Marks a position of one specific decoder state.
struct DecoderCheckpoint {
  std::uint64_t state_id = 0;
  int position = 0;
};

/// One greedy pass: `steps[i]` is the output of consuming `tokens[i]`, and
/// `logprobs[i]` is log p(tokens[i] | everything before it).
struct GenerationTrace {
  StepOutput prompt_last;
  std::vector<TokenId> tokens;
  std::vector<StepOutput> steps;
  std::vector<double> logprobs;
  bool hit_eos = false;
};

template <class S>
concept DecoderState = requires(S s, const S cs, TokenId token, DecoderCheckpoint cp) {
  { s.step(token) } -> std::same_as<StepOutput>;
  { cs.position() } -> std::convertible_to<int>;
  { cs.checkpoint() } -> std::same_as<DecoderCheckpoint>;
  { s.rollback(cp) } -> std::convertible_to<int>;
  { s.pin_prefix() };
  { s.fork() } -> std::same_as<S>;
};

/// A causal LM exposing all-layer hidden states and rollback-able state.
template <class M>
concept CausalLm = requires(const M& m) {
  typename M::State;
  requires DecoderState<typename M::State>;
  { m.new_state() } -> std::same_as<typename M::State>;
  { m.vocab_size() } -> std::convertible_to<int>;
  { m.state_layers() } -> std::convertible_to<int>;
  { m.model_dim() } -> std::convertible_to<int>;
  { m.max_context() } -> std::convertible_to<int>;
  { m.eos() } -> std::convertible_to<TokenId>;
};

/// Models that can advance several states by one token in a single call.
template <class M>
concept BatchedCausalLm = CausalLm<M> && requires(const M& m, std::vector<typename M::State*>& states,
                                                  const std::vector<TokenId>& tokens) {
  { m.step_batch(states, tokens) } -> std::same_as<std::vector<StepOutput>>;
};

/// Shared checkpoint/rollback rules: foreign or future checkpoints are
/// rejected, rollback below the pinned prompt boundary is clamped.
class StateGuard {
 public:
  StateGuard() : id_(next_id()) {}
  StateGuard(const StateGuard& other) : id_(next_id()), pinned_(other.pinned_) {}
  StateGuard& operator=(const StateGuard& other) {
    pinned_ = other.pinned_;
    return *this;
  }
  StateGuard(StateGuard&&) noexcept = default;
  StateGuard& operator=(StateGuard&&) noexcept = default;

  std::uint64_t id() const { return id_; }
  int pinned() const { return pinned_; }
  void pin(int position) { pinned_ = position; }

  /// Returns the position to truncate to.
  int resolve(const DecoderCheckpoint& cp, int current) const {
    require(cp.state_id == id_, ErrorCode::kForeignCheckpoint, "checkpoint belongs to another state");
    require(cp.position <= current, ErrorCode::kCheckpointAhead,
            "checkpoint at " + std::to_string(cp.position) + " but state at " + std::to_string(current));
    return std::max(cp.position, pinned_);
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::uint64_t id_;
  int pinned_ = 0;
};

inline double log_softmax_at(const VectorF& logits, TokenId token) {
  const double max = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - max);
  return static_cast<double>(logits[token]) - max - std::log(sum);
}

inline std::vector<double> log_softmax(const VectorF& logits) {
  const double max = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - max);
  const double lse = max + std::log(sum);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = logits[i] - lse;
  return out;
}

/// First index of the maximum logit.
inline TokenId argmax(const VectorF& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<TokenId>(best);
}

}  // namespace dsvd
