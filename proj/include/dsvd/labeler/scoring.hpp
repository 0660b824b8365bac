// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/lm/types.hpp"

namespace dsvd {

/// Token label values.
inline constexpr std::int8_t kLabelClean = 0;
inline constexpr std::int8_t kLabelHallucinated = 1;
inline constexpr std::int8_t kLabelIgnored = -1;

/// scores[i] = sum_j log p(g_j | question, x_0..x_{i-1}, g_0..g_{j-1}) for
/// i in [0, |response|). One pass per prefix length; the ground-truth tail is
/// discarded by rolling back to the prefix checkpoint.
template <CausalLm Model>
std::vector<double> hallucination_scores(const Model& model, const std::vector<TokenId>& question,
                                         const std::vector<TokenId>& response,
                                         const std::vector<TokenId>& ground_truth) {
  require(!question.empty() && !response.empty() && !ground_truth.empty(), ErrorCode::kEmptyInput,
          "question, response and ground truth must be non-empty");
  const std::size_t needed = question.size() + response.size() - 1 + ground_truth.size() - 1;
  require(needed <= static_cast<std::size_t>(model.max_context()), ErrorCode::kContextOverflow,
          "scoring needs " + std::to_string(needed) + " positions, context is " +
              std::to_string(model.max_context()));

  auto state = model.new_state();
  StepOutput prefix_out = prime(model, state, question);
  std::vector<double> scores(response.size());
  for (std::size_t i = 0; i < response.size(); ++i) {
    const auto cp = state.checkpoint();
    double sum = log_softmax_at(prefix_out.logits, ground_truth[0]);
    for (std::size_t j = 1; j < ground_truth.size(); ++j)
      sum += log_softmax_at(state.step(ground_truth[j - 1]).logits, ground_truth[j]);
    scores[i] = sum;
    state.rollback(cp);
    if (i + 1 < response.size()) prefix_out = state.step(response[i]);
  }
  return scores;
}

/// 0 before the argmax, 1 at it, -1 after. Ties go to the earliest index.
inline std::vector<std::int8_t> assign_labels(const std::vector<double>& scores) {
  require(!scores.empty(), ErrorCode::kEmptyInput, "empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  std::vector<std::int8_t> labels(scores.size(), kLabelClean);
  labels[best] = kLabelHallucinated;
  for (std::size_t i = best + 1; i < labels.size(); ++i) labels[i] = kLabelIgnored;
  return labels;
}

/// True for `0* 1 (-1)*` or all zeros.
inline bool valid_label_shape(const std::vector<std::int8_t>& labels) {
  std::size_t i = 0;
  while (i < labels.size() && labels[i] == kLabelClean) ++i;
  if (i == labels.size()) return true;
  if (labels[i] != kLabelHallucinated) return false;
  for (++i; i < labels.size(); ++i)
    if (labels[i] != kLabelIgnored) return false;
  return true;
}

}  // namespace dsvd
