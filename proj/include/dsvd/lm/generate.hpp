// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/lm/types.hpp"

namespace dsvd {

/// Feeds `prompt` into a fresh state and pins it as the protected prefix.
/// Returns the output of the last prompt token.
template <CausalLm Model>
StepOutput prime(const Model& model, typename Model::State& state, const std::vector<TokenId>& prompt) {
  require(!prompt.empty(), ErrorCode::kEmptyInput, "empty prompt");
  require(static_cast<int>(prompt.size()) <= model.max_context(), ErrorCode::kContextOverflow,
          "prompt of " + std::to_string(prompt.size()) + " tokens exceeds context " +
              std::to_string(model.max_context()));
  StepOutput last;
  for (TokenId t : prompt) last = state.step(t);
  state.pin_prefix();
  return last;
}

/// Plain greedy decoding. EOS is not part of the returned tokens.
template <CausalLm Model>
GenerationTrace greedy_generate(const Model& model, const std::vector<TokenId>& prompt, int max_new_tokens,
                                bool stop_at_eos = true) {
  auto state = model.new_state();
  GenerationTrace trace;
  trace.prompt_last = prime(model, state, prompt);
  const StepOutput* last = &trace.prompt_last;
  for (int i = 0; i < max_new_tokens && state.position() < model.max_context(); ++i) {
    const TokenId next = argmax(last->logits);
    const double lp = log_softmax_at(last->logits, next);
    if (stop_at_eos && next == model.eos()) {
      trace.hit_eos = true;
      break;
    }
    trace.tokens.push_back(next);
    trace.logprobs.push_back(lp);
    trace.steps.push_back(state.step(next));
    last = &trace.steps.back();
  }
  return trace;
}

}  // namespace dsvd
