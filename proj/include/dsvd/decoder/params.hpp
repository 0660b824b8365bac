// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dsvd/common.hpp"

namespace dsvd {

enum class TriggerMode : std::uint8_t { kProbing, kTopRatio, kDisabled };
enum class PenaltyMode : std::uint8_t { kPenalized, kPlainLogprob };

inline std::string_view to_string(TriggerMode m) {
  switch (m) {
    case TriggerMode::kProbing: return "probing";
    case TriggerMode::kTopRatio: return "top-ratio";
    case TriggerMode::kDisabled: return "disabled";
  }
  return "?";
}

inline std::string_view to_string(PenaltyMode m) {
  return m == PenaltyMode::kPenalized ? "penalized" : "plain-logprob";
}

inline TriggerMode parse_trigger_mode(std::string_view s) {
  if (s == "probing") return TriggerMode::kProbing;
  if (s == "top-ratio") return TriggerMode::kTopRatio;
  if (s == "disabled") return TriggerMode::kDisabled;
  throw Error(ErrorCode::kInvalidArgument, "unknown trigger mode '" + std::string(s) + "'");
}

inline PenaltyMode parse_penalty_mode(std::string_view s) {
  if (s == "penalized") return PenaltyMode::kPenalized;
  if (s == "plain-logprob") return PenaltyMode::kPlainLogprob;
  throw Error(ErrorCode::kInvalidArgument, "unknown penalty mode '" + std::string(s) + "'");
}

struct DecodeParams {
  int rollback_window = 10;    // r
  int beam_width = 5;          // k
  int sample_length = 20;      // m
  double penalty_alpha = 0.1;  // alpha
  double trigger_threshold = 0.5;
  double ratio_threshold = 0.7;  // top-ratio mode only
  int rollback_budget = 16;      // B
  int max_new_tokens = 50;       // t_max, counted in generated tokens
  TriggerMode trigger_mode = TriggerMode::kProbing;
  PenaltyMode penalty_mode = PenaltyMode::kPenalized;
  bool stop_at_eos = true;

  /// Alpha actually used when scoring candidates.
  double effective_alpha() const { return penalty_mode == PenaltyMode::kPenalized ? penalty_alpha : 0.0; }

  void validate() const {
    require(rollback_window >= 1, ErrorCode::kInvalidArgument, "rollback window must be >= 1");
    require(beam_width >= 1, ErrorCode::kInvalidArgument, "beam width must be >= 1");
    require(sample_length >= 1, ErrorCode::kInvalidArgument, "sample length must be >= 1");
    require(penalty_alpha >= 0.0, ErrorCode::kInvalidArgument, "penalty alpha must be >= 0");
    require(trigger_threshold > 0.0 && trigger_threshold < 1.0, ErrorCode::kInvalidArgument,
            "trigger threshold must be in (0, 1)");
    require(ratio_threshold > 0.0 && ratio_threshold <= 1.0, ErrorCode::kInvalidArgument,
            "ratio threshold must be in (0, 1]");
    require(rollback_budget >= 0, ErrorCode::kInvalidArgument, "rollback budget must be >= 0");
    require(max_new_tokens >= 1, ErrorCode::kInvalidArgument, "max new tokens must be >= 1");
  }
};

}  // namespace dsvd
