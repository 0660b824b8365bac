// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dsvd {

using TokenId = std::int32_t;

enum class ErrorCode : std::uint8_t {
  kInvalidArgument,
  kTokenOutOfRange,
  kContextOverflow,
  kForeignCheckpoint,
  kCheckpointAhead,
  kEmptyInput,
  kDivergence,
  kSingleClass,
  kDimensionMismatch,
  kIo,
  kFormat,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kTokenOutOfRange: return "token out of range";
    case ErrorCode::kContextOverflow: return "context overflow";
    case ErrorCode::kForeignCheckpoint: return "checkpoint from another state";
    case ErrorCode::kCheckpointAhead: return "checkpoint ahead of state";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kDivergence: return "non-finite loss";
    case ErrorCode::kSingleClass: return "single-class data";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kFormat: return "malformed file";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace dsvd
