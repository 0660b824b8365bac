// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dsvd/common.hpp"

namespace dsvd {

/// Length of the longest common subsequence (two-row dynamic program).
template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Rouge-L F1 between a candidate and a reference token sequence.
template <class T>
double rouge_l_f1(std::span<const T> candidate, std::span<const T> reference) {
  require(!candidate.empty() && !reference.empty(), ErrorCode::kEmptyInput, "rouge-l needs non-empty sequences");
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

template <class T>
double rouge_l_f1(const std::vector<T>& candidate, const std::vector<T>& reference) {
  return rouge_l_f1(std::span<const T>(candidate), std::span<const T>(reference));
}

enum class ResponseClass : std::uint8_t { kCorrect, kIncorrect, kDiscard };

inline constexpr double kCorrectAbove = 0.8;
inline constexpr double kIncorrectBelow = 0.2;

inline ResponseClass classify_response(double f1, double correct_above = kCorrectAbove,
                                       double incorrect_below = kIncorrectBelow) {
  if (f1 > correct_above) return ResponseClass::kCorrect;
  if (f1 < incorrect_below) return ResponseClass::kIncorrect;
  return ResponseClass::kDiscard;
}

inline std::string_view to_string(ResponseClass c) {
  switch (c) {
    case ResponseClass::kCorrect: return "correct";
    case ResponseClass::kIncorrect: return "hallucinated";
    case ResponseClass::kDiscard: return "discard";
  }
  return "?";
}

}  // namespace dsvd
