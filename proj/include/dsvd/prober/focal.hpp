// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>

#include "dsvd/common.hpp"

namespace dsvd {

inline constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double z) { return std::clamp(z, kProbClamp, 1.0); }

/// -(1 - z)^gamma * log(z), where z is the probability of the true class.
/// z is clamped to [1e-7, 1].
inline double focal_loss(double z, double gamma) {
  require(gamma >= 0.0, ErrorCode::kInvalidArgument, "focal gamma must be non-negative");
  z = clamp_prob(z);
  if (gamma == 0.0) return -std::log(z);
  return -std::pow(1.0 - z, gamma) * std::log(z);
}

/// d focal_loss / dz. Zero where the clamp is active from below.
inline double focal_loss_grad(double z, double gamma) {
  require(gamma >= 0.0, ErrorCode::kInvalidArgument, "focal gamma must be non-negative");
  if (z < kProbClamp) return 0.0;
  if (z >= 1.0) return gamma == 0.0 ? -1.0 : 0.0;
  const double q = 1.0 - z;
  if (gamma == 0.0) return -1.0 / z;
  return gamma * std::pow(q, gamma - 1.0) * std::log(z) - std::pow(q, gamma) / z;
}

}  // namespace dsvd
