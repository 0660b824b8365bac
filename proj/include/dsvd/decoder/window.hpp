// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "dsvd/common.hpp"

namespace dsvd {

/// The last <= r trigger values with the positions they were measured at.
class SlidingWindow {
 public:
  struct Entry {
    double value = 0.0;
    int position = 0;
  };

  explicit SlidingWindow(int capacity) : buf_(static_cast<std::size_t>(capacity)) {
    require(capacity >= 1, ErrorCode::kInvalidArgument, "window capacity must be >= 1");
  }

  void push(double value, int position) {
    require(size_ == 0 || position == back().position + 1, ErrorCode::kInvalidArgument,
            "window positions must be contiguous");
    buf_[(head_ + size_) % buf_.size()] = {value, position};
    if (size_ < buf_.size()) {
      ++size_;
    } else {
      head_ = (head_ + 1) % buf_.size();
    }
  }

  void clear() {
    head_ = 0;
    size_ = 0;
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return buf_.size(); }
  bool empty() const { return size_ == 0; }
  const Entry& operator[](std::size_t i) const { return buf_[(head_ + i) % buf_.size()]; }
  const Entry& back() const { return (*this)[size_ - 1]; }

 private:
  std::vector<Entry> buf_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

/// True iff some value in the window is strictly above `threshold`.
inline bool check_trigger(const SlidingWindow& window, double threshold) {
  for (std::size_t i = 0; i < window.size(); ++i)
    if (window[i].value > threshold) return true;
  return false;
}

/// True iff top2 / top1 > threshold.
inline bool check_trigger_ratio(double top1_prob, double top2_prob, double threshold = 0.7) {
  require(top1_prob > 0.0, ErrorCode::kInvalidArgument, "top-1 probability must be positive");
  require(top2_prob <= top1_prob && top2_prob >= 0.0, ErrorCode::kInvalidArgument,
          "top-2 probability must be in [0, top-1]");
  return top2_prob / top1_prob > threshold;
}

}  // namespace dsvd
