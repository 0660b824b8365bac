// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>

#include "dsvd/lm/types.hpp"

// Small-batch matrix products shared by the batched decoder step and the
// batched prober.
namespace dsvd::kernels {

#if defined(__AVX512F__)
inline constexpr int kLanes = 16;
#elif defined(__AVX__)
inline constexpr int kLanes = 8;
#else
inline constexpr int kLanes = 4;
#endif
using VecF = float __attribute__((vector_size(kLanes * sizeof(float))));

inline VecF load(const float* p) {
  VecF r;
  std::memcpy(&r, p, sizeof r);
  return r;
}

using LaneMask = std::int32_t __attribute__((vector_size(kLanes * sizeof(std::int32_t))));

/// Lane sums of four vectors, as one shuffle tree instead of four serial
/// chains.
inline void reduce4(VecF a0, VecF a1, VecF a2, VecF a3, float* out) {
#ifdef __AVX512F__
  const LaneMask lo{0, 1, 2, 3, 4, 5, 6, 7, 16, 17, 18, 19, 20, 21, 22, 23};
  const LaneMask hi{8, 9, 10, 11, 12, 13, 14, 15, 24, 25, 26, 27, 28, 29, 30, 31};
  const LaneMask lo2{0, 1, 2, 3, 8, 9, 10, 11, 16, 17, 18, 19, 24, 25, 26, 27};
  const LaneMask hi2{4, 5, 6, 7, 12, 13, 14, 15, 20, 21, 22, 23, 28, 29, 30, 31};
  const LaneMask swap2{2, 3, 0, 1, 6, 7, 4, 5, 10, 11, 8, 9, 14, 15, 12, 13};
  const LaneMask swap1{1, 0, 3, 2, 5, 4, 7, 6, 9, 8, 11, 10, 13, 12, 15, 14};
  const VecF s01 = __builtin_shuffle(a0, a1, lo) + __builtin_shuffle(a0, a1, hi);
  const VecF s23 = __builtin_shuffle(a2, a3, lo) + __builtin_shuffle(a2, a3, hi);
  VecF t = __builtin_shuffle(s01, s23, lo2) + __builtin_shuffle(s01, s23, hi2);
  t += __builtin_shuffle(t, swap2);
  t += __builtin_shuffle(t, swap1);
  out[0] = t[0];
  out[1] = t[4];
  out[2] = t[8];
  out[3] = t[12];
#elif defined(__AVX__)
  const LaneMask lo{0, 1, 2, 3, 8, 9, 10, 11};
  const LaneMask hi{4, 5, 6, 7, 12, 13, 14, 15};
  const LaneMask lo2{0, 1, 4, 5, 8, 9, 12, 13};
  const LaneMask hi2{2, 3, 6, 7, 10, 11, 14, 15};
  const LaneMask swap1{1, 0, 3, 2, 5, 4, 7, 6};
  const VecF s01 = __builtin_shuffle(a0, a1, lo) + __builtin_shuffle(a0, a1, hi);
  const VecF s23 = __builtin_shuffle(a2, a3, lo) + __builtin_shuffle(a2, a3, hi);
  VecF t = __builtin_shuffle(s01, s23, lo2) + __builtin_shuffle(s01, s23, hi2);
  t += __builtin_shuffle(t, swap1);
  out[0] = t[0];
  out[1] = t[2];
  out[2] = t[4];
  out[3] = t[6];
#else
  const LaneMask lo{0, 1, 4, 5};
  const LaneMask hi{2, 3, 6, 7};
  const LaneMask even{0, 2, 4, 6};
  const LaneMask odd{1, 3, 5, 7};
  const VecF s01 = __builtin_shuffle(a0, a1, lo) + __builtin_shuffle(a0, a1, hi);
  const VecF s23 = __builtin_shuffle(a2, a3, lo) + __builtin_shuffle(a2, a3, hi);
  const VecF t = __builtin_shuffle(s01, s23, even) + __builtin_shuffle(s01, s23, odd);
  out[0] = t[0];
  out[1] = t[1];
  out[2] = t[2];
  out[3] = t[3];
#endif
}

/// out[i][o] = dot(x[i], wt[o]) for N rows of x, four weight rows at a time
/// with all 4N partial sums held in registers. Rows of `wt` are `ldw` apart.
template <int N>
void dot_rows(const float* x, const float* wt, Eigen::Index k, Eigen::Index outs, float* out, Eigen::Index ldw) {
  constexpr int kBlock = 4;
  const Eigen::Index kv = k / kLanes * kLanes;
  Eigen::Index o = 0;
  for (; o + kBlock <= outs; o += kBlock) {
    VecF acc[N][kBlock] = {};
    const float* w[kBlock];
    for (int b = 0; b < kBlock; ++b) w[b] = wt + (o + b) * ldw;
    for (Eigen::Index c = 0; c < kv; c += kLanes) {
      VecF wv[kBlock];
#pragma GCC unroll 4
      for (int b = 0; b < kBlock; ++b) wv[b] = load(w[b] + c);
#pragma GCC unroll 8
      for (int i = 0; i < N; ++i) {
        const VecF xv = load(x + i * k + c);
#pragma GCC unroll 4
        for (int b = 0; b < kBlock; ++b) acc[i][b] += xv * wv[b];
      }
    }
    for (int i = 0; i < N; ++i) {
      float* dst = out + i * outs + o;
      reduce4(acc[i][0], acc[i][1], acc[i][2], acc[i][3], dst);
      for (Eigen::Index c = kv; c < k; ++c)
        for (int b = 0; b < kBlock; ++b) dst[b] += x[i * k + c] * w[b][c];
    }
  }
  for (; o < outs; ++o)
    for (int i = 0; i < N; ++i) {
      float sum = 0.0f;
      for (Eigen::Index c = 0; c < k; ++c) sum += x[i * k + c] * wt[o * ldw + c];
      out[i * outs + o] = sum;
    }
}

template <int N = 2>
void dot_rows_dispatch(Eigen::Index n, const float* x, const float* wt, Eigen::Index k, Eigen::Index outs,
                       float* out, Eigen::Index ldw) {
  if constexpr (N <= 6) {
    if (n == N) return dot_rows<N>(x, wt, k, outs, out, ldw);
    dot_rows_dispatch<N + 1>(n, x, wt, k, outs, out, ldw);
  }
}

/// out[i] = sum_j p[i][j] * v[j] for N rows of p (each `rows` long) over
/// rows of v that are `ldv` apart and `k` wide. Each v row is read once.
template <int N>
void weighted_rows(const float* p, Eigen::Index rows, const float* v, Eigen::Index ldv, Eigen::Index k, float* out) {
  constexpr int kBlock = 4;
  constexpr Eigen::Index kChunk = kBlock * kLanes;
  Eigen::Index c0 = 0;
  for (; c0 + kChunk <= k; c0 += kChunk) {
    VecF acc[N][kBlock] = {};
    for (Eigen::Index j = 0; j < rows; ++j) {
      const float* vj = v + j * ldv + c0;
      VecF vv[kBlock];
#pragma GCC unroll 4
      for (int b = 0; b < kBlock; ++b) vv[b] = load(vj + b * kLanes);
#pragma GCC unroll 8
      for (int i = 0; i < N; ++i) {
        const float w = p[i * rows + j];
#pragma GCC unroll 4
        for (int b = 0; b < kBlock; ++b) acc[i][b] += w * vv[b];
      }
    }
    for (int i = 0; i < N; ++i)
      for (int b = 0; b < kBlock; ++b) __builtin_memcpy(out + i * k + c0 + b * kLanes, &acc[i][b], sizeof(VecF));
  }
  for (int i = 0; i < N; ++i)
    for (Eigen::Index c = c0; c < k; ++c) {
      float sum = 0.0f;
      for (Eigen::Index j = 0; j < rows; ++j) sum += p[i * rows + j] * v[j * ldv + c];
      out[i * k + c] = sum;
    }
}

template <int N = 2>
void weighted_rows_dispatch(Eigen::Index n, const float* p, Eigen::Index rows, const float* v, Eigen::Index ldv,
                            Eigen::Index k, float* out) {
  if constexpr (N <= 6) {
    if (n == N) return weighted_rows<N>(p, rows, v, ldv, k, out);
    weighted_rows_dispatch<N + 1>(n, p, rows, v, ldv, k, out);
  }
}

/// out = x * w, given also `wt` = w transposed. A single row goes through
/// Eigen's GEMV. For 2-6 rows Eigen's GEMM repacks `w` on every call, which
/// costs more than the product, so those use dot_rows: each weight row is
/// read once for the whole batch.
inline void project(const RowMatrixF& x, const RowMatrixF& w, const RowMatrixF& wt, RowMatrixF& out) {
  const Eigen::Index n = x.rows();
  if (n == 1 || n > 6) {
    out.noalias() = x * w;
    return;
  }
  out.resize(n, wt.rows());
  dot_rows_dispatch(n, x.data(), wt.data(), x.cols(), wt.rows(), out.data(), x.cols());
}

}  // namespace dsvd::kernels
