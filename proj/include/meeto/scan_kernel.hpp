// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>

namespace meeto {

enum class ScanDirection { Forward, Backward };

/// Shapes of one selective scan over a single sequence.
struct ScanDims {
  std::size_t steps;     // T
  std::size_t channels;  // D
  std::size_t state;     // N
};

/// Selective scan over one sequence, ZOH for A and Euler for B:
///
///   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t,  y_t = C_t . h_t
///
/// x, delta, y: [T,D]; a: [D,N]; b, c: [T,N]; h_{-1} = 0. `h` is a [D,N]
/// scratch buffer. When `states` is non-null it receives h_t for every step,
/// laid out [T,D,N] by time index. y is overwritten.
template <typename Scalar>
void scan_sequence(ScanDims dims, const Scalar* x, const Scalar* delta, const Scalar* a, const Scalar* b,
                   const Scalar* c, ScanDirection dir, Scalar* h, Scalar* y, Scalar* states = nullptr) {
  const std::size_t T = dims.steps, D = dims.channels, N = dims.state;
  for (std::size_t i = 0; i < D * N; ++i) h[i] = Scalar(0);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = dir == ScanDirection::Forward ? k : T - 1 - k;
    const Scalar* bt = b + t * N;
    const Scalar* ct = c + t * N;
    for (std::size_t d = 0; d < D; ++d) {
      const Scalar dt = delta[t * D + d];
      const Scalar u = dt * x[t * D + d];
      const Scalar* ad = a + d * N;
      Scalar* hd = h + d * N;
      Scalar acc = Scalar(0);
      for (std::size_t n = 0; n < N; ++n) {
        hd[n] = std::exp(dt * ad[n]) * hd[n] + u * bt[n];
        acc += ct[n] * hd[n];
      }
      y[t * D + d] = acc;
    }
    if (states) {
      Scalar* st = states + t * D * N;
      for (std::size_t i = 0; i < D * N; ++i) st[i] = h[i];
    }
  }
}

}  // namespace meeto
