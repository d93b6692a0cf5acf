// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "meeto/scan_kernel.hpp"
#include "meeto/tape.hpp"
#include "meeto/tensor.hpp"

namespace meeto {

/// Input-dependent SSM parameters for one scan direction.
///
/// A = -exp(a_log) [D,N]; B_t = x_t w_b, C_t = x_t w_c ([T,N]);
/// delta_{t,d} = softplus(x_{t,d} * w_delta_d + delta_bias).
struct SsmDirectionParams {
  Parameter a_log;       // [D,N]
  Parameter w_b;         // [D,N]
  Parameter w_c;         // [D,N]
  Parameter w_delta;     // [D,1]
  Parameter delta_bias;  // [1]

  std::size_t channels() const { return a_log.value.dim(0); }
  std::size_t state() const { return a_log.value.dim(1); }
  std::vector<Parameter*> parameters();
};

/// One bidirectional selective-SSM block. Input, gate and output projections
/// are shared; each scan direction owns its SSM parameters.
struct SsmBlockParams {
  Parameter norm;    // [D_model]
  Parameter w_in;    // [D_model, D]
  Parameter w_gate;  // [D_model, D]
  Parameter w_out;   // [D, D_model]
  SsmDirectionParams fwd;
  SsmDirectionParams bwd;

  static SsmBlockParams init(std::size_t d_model, std::size_t d_inner, std::size_t d_state,
                             std::mt19937_64& rng, const std::string& prefix = "block");

  std::size_t d_model() const { return w_in.value.dim(0); }
  std::size_t d_inner() const { return w_in.value.dim(1); }
  std::size_t d_state() const { return fwd.state(); }
  std::vector<Parameter*> parameters();
};

struct Discretized {
  Tensor a_bar;  // [B,T,D,N]
  Tensor b_bar;  // [B,T,D,N]
  Tensor delta;  // [B,T,D]
};

/// Zero-order-hold A_bar = exp(delta A) and Euler B_bar = delta B_t for an SSM
/// input x [B,T,D].
Discretized discretize(const SsmDirectionParams& params, const Tensor& x);

/// y [B,T,D] of the selective recurrence over x [B,T,D].
Tensor selective_scan(const SsmDirectionParams& params, const Tensor& x, ScanDirection dir);

/// Time-invariant scan with diagonal A [N,N], B [N,1], C [1,N] over x [T].
Tensor lti_scan(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x);

/// Block output for tokens [B,T,D_model].
Tensor bidirectional_block(const SsmBlockParams& params, const Tensor& tokens);

// Differentiable forms over one sequence.

/// Fused selective scan: x, delta [T,D]; a [D,N]; b, c [T,N].
Var selective_scan(const Var& x, const Var& delta, const Var& a, const Var& b, const Var& c,
                   ScanDirection dir);

struct DirectionOutputs {
  Var y;      // [T,D]
  Var delta;  // [T,D]
  Var b;      // [T,N]
  Var c;      // [T,N]
};

DirectionOutputs scan_direction(Tape& tape, SsmDirectionParams& params, const Var& x, ScanDirection dir);

/// Intermediates of one block over a sequence [T, D_model].
struct BlockOutputs {
  Var out;  // tokens after the block (residual stream)
  Var ssm;  // forward + backward scan outputs before gating [T,D]
  DirectionOutputs fwd;
  DirectionOutputs bwd;
};

BlockOutputs block_forward(Tape& tape, SsmBlockParams& params, const Var& tokens);

}  // namespace meeto
