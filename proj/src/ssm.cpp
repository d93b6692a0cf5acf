// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/ssm.hpp"

#include <cmath>

#include "meeto/error.hpp"

namespace meeto {

std::vector<Parameter*> SsmDirectionParams::parameters() {
  return {&a_log, &w_b, &w_c, &w_delta, &delta_bias};
}

std::vector<Parameter*> SsmBlockParams::parameters() {
  std::vector<Parameter*> out{&norm, &w_in, &w_gate, &w_out};
  for (auto* p : fwd.parameters()) out.push_back(p);
  for (auto* p : bwd.parameters()) out.push_back(p);
  return out;
}

namespace {

SsmDirectionParams init_direction(std::size_t d_inner, std::size_t d_state, std::mt19937_64& rng,
                                  const std::string& prefix) {
  SsmDirectionParams p;
  Tensor a_log({d_inner, d_state});
  for (std::size_t d = 0; d < d_inner; ++d)
    for (std::size_t n = 0; n < d_state; ++n) a_log.at(d, n) = std::log(static_cast<double>(n + 1));
  const double s = 1.0 / std::sqrt(static_cast<double>(d_inner));
  p.a_log = Parameter(prefix + ".a_log", std::move(a_log));
  p.w_b = Parameter(prefix + ".w_b", Tensor::normal({d_inner, d_state}, s, rng));
  p.w_c = Parameter(prefix + ".w_c", Tensor::normal({d_inner, d_state}, s, rng));
  p.w_delta = Parameter(prefix + ".w_delta", Tensor::normal({d_inner, 1}, 0.1, rng));
  // softplus^-1(0.1): initial step size 0.1
  p.delta_bias = Parameter(prefix + ".delta_bias", Tensor::scalar(std::log(std::expm1(0.1))));
  return p;
}

struct DirectionVars {
  Var a_log, w_b, w_c, w_delta, delta_bias;
};

DirectionVars bind(Tape& tape, SsmDirectionParams& p) {
  return {tape.param(p.a_log), tape.param(p.w_b), tape.param(p.w_c), tape.param(p.w_delta),
          tape.param(p.delta_bias)};
}

DirectionVars bind_const(Tape& tape, const SsmDirectionParams& p) {
  return {tape.constant(p.a_log.value), tape.constant(p.w_b.value), tape.constant(p.w_c.value),
          tape.constant(p.w_delta.value), tape.constant(p.delta_bias.value)};
}

DirectionOutputs run_direction(const DirectionVars& v, const Var& x, ScanDirection dir) {
  const std::size_t t = x.shape()[0];
  Var a = neg(exp(v.a_log));
  Var delta = softplus(add(mul(x, broadcast_rows(v.w_delta, t)), v.delta_bias));
  Var b = matmul(x, v.w_b);
  Var c = matmul(x, v.w_c);
  Var y = selective_scan(x, delta, a, b, c, dir);
  return {y, delta, b, c};
}

struct BlockVars {
  Var norm, w_in, w_gate, w_out;
  DirectionVars fwd, bwd;
};

BlockOutputs run_block(const BlockVars& v, const Var& tokens) {
  Var u = rms_norm(tokens, v.norm);
  Var x = silu(matmul(u, v.w_in));
  Var gate = silu(matmul(u, v.w_gate));
  DirectionOutputs f = run_direction(v.fwd, x, ScanDirection::Forward);
  DirectionOutputs b = run_direction(v.bwd, x, ScanDirection::Backward);
  Var ssm = add(f.y, b.y);
  Var out = add(tokens, matmul(mul(ssm, gate), v.w_out));
  return {out, ssm, f, b};
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

Tensor slice_batch(const Tensor& t, std::size_t b) {
  const std::size_t rows = t.dim(1), cols = t.dim(2);
  const auto first = t.data().begin() + static_cast<std::ptrdiff_t>(b * rows * cols);
  return Tensor({rows, cols}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(rows * cols)));
}

}  // namespace

SsmBlockParams SsmBlockParams::init(std::size_t d_model, std::size_t d_inner, std::size_t d_state,
                                    std::mt19937_64& rng, const std::string& prefix) {
  if (d_model == 0 || d_inner == 0 || d_state == 0) throw ConfigError("SSM block widths must be >= 1");
  SsmBlockParams p;
  p.norm = Parameter(prefix + ".norm", Tensor::ones({d_model}));
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double s_out = 0.5 / std::sqrt(static_cast<double>(d_inner));
  p.w_in = Parameter(prefix + ".w_in", Tensor::normal({d_model, d_inner}, s_in, rng));
  p.w_gate = Parameter(prefix + ".w_gate", Tensor::normal({d_model, d_inner}, s_in, rng));
  p.w_out = Parameter(prefix + ".w_out", Tensor::normal({d_inner, d_model}, s_out, rng));
  p.fwd = init_direction(d_inner, d_state, rng, prefix + ".fwd");
  p.bwd = init_direction(d_inner, d_state, rng, prefix + ".bwd");
  return p;
}

Var selective_scan(const Var& x, const Var& delta, const Var& a, const Var& b, const Var& c,
                   ScanDirection dir) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) == 0) throw ShapeError("selective_scan: need T >= 1 and x [T,D]");
  const std::size_t T = xv.dim(0), D = xv.dim(1), N = a.value().dim(1);
  if (delta.shape() != xv.shape() || a.shape() != Shape{D, N} || b.shape() != Shape{T, N} ||
      c.shape() != Shape{T, N}) {
    throw ShapeError("selective_scan: inconsistent operand shapes");
  }
  const ScanDims dims{T, D, N};
  Tensor y({T, D});
  Tensor states({T, D, N});
  std::vector<double> h(D * N);
  scan_sequence(dims, xv.data().data(), delta.value().data().data(), a.value().data().data(),
                b.value().data().data(), c.value().data().data(), dir, h.data(), y.data().data(),
                states.data().data());

  return x.tape()->record(
      "selective_scan", std::move(y), {x, delta, a, b, c},
      [x, delta, a, b, c, dir, dims, states = std::move(states)](const Tensor& gy,
                                                                   std::span<Tensor* const> gin) {
        const std::size_t T = dims.steps, D = dims.channels, N = dims.state;
        const Tensor& xv = x.value();
        const Tensor& dv = delta.value();
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const Tensor& cv = c.value();
        Tensor scratch_x({T, D}), scratch_d({T, D}), scratch_a({D, N}), scratch_b({T, N}), scratch_c({T, N});
        Tensor& gx = gin[0] ? *gin[0] : scratch_x;
        Tensor& gd = gin[1] ? *gin[1] : scratch_d;
        Tensor& ga = gin[2] ? *gin[2] : scratch_a;
        Tensor& gb = gin[3] ? *gin[3] : scratch_b;
        Tensor& gc = gin[4] ? *gin[4] : scratch_c;
        std::vector<double> carry(D * N, 0.0);
        const std::vector<double> zeros(D * N, 0.0);
        for (std::size_t k = T; k-- > 0;) {
          const std::size_t t = dir == ScanDirection::Forward ? k : T - 1 - k;
          const double* h = states.data().data() + t * D * N;
          const double* h_prev = zeros.data();
          if (k > 0) {
            const std::size_t tp = dir == ScanDirection::Forward ? k - 1 : T - k;
            h_prev = states.data().data() + tp * D * N;
          }
          for (std::size_t d = 0; d < D; ++d) {
            const double g_y = gy[t * D + d];
            const double dt = dv[t * D + d];
            const double xt = xv[t * D + d];
            double g_dt = 0.0, g_xt = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t dn = d * N + n;
              const double gh = g_y * cv[t * N + n] + carry[dn];
              gc[t * N + n] += g_y * h[dn];
              const double a_dn = av[dn];
              const double abar = std::exp(dt * a_dn);
              const double g_abar = gh * h_prev[dn];
              g_dt += g_abar * abar * a_dn + gh * bv[t * N + n] * xt;
              ga[dn] += g_abar * abar * dt;
              gb[t * N + n] += gh * dt * xt;
              g_xt += gh * dt * bv[t * N + n];
              carry[dn] = abar * gh;
            }
            gd[t * D + d] += g_dt;
            gx[t * D + d] += g_xt;
          }
        }
      });
}

DirectionOutputs scan_direction(Tape& tape, SsmDirectionParams& params, const Var& x, ScanDirection dir) {
  return run_direction(bind(tape, params), x, dir);
}

BlockOutputs block_forward(Tape& tape, SsmBlockParams& params, const Var& tokens) {
  BlockVars v{tape.param(params.norm), tape.param(params.w_in), tape.param(params.w_gate),
              tape.param(params.w_out), bind(tape, params.fwd), bind(tape, params.bwd)};
  return run_block(v, tokens);
}

Discretized discretize(const SsmDirectionParams& params, const Tensor& x) {
  require_rank(x, 3, "discretize");
  x.require_finite("discretize input");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2), N = params.state();
  if (D != params.channels()) throw ShapeError("discretize: channel mismatch");
  Discretized out{Tensor({B, T, D, N}), Tensor({B, T, D, N}), Tensor({B, T, D})};
  const Tensor& a_log = params.a_log.value;
  const double bias = params.delta_bias.value.item();
  for (std::size_t bi = 0; bi < B; ++bi) {
    const Tensor xs = slice_batch(x, bi);
    const Tensor bt = matmul(xs, params.w_b.value);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < D; ++d) {
        const double dt = softplus(xs.at(t, d) * params.w_delta.value[d] + bias);
        out.delta[(bi * T + t) * D + d] = dt;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t idx = ((bi * T + t) * D + d) * N + n;
          out.a_bar[idx] = std::exp(-dt * std::exp(a_log.at(d, n)));
          out.b_bar[idx] = dt * bt.at(t, n);
        }
      }
    }
  }
  return out;
}

Tensor selective_scan(const SsmDirectionParams& params, const Tensor& x, ScanDirection dir) {
  require_rank(x, 3, "selective_scan");
  if (x.dim(1) == 0) throw ShapeError("selective_scan: empty sequence");
  x.require_finite("selective_scan input");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  Tensor out({B, T, D});
  for (std::size_t bi = 0; bi < B; ++bi) {
    Tape tape;
    Var xs = tape.constant(slice_batch(x, bi));
    DirectionOutputs r = run_direction(bind_const(tape, params), xs, dir);
    std::copy(r.y.value().data().begin(), r.y.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(bi * T * D));
  }
  return out;
}

Tensor lti_scan(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x) {
  require_rank(a, 2, "lti_scan A");
  const std::size_t N = a.dim(0);
  if (a.dim(1) != N || b.shape() != Shape{N, 1} || c.shape() != Shape{1, N}) {
    throw ShapeError("lti_scan: expected A [N,N], B [N,1], C [1,N]");
  }
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      if (i != j && a.at(i, j) != 0.0) throw ShapeError("lti_scan: A must be diagonal");
  const std::size_t T = x.numel();
  Tensor y({T});
  std::vector<double> h(N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      h[n] = a.at(n, n) * h[n] + b[n] * x[t];
      acc += c[n] * h[n];
    }
    y[t] = acc;
  }
  return y;
}

Tensor bidirectional_block(const SsmBlockParams& params, const Tensor& tokens) {
  require_rank(tokens, 3, "bidirectional_block");
  if (tokens.dim(1) == 0) throw ShapeError("bidirectional_block: empty sequence");
  const std::size_t B = tokens.dim(0), T = tokens.dim(1), Dm = tokens.dim(2);
  Tensor out({B, T, Dm});
  for (std::size_t bi = 0; bi < B; ++bi) {
    Tape tape;
    BlockVars v{tape.constant(params.norm.value), tape.constant(params.w_in.value),
                tape.constant(params.w_gate.value), tape.constant(params.w_out.value),
                bind_const(tape, params.fwd), bind_const(tape, params.bwd)};
    BlockOutputs r = run_block(v, tape.constant(slice_batch(tokens, bi)));
    std::copy(r.out.value().data().begin(), r.out.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(bi * T * Dm));
  }
  return out;
}

}  // namespace meeto
