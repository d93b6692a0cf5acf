// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/tape.hpp"

#include <algorithm>
#include <cmath>

#include "meeto/error.hpp"

namespace meeto {

const Tensor& Var::value() const { return tape_->value_of(id_); }

bool Var::requires_grad() const { return tape_->requires_grad_of(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  value.require_finite("constant");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  p.value.require_finite(p.name.c_str());
  if (p.grad.shape() != p.value.shape()) p.zero_grad();
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  Var v = push(std::move(n));
  param_ids_.emplace(&p, v.id());
  return v;
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, Backward backward) {
  value.require_finite(op);
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument(std::string(op) + ": operand from another tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
  if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));

  nodes_[loss.id()].grad = Tensor(loss.shape(), 1.0);
  std::vector<Tensor*> slots;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) {
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        Node& in = nodes_[node.inputs[i]];
        if (!in.requires_grad) continue;
        if (in.grad.empty()) in.grad = Tensor(in.value.shape());
        slots[i] = &in.grad;
      }
      node.backward(node.grad, slots);
    }
    if (node.param) node.param->grad.add_(node.grad);
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  param_ids_.clear();
}

// ---------------------------------------------------------------------------
// Scalar helpers

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

namespace {

// c += a^T b, a [m,k], b [m,n], c [k,n]
void add_at_b(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      double* crow = pc + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a b^T, a [m,n], b [k,n], c [m,k]
void add_a_bt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = pb + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      pc[i * k + p] += s;
    }
  }
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands must share a tape");
  }
}

enum class Broadcast { Same, LeftScalar, RightScalar };

Broadcast broadcast_kind(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::RightScalar;
  if (a.numel() == 1) return Broadcast::LeftScalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

template <typename F>
Var unary(const char* op, const Var& a, F f, std::function<double(double x, double y)> dfdx) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  Tensor y = out;
  return a.tape()->record(op, std::move(out), {a},
                          [a, y = std::move(y), dfdx](const Tensor& g, std::span<Tensor* const> gin) {
                            const Tensor& x = a.value();
                            Tensor& gx = *gin[0];
                            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
                          });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  Tensor c = matmul(a.value(), b.value());
  return a.tape()->record("matmul", std::move(c), {a, b},
                          [a, b](const Tensor& g, std::span<Tensor* const> gin) {
                            if (gin[0]) add_a_bt(g, b.value(), *gin[0]);
                            if (gin[1]) add_at_b(a.value(), g, *gin[1]);
                          });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b, "add");
  const Broadcast kind = broadcast_kind(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(kind == Broadcast::LeftScalar ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = av[kind == Broadcast::LeftScalar ? 0 : i] + bv[kind == Broadcast::RightScalar ? 0 : i];
  }
  return a.tape()->record("add", std::move(out), {a, b},
                          [kind](const Tensor& g, std::span<Tensor* const> gin) {
                            for (int s = 0; s < 2; ++s) {
                              Tensor* t = gin[s];
                              if (!t) continue;
                              const bool reduce = (s == 0 && kind == Broadcast::LeftScalar) ||
                                                  (s == 1 && kind == Broadcast::RightScalar);
                              for (std::size_t i = 0; i < g.numel(); ++i) (*t)[reduce ? 0 : i] += g[i];
                            }
                          });
}

Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b, "mul");
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool ls = kind == Broadcast::LeftScalar;
  const bool rs = kind == Broadcast::RightScalar;
  Tensor out(ls ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[ls ? 0 : i] * bv[rs ? 0 : i];
  return a.tape()->record("mul", std::move(out), {a, b},
                          [a, b, ls, rs](const Tensor& g, std::span<Tensor* const> gin) {
                            const Tensor& av = a.value();
                            const Tensor& bv = b.value();
                            for (std::size_t i = 0; i < g.numel(); ++i) {
                              if (gin[0]) (*gin[0])[ls ? 0 : i] += g[i] * bv[rs ? 0 : i];
                              if (gin[1]) (*gin[1])[rs ? 0 : i] += g[i] * av[ls ? 0 : i];
                            }
                          });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var exp(const Var& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var softplus(const Var& a) {
  return unary(
      "softplus", a, [](double x) { return softplus(x); },
      [](double x, double) { return sigmoid(x); });
}

Var silu(const Var& a) {
  return unary(
      "silu", a, [](double x) { return silu(x); },
      [](double x, double) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record("sum", Tensor::scalar(s), {a},
                          [](const Tensor& g, std::span<Tensor* const> gin) {
                            for (auto& v : gin[0]->data()) v += g[0];
                          });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record("reshape", std::move(out), {a},
                          [](const Tensor& g, std::span<Tensor* const> gin) {
                            Tensor& gx = *gin[0];
                            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                          });
}

Var broadcast_rows(const Var& row, std::size_t rows) {
  const std::size_t d = row.numel();
  const Tensor& rv = row.value();
  Tensor out({rows, d});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(rv.data().begin(), rv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return row.tape()->record("broadcast_rows", std::move(out), {row},
                            [rows, d](const Tensor& g, std::span<Tensor* const> gin) {
                              Tensor& gx = *gin[0];
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < d; ++j) gx[j] += g[r * d + j];
                            });
}

Var mean_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.dim(0) == 0) throw ShapeError("mean_rows: need non-empty rank-2 input");
  const std::size_t t = av.dim(0), d = av.dim(1);
  Tensor out({1, d});
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += av.at(r, j);
  for (auto& v : out.data()) v /= static_cast<double>(t);
  return a.tape()->record("mean_rows", std::move(out), {a},
                          [t, d](const Tensor& g, std::span<Tensor* const> gin) {
                            Tensor& gx = *gin[0];
                            const double inv = 1.0 / static_cast<double>(t);
                            for (std::size_t r = 0; r < t; ++r)
                              for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] * inv;
                          });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts[0].value().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.value().dim(1) != d) throw ShapeError("concat_rows: column mismatch");
    if (p.tape() != parts[0].tape()) throw std::invalid_argument("concat_rows: operands must share a tape");
    rows += p.value().dim(0);
  }
  Tensor out({rows, d});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.numel();
  }
  return parts[0].tape()->record("concat_rows", std::move(out), {parts.begin(), parts.end()},
                                 [offsets](const Tensor& g, std::span<Tensor* const> gin) {
                                   for (std::size_t k = 0; k < gin.size(); ++k) {
                                     if (!gin[k]) continue;
                                     Tensor& gx = *gin[k];
                                     for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[offsets[k] + i];
                                   }
                                 });
}

Var rms_norm(const Var& x, const Var& weight, double eps) {
  require_same_tape(x, weight, "rms_norm");
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || weight.numel() != xv.dim(1)) {
    throw ShapeError("rms_norm: " + shape_str(xv.shape()) + " with weight " + shape_str(weight.shape()));
  }
  const std::size_t t = xv.dim(0), d = xv.dim(1);
  const Tensor& w = weight.value();
  std::vector<double> inv_rms(t);
  Tensor out({t, d});
  for (std::size_t r = 0; r < t; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xv.at(r, j) * xv.at(r, j);
    inv_rms[r] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = xv.at(r, j) * inv_rms[r] * w[j];
  }
  return x.tape()->record(
      "rms_norm", std::move(out), {x, weight},
      [x, weight, inv_rms = std::move(inv_rms), t, d](const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& xv = x.value();
        const Tensor& w = weight.value();
        for (std::size_t r = 0; r < t; ++r) {
          const double s = inv_rms[r];
          if (gin[1]) {
            for (std::size_t j = 0; j < d; ++j) (*gin[1])[j] += g[r * d + j] * xv.at(r, j) * s;
          }
          if (gin[0]) {
            // d/dx_k of x_j*s*w_j = s*w_j*delta_jk - x_j*w_j*s^3*x_k/d
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * w[j] * xv.at(r, j);
            const double c = dot * s * s * s / static_cast<double>(d);
            for (std::size_t k = 0; k < d; ++k) {
              (*gin[0])[r * d + k] += g[r * d + k] * w[k] * s - c * xv.at(r, k);
            }
          }
        }
      });
}

}  // namespace meeto
