// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "meeto/tensor.hpp"

namespace meeto {

/// A learnable tensor together with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape for one forward pass.
///
/// Every primitive appends a node holding its output value and a closure that
/// maps the output gradient onto its inputs. `backward` walks the nodes in
/// reverse exactly once, adds leaf gradients into their Parameters and clears
/// the tape. A tape is not thread-safe; concurrent forward passes use
/// separate tapes.
class Tape {
 public:
  /// Receives the gradient of the node's output and one slot per input.
  /// A slot is null when that input does not need a gradient.
  using Backward = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`; gradients flow into `p.grad` on backward.
  Var param(Parameter& p);

  /// Appends a derived value. The value is checked for NaN/Inf.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, Backward backward);

  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear();

  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

// Differentiable primitives. Operands must live on the same tape.

/// [m,k] x [k,n] -> [m,n].
Var matmul(const Var& a, const Var& b);
/// Element-wise; equal shapes, or either side a single-element tensor.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var exp(const Var& a);
/// max(x,0) + log1p(exp(-|x|)).
Var softplus(const Var& a);
/// x * sigmoid(x).
Var silu(const Var& a);
/// Sum of all elements, shape [1].
Var sum(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Tiles a single row (any shape with numel D) into [rows, D].
Var broadcast_rows(const Var& row, std::size_t rows);
/// [T,D] -> [1,D].
Var mean_rows(const Var& a);
/// Stacks rank-2 tensors with equal column counts.
Var concat_rows(std::span<const Var> parts);
/// Row-wise x / sqrt(mean(x^2) + eps) * weight, weight numel == columns.
Var rms_norm(const Var& x, const Var& weight, double eps = 1e-6);

// Plain value kernels shared by the tape ops and non-differentiable callers.

Tensor matmul(const Tensor& a, const Tensor& b);
double softplus(double x);
double sigmoid(double x);
double silu(double x);

}  // namespace meeto
