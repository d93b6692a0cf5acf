// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meeto/dataset.hpp"
#include "meeto/model.hpp"
#include "meeto/tape.hpp"

namespace meeto {

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;   // micro-batch; one optimizer step spans accum_steps of them
  std::size_t accum_steps = 2;
  double lr_start = 2e-5;
  double lr_end = 1e-6;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double subset_fraction = 1.0;

  void validate() const;
};

/// Mean over the batch of -log softmax(logits)[label]; logits [B,K].
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);

/// lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_start, double lr_end);

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// Decoupled weight decay p -= lr*wd*p, then the bias-corrected Adam update.
/// Moments are created on the first call. Throws if a gradient is missing.
void adamw_step(std::span<Parameter* const> params, AdamWState& state, double lr, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  std::optional<double> train_loss;  // absent for the training-free row
  double eval_acc = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;  // row 0 is the training-free evaluation

  double training_free_accuracy() const { return epochs.front().eval_acc; }
  double final_accuracy() const { return epochs.back().eval_acc; }
  /// Header `epoch,lr,train_loss,eval_acc,wall_seconds`.
  std::string to_csv() const;
};

/// Top-1 accuracy through the inference path; the model is not modified.
/// Batches are spread over MEETO_THREADS workers (default 1).
double evaluate(const Model& model, const Dataset& data, std::uint64_t seed = 0, std::size_t batch = 64);

/// Re-trains `model` in place on `train`, evaluating on `eval` before the
/// first epoch and after every epoch. With subset_fraction < 1 it trains on a
/// stratified subset for round(epochs / subset_fraction) epochs.
TrainReport retrain(Model& model, const Dataset& train, const Dataset& eval, const TrainConfig& cfg);

}  // namespace meeto
