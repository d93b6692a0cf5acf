// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "meeto/bench.hpp"
#include "meeto/dataset.hpp"
#include "meeto/model.hpp"
#include "meeto/trainer.hpp"

namespace meeto {

enum class DataSource { Synth, Idx, None };

struct DataConfig {
  DataSource source = DataSource::Synth;
  std::string train_images;
  std::string train_labels;
  std::string eval_images;
  std::string eval_labels;
  std::size_t synth_per_class = 100;
  std::size_t synth_eval_per_class = 50;
  double synth_noise = 0.25;
  std::uint64_t synth_seed = 1;
};

/// Everything one CLI run needs, read from `key = value` lines.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  BenchOptions bench;
  std::vector<std::size_t> bench_r{0, 5, 11, 20};
  std::string checkpoint;        // initial weights; empty means a fresh model
  std::string out_dir = "out";
  std::size_t base_epochs = 10;  // baseline training for `ablate` without a checkpoint
  double base_lr = 3e-3;
  double base_lr_end = 1e-4;

  /// One `key=value` per line, `#` starts a comment. Unknown keys and
  /// malformed values throw ConfigError naming the key.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  /// Every key with its resolved value, parseable by `parse`.
  std::string to_text() const;
  void validate() const;
};

/// Training and evaluation splits described by `cfg`. Throws DataError.
std::pair<Dataset, Dataset> load_data(const DataConfig& cfg, const ModelConfig& model);

}  // namespace meeto
