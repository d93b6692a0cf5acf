// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meeto/dataset.hpp"
#include "meeto/model.hpp"

namespace meeto {

struct BenchResult {
  std::size_t r = 0;
  double reduction_ratio = 0.0;
  double images_per_second = 0.0;
  double speedup = 1.0;  // versus the r = 0 baseline
  std::optional<double> accuracy;
  double flops = 0.0;
  std::size_t warmup_iters = 0;
  std::size_t timed_iters = 0;
};

struct BenchOptions {
  std::size_t batch = 16;
  std::size_t warmup = 3;   // raised to 3 when smaller
  std::size_t iters = 20;
  std::uint64_t seed = 0;
};

/// Median images/second of the float32 inference path on one fixed random
/// batch. speedup is left at 1.
BenchResult measure_throughput(const Model& model, const BenchOptions& opts);

/// One row per r (model reduction policy with r replaced). Speedups are
/// relative to a measured r = 0 baseline; accuracy is filled when `eval`
/// is given.
std::vector<BenchResult> sweep(const Model& model, std::span<const std::size_t> r_values, const Dataset* eval,
                               const BenchOptions& opts);

/// Header `r,ratio,imgs_per_sec,speedup,accuracy,flops`.
std::string bench_csv(std::span<const BenchResult> rows);

}  // namespace meeto
