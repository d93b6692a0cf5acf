// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/bench.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

#include "meeto/trainer.hpp"

namespace meeto {

BenchResult measure_throughput(const Model& model, const BenchOptions& opts) {
  if (opts.iters < 1) throw std::invalid_argument("measure_throughput: iters must be >= 1");
  if (opts.batch < 1) throw std::invalid_argument("measure_throughput: batch must be >= 1");
  const ModelConfig& cfg = model.config;
  const InferenceModel<float> engine(model);

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<float> pixel(0.0f, 1.0f);
  std::vector<float> images(opts.batch * cfg.image_size * cfg.image_size * cfg.channels);
  for (auto& v : images) v = pixel(rng);

  BenchResult res;
  res.r = cfg.reduction.r;
  res.reduction_ratio = reduction_ratio(cfg.num_tokens(), cfg.reduction.sites, cfg.reduction.r, cfg.depth);
  res.flops = count_flops(cfg);
  res.warmup_iters = std::max<std::size_t>(opts.warmup, 3);
  res.timed_iters = opts.iters;

  float sink = 0.0f;
  for (std::size_t i = 0; i < res.warmup_iters; ++i) sink += engine.forward(images, opts.batch).logits[0];
  std::vector<double> rates;
  for (std::size_t i = 0; i < opts.iters; ++i) {
    const auto start = std::chrono::steady_clock::now();
    sink += engine.forward(images, opts.batch).logits[0];
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rates.push_back(static_cast<double>(opts.batch) / std::max(secs, 1e-12));
  }
  volatile float keep = sink;
  (void)keep;
  std::sort(rates.begin(), rates.end());
  const std::size_t mid = rates.size() / 2;
  res.images_per_second = rates.size() % 2 ? rates[mid] : 0.5 * (rates[mid - 1] + rates[mid]);
  return res;
}

std::vector<BenchResult> sweep(const Model& model, std::span<const std::size_t> r_values, const Dataset* eval,
                               const BenchOptions& opts) {
  if (r_values.empty()) throw std::invalid_argument("sweep: no r values");
  auto at_r = [&](std::size_t r) {
    ReductionConfig red = model.config.reduction;
    red.r = r;
    return with_reduction(model, red);
  };
  const BenchResult baseline = measure_throughput(at_r(0), opts);
  std::vector<BenchResult> rows;
  for (std::size_t r : r_values) {
    const Model m = at_r(r);
    BenchResult row = r == 0 ? baseline : measure_throughput(m, opts);
    row.speedup = row.images_per_second / baseline.images_per_second;
    if (eval) row.accuracy = evaluate(m, *eval, opts.seed);
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv(std::span<const BenchResult> rows) {
  std::ostringstream os;
  os.precision(10);
  os << "r,ratio,imgs_per_sec,speedup,accuracy,flops\n";
  for (const auto& row : rows) {
    os << row.r << ',' << row.reduction_ratio << ',' << row.images_per_second << ',' << row.speedup << ',';
    if (row.accuracy) os << *row.accuracy;
    os << ',' << row.flops << '\n';
  }
  return os.str();
}

}  // namespace meeto
