// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "meeto/error.hpp"

namespace meeto {

void TrainConfig::validate() const {
  if (!(lr_end > 0.0) || lr_start < lr_end) throw ConfigError("need lr_start >= lr_end > 0");
  if (accum_steps < 1) throw ConfigError("accum_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) throw ConfigError("subset_fraction must lie in (0,1]");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError("cross_entropy: logits " + shape_str(lv.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t B = lv.dim(0), K = lv.dim(1);
  Tensor probs({B, K});
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) throw std::out_of_range("cross_entropy: label " + std::to_string(labels[b]) + " out of range");
    double mx = lv.at(b, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, lv.at(b, k));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(lv.at(b, k) - mx);
    const double log_z = mx + std::log(z);
    total += log_z - lv.at(b, labels[b]);
    for (std::size_t k = 0; k < K; ++k) probs.at(b, k) = std::exp(lv.at(b, k) - log_z);
  }
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return logits.tape()->record(
      "cross_entropy", Tensor::scalar(total / static_cast<double>(B)), {logits},
      [probs = std::move(probs), ys = std::move(ys), B, K](const Tensor& g, std::span<Tensor* const> gin) {
        Tensor& gl = *gin[0];
        const double s = g[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < K; ++k)
            gl[b * K + k] += s * (probs.at(b, k) - (k == ys[b] ? 1.0 : 0.0));
      });
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_start, double lr_end) {
  if (total_steps == 0) return lr_start;
  const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

void adamw_step(std::span<Parameter* const> params, AdamWState& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.grad.shape() != p.value.shape()) throw std::invalid_argument("adamw_step: missing gradient for " + p.name);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j];
      p.value[j] -= lr * cfg.weight_decay * p.value[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.value[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,lr,train_loss,eval_acc,wall_seconds\n";
  for (const auto& r : epochs) {
    os << r.epoch << ',' << r.lr << ',';
    if (r.train_loss) os << *r.train_loss;
    os << ',' << r.eval_acc << ',' << r.wall_seconds << '\n';
  }
  return os.str();
}

namespace {

std::size_t worker_count() {
  if (const char* env = std::getenv("MEETO_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

double evaluate(const Model& model, const Dataset& data, std::uint64_t seed, std::size_t batch) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const InferenceModel<double> engine(model);
  const std::size_t K = model.config.num_classes;
  const std::size_t per_image = data.height() * data.width() * data.channels();
  const std::size_t n = data.size();
  const std::size_t n_batches = (n + batch - 1) / batch;
  const std::size_t workers = std::min(worker_count(), n_batches);
  std::vector<std::size_t> correct(workers, 0);

  auto work = [&](std::size_t w) {
    for (std::size_t bi = w; bi < n_batches; bi += workers) {
      const std::size_t lo = bi * batch, hi = std::min(n, lo + batch);
      const std::span<const double> imgs = data.images.data().subspan(lo * per_image, (hi - lo) * per_image);
      ForwardOptions opts;
      opts.seed = seed;
      opts.first_sample = lo;
      const auto out = engine.forward(imgs, hi - lo, opts);
      for (std::size_t i = 0; i < hi - lo; ++i) {
        if (argmax(std::span<const double>(out.logits).subspan(i * K, K)) == data.labels[lo + i]) ++correct[w];
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  const std::size_t total = std::accumulate(correct.begin(), correct.end(), std::size_t{0});
  return static_cast<double>(total) / static_cast<double>(n);
}

TrainReport retrain(Model& model, const Dataset& train, const Dataset& eval, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("retrain: empty dataset");
  using clock = std::chrono::steady_clock;

  std::size_t epochs = cfg.epochs;
  Dataset subset_data;
  const Dataset* data = &train;
  if (cfg.subset_fraction < 1.0) {
    subset_data = subset(train, cfg.subset_fraction, cfg.seed);
    data = &subset_data;
    epochs = static_cast<std::size_t>(std::lround(static_cast<double>(cfg.epochs) / cfg.subset_fraction));
  }

  TrainReport report;
  const auto t0 = clock::now();
  report.epochs.push_back({0, cfg.lr_start, std::nullopt, evaluate(model, eval, cfg.seed),
                           std::chrono::duration<double>(clock::now() - t0).count()});

  const std::size_t n = data->size();
  const std::size_t step_size = cfg.batch_size * cfg.accum_steps;
  const std::size_t steps_per_epoch = (n + step_size - 1) / step_size;
  const std::size_t total_steps = epochs * steps_per_epoch;
  std::mt19937_64 rng(cfg.seed);
  AdamWState state;
  const auto params = model.parameters();
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto start = clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

    double loss_sum = 0.0;
    double lr = cfg.lr_start;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = s * step_size, hi = std::min(n, lo + step_size);
      model.zero_grad();
      for (std::size_t mb = lo; mb < hi; mb += cfg.batch_size) {
        const std::size_t mb_hi = std::min(hi, mb + cfg.batch_size);
        const std::span<const std::size_t> idx(order.data() + mb, mb_hi - mb);
        Tape tape;
        ForwardOptions opts;
        opts.seed = cfg.seed + epoch;
        opts.first_sample = mb;
        const ForwardResult fr = forward(tape, model, data->gather_images(idx), opts);
        const auto labels = data->gather_labels(idx);
        Var loss = cross_entropy(fr.logits, labels);
        loss_sum += loss.value().item() * static_cast<double>(idx.size());
        tape.backward(scale(loss, static_cast<double>(idx.size()) / static_cast<double>(hi - lo)));
      }
      lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end);
      adamw_step(params, state, lr, cfg);
      ++step;
    }
    const double mean_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(mean_loss)) throw NumericError("non-finite training loss");
    const double acc = evaluate(model, eval, cfg.seed);
    report.epochs.push_back({epoch, lr, mean_loss, acc, std::chrono::duration<double>(clock::now() - start).count()});
  }
  return report;
}

}  // namespace meeto
