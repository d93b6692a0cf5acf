// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "meeto/error.hpp"
#include "meeto/kv.hpp"

namespace meeto {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ConfigError("bad integer for key '" + key + "': '" + value + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size() || !std::isfinite(v)) {
    throw ConfigError("bad number for key '" + key + "': '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean for key '" + key + "': '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  if (value.empty() || value == "none") return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(values[i]);
  }
  return s;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const char* source_name(DataSource s) {
  switch (s) {
    case DataSource::Synth: return "synth";
    case DataSource::Idx: return "idx";
    case DataSource::None: return "none";
  }
  return "?";
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (apply_model_key(model, key, value)) return;
  if (key == "epochs") train.epochs = parse_size(key, value);
  else if (key == "batch_size") train.batch_size = parse_size(key, value);
  else if (key == "accum_steps") train.accum_steps = parse_size(key, value);
  else if (key == "lr_start") train.lr_start = parse_double(key, value);
  else if (key == "lr_end") train.lr_end = parse_double(key, value);
  else if (key == "weight_decay") train.weight_decay = parse_double(key, value);
  else if (key == "beta1") train.beta1 = parse_double(key, value);
  else if (key == "beta2") train.beta2 = parse_double(key, value);
  else if (key == "eps") train.eps = parse_double(key, value);
  else if (key == "seed") train.seed = bench.seed = parse_size(key, value);
  else if (key == "subset_fraction") train.subset_fraction = parse_double(key, value);
  else if (key == "dataset") {
    if (value == "synth") data.source = DataSource::Synth;
    else if (value == "idx") data.source = DataSource::Idx;
    else if (value == "none") data.source = DataSource::None;
    else throw ConfigError("bad value for key 'dataset': '" + value + "' (synth, idx, none)");
  }
  else if (key == "train_images") data.train_images = value;
  else if (key == "train_labels") data.train_labels = value;
  else if (key == "eval_images") data.eval_images = value;
  else if (key == "eval_labels") data.eval_labels = value;
  else if (key == "synth_per_class") data.synth_per_class = parse_size(key, value);
  else if (key == "synth_eval_per_class") data.synth_eval_per_class = parse_size(key, value);
  else if (key == "synth_noise") data.synth_noise = parse_double(key, value);
  else if (key == "synth_seed") data.synth_seed = parse_size(key, value);
  else if (key == "bench_r") bench_r = parse_size_list(key, value);
  else if (key == "bench_batch") bench.batch = parse_size(key, value);
  else if (key == "bench_warmup") bench.warmup = parse_size(key, value);
  else if (key == "bench_iters") bench.iters = parse_size(key, value);
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "base_epochs") base_epochs = parse_size(key, value);
  else if (key == "base_lr") base_lr = parse_double(key, value);
  else if (key == "base_lr_end") base_lr_end = parse_double(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing key");
    cfg.set(key, trim(std::string_view(line).substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# model\n";
  for (const auto& [k, v] : model_config_entries(model)) os << k << " = " << v << '\n';
  os << "# training\n"
     << "epochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "accum_steps = " << train.accum_steps << '\n'
     << "lr_start = " << format_double(train.lr_start) << '\n'
     << "lr_end = " << format_double(train.lr_end) << '\n'
     << "weight_decay = " << format_double(train.weight_decay) << '\n'
     << "beta1 = " << format_double(train.beta1) << '\n'
     << "beta2 = " << format_double(train.beta2) << '\n'
     << "eps = " << format_double(train.eps) << '\n'
     << "seed = " << train.seed << '\n'
     << "subset_fraction = " << format_double(train.subset_fraction) << '\n'
     << "# data\n"
     << "dataset = " << source_name(data.source) << '\n'
     << "train_images = " << data.train_images << '\n'
     << "train_labels = " << data.train_labels << '\n'
     << "eval_images = " << data.eval_images << '\n'
     << "eval_labels = " << data.eval_labels << '\n'
     << "synth_per_class = " << data.synth_per_class << '\n'
     << "synth_eval_per_class = " << data.synth_eval_per_class << '\n'
     << "synth_noise = " << format_double(data.synth_noise) << '\n'
     << "synth_seed = " << data.synth_seed << '\n'
     << "# benchmark\n"
     << "bench_r = " << (bench_r.empty() ? std::string("none") : join_sizes(bench_r)) << '\n'
     << "bench_batch = " << bench.batch << '\n'
     << "bench_warmup = " << bench.warmup << '\n'
     << "bench_iters = " << bench.iters << '\n'
     << "# run\n"
     << "checkpoint = " << checkpoint << '\n'
     << "out_dir = " << out_dir << '\n'
     << "base_epochs = " << base_epochs << '\n'
     << "base_lr = " << format_double(base_lr) << '\n'
     << "base_lr_end = " << format_double(base_lr_end) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (bench.iters < 1 || bench.batch < 1) throw ConfigError("bench_iters and bench_batch must be >= 1");
  if (data.source == DataSource::Idx && (data.eval_images.empty() || data.eval_labels.empty())) {
    throw ConfigError("dataset = idx needs eval_images and eval_labels");
  }
  if (data.source == DataSource::Synth && (data.synth_per_class == 0 || data.synth_eval_per_class == 0)) {
    throw ConfigError("synth_per_class and synth_eval_per_class must be >= 1");
  }
  if (!(base_lr >= base_lr_end && base_lr_end > 0.0)) throw ConfigError("need base_lr >= base_lr_end > 0");
}

std::pair<Dataset, Dataset> load_data(const DataConfig& cfg, const ModelConfig& model) {
  std::pair<Dataset, Dataset> out;
  switch (cfg.source) {
    case DataSource::None:
      throw ConfigError("this command needs a dataset (dataset = synth or idx)");
    case DataSource::Synth:
      out.first = synth_dataset(cfg.synth_per_class, model.num_classes, model.image_size, cfg.synth_seed,
                                cfg.synth_noise);
      out.second = synth_dataset(cfg.synth_eval_per_class, model.num_classes, model.image_size,
                                 cfg.synth_seed + 7919, cfg.synth_noise);
      break;
    case DataSource::Idx:
      out.second = load_idx(cfg.eval_images, cfg.eval_labels);
      out.first = cfg.train_images.empty() ? out.second : load_idx(cfg.train_images, cfg.train_labels);
      break;
  }
  for (const Dataset* d : {&out.first, &out.second}) {
    if (d->height() != model.image_size || d->width() != model.image_size || d->channels() != model.channels) {
      throw DataError("dataset images are " + std::to_string(d->height()) + "x" + std::to_string(d->width()) + "x" +
                      std::to_string(d->channels()) + " but the model expects " + std::to_string(model.image_size) +
                      "x" + std::to_string(model.image_size) + "x" + std::to_string(model.channels));
    }
    if (d->num_classes > model.num_classes) throw DataError("dataset has more classes than the model head");
  }
  return out;
}

}  // namespace meeto
