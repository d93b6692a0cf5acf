// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "meeto/bench.hpp"
#include "meeto/dataset.hpp"
#include "meeto/error.hpp"
#include "meeto/kv.hpp"
#include "meeto/trainer.hpp"

namespace fs = std::filesystem;

namespace meeto {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed for " + path.string());
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// Weights from the checkpoint when one is configured (its architecture wins),
// otherwise a fresh model. The reduction policy always comes from the config.
Model initial_model(RunConfig& cfg) {
  if (cfg.checkpoint.empty()) return Model::init(cfg.model, cfg.train.seed);
  Model loaded = load_checkpoint(cfg.checkpoint);
  const ReductionConfig reduction = cfg.model.reduction;
  cfg.model = loaded.config;
  cfg.model.reduction = reduction;
  cfg.model.validate();
  return with_reduction(loaded, reduction);
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

int cmd_train(RunConfig cfg, std::ostream& out) {
  cfg.validate();
  const auto [train, eval] = load_data(cfg.data, cfg.model);
  Model model = initial_model(cfg);
  const fs::path dir = prepare_out(cfg);
  write_text(dir / "resolved.cfg", cfg.to_text());
  const TrainReport report = retrain(model, train, eval, cfg.train);
  save_checkpoint(model, dir / "model.ckpt");
  write_text(dir / "train_report.csv", report.to_csv());
  out << "training-free accuracy " << fmt6(report.training_free_accuracy()) << '\n'
      << "final accuracy " << fmt6(report.final_accuracy()) << '\n'
      << "wrote " << (dir / "model.ckpt").string() << " and " << (dir / "train_report.csv").string() << '\n';
  return kExitOk;
}

int cmd_eval(RunConfig cfg, std::ostream& out) {
  cfg.validate();
  const auto data = load_data(cfg.data, cfg.model);
  const Model model = initial_model(cfg);
  const fs::path dir = prepare_out(cfg);
  write_text(dir / "resolved.cfg", cfg.to_text());
  const double acc = evaluate(model, data.second, cfg.train.seed);
  const double ratio = reduction_ratio(cfg.model.num_tokens(), cfg.model.reduction.sites, cfg.model.reduction.r,
                                       cfg.model.depth);
  std::ostringstream csv;
  csv << "r,ratio,accuracy\n" << cfg.model.reduction.r << ',' << fmt6(ratio) << ',' << format_double(acc) << '\n';
  write_text(dir / "eval.csv", csv.str());
  out << "accuracy " << fmt6(acc) << " at r=" << cfg.model.reduction.r << " (ratio " << fmt6(ratio) << ")\n";
  return kExitOk;
}

int cmd_bench(RunConfig cfg, std::ostream& out) {
  cfg.validate();
  std::optional<Dataset> eval;
  if (cfg.data.source != DataSource::None) eval = load_data(cfg.data, cfg.model).second;
  const Model model = initial_model(cfg);
  const fs::path dir = prepare_out(cfg);
  write_text(dir / "resolved.cfg", cfg.to_text());
  const auto rows = sweep(model, cfg.bench_r, eval ? &*eval : nullptr, cfg.bench);
  const std::string csv = bench_csv(rows);
  write_text(dir / "bench.csv", csv);
  out << csv;
  return kExitOk;
}

std::vector<std::string> ablation_axes() {
  return {"distance", "feature", "merge_op", "shuffle", "grouping", "selection", "pairing", "rank", "interval", "sites"};
}

std::vector<AblationCell> ablation_cells(const ModelConfig& base, const std::string& axis) {
  const ReductionConfig& b = base.reduction;
  std::vector<AblationCell> cells;
  auto add = [&](std::string value, auto&& edit) {
    ReductionConfig r = b;
    edit(r);
    cells.push_back({std::move(value), std::move(r)});
  };
  if (axis == "distance") {
    for (Distance d : {Distance::Cosine, Distance::L1, Distance::L2})
      add(to_string(d), [&](ReductionConfig& r) { r.distance = d; });
  } else if (axis == "feature") {
    for (Feature f : {Feature::X, Feature::C, Feature::B, Feature::Delta})
      add(to_string(f), [&](ReductionConfig& r) { r.feature = f; });
  } else if (axis == "merge_op") {
    for (MergeOp op : {MergeOp::Sum, MergeOp::Mean, MergeOp::Max, MergeOp::Min})
      add(to_string(op), [&](ReductionConfig& r) { r.merge_op = op; });
  } else if (axis == "shuffle") {
    for (double s : {0.1, 0.3, 0.5, 0.7})
      add(format_double(s), [&](ReductionConfig& r) { r.shuffle_ratio = s; });
  } else if (axis == "grouping") {
    for (Grouping g : {Grouping::OddEven, Grouping::FrontBehind, Grouping::Random})
      add(to_string(g), [&](ReductionConfig& r) { r.grouping = g; });
  } else if (axis == "selection") {
    for (Selection s : {Selection::TopR, Selection::RandomR})
      add(to_string(s), [&](ReductionConfig& r) { r.selection = s; });
  } else if (axis == "pairing") {
    for (Pairing p : {Pairing::Nearest, Pairing::RandomPair})
      add(to_string(p), [&](ReductionConfig& r) { r.pairing = p; });
  } else if (axis == "rank") {
    for (std::size_t k : {1, 3, 5, 7, 14})
      add(std::to_string(k), [&](ReductionConfig& r) { r.pair_rank = k; });
  } else if (axis == "interval") {
    // Same total number of removed tokens spread over fewer or more sites.
    const double total = static_cast<double>(b.r * b.sites.size());
    for (std::size_t k : {2, 4, 6}) {
      add(std::to_string(k), [&](ReductionConfig& r) {
        r.sites.clear();
        for (std::size_t s = k; s < base.depth; s += k) r.sites.push_back(s);
        r.r = r.sites.empty() ? 0 : static_cast<std::size_t>(std::lround(total / static_cast<double>(r.sites.size())));
      });
    }
  } else if (axis == "sites") {
    add("even", [&](ReductionConfig& r) { r.sites = even_sites(base.depth); });
    add("odd", [&](ReductionConfig& r) {
      r.sites.clear();
      for (std::size_t s = 1; s < base.depth; s += 2) r.sites.push_back(s);
    });
  } else {
    std::string known;
    for (const auto& a : ablation_axes()) known += (known.empty() ? "" : ", ") + a;
    throw ConfigError("unknown ablation axis '" + axis + "' (" + known + ")");
  }
  return cells;
}

int cmd_ablate(RunConfig cfg, const std::string& axis, std::ostream& out) {
  cfg.validate();
  const auto cells = ablation_cells(cfg.model, axis);
  for (const auto& c : cells) c.reduction.validate(cfg.model.depth);
  const auto [train, eval] = load_data(cfg.data, cfg.model);
  const fs::path dir = prepare_out(cfg);

  Model base;
  if (!cfg.checkpoint.empty()) {
    base = initial_model(cfg);
  } else {
    ReductionConfig none = cfg.model.reduction;
    none.r = 0;
    ModelConfig mc = cfg.model;
    mc.reduction = none;
    base = Model::init(mc, cfg.train.seed);
    TrainConfig bt = cfg.train;
    bt.epochs = cfg.base_epochs;
    bt.lr_start = cfg.base_lr;
    bt.lr_end = cfg.base_lr_end;
    bt.subset_fraction = 1.0;
    const TrainReport rep = retrain(base, train, eval, bt);
    save_checkpoint(base, dir / "base.ckpt");
    out << "baseline accuracy " << fmt6(rep.final_accuracy()) << '\n';
  }
  write_text(dir / "resolved.cfg", cfg.to_text());

  std::ostringstream csv;
  csv << axis << ",training_free,retrained,delta\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    Model m = with_reduction(base, cells[i].reduction);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + i;
    const TrainReport rep = retrain(m, train, eval, tc);
    const double tf = rep.training_free_accuracy(), rt = rep.final_accuracy();
    csv << cells[i].value << ',' << fmt6(tf) << ',' << fmt6(rt) << ',' << fmt6(rt - tf) << '\n';
    out << axis << '=' << cells[i].value << "  training-free " << fmt6(tf) << "  re-trained " << fmt6(rt) << '\n';
  }
  write_text(dir / ("ablate_" + axis + ".csv"), csv.str());
  return kExitOk;
}

Tensor read_token_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open token file " + path.string());
  std::vector<double> values;
  std::size_t width = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    line = line.substr(0, line.find('#'));
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    std::size_t count = 0;
    std::string item;
    while (ls >> item) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + item + "'");
      }
      values.push_back(v);
      ++count;
    }
    if (count == 0) continue;
    if (width == 0) width = count;
    if (count != width) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                      " values, got " + std::to_string(count));
    }
    ++rows;
  }
  if (rows == 0) throw DataError("token file " + path.string() + " holds no tokens");
  return Tensor({rows, width}, std::move(values));
}

std::string merge_demo_trace(const RunConfig& cfg, const Tensor& tokens) {
  if (tokens.rank() != 2 || tokens.dim(0) == 0) throw ShapeError("merge_demo: tokens must be [T,D] with T >= 1");
  const ReductionConfig& red = cfg.model.reduction;
  const std::size_t T = tokens.dim(0), D = tokens.dim(1);
  const std::size_t r = effective_r(T, red.r);
  std::mt19937_64 rng(cfg.train.seed);
  std::ostringstream os;
  os << "tokens " << T << " x " << D << '\n';
  os << "policy r=" << red.r << " effective_r=" << r << " grouping=" << to_string(red.grouping)
     << " distance=" << to_string(red.distance) << " merge_op=" << to_string(red.merge_op)
     << " mode=" << to_string(red.mode) << " pair_rank=" << red.pair_rank << " selection=" << to_string(red.selection)
     << " pairing=" << to_string(red.pairing) << '\n';

  MergePlan plan;
  if (r == 0) {
    plan.survivors.resize(T);
    std::iota(plan.survivors.begin(), plan.survivors.end(), std::size_t{0});
    os << "no pairs\n";
  } else {
    const Groups groups = make_groups(T, red.grouping, rng);
    os << "group1: " << join(groups.first) << '\n' << "group2: " << join(groups.second) << '\n';
    auto gather = [&](const std::vector<std::size_t>& idx) {
      Tensor g({idx.size(), D});
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < D; ++j) g.at(k, j) = tokens.at(idx[k], j);
      return g;
    };
    const Tensor dists = pairwise_distance(gather(groups.first), gather(groups.second), red.distance);
    os << "distances (rows group1, columns group2):\n";
    for (std::size_t i = 0; i < dists.dim(0); ++i) {
      os << "  " << groups.first[i] << ':';
      for (std::size_t j = 0; j < dists.dim(1); ++j) os << ' ' << fmt6(dists.at(i, j));
      os << '\n';
    }
    const auto local = select_pairs(dists, r, red.pair_rank, red.selection, red.pairing, rng);
    os << "pairs:\n";
    for (const auto& p : local) {
      os << "  " << groups.first[p.first] << " + " << groups.second[p.second] << "  d=" << fmt6(dists.at(p.first, p.second))
         << '\n';
    }
    plan = make_plan(groups, local, T);
  }

  std::vector<std::size_t> positions(T);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  const auto rows = reduction_layout(plan, positions, red.mode);
  std::vector<double> merged(rows.size() * D);
  apply_layout<double>(rows, tokens.data().data(), D, red.merge_op, merged.data());
  os << "output " << rows.size() << " tokens:\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    os << "  pos " << rows[k].position << " <- " << rows[k].first;
    if (rows[k].second != MergedRow::npos) os << '+' << rows[k].second;
    os << ':';
    for (std::size_t j = 0; j < D; ++j) os << ' ' << fmt6(merged[k * D + j]);
    os << '\n';
  }
  return os.str();
}

int cmd_merge_demo(const RunConfig& cfg, const fs::path& tokens_file, std::ostream& out) {
  out << merge_demo_trace(cfg, read_token_file(tokens_file));
  return kExitOk;
}

namespace {

int cmd_synth(std::size_t classes, std::size_t per_class, std::size_t eval_per_class, std::size_t image_size,
              double noise, std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  if (classes == 0 || per_class == 0 || image_size == 0) throw ConfigError("synth needs positive sizes");
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string());
  const Dataset train = synth_dataset(per_class, classes, image_size, seed, noise);
  write_idx(train, dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  out << "wrote " << train.size() << " training images to " << dir.string() << '\n';
  if (eval_per_class > 0) {
    const Dataset eval = synth_dataset(eval_per_class, classes, image_size, seed + 7919, noise);
    write_idx(eval, dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    out << "wrote " << eval.size() << " evaluation images to " << dir.string() << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"meeto: token merging and re-training on selective state space models"};
  app.require_subcommand(1);

  std::string config_path, out_dir, axis, tokens_path;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "seed (overrides seed)");
  };
  CLI::App* train = app.add_subcommand("train", "train or re-train a model, write checkpoint and report");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint under the configured reduction");
  CLI::App* bench = app.add_subcommand("bench", "throughput sweep over r");
  CLI::App* ablate = app.add_subcommand("ablate", "training-free and re-trained accuracy along one axis");
  CLI::App* demo = app.add_subcommand("merge-demo", "trace one reduction step on a token file");
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic IDX dataset");
  for (CLI::App* sub : {train, eval, bench, ablate, demo}) add_common(sub);
  ablate->add_option("--axis", axis, "ablation axis")->required();
  demo->add_option("tokens", tokens_path, "token file, one vector per line")->required();

  std::size_t classes = 10, per_class = 100, eval_per_class = 0, image_size = 28;
  double noise = 0.1;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--classes", classes, "number of classes");
  synth->add_option("--per-class", per_class, "training images per class");
  synth->add_option("--eval-per-class", eval_per_class, "also write an evaluation split of this size per class");
  synth->add_option("--image-size", image_size, "image side length");
  synth->add_option("--noise", noise, "pixel noise standard deviation");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(classes, per_class, eval_per_class, image_size, noise, synth_seed, synth_out, out);
    }
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    CLI::App* active = app.get_subcommands().front();
    if (active->count("--out")) cfg.out_dir = out_dir;
    if (active->count("--seed")) cfg.set("seed", std::to_string(seed));
    if (train->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
    if (bench->parsed()) return cmd_bench(cfg, out);
    if (ablate->parsed()) return cmd_ablate(cfg, axis, out);
    if (demo->parsed()) return cmd_merge_demo(cfg, tokens_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace meeto
