// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "meeto/cli.hpp"
#include "meeto/error.hpp"

using namespace meeto;
namespace fs = std::filesystem;

namespace {

const fs::path kData = MEETO_TEST_DATA;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "meeto");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("meeto_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path write_config(const std::string& body, const std::string& name = "run.cfg") {
    const fs::path p = dir / name;
    std::ofstream(p) << body;
    return p;
  }

  // A model small enough to train in well under a second.
  std::string tiny() const {
    return "image_size = 8\npatch_size = 2\ndepth = 2\nd_model = 6\nd_inner = 4\nd_state = 2\nnum_classes = 3\n"
           "sites = 0\nr = 2\nsynth_per_class = 4\nsynth_eval_per_class = 3\nbatch_size = 4\naccum_steps = 1\n"
           "bench_iters = 1\nbench_batch = 2\nout_dir = " + (dir / "out").string() + "\n";
  }

  fs::path dir;
};

}  // namespace

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const RunConfig c = RunConfig::parse("# header\n  r = 7   # trailing\n\ndistance=l2\nsites = 1,3\n");
  EXPECT_EQ(c.model.reduction.r, 7u);
  EXPECT_EQ(c.model.reduction.distance, Distance::L2);
  EXPECT_EQ(c.model.reduction.sites, (std::vector<std::size_t>{1, 3}));
}

TEST(RunConfig, UnknownKeyIsNamed) {
  try {
    RunConfig::parse("r = 1\nlearning_rate = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(RunConfig::parse("just words\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("epochs = many\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("dataset = mnist\n"), ConfigError);
}

TEST(RunConfig, ResolvedTextRoundTrips) {
  RunConfig c = RunConfig::parse("r = 4\nfeature = delta\nlr_start = 0.00123\nbench_r = 0,3\ncheckpoint = a.ckpt\n");
  const std::string text = c.to_text();
  EXPECT_EQ(RunConfig::parse(text).to_text(), text);
  EXPECT_NE(text.find("lr_start = 0.00123"), std::string::npos);
}

TEST(Ablation, AxisValues) {
  const ModelConfig base;
  auto values = [&](const std::string& axis) {
    std::vector<std::string> v;
    for (const auto& c : ablation_cells(base, axis)) v.push_back(c.value);
    return v;
  };
  EXPECT_EQ(values("distance"), (std::vector<std::string>{"cosine", "l1", "l2"}));
  EXPECT_EQ(values("shuffle"), (std::vector<std::string>{"0.10000000000000001", "0.29999999999999999", "0.5",
                                                         "0.69999999999999996"}));
  EXPECT_EQ(values("merge_op"), (std::vector<std::string>{"sum", "mean", "max", "min"}));
  EXPECT_EQ(values("feature"), (std::vector<std::string>{"x", "c", "b", "delta"}));
  EXPECT_EQ(values("rank"), (std::vector<std::string>{"1", "3", "5", "7", "14"}));
  EXPECT_EQ(values("sites"), (std::vector<std::string>{"even", "odd"}));
  for (const auto& axis : ablation_axes()) EXPECT_FALSE(ablation_cells(base, axis).empty()) << axis;
  EXPECT_THROW(ablation_cells(base, "depth"), ConfigError);
}

TEST(Ablation, IntervalKeepsTotalReduction) {
  ModelConfig base;
  base.reduction.r = 4;  // 3 sites x 4 tokens
  const auto cells = ablation_cells(base, "interval");
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].reduction.sites, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(cells[0].reduction.r, 4u);
  EXPECT_EQ(cells[1].reduction.sites, (std::vector<std::size_t>{4}));
  EXPECT_EQ(cells[1].reduction.r, 12u);
  EXPECT_EQ(cells[2].reduction.sites, (std::vector<std::size_t>{6}));
  const auto sites = ablation_cells(base, "sites");
  EXPECT_EQ(sites[1].reduction.sites, (std::vector<std::size_t>{1, 3, 5, 7}));
}

TEST(MergeDemo, GoldenTrace) {
  std::ostringstream out;
  const RunConfig cfg = RunConfig::load((kData / "merge_demo.cfg").string());
  EXPECT_EQ(cmd_merge_demo(cfg, kData / "tokens8.txt", out), 0);
  EXPECT_EQ(out.str(), slurp(kData / "merge_demo.golden"));
}

TEST_F(CliTest, MergeDemoNoPairsAndOddLength) {
  const CliRun r0 = cli({"merge-demo", "--config", write_config("r = 0\n").string(), (kData / "tokens8.txt").string()});
  EXPECT_EQ(r0.code, 0);
  EXPECT_NE(r0.out.find("no pairs"), std::string::npos);
  const fs::path seven = dir / "seven.txt";
  std::ofstream(seven) << "1 0\n0 1\n1 1\n-1 0\n0 -1\n2 1\n1 2\n";
  const CliRun odd = cli({"merge-demo", "--config", write_config("r = 5\n").string(), seven.string()});
  EXPECT_EQ(odd.code, 0) << odd.err;
  EXPECT_NE(odd.out.find("group1: 0 2 4 6\ngroup2: 1 3 5\n"), std::string::npos);
  EXPECT_NE(odd.out.find("effective_r=3"), std::string::npos);
  EXPECT_NE(odd.out.find("output 4 tokens"), std::string::npos);
}

TEST_F(CliTest, MergeDemoBadTokenFile) {
  const fs::path bad = dir / "bad.txt";
  std::ofstream(bad) << "1 2\n3\n";
  EXPECT_EQ(cli({"merge-demo", bad.string()}).code, kExitData);
  std::ofstream(bad) << "1 x\n";
  EXPECT_EQ(cli({"merge-demo", bad.string()}).code, kExitData);
}

TEST_F(CliTest, TrainZeroEpochsWritesTrainingFreeReport) {
  const CliRun r = cli({"train", "--config", write_config(tiny() + "epochs = 0\n").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string report = slurp(dir / "out" / "train_report.csv");
  EXPECT_EQ(report.substr(0, report.find('\n')), "epoch,lr,train_loss,eval_acc,wall_seconds");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(dir / "out" / "model.ckpt"));
  // The resolved config reproduces the run.
  const RunConfig resolved = RunConfig::load((dir / "out" / "resolved.cfg").string());
  EXPECT_EQ(resolved.to_text(), slurp(dir / "out" / "resolved.cfg"));
}

TEST_F(CliTest, TrainThenEvalFromCheckpoint) {
  const fs::path cfg = write_config(tiny() + "epochs = 1\n");
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--seed", "3"}).code, 0);
  EXPECT_NE(slurp(dir / "out" / "resolved.cfg").find("seed = 3"), std::string::npos);
  const fs::path ev = write_config(tiny() + "checkpoint = " + (dir / "out" / "model.ckpt").string() + "\nr = 0\n",
                                   "eval.cfg");
  const CliRun r = cli({"eval", "--config", ev.string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "eval" / "eval.csv").find("r,ratio,accuracy\n0,"), std::string::npos);
}

TEST_F(CliTest, ExitCodesPartitionFailures) {
  const CliRun bad_key = cli({"train", "--config", write_config("epochz = 3\n").string()});
  EXPECT_EQ(bad_key.code, kExitConfig);
  EXPECT_NE(bad_key.err.find("epochz"), std::string::npos);
  EXPECT_EQ(cli({"train", "--config", (dir / "nope.cfg").string()}).code, kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  const CliRun missing = cli({"eval", "--config",
                           write_config(tiny() + "dataset = idx\neval_images = /nonexistent/a\neval_labels = /x\n")
                               .string()});
  EXPECT_EQ(missing.code, kExitData);
  const CliRun nan = cli({"train", "--config", write_config(tiny() + "epochs = 2\nlr_start = 1e200\nlr_end = 1e199\n").string()});
  EXPECT_EQ(nan.code, kExitNumeric) << nan.err;
  EXPECT_EQ(cli({"ablate", "--axis", "colour", "--config", write_config(tiny()).string()}).code, kExitConfig);
}

TEST_F(CliTest, BenchDefaultSweep) {
  const CliRun r = cli({"bench", "--config", write_config(tiny() + "dataset = none\n").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "out" / "bench.csv");
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "r,ratio,imgs_per_sec,speedup,accuracy,flops");
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].substr(0, 4), "0,0,");
  for (const auto& row : rows) EXPECT_NE(row.find(",,"), std::string::npos);

  ASSERT_EQ(cli({"bench", "--config", write_config(tiny()).string()}).code, 0);
  std::istringstream with(slurp(dir / "out" / "bench.csv"));
  std::getline(with, line);
  while (std::getline(with, line)) EXPECT_EQ(line.find(",,"), std::string::npos) << line;
}

TEST_F(CliTest, AblateWritesTable) {
  const CliRun r = cli({"ablate", "--axis", "distance", "--config",
                     write_config(tiny() + "epochs = 1\nbase_epochs = 1\n").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "out" / "ablate_distance.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "distance,training_free,retrained,delta");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("\nl1,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "base.ckpt"));
}

TEST_F(CliTest, SynthWritesLoadableIdx) {
  const CliRun r = cli({"synth", "--classes", "3", "--per-class", "2", "--seed", "4", "--image-size", "8", "--out",
                     (dir / "data").string(), "--eval-per-class", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset d = load_idx(dir / "data" / "train-images-idx3-ubyte", dir / "data" / "train-labels-idx1-ubyte");
  EXPECT_EQ(d.size(), 6u);
  EXPECT_EQ(d.num_classes, 3u);
  const Dataset e = load_idx(dir / "data" / "t10k-images-idx3-ubyte", dir / "data" / "t10k-labels-idx1-ubyte");
  EXPECT_EQ(e.size(), 3u);
  const fs::path cfg = write_config(tiny() + "dataset = idx\nepochs = 0\ntrain_images = " +
                                    (dir / "data" / "train-images-idx3-ubyte").string() + "\ntrain_labels = " +
                                    (dir / "data" / "train-labels-idx1-ubyte").string() + "\neval_images = " +
                                    (dir / "data" / "t10k-images-idx3-ubyte").string() + "\neval_labels = " +
                                    (dir / "data" / "t10k-labels-idx1-ubyte").string() + "\n");
  EXPECT_EQ(cli({"train", "--config", cfg.string()}).code, 0);
}
