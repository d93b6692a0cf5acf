// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "meeto/dataset.hpp"
#include "meeto/error.hpp"

using namespace meeto;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("meeto_ds_" + name); }

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> cat(std::initializer_list<std::vector<unsigned char>> parts) {
  std::vector<unsigned char> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

TEST(Idx, TwoImageFixture) {
  const fs::path img = temp_file("img"), lab = temp_file("lab");
  write_bytes(img, cat({be32(0x803), be32(2), be32(2), be32(2), {0, 255, 51, 102, 10, 20, 30, 40}}));
  write_bytes(lab, cat({be32(0x801), be32(2), {7, 3}}));
  const Dataset d = load_idx(img, lab);
  EXPECT_EQ(d.images.shape(), (Shape{2, 2, 2, 1}));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{7, 3}));
  EXPECT_EQ(d.num_classes, 8u);
  EXPECT_EQ(d.images[1], 1.0);
  EXPECT_DOUBLE_EQ(d.images[2], 51.0 / 255.0);
  EXPECT_DOUBLE_EQ(d.images[7], 40.0 / 255.0);
  fs::remove(img);
  fs::remove(lab);
}

TEST(Idx, BadMagicTruncationAndMismatch) {
  const fs::path img = temp_file("img2"), lab = temp_file("lab2");
  write_bytes(img, cat({be32(0xDEADBEEF), be32(1), be32(1), be32(1), {0}}));
  write_bytes(lab, cat({be32(0x801), be32(1), {0}}));
  EXPECT_THROW(load_idx(img, lab), DataError);
  write_bytes(img, cat({be32(0x803), be32(2), be32(2), be32(2), {1, 2, 3}}));
  EXPECT_THROW(load_idx(img, lab), DataError);
  write_bytes(img, cat({be32(0x803), be32(2), be32(1), be32(1), {1, 2}}));
  EXPECT_THROW(load_idx(img, lab), DataError);  // 2 images, 1 label
  write_bytes(lab, cat({be32(0x803), be32(2), {0, 1}}));
  EXPECT_THROW(load_idx(img, lab), DataError);  // label file with image magic
  EXPECT_THROW(load_idx(temp_file("missing"), lab), DataError);
  fs::remove(img);
  fs::remove(lab);
}

TEST(Idx, CanonicalHeader) {
  const fs::path img = temp_file("img3"), lab = temp_file("lab3");
  std::vector<unsigned char> pixels(10000u * 28u * 28u, 0);
  pixels[28 * 28 + 5] = 255;
  write_bytes(img, cat({be32(0x803), be32(10000), be32(28), be32(28), pixels}));
  std::vector<unsigned char> labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<unsigned char>(i % 10);
  write_bytes(lab, cat({be32(0x801), be32(10000), labels}));
  const Dataset d = load_idx(img, lab);
  EXPECT_EQ(d.images.shape(), (Shape{10000, 28, 28, 1}));
  EXPECT_EQ(d.num_classes, 10u);
  EXPECT_EQ(d.images[28 * 28 + 5], 1.0);
  EXPECT_EQ(d.labels[9999], 9u);
  fs::remove(img);
  fs::remove(lab);
}

TEST(Idx, WriteReadRoundTripIsBitExact) {
  const Dataset d = synth_dataset(3, 4, 12, 9);
  const fs::path img = temp_file("img4"), lab = temp_file("lab4"), img2 = temp_file("img5"), lab2 = temp_file("lab5");
  write_idx(d, img, lab);
  const Dataset back = load_idx(img, lab);
  EXPECT_EQ(back.labels, d.labels);
  for (std::size_t i = 0; i < d.images.numel(); ++i)
    EXPECT_EQ(back.images[i], std::round(d.images[i] * 255.0) / 255.0);
  write_idx(back, img2, lab2);
  EXPECT_EQ(read_bytes(img), read_bytes(img2));
  EXPECT_EQ(read_bytes(lab), read_bytes(lab2));
  EXPECT_EQ(load_idx(img2, lab2).images, back.images);
  for (const auto& p : {img, lab, img2, lab2}) fs::remove(p);
}

TEST(Synth, DeterministicClassMajorAndBounded) {
  const Dataset a = synth_dataset(5, 4, 16, 3), b = synth_dataset(5, 4, 16, 3), c = synth_dataset(5, 4, 16, 4);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, c.images);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_EQ(a.num_classes, 4u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.labels[i], i / 5);
  for (double v : a.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NO_THROW(a.validate());
}

TEST(Synth, TemplatesDifferAndNearestTemplateClassifies) {
  const std::size_t K = 10, S = 28;
  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < K; ++k) templates.push_back(class_template(k, K, S));
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) EXPECT_GT(max_abs_diff(templates[i], templates[j]), 0.5);
  const Dataset d = synth_dataset(20, K, S, 11, 0.25);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < K; ++k) {
      double dist = 0;
      for (std::size_t p = 0; p < S * S; ++p) {
        const double e = d.images[n * S * S + p] - templates[k][p];
        dist += e * e;
      }
      if (dist < best_d) best_d = dist, best = k;
    }
    correct += best == d.labels[n];
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(d.size()), 0.9);
}

TEST(Subset, StratifiedAndOrdered) {
  const Dataset d = synth_dataset(10, 3, 8, 1);
  const Dataset s = subset(d, 0.5, 2);
  EXPECT_EQ(s.size(), 15u);
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t l : s.labels) ++counts[l];
  for (const auto& [k, n] : counts) EXPECT_EQ(n, 5u);
  EXPECT_TRUE(std::is_sorted(s.labels.begin(), s.labels.end()));
  const Dataset odd = subset(d, 0.35, 3);
  EXPECT_EQ(odd.size(), 10u);
  std::map<std::size_t, std::size_t> c2;
  for (std::size_t l : odd.labels) ++c2[l];
  for (const auto& [k, n] : c2) EXPECT_TRUE(n == 3 || n == 4);
  EXPECT_EQ(subset(d, 1.0, 5).images, d.images);
  EXPECT_EQ(subset(d, 0.5, 2).images, s.images);
  EXPECT_THROW(subset(d, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(subset(d, 0.01, 1), std::invalid_argument);
}

TEST(DatasetOps, GatherAndValidate) {
  const Dataset d = synth_dataset(2, 2, 4, 1);
  const std::vector<std::size_t> idx{3, 0};
  const Tensor g = d.gather_images(idx);
  EXPECT_EQ(g.shape(), (Shape{2, 4, 4, 1}));
  EXPECT_EQ(g[0], d.images[3 * 16]);
  EXPECT_EQ(d.gather_labels(idx), (std::vector<std::size_t>{1, 0}));
  Dataset bad = d;
  bad.labels[0] = 5;
  EXPECT_THROW(bad.validate(), DataError);
}
