// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "meeto/error.hpp"

namespace meeto {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t count, const std::filesystem::path& path) {
  std::vector<unsigned char> buf(count);
  if (count && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count))) {
    throw DataError("truncated IDX payload in " + path.string());
  }
  return buf;
}

}  // namespace

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
  const std::size_t h = height(), w = width(), c = channels(), stride = h * w * c;
  Tensor out({indices.size(), h, w, c});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * stride), stride,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * stride));
  }
  return out;
}

std::vector<std::size_t> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  return {gather_images(indices), gather_labels(indices), num_classes};
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be [N,H,W,C]");
  if (images.dim(0) != labels.size()) throw DataError("image/label count mismatch");
  for (std::size_t l : labels)
    if (l >= num_classes) throw DataError("label " + std::to_string(l) + " >= num_classes");
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  auto img_in = open_in(images_path);
  if (const auto magic = read_be32(img_in, images_path); magic != kImageMagic) {
    throw DataError("bad IDX image magic in " + images_path.string());
  }
  const std::size_t n = read_be32(img_in, images_path);
  const std::size_t h = read_be32(img_in, images_path);
  const std::size_t w = read_be32(img_in, images_path);
  const auto pixels = read_payload(img_in, n * h * w, images_path);

  auto lab_in = open_in(labels_path);
  if (const auto magic = read_be32(lab_in, labels_path); magic != kLabelMagic) {
    throw DataError("bad IDX label magic in " + labels_path.string());
  }
  const std::size_t n_labels = read_be32(lab_in, labels_path);
  if (n_labels != n) {
    throw DataError("image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(n_labels));
  }
  const auto raw_labels = read_payload(lab_in, n, labels_path);

  Dataset ds;
  ds.images = Tensor({n, h, w, 1});
  for (std::size_t i = 0; i < pixels.size(); ++i) ds.images[i] = pixels[i] / 255.0;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  data.validate();
  if (data.channels() != 1) throw DataError("IDX export supports single-channel images only");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot write " + images_path.string());
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(data.height()));
  write_be32(img, static_cast<std::uint32_t>(data.width()));
  std::vector<char> bytes(data.images.numel());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(data.images[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot write " + labels_path.string());
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t l : data.labels) {
    if (l > 255) throw DataError("IDX labels must fit in a byte");
    lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
  if (!img || !lab) throw DataError("failed writing IDX files");
}

Tensor class_template(std::size_t k, std::size_t num_classes, std::size_t image_size) {
  const double s = static_cast<double>(image_size);
  const double center = (s - 1.0) / 2.0;
  const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
  const double phi = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(num_classes);
  const double bar_w = s / 14.0;
  const double bar_len = 0.4 * s;
  const double blob_r = 0.3 * s;
  const double blob_sigma = s / 10.0;
  const double bx = center + blob_r * std::cos(phi), by = center + blob_r * std::sin(phi);
  Tensor t({image_size, image_size});
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const double dx = static_cast<double>(x) - center, dy = static_cast<double>(y) - center;
      const double along = dx * std::cos(theta) + dy * std::sin(theta);
      const double across = -dx * std::sin(theta) + dy * std::cos(theta);
      double bar = std::exp(-across * across / (2.0 * bar_w * bar_w));
      if (std::abs(along) > bar_len) bar *= std::exp(-(std::abs(along) - bar_len) * 2.0);
      const double ex = static_cast<double>(x) - bx, ey = static_cast<double>(y) - by;
      const double blob = std::exp(-(ex * ex + ey * ey) / (2.0 * blob_sigma * blob_sigma));
      t.at(y, x) = std::clamp(std::max(bar, blob), 0.0, 1.0);
    }
  }
  return t;
}

Dataset synth_dataset(std::size_t n_per_class, std::size_t num_classes, std::size_t image_size,
                      std::uint64_t seed, double noise) {
  if (n_per_class == 0 || num_classes == 0 || image_size == 0) {
    throw std::invalid_argument("synth_dataset: sizes must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t px = image_size * image_size;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.images = Tensor({n_per_class * num_classes, image_size, image_size, 1});
  for (std::size_t k = 0; k < num_classes; ++k) {
    const Tensor tmpl = class_template(k, num_classes, image_size);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::size_t idx = k * n_per_class + i;
      double* dst = ds.images.data().data() + idx * px;
      for (std::size_t p = 0; p < px; ++p) dst[p] = std::clamp(tmpl[p] + noise * gauss(rng), 0.0, 1.0);
      ds.labels.push_back(k);
    }
  }
  return ds;
}

Dataset subset(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subset fraction must lie in (0,1]");
  if (fraction == 1.0) return data;
  const std::size_t n = data.size();
  const auto total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (total == 0) throw std::invalid_argument("subset fraction selects no samples");

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[data.labels[i]].push_back(i);

  // Largest-remainder apportionment keeps every class within one item of its share.
  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    const double exact = fraction * static_cast<double>(by_class[k].size());
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[k];
    remainders.emplace_back(exact - static_cast<double>(quota[k]), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto members = by_class[k];
    std::shuffle(members.begin(), members.end(), rng);
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[k]));
  }
  std::sort(chosen.begin(), chosen.end());
  return data.select(chosen);
}

}  // namespace meeto
