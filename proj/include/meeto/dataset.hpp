// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "meeto/tensor.hpp"

namespace meeto {

/// Grayscale image classification data: images [N,H,W,1] in [0,1].
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
  std::size_t channels() const { return images.dim(3); }

  /// Images of the selected samples, [k,H,W,C].
  Tensor gather_images(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> gather_labels(std::span<const std::size_t> indices) const;
  Dataset select(std::span<const std::size_t> indices) const;

  /// Throws DataError on inconsistent fields.
  void validate() const;
};

/// Reads big-endian IDX files (0x00000803 u8 images, 0x00000801 u8 labels).
/// Pixels are scaled by 1/255. Throws DataError on bad magic, truncated
/// payloads or count mismatch.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes pixels as round(255 v) after clamping to [0,1].
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Deterministic class-conditional images: class k is an oriented bar plus an
/// offset blob, with Gaussian pixel noise of standard deviation `noise`,
/// clamped to [0,1]. Samples are ordered class-major.
Dataset synth_dataset(std::size_t n_per_class, std::size_t num_classes, std::size_t image_size,
                      std::uint64_t seed, double noise = 0.1);

/// Noise-free template of class `k`, [H,W].
Tensor class_template(std::size_t k, std::size_t num_classes, std::size_t image_size);

/// Class-stratified sample of floor(fraction * N) items in original order.
/// fraction == 1 returns the dataset unchanged.
Dataset subset(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace meeto
