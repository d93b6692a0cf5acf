// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meeto/ssm.hpp"
#include "meeto/tape.hpp"
#include "meeto/tensor.hpp"
#include "meeto/token_reduce.hpp"

namespace meeto {

struct ModelConfig {
  std::size_t image_size = 28;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t depth = 8;
  std::size_t d_model = 64;
  std::size_t d_inner = 32;
  std::size_t d_state = 8;
  std::size_t num_classes = 10;
  ReductionConfig reduction{.sites = {2, 4, 6}};

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// key=value form of a model configuration (including its reduction policy).
KeyValues model_config_entries(const ModelConfig& cfg);
/// Applies one model key; returns false for keys it does not own.
/// Throws ConfigError on malformed values.
bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);

/// Patch embedding, a stack of bidirectional SSM blocks with reductions after
/// the configured sites, mean pooling, final norm and a linear head.
struct Model {
  ModelConfig config;
  Parameter patch_proj;  // [patch_dim, d_model]
  Parameter pos_embed;   // [T0, d_model]
  std::vector<SsmBlockParams> blocks;
  Parameter norm_f;      // [d_model]
  Parameter head;        // [d_model, num_classes]

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
};

/// Same weights, different reduction policy.
Model with_reduction(const Model& model, const ReductionConfig& reduction);

/// Decisions taken at every site, per sample, so a forward pass can be
/// replayed with identical shuffles and merge plans.
using ReductionLog = std::vector<std::vector<SiteDecision>>;

struct ForwardOptions {
  std::uint64_t seed = 0;          // randomness for shuffles and random variants
  std::size_t first_sample = 0;    // global index of images[0], keys per-sample randomness
  ReductionLog* record = nullptr;
  const ReductionLog* replay = nullptr;
};

struct ForwardResult {
  Var logits;                       // [B, num_classes]
  std::vector<std::size_t> trace;   // tokens entering each block
};

/// Differentiable forward pass over images [B,H,W,C].
ForwardResult forward(Tape& tape, Model& model, const Tensor& images, const ForwardOptions& opts = {});

/// Rows of the patch grid for one image: [T0, patch_dim].
Tensor extract_patches(const Tensor& images, std::size_t index, std::size_t patch_size);

/// Similarity feature at a site block for one image, [T,F]. Throws
/// std::invalid_argument when `block` is not a reduction site.
Tensor site_feature(Model& model, const Tensor& image, std::size_t block, Feature choice);

/// Tape-free forward pass in Scalar precision. The float instantiation is the
/// benchmark path; the double one evaluates and serves as an independent
/// route for gradient checks.
template <typename Scalar>
class InferenceModel {
 public:
  explicit InferenceModel(const Model& model);

  struct Output {
    std::vector<Scalar> logits;       // [B * num_classes]
    std::vector<std::size_t> trace;
  };

  /// images: B * H * W * C values.
  Output forward(std::span<const Scalar> images, std::size_t batch, const ForwardOptions& opts = {}) const;

  const ModelConfig& config() const { return config_; }

 private:
  struct Direction {
    std::vector<Scalar> a;  // -exp(a_log) [D,N]
    std::vector<Scalar> w_b, w_c, w_delta;
    Scalar delta_bias;
  };
  struct Block {
    std::vector<Scalar> norm, w_in, w_gate, w_out;
    Direction fwd, bwd;
  };

  ModelConfig config_;
  std::vector<Scalar> patch_proj_, pos_embed_, norm_f_, head_;
  std::vector<Block> blocks_;
};

extern template class InferenceModel<float>;
extern template class InferenceModel<double>;

/// Logits [B, num_classes] through the double-precision inference path.
Tensor predict(const Model& model, const Tensor& images, const ForwardOptions& opts = {});

/// Multiply-adds of all SSM blocks for one image, using the token count that
/// enters each block under the configured reduction schedule.
double count_flops(const ModelConfig& cfg);

/// Binary checkpoint: "MEETO1", u64 length + key=value lines, then per tensor
/// u64 name length, name, u64 rank, u64 dims, f64 payload (little-endian).
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace meeto
