// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meeto/ssm.hpp"
#include "meeto/tape.hpp"
#include "meeto/tensor.hpp"

namespace meeto {

enum class Feature { X, C, B, Delta };
enum class Distance { Cosine, L1, L2 };
enum class MergeOp { Sum, Mean, Max, Min };
enum class Grouping { OddEven, FrontBehind, Random };
enum class Selection { TopR, RandomR };
enum class Pairing { Nearest, RandomPair };
enum class ReduceMode { Merge, Prune };

std::string to_string(Feature v);
std::string to_string(Distance v);
std::string to_string(MergeOp v);
std::string to_string(Grouping v);
std::string to_string(Selection v);
std::string to_string(Pairing v);
std::string to_string(ReduceMode v);

// Parsers accept the to_string spellings and throw ConfigError otherwise.
Feature parse_feature(std::string_view s);
Distance parse_distance(std::string_view s);
MergeOp parse_merge_op(std::string_view s);
Grouping parse_grouping(std::string_view s);
Selection parse_selection(std::string_view s);
Pairing parse_pairing(std::string_view s);
ReduceMode parse_reduce_mode(std::string_view s);

/// Token-reduction policy applied after each site block.
struct ReductionConfig {
  std::size_t r = 0;                // tokens removed per site (before capping)
  std::vector<std::size_t> sites;   // block indices followed by a reduction
  Feature feature = Feature::X;     // what scores similarity
  Distance distance = Distance::Cosine;
  MergeOp merge_op = MergeOp::Sum;
  Grouping grouping = Grouping::OddEven;
  std::size_t pair_rank = 1;        // merge with the n-th closest partner
  Selection selection = Selection::TopR;
  Pairing pairing = Pairing::Nearest;
  double shuffle_ratio = 0.0;
  ReduceMode mode = ReduceMode::Merge;

  /// Throws ConfigError on an invalid field; sites must be < depth and unique.
  void validate(std::size_t depth) const;
  bool is_site(std::size_t block) const;
};

/// Even blocks except block 0: {2, 4, ...} below `depth`.
std::vector<std::size_t> even_sites(std::size_t depth);

/// values [B,T,D] plus each sequence's original time indices.
struct TokenBatch {
  Tensor values;
  std::vector<std::vector<std::size_t>> positions;

  std::size_t batch() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }

  /// Batch with positions 0..T-1 for every sequence.
  static TokenBatch from_values(Tensor values);
  /// Throws if shapes disagree or positions are not strictly increasing.
  void validate() const;
};

struct Groups {
  std::vector<std::size_t> first;   // group 1, ascending
  std::vector<std::size_t> second;  // group 2, ascending
};

/// Bipartite split of sequence indices [0, T). Group 1 receives the extra
/// element when T is odd. `rng` is only consulted for Grouping::Random.
Groups make_groups(std::size_t length, Grouping strategy, std::mt19937_64& rng);
Groups grouping(const TokenBatch& tokens, Grouping strategy, std::mt19937_64& rng);

/// All cross-group distances, g1 [m,D] x g2 [n,D] -> [m,n].
Tensor pairwise_distance(const Tensor& g1, const Tensor& g2, Distance metric);
double distance(std::span<const double> u, std::span<const double> v, Distance metric);

/// (first, second): group-local indices from select_pairs, sequence indices
/// inside a MergePlan.
struct TokenPair {
  std::size_t first;
  std::size_t second;
  bool operator==(const TokenPair&) const = default;
};

/// Picks up to r disjoint (row, column) pairs from dists [m,n].
///
/// TopR/Nearest: every row proposes its pair_rank-th closest column; the r
/// smallest proposals win in ascending distance, and a row whose column is
/// already taken falls back to its next-best free column. Equal distances go
/// to the lower column index, then the lower row. RandomR draws the rows
/// uniformly instead. RandomPair shuffles the columns among the chosen rows.
std::vector<TokenPair> select_pairs(const Tensor& dists, std::size_t r, std::size_t pair_rank,
                                    Selection selection, Pairing pairing, std::mt19937_64& rng);

struct MergePlan {
  std::vector<TokenPair> pairs;         // sequence indices, first from group 1
  std::vector<std::size_t> survivors;   // indices untouched by any pair, ascending

  /// Throws std::invalid_argument unless pairs and survivors partition [0, length).
  void validate(std::size_t length) const;
  /// Lines of `pair i j` followed by `survivor k`.
  std::string serialize() const;
  static MergePlan parse(std::string_view text);
  bool operator==(const MergePlan&) const = default;
};

MergePlan make_plan(const Groups& groups, std::span<const TokenPair> local_pairs, std::size_t length);

/// One output token: `second` is npos for a copied survivor.
struct MergedRow {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t first;
  std::size_t second;
  std::size_t position;
};

/// Output rows sorted by original position. Merge fuses each pair into the
/// earlier position; Prune keeps the group-1 member and drops the other.
std::vector<MergedRow> reduction_layout(const MergePlan& plan, std::span<const std::size_t> positions,
                                        ReduceMode mode);

/// Writes rows.size() x width values of `in` combined per `rows` into `out`.
template <typename Scalar>
void apply_layout(std::span<const MergedRow> rows, const Scalar* in, std::size_t width, MergeOp op,
                  Scalar* out) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Scalar* a = in + rows[k].first * width;
    Scalar* o = out + k * width;
    if (rows[k].second == MergedRow::npos) {
      for (std::size_t j = 0; j < width; ++j) o[j] = a[j];
      continue;
    }
    const Scalar* b = in + rows[k].second * width;
    for (std::size_t j = 0; j < width; ++j) {
      switch (op) {
        case MergeOp::Sum: o[j] = a[j] + b[j]; break;
        case MergeOp::Mean: o[j] = (a[j] + b[j]) / Scalar(2); break;
        case MergeOp::Max: o[j] = a[j] >= b[j] ? a[j] : b[j]; break;
        case MergeOp::Min: o[j] = a[j] <= b[j] ? a[j] : b[j]; break;
      }
    }
  }
}

/// Differentiable row combination of tokens [T,D]. Max/Min send the gradient
/// to the selected element (the first operand on ties).
Var merge_rows(const Var& tokens, std::span<const MergedRow> rows, MergeOp op);

/// One plan per batch element; outputs are re-sorted by position.
TokenBatch merge(const TokenBatch& tokens, std::span<const MergePlan> plans, MergeOp op);
TokenBatch prune(const TokenBatch& tokens, std::span<const MergePlan> plans);

/// Permutation p with out[i] = in[p[i]]: floor(ratio*T) uniformly chosen slots
/// are reordered evens-then-odds of the chosen subsequence.
std::vector<std::size_t> shuffle_permutation(std::size_t length, double shuffle_ratio, std::mt19937_64& rng);
/// Permutes token values; positions stay with their slots.
TokenBatch shuffle_tokens(const TokenBatch& tokens, double shuffle_ratio, std::mt19937_64& rng);

/// Per-token similarity features from one block's intermediates, [T,F].
/// X is the token stream being reduced, C the summed scan outputs, B the
/// concatenated per-direction B_t, Delta the mean step size of both scans.
Tensor extract_feature(const BlockOutputs& block, Feature choice);

std::size_t effective_r(std::size_t length, std::size_t r);

/// Token counts through a block schedule with reduction after each site.
struct TokenSchedule {
  std::vector<std::size_t> entering;  // tokens entering each block
  std::vector<std::size_t> leaving;   // tokens leaving each block (after any reduction)
};

TokenSchedule simulate_schedule(std::size_t initial, std::span<const std::size_t> sites, std::size_t r,
                                std::size_t depth);

/// 1 - mean(tokens leaving each block) / initial.
double reduction_ratio(std::size_t initial, std::span<const std::size_t> sites, std::size_t r,
                       std::size_t depth);

/// Decisions taken at one site for one sequence.
struct SiteDecision {
  std::vector<std::size_t> shuffle;  // empty when no shuffle was applied
  MergePlan plan;
};

/// Grouping, distance and pair selection for one sequence's features [T,F]
/// under `cfg`, with r capped by effective_r.
MergePlan plan_reduction(const Tensor& features, const ReductionConfig& cfg, std::mt19937_64& rng);

}  // namespace meeto
