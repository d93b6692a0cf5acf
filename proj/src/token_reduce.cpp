// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/token_reduce.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "meeto/error.hpp"

namespace meeto {

namespace {

template <typename E, std::size_t K>
E parse_enum(std::string_view s, const std::pair<std::string_view, E> (&table)[K], const char* what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::pair<std::string_view, Feature> kFeatures[] = {
    {"x", Feature::X}, {"c", Feature::C}, {"b", Feature::B}, {"delta", Feature::Delta}};
constexpr std::pair<std::string_view, Distance> kDistances[] = {
    {"cosine", Distance::Cosine}, {"l1", Distance::L1}, {"l2", Distance::L2}};
constexpr std::pair<std::string_view, MergeOp> kMergeOps[] = {
    {"sum", MergeOp::Sum}, {"mean", MergeOp::Mean}, {"max", MergeOp::Max}, {"min", MergeOp::Min}};
constexpr std::pair<std::string_view, Grouping> kGroupings[] = {
    {"odd_even", Grouping::OddEven}, {"front_behind", Grouping::FrontBehind}, {"random", Grouping::Random}};
constexpr std::pair<std::string_view, Selection> kSelections[] = {
    {"top_r", Selection::TopR}, {"random_r", Selection::RandomR}};
constexpr std::pair<std::string_view, Pairing> kPairings[] = {
    {"nearest", Pairing::Nearest}, {"random_pair", Pairing::RandomPair}};
constexpr std::pair<std::string_view, ReduceMode> kModes[] = {
    {"merge", ReduceMode::Merge}, {"prune", ReduceMode::Prune}};

template <typename E, std::size_t K>
std::string name_of(E v, const std::pair<std::string_view, E> (&table)[K]) {
  for (const auto& [name, value] : table)
    if (value == v) return std::string(name);
  return "?";
}

}  // namespace

std::string to_string(Feature v) { return name_of(v, kFeatures); }
std::string to_string(Distance v) { return name_of(v, kDistances); }
std::string to_string(MergeOp v) { return name_of(v, kMergeOps); }
std::string to_string(Grouping v) { return name_of(v, kGroupings); }
std::string to_string(Selection v) { return name_of(v, kSelections); }
std::string to_string(Pairing v) { return name_of(v, kPairings); }
std::string to_string(ReduceMode v) { return name_of(v, kModes); }

Feature parse_feature(std::string_view s) { return parse_enum(s, kFeatures, "feature"); }
Distance parse_distance(std::string_view s) { return parse_enum(s, kDistances, "distance"); }
MergeOp parse_merge_op(std::string_view s) { return parse_enum(s, kMergeOps, "merge_op"); }
Grouping parse_grouping(std::string_view s) { return parse_enum(s, kGroupings, "grouping"); }
Selection parse_selection(std::string_view s) { return parse_enum(s, kSelections, "selection"); }
Pairing parse_pairing(std::string_view s) { return parse_enum(s, kPairings, "pairing"); }
ReduceMode parse_reduce_mode(std::string_view s) { return parse_enum(s, kModes, "mode"); }

void ReductionConfig::validate(std::size_t depth) const {
  if (pair_rank < 1) throw ConfigError("pair_rank must be >= 1");
  if (!(shuffle_ratio >= 0.0 && shuffle_ratio <= 1.0)) throw ConfigError("shuffle_ratio must lie in [0,1]");
  std::vector<std::size_t> sorted = sites;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("reduction sites must be unique");
  }
  for (std::size_t s : sites) {
    if (s >= depth) throw ConfigError("reduction site " + std::to_string(s) + " out of range");
  }
}

bool ReductionConfig::is_site(std::size_t block) const {
  return std::find(sites.begin(), sites.end(), block) != sites.end();
}

std::vector<std::size_t> even_sites(std::size_t depth) {
  std::vector<std::size_t> out;
  for (std::size_t b = 2; b < depth; b += 2) out.push_back(b);
  return out;
}

TokenBatch TokenBatch::from_values(Tensor values) {
  if (values.rank() != 3) throw ShapeError("TokenBatch values must be [B,T,D]");
  TokenBatch tb;
  std::vector<std::size_t> pos(values.dim(1));
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  tb.positions.assign(values.dim(0), pos);
  tb.values = std::move(values);
  return tb;
}

void TokenBatch::validate() const {
  if (values.rank() != 3) throw ShapeError("TokenBatch values must be [B,T,D]");
  if (positions.size() != batch()) throw ShapeError("TokenBatch: one position list per sequence required");
  for (const auto& p : positions) {
    if (p.size() != length()) throw ShapeError("TokenBatch: position count != T");
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] <= p[i - 1]) throw std::invalid_argument("TokenBatch: positions not strictly increasing");
    }
  }
}

Groups make_groups(std::size_t length, Grouping strategy, std::mt19937_64& rng) {
  if (length < 2) throw std::invalid_argument("grouping needs at least 2 tokens");
  Groups g;
  const std::size_t half = (length + 1) / 2;
  switch (strategy) {
    case Grouping::OddEven:
      for (std::size_t i = 0; i < length; ++i) (i % 2 == 0 ? g.first : g.second).push_back(i);
      break;
    case Grouping::FrontBehind:
      for (std::size_t i = 0; i < length; ++i) (i < half ? g.first : g.second).push_back(i);
      break;
    case Grouping::Random: {
      std::vector<std::size_t> idx(length);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      g.first.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
      g.second.assign(idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
      std::sort(g.first.begin(), g.first.end());
      std::sort(g.second.begin(), g.second.end());
      break;
    }
  }
  return g;
}

Groups grouping(const TokenBatch& tokens, Grouping strategy, std::mt19937_64& rng) {
  return make_groups(tokens.length(), strategy, rng);
}

double distance(std::span<const double> u, std::span<const double> v, Distance metric) {
  if (u.size() != v.size() || u.empty()) throw ShapeError("distance: vectors must be equal-length and non-empty");
  switch (metric) {
    case Distance::Cosine: {
      double dot = 0.0, nu = 0.0, nv = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
      }
      if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine distance of a zero vector");
      const double cos = std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
      return 1.0 - cos;
    }
    case Distance::L1: {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += std::abs(u[i] - v[i]);
      return s;
    }
    case Distance::L2: {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      return std::sqrt(s);
    }
  }
  return 0.0;
}

Tensor pairwise_distance(const Tensor& g1, const Tensor& g2, Distance metric) {
  if (g1.rank() != 2 || g2.rank() != 2 || g1.dim(1) != g2.dim(1) || g1.dim(1) == 0) {
    throw ShapeError("pairwise_distance: " + shape_str(g1.shape()) + " vs " + shape_str(g2.shape()));
  }
  const std::size_t m = g1.dim(0), n = g2.dim(0), d = g1.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const auto u = g1.data().subspan(i * d, d);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = distance(u, g2.data().subspan(j * d, d), metric);
  }
  return out;
}

std::vector<TokenPair> select_pairs(const Tensor& dists, std::size_t r, std::size_t pair_rank,
                                    Selection selection, Pairing pairing, std::mt19937_64& rng) {
  if (dists.rank() != 2) throw ShapeError("select_pairs: distance matrix must be rank 2");
  const std::size_t m = dists.dim(0), n = dists.dim(1);
  if (r > std::min(m, n)) {
    throw std::invalid_argument("select_pairs: r=" + std::to_string(r) + " exceeds min(m,n)=" +
                                std::to_string(std::min(m, n)));
  }
  if (pair_rank < 1) throw std::invalid_argument("select_pairs: pair_rank must be >= 1");
  std::vector<TokenPair> pairs;
  if (r == 0) return pairs;

  // Partner preference of every row: ascending distance, lower column on ties.
  std::vector<std::vector<std::size_t>> prefs(m, std::vector<std::size_t>(n));
  for (std::size_t i = 0; i < m; ++i) {
    auto& p = prefs[i];
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::stable_sort(p.begin(), p.end(), [&](std::size_t a, std::size_t b) { return dists.at(i, a) < dists.at(i, b); });
  }
  const std::size_t start = std::min(pair_rank, n) - 1;
  std::vector<bool> col_used(n, false);

  // Next free preference at or after `from`; wraps back towards the closer
  // ranks once the tail is exhausted.
  auto next_free = [&](std::size_t i, std::size_t from) -> std::size_t {
    for (std::size_t k = from; k < n; ++k)
      if (!col_used[prefs[i][k]]) return k;
    for (std::size_t k = std::min(from, n); k-- > 0;)
      if (!col_used[prefs[i][k]]) return k;
    return n;
  };

  if (selection == Selection::TopR) {
    using Entry = std::tuple<double, std::size_t, std::size_t, std::size_t>;  // dist, col, row, rank
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    for (std::size_t i = 0; i < m; ++i) queue.emplace(dists.at(i, prefs[i][start]), prefs[i][start], i, start);
    while (pairs.size() < r && !queue.empty()) {
      auto [d, col, row, rank] = queue.top();
      queue.pop();
      if (!col_used[col]) {
        col_used[col] = true;
        pairs.push_back({row, col});
        continue;
      }
      const std::size_t k = next_free(row, rank + 1);
      if (k < n) queue.emplace(dists.at(row, prefs[row][k]), prefs[row][k], row, k);
    }
  } else {
    std::vector<std::size_t> rows(m);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t idx = 0; idx < r; ++idx) {
      const std::size_t row = rows[idx];
      const std::size_t k = next_free(row, start);
      col_used[prefs[row][k]] = true;
      pairs.push_back({row, prefs[row][k]});
    }
  }

  if (pairing == Pairing::RandomPair) {
    std::vector<std::size_t> cols;
    for (const auto& p : pairs) cols.push_back(p.second);
    std::shuffle(cols.begin(), cols.end(), rng);
    for (std::size_t k = 0; k < pairs.size(); ++k) pairs[k].second = cols[k];
  }
  return pairs;
}

void MergePlan::validate(std::size_t length) const {
  std::vector<int> seen(length, 0);
  auto mark = [&](std::size_t i) {
    if (i >= length) throw std::invalid_argument("merge plan index " + std::to_string(i) + " out of range");
    if (seen[i]++) throw std::invalid_argument("merge plan uses token " + std::to_string(i) + " twice");
  };
  for (const auto& p : pairs) {
    mark(p.first);
    mark(p.second);
  }
  for (std::size_t s : survivors) mark(s);
  if (2 * pairs.size() + survivors.size() != length) {
    throw std::invalid_argument("merge plan does not cover every token");
  }
}

std::string MergePlan::serialize() const {
  std::ostringstream os;
  for (const auto& p : pairs) os << "pair " << p.first << ' ' << p.second << '\n';
  for (std::size_t s : survivors) os << "survivor " << s << '\n';
  return os.str();
}

MergePlan MergePlan::parse(std::string_view text) {
  MergePlan plan;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "pair") {
      TokenPair p{};
      if (!(ls >> p.first >> p.second)) throw std::invalid_argument("bad plan line: " + line);
      plan.pairs.push_back(p);
    } else if (kind == "survivor") {
      std::size_t s = 0;
      if (!(ls >> s)) throw std::invalid_argument("bad plan line: " + line);
      plan.survivors.push_back(s);
    } else {
      throw std::invalid_argument("bad plan line: " + line);
    }
  }
  return plan;
}

MergePlan make_plan(const Groups& groups, std::span<const TokenPair> local_pairs, std::size_t length) {
  MergePlan plan;
  std::vector<bool> used(length, false);
  for (const auto& p : local_pairs) {
    const TokenPair seq{groups.first.at(p.first), groups.second.at(p.second)};
    if (used[seq.first] || used[seq.second]) throw std::invalid_argument("make_plan: overlapping pairs");
    used[seq.first] = used[seq.second] = true;
    plan.pairs.push_back(seq);
  }
  for (std::size_t i = 0; i < length; ++i)
    if (!used[i]) plan.survivors.push_back(i);
  return plan;
}

std::vector<MergedRow> reduction_layout(const MergePlan& plan, std::span<const std::size_t> positions,
                                        ReduceMode mode) {
  plan.validate(positions.size());
  std::vector<MergedRow> rows;
  rows.reserve(plan.pairs.size() + plan.survivors.size());
  for (std::size_t s : plan.survivors) rows.push_back({s, MergedRow::npos, positions[s]});
  for (const auto& p : plan.pairs) {
    if (mode == ReduceMode::Merge) {
      rows.push_back({p.first, p.second, std::min(positions[p.first], positions[p.second])});
    } else {
      rows.push_back({p.first, MergedRow::npos, positions[p.first]});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const MergedRow& a, const MergedRow& b) { return a.position < b.position; });
  return rows;
}

Var merge_rows(const Var& tokens, std::span<const MergedRow> rows, MergeOp op) {
  const Tensor& tv = tokens.value();
  if (tv.rank() != 2) throw ShapeError("merge_rows: tokens must be [T,D]");
  const std::size_t width = tv.dim(1);
  for (const auto& row : rows) {
    if (row.first >= tv.dim(0) || (row.second != MergedRow::npos && row.second >= tv.dim(0))) {
      throw std::invalid_argument("merge_rows: row index out of range");
    }
  }
  Tensor out({rows.size(), width});
  apply_layout<double>(rows, tv.data().data(), width, op, out.data().data());
  std::vector<MergedRow> layout(rows.begin(), rows.end());
  return tokens.tape()->record(
      "merge_rows", std::move(out), {tokens},
      [tokens, layout = std::move(layout), width, op](const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& tv = tokens.value();
        Tensor& gx = *gin[0];
        for (std::size_t k = 0; k < layout.size(); ++k) {
          const MergedRow& row = layout[k];
          for (std::size_t j = 0; j < width; ++j) {
            const double gk = g[k * width + j];
            const std::size_t ia = row.first * width + j;
            if (row.second == MergedRow::npos) {
              gx[ia] += gk;
              continue;
            }
            const std::size_t ib = row.second * width + j;
            switch (op) {
              case MergeOp::Sum:
                gx[ia] += gk;
                gx[ib] += gk;
                break;
              case MergeOp::Mean:
                gx[ia] += 0.5 * gk;
                gx[ib] += 0.5 * gk;
                break;
              case MergeOp::Max:
                gx[tv[ia] >= tv[ib] ? ia : ib] += gk;
                break;
              case MergeOp::Min:
                gx[tv[ia] <= tv[ib] ? ia : ib] += gk;
                break;
            }
          }
        }
      });
}

namespace {

TokenBatch reduce_batch(const TokenBatch& tokens, std::span<const MergePlan> plans, MergeOp op, ReduceMode mode) {
  tokens.validate();
  const std::size_t B = tokens.batch(), T = tokens.length(), D = tokens.width();
  if (plans.size() != B) throw std::invalid_argument("one merge plan per sequence required");
  std::size_t out_len = 0;
  for (std::size_t b = 0; b < B; ++b) {
    plans[b].validate(T);
    const std::size_t len = T - plans[b].pairs.size();
    if (b > 0 && len != out_len) throw std::invalid_argument("plans must remove equally many tokens per sequence");
    out_len = len;
  }
  TokenBatch out;
  out.values = Tensor({B, out_len, D});
  out.positions.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto rows = reduction_layout(plans[b], tokens.positions[b], mode);
    apply_layout<double>(rows, tokens.values.data().data() + b * T * D, D, op,
                         out.values.data().data() + b * out_len * D);
    for (const auto& row : rows) out.positions[b].push_back(row.position);
  }
  return out;
}

}  // namespace

TokenBatch merge(const TokenBatch& tokens, std::span<const MergePlan> plans, MergeOp op) {
  return reduce_batch(tokens, plans, op, ReduceMode::Merge);
}

TokenBatch prune(const TokenBatch& tokens, std::span<const MergePlan> plans) {
  return reduce_batch(tokens, plans, MergeOp::Sum, ReduceMode::Prune);
}

std::vector<std::size_t> shuffle_permutation(std::size_t length, double shuffle_ratio, std::mt19937_64& rng) {
  if (!(shuffle_ratio >= 0.0 && shuffle_ratio <= 1.0)) throw std::invalid_argument("shuffle_ratio must lie in [0,1]");
  std::vector<std::size_t> perm(length);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const auto count = static_cast<std::size_t>(std::floor(shuffle_ratio * static_cast<double>(length)));
  if (count < 2) return perm;
  std::vector<std::size_t> slots;
  if (count == length) {
    slots = perm;
  } else {
    std::vector<std::size_t> all = perm;
    std::shuffle(all.begin(), all.end(), rng);
    slots.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(slots.begin(), slots.end());
  }
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < count; k += 2) order.push_back(slots[k]);
  for (std::size_t k = 1; k < count; k += 2) order.push_back(slots[k]);
  for (std::size_t k = 0; k < count; ++k) perm[slots[k]] = order[k];
  return perm;
}

TokenBatch shuffle_tokens(const TokenBatch& tokens, double shuffle_ratio, std::mt19937_64& rng) {
  tokens.validate();
  const std::size_t B = tokens.batch(), T = tokens.length(), D = tokens.width();
  TokenBatch out = tokens;
  for (std::size_t b = 0; b < B; ++b) {
    const auto perm = shuffle_permutation(T, shuffle_ratio, rng);
    const double* in = tokens.values.data().data() + b * T * D;
    double* o = out.values.data().data() + b * T * D;
    for (std::size_t i = 0; i < T; ++i) std::copy(in + perm[i] * D, in + (perm[i] + 1) * D, o + i * D);
  }
  return out;
}

Tensor extract_feature(const BlockOutputs& block, Feature choice) {
  switch (choice) {
    case Feature::X:
      return block.out.value();
    case Feature::C:
      return block.ssm.value();
    case Feature::B: {
      const Tensor& bf = block.fwd.b.value();
      const Tensor& bb = block.bwd.b.value();
      const std::size_t T = bf.dim(0), N = bf.dim(1);
      Tensor out({T, 2 * N});
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
          out.at(t, n) = bf.at(t, n);
          out.at(t, N + n) = bb.at(t, n);
        }
      }
      return out;
    }
    case Feature::Delta: {
      Tensor out = block.fwd.delta.value();
      const Tensor& db = block.bwd.delta.value();
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 0.5 * (out[i] + db[i]);
      return out;
    }
  }
  return {};
}

std::size_t effective_r(std::size_t length, std::size_t r) { return std::min(r, length / 2); }

TokenSchedule simulate_schedule(std::size_t initial, std::span<const std::size_t> sites, std::size_t r,
                                std::size_t depth) {
  TokenSchedule s;
  std::size_t t = initial;
  for (std::size_t b = 0; b < depth; ++b) {
    s.entering.push_back(t);
    if (std::find(sites.begin(), sites.end(), b) != sites.end()) t -= effective_r(t, r);
    s.leaving.push_back(t);
  }
  return s;
}

double reduction_ratio(std::size_t initial, std::span<const std::size_t> sites, std::size_t r,
                       std::size_t depth) {
  if (initial == 0) throw std::invalid_argument("reduction_ratio: initial token count must be >= 1");
  if (depth == 0) return 0.0;
  const TokenSchedule s = simulate_schedule(initial, sites, r, depth);
  const double total = std::accumulate(s.leaving.begin(), s.leaving.end(), 0.0);
  return 1.0 - total / static_cast<double>(depth) / static_cast<double>(initial);
}

MergePlan plan_reduction(const Tensor& features, const ReductionConfig& cfg, std::mt19937_64& rng) {
  const std::size_t T = features.dim(0);
  const std::size_t r = effective_r(T, cfg.r);
  if (r == 0) {
    MergePlan plan;
    plan.survivors.resize(T);
    std::iota(plan.survivors.begin(), plan.survivors.end(), std::size_t{0});
    return plan;
  }
  const Groups groups = make_groups(T, cfg.grouping, rng);
  const std::size_t F = features.dim(1);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    Tensor g({idx.size(), F});
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * F), F,
                  g.data().begin() + static_cast<std::ptrdiff_t>(k * F));
    return g;
  };
  const Tensor dists = pairwise_distance(gather(groups.first), gather(groups.second), cfg.distance);
  const auto local = select_pairs(dists, r, cfg.pair_rank, cfg.selection, cfg.pairing, rng);
  return make_plan(groups, local, T);
}

}  // namespace meeto
