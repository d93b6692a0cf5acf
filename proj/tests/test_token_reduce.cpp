// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "meeto/error.hpp"
#include "meeto/token_reduce.hpp"
#include "oracles.hpp"

using namespace meeto;

TEST(Names, RoundTrip) {
  for (Feature f : {Feature::X, Feature::C, Feature::B, Feature::Delta}) EXPECT_EQ(parse_feature(to_string(f)), f);
  for (Distance d : {Distance::Cosine, Distance::L1, Distance::L2}) EXPECT_EQ(parse_distance(to_string(d)), d);
  for (MergeOp o : {MergeOp::Sum, MergeOp::Mean, MergeOp::Max, MergeOp::Min})
    EXPECT_EQ(parse_merge_op(to_string(o)), o);
  for (Grouping g : {Grouping::OddEven, Grouping::FrontBehind, Grouping::Random})
    EXPECT_EQ(parse_grouping(to_string(g)), g);
  EXPECT_EQ(parse_selection("random_r"), Selection::RandomR);
  EXPECT_EQ(parse_pairing("random_pair"), Pairing::RandomPair);
  EXPECT_EQ(parse_reduce_mode("prune"), ReduceMode::Prune);
  EXPECT_THROW(parse_distance("cos"), ConfigError);
}

TEST(ReductionConfig, Validation) {
  ReductionConfig c;
  c.sites = {2, 4};
  EXPECT_NO_THROW(c.validate(8));
  c.sites = {2, 8};
  EXPECT_THROW(c.validate(8), ConfigError);
  c.sites = {2, 2};
  EXPECT_THROW(c.validate(8), ConfigError);
  c.sites = {};
  c.shuffle_ratio = 1.5;
  EXPECT_THROW(c.validate(8), ConfigError);
  c.shuffle_ratio = 0;
  c.pair_rank = 0;
  EXPECT_THROW(c.validate(8), ConfigError);
  EXPECT_EQ(even_sites(8), (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(even_sites(24).size(), 11u);
}

TEST(Groups, OddEvenAndFrontBehind) {
  std::mt19937_64 rng(0);
  const Groups oe = make_groups(7, Grouping::OddEven, rng);
  EXPECT_EQ(oe.first, (std::vector<std::size_t>{0, 2, 4, 6}));
  EXPECT_EQ(oe.second, (std::vector<std::size_t>{1, 3, 5}));
  const Groups fb = make_groups(7, Grouping::FrontBehind, rng);
  EXPECT_EQ(fb.first, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(fb.second, (std::vector<std::size_t>{4, 5, 6}));
  const Groups even = make_groups(6, Grouping::FrontBehind, rng);
  EXPECT_EQ(even.first.size(), 3u);
  EXPECT_THROW(make_groups(1, Grouping::OddEven, rng), std::invalid_argument);
}

TEST(Groups, RandomPartitionIsSeeded) {
  for (std::size_t T : {2u, 5u, 10u, 13u}) {
    std::mt19937_64 a(5), b(5);
    const Groups g = make_groups(T, Grouping::Random, a);
    const Groups h = make_groups(T, Grouping::Random, b);
    EXPECT_EQ(g.first, h.first);
    EXPECT_EQ(g.first.size(), (T + 1) / 2);
    EXPECT_EQ(g.second.size(), T / 2);
    std::vector<std::size_t> all = g.first;
    all.insert(all.end(), g.second.begin(), g.second.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < T; ++i) EXPECT_EQ(all[i], i);
    EXPECT_TRUE(std::is_sorted(g.first.begin(), g.first.end()));
  }
}

TEST(Distance, KnownValues) {
  const std::vector<double> e1{1, 0}, e2{0, 1}, m1{-2, 0}, v{3, 4};
  EXPECT_NEAR(distance(e1, std::vector<double>{5, 0}, Distance::Cosine), 0.0, 1e-15);
  EXPECT_NEAR(distance(e1, e2, Distance::Cosine), 1.0, 1e-15);
  EXPECT_NEAR(distance(e1, m1, Distance::Cosine), 2.0, 1e-15);
  EXPECT_NEAR(distance(v, e1, Distance::L1), 2.0 + 4.0, 1e-15);
  EXPECT_NEAR(distance(v, e1, Distance::L2), std::sqrt(4.0 + 16.0), 1e-15);
  EXPECT_THROW(distance(e1, std::vector<double>{0, 0}, Distance::Cosine), std::invalid_argument);
  EXPECT_THROW(distance(e1, std::vector<double>{1}, Distance::L2), ShapeError);
}

TEST(Distance, PairwiseMatchesScalar) {
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::normal({3, 4}, 1.0, rng), b = Tensor::normal({2, 4}, 1.0, rng);
  for (Distance m : {Distance::Cosine, Distance::L1, Distance::L2}) {
    const Tensor d = pairwise_distance(a, b, m);
    ASSERT_EQ(d.shape(), (Shape{3, 2}));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        EXPECT_EQ(d.at(i, j), distance(a.data().subspan(i * 4, 4), b.data().subspan(j * 4, 4), m));
  }
}

TEST(SelectPairs, MatchesExhaustiveGreedy) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t T = 2 + rng() % 11;
    const std::size_t m = (T + 1) / 2, n = T / 2;
    const std::size_t r = rng() % (std::min<std::size_t>(3, n) + 1);
    Tensor d({m, n});
    // Coarse integer distances make ties common.
    const bool coarse = trial % 2 == 0;
    for (auto& v : d.data()) v = coarse ? static_cast<double>(rng() % 4) : std::uniform_real_distribution<>(0, 2)(rng);
    const auto got = select_pairs(d, r, 1, Selection::TopR, Pairing::Nearest, rng);
    EXPECT_EQ(got, oracle::greedy_pairs(d, r)) << "trial " << trial;
  }
}

TEST(SelectPairs, TieBreaksByColumnThenRow) {
  std::mt19937_64 rng(3);
  const Tensor d = Tensor::matrix({{1, 1}, {1, 0.5}});
  const auto p = select_pairs(d, 2, 1, Selection::TopR, Pairing::Nearest, rng);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], (TokenPair{1, 1}));
  EXPECT_EQ(p[1], (TokenPair{0, 0}));
}

TEST(SelectPairs, EdgeCases) {
  std::mt19937_64 rng(4);
  const Tensor d = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_TRUE(select_pairs(d, 0, 1, Selection::TopR, Pairing::Nearest, rng).empty());
  EXPECT_EQ(select_pairs(d, 2, 1, Selection::TopR, Pairing::Nearest, rng).size(), 2u);
  EXPECT_THROW(select_pairs(d, 3, 1, Selection::TopR, Pairing::Nearest, rng), std::invalid_argument);
  EXPECT_THROW(select_pairs(d, 1, 0, Selection::TopR, Pairing::Nearest, rng), std::invalid_argument);
}

TEST(SelectPairs, PairRankUsesNthClosest) {
  std::mt19937_64 rng(5);
  // Row 0: 2nd closest at 0.5; row 1: 2nd closest at 0.9.
  const Tensor d = Tensor::matrix({{0.1, 0.5, 3.0}, {0.0, 0.9, 2.0}});
  const auto p = select_pairs(d, 1, 2, Selection::TopR, Pairing::Nearest, rng);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], (TokenPair{0, 1}));
  const auto both = select_pairs(d, 2, 2, Selection::TopR, Pairing::Nearest, rng);
  ASSERT_EQ(both.size(), 2u);
  EXPECT_EQ(both[1], (TokenPair{1, 2}));  // column 1 taken, next rank is column 2
}

TEST(SelectPairs, RandomVariantsAreDisjointAndSeeded) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + gen() % 8, n = 1 + gen() % 8, r = gen() % (std::min(m, n) + 1);
    const std::size_t rank = 1 + gen() % 4;
    const Tensor d = Tensor::uniform({m, n}, 0, 1, gen);
    for (Selection s : {Selection::TopR, Selection::RandomR})
      for (Pairing p : {Pairing::Nearest, Pairing::RandomPair}) {
        std::mt19937_64 a(trial), b(trial);
        const auto pa = select_pairs(d, r, rank, s, p, a);
        EXPECT_EQ(pa, select_pairs(d, r, rank, s, p, b));
        ASSERT_EQ(pa.size(), r);
        std::set<std::size_t> rows, cols;
        for (const auto& q : pa) {
          rows.insert(q.first);
          cols.insert(q.second);
          EXPECT_LT(q.first, m);
          EXPECT_LT(q.second, n);
        }
        EXPECT_EQ(rows.size(), r);
        EXPECT_EQ(cols.size(), r);
      }
  }
}

TEST(SelectPairs, RandomPairKeepsRowsAndColumns) {
  const Tensor d = Tensor::matrix({{0.1, 0.9, 0.8}, {0.9, 0.2, 0.7}, {0.8, 0.7, 0.3}});
  std::mt19937_64 a(7), b(7);
  const auto near = select_pairs(d, 3, 1, Selection::TopR, Pairing::Nearest, a);
  const auto rand = select_pairs(d, 3, 1, Selection::TopR, Pairing::RandomPair, b);
  std::set<std::size_t> r1, r2, c1, c2;
  for (const auto& p : near) r1.insert(p.first), c1.insert(p.second);
  for (const auto& p : rand) r2.insert(p.first), c2.insert(p.second);
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(c1, c2);
}

TEST(MergePlan, SerializeParseAndValidate) {
  MergePlan plan{{{0, 1}, {4, 3}}, {2, 5}};
  EXPECT_EQ(plan.serialize(), "pair 0 1\npair 4 3\nsurvivor 2\nsurvivor 5\n");
  EXPECT_EQ(MergePlan::parse(plan.serialize()), plan);
  EXPECT_NO_THROW(plan.validate(6));
  EXPECT_THROW(plan.validate(7), std::invalid_argument);
  MergePlan dup{{{0, 1}, {1, 2}}, {}};
  EXPECT_THROW(dup.validate(3), std::invalid_argument);
  EXPECT_THROW(MergePlan::parse("pear 1 2\n"), std::invalid_argument);
}

TEST(MergePlan, FromGroupLocalPairs) {
  std::mt19937_64 rng(0);
  const Groups g = make_groups(6, Grouping::OddEven, rng);
  const std::vector<TokenPair> local{{2, 0}, {0, 0 + 1}};
  const MergePlan plan = make_plan(g, local, 6);
  EXPECT_EQ(plan.pairs, (std::vector<TokenPair>{{4, 1}, {0, 3}}));
  EXPECT_EQ(plan.survivors, (std::vector<std::size_t>{2, 5}));
}

TEST(Layout, MergeTakesEarlierPositionPruneKeepsGroupOne) {
  const MergePlan plan{{{4, 1}}, {0, 2, 3}};
  const std::vector<std::size_t> pos{0, 3, 5, 6, 9};
  const auto m = reduction_layout(plan, pos, ReduceMode::Merge);
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m[1].position, 3u);
  EXPECT_EQ(m[1].first, 4u);
  EXPECT_EQ(m[1].second, 1u);
  const auto p = reduction_layout(plan, pos, ReduceMode::Prune);
  EXPECT_EQ(p.back().first, 4u);
  EXPECT_EQ(p.back().position, 9u);
  EXPECT_EQ(p.back().second, MergedRow::npos);
}

TEST(Merge, OperatorsAndOrder) {
  const Tensor v({1, 4, 2}, std::vector<double>{1, 5, 2, 2, 3, -1, 4, 0});
  const TokenBatch tb = TokenBatch::from_values(v);
  const std::vector<MergePlan> plans{{{{2, 1}}, {0, 3}}};
  auto at = [](const TokenBatch& t, std::size_t i, std::size_t j) { return t.values[i * 2 + j]; };
  const TokenBatch s = merge(tb, plans, MergeOp::Sum);
  EXPECT_EQ(s.positions[0], (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(at(s, 1, 0), 5.0);
  EXPECT_EQ(at(s, 1, 1), 1.0);
  EXPECT_EQ(at(merge(tb, plans, MergeOp::Mean), 1, 0), 2.5);
  EXPECT_EQ(at(merge(tb, plans, MergeOp::Max), 1, 1), 2.0);
  EXPECT_EQ(at(merge(tb, plans, MergeOp::Min), 1, 1), -1.0);
  const TokenBatch pr = prune(tb, plans);
  EXPECT_EQ(pr.positions[0], (std::vector<std::size_t>{0, 2, 3}));
  EXPECT_EQ(at(pr, 1, 0), 3.0);
}

TEST(Merge, RandomizedInvariants) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 2 + rng() % 30, D = 1 + rng() % 5, r = rng() % 20;
    ReductionConfig cfg;
    cfg.r = r;
    cfg.distance = static_cast<Distance>(rng() % 3);
    cfg.grouping = static_cast<Grouping>(rng() % 3);
    cfg.selection = static_cast<Selection>(rng() % 2);
    cfg.pairing = static_cast<Pairing>(rng() % 2);
    cfg.pair_rank = 1 + rng() % 3;
    const Tensor v = Tensor::normal({1, T, D}, 1.0, rng);
    const Tensor feat = v.reshaped({T, D});
    const std::uint64_t seed = rng();
    std::mt19937_64 a(seed), b(seed);
    const MergePlan plan = plan_reduction(feat, cfg, a);
    EXPECT_EQ(plan, plan_reduction(feat, cfg, b));
    EXPECT_NO_THROW(plan.validate(T));
    const TokenBatch out = merge(TokenBatch::from_values(v), std::vector<MergePlan>{plan}, MergeOp::Sum);
    EXPECT_EQ(out.length(), T - effective_r(T, r));
    for (std::size_t i = 1; i < out.length(); ++i) EXPECT_LT(out.positions[0][i - 1], out.positions[0][i]);
    for (std::size_t j = 0; j < D; ++j) {
      double before = 0, after = 0;
      for (std::size_t i = 0; i < T; ++i) before += v[i * D + j];
      for (std::size_t i = 0; i < out.length(); ++i) after += out.values[i * D + j];
      EXPECT_NEAR(before, after, 1e-12);
    }
  }
}

TEST(Merge, RejectsMismatchedPlans) {
  const TokenBatch tb = TokenBatch::from_values(Tensor({2, 4, 1}));
  const MergePlan one{{{0, 1}}, {2, 3}};
  const MergePlan none{{}, {0, 1, 2, 3}};
  EXPECT_THROW(merge(tb, std::vector<MergePlan>{one}, MergeOp::Sum), std::invalid_argument);
  EXPECT_THROW(merge(tb, std::vector<MergePlan>{one, none}, MergeOp::Sum), std::invalid_argument);
}

TEST(MergeRows, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  const std::vector<MergedRow> rows{{0, 3, 0}, {1, MergedRow::npos, 1}, {2, 4, 2}};
  for (MergeOp op : {MergeOp::Sum, MergeOp::Mean, MergeOp::Max, MergeOp::Min}) {
    Parameter x("x", Tensor::normal({5, 3}, 1.0, rng));
    const Tensor w = Tensor::normal({3, 3}, 1.0, rng);
    auto loss = [&](bool backward) {
      Tape tape;
      Var l = sum(mul(merge_rows(tape.param(x), rows, op), tape.constant(w)));
      if (backward) tape.backward(l);
      return l.value().item();
    };
    x.zero_grad();
    loss(true);
    const Tensor num = oracle::numeric_grad([&] { return loss(false); }, x.value);
    for (std::size_t i = 0; i < num.numel(); ++i) EXPECT_NEAR(x.grad[i], num[i], 1e-8) << to_string(op) << i;
  }
}

TEST(Shuffle, FullRatioIsEvensThenOdds) {
  std::mt19937_64 rng(10);
  EXPECT_EQ(shuffle_permutation(6, 1.0, rng), (std::vector<std::size_t>{0, 2, 4, 1, 3, 5}));
  EXPECT_EQ(shuffle_permutation(5, 1.0, rng), (std::vector<std::size_t>{0, 2, 4, 1, 3}));
  const auto id = shuffle_permutation(9, 0.0, rng);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(id[i], i);
  EXPECT_THROW(shuffle_permutation(4, 1.5, rng), std::invalid_argument);
}

TEST(Shuffle, PartialRatioMovesOnlyChosenSlots) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 4 + rng() % 40;
    const double ratio = std::uniform_real_distribution<>(0, 1)(rng);
    auto perm = shuffle_permutation(T, ratio, rng);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < T; ++i) EXPECT_EQ(sorted[i], i);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < T; ++i) moved += perm[i] != i;
    EXPECT_LE(moved, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(T))));
  }
}

TEST(Shuffle, PositionsStayWithSlots) {
  std::mt19937_64 rng(12);
  const TokenBatch tb = TokenBatch::from_values(Tensor({1, 4, 1}, std::vector<double>{10, 11, 12, 13}));
  const TokenBatch s = shuffle_tokens(tb, 1.0, rng);
  EXPECT_EQ(s.values.vec(), (std::vector<double>{10, 12, 11, 13}));
  EXPECT_EQ(s.positions, tb.positions);
}

TEST(Schedule, EffectiveRAndCounts) {
  EXPECT_EQ(effective_r(10, 3), 3u);
  EXPECT_EQ(effective_r(5, 4), 2u);
  EXPECT_EQ(effective_r(1, 4), 0u);
  const std::vector<std::size_t> sites{2};
  const auto s = simulate_schedule(16, sites, 3, 4);
  EXPECT_EQ(s.entering, (std::vector<std::size_t>{16, 16, 16, 13}));
  EXPECT_EQ(s.leaving, (std::vector<std::size_t>{16, 16, 13, 13}));
}

TEST(Schedule, RatioTableAtFullScale) {
  const auto sites = even_sites(24);
  const std::pair<std::size_t, double> table[] = {{5, 0.14}, {10, 0.28}, {11, 0.31},
                                                  {13, 0.36}, {15, 0.42}, {20, 0.54}};
  for (const auto& [r, expected] : table) EXPECT_NEAR(reduction_ratio(197, sites, r, 24), expected, 0.005) << r;
  EXPECT_EQ(reduction_ratio(197, sites, 0, 24), 0.0);
}

TEST(Schedule, RatioByHand) {
  // 8 blocks, sites {2,4,6}, 49 tokens, r = 5: leaving counts 49,49,44,44,39,39,34,34.
  const std::vector<std::size_t> sites{2, 4, 6};
  const double mean = (49 + 49 + 44 + 44 + 39 + 39 + 34 + 34) / 8.0;
  EXPECT_NEAR(reduction_ratio(49, sites, 5, 8), 1.0 - mean / 49.0, 1e-15);
}

TEST(PlanReduction, CapsRAndHandlesOddLength) {
  std::mt19937_64 rng(13);
  ReductionConfig cfg;
  cfg.r = 10;
  const Tensor feat = Tensor::normal({7, 3}, 1.0, rng);
  const MergePlan plan = plan_reduction(feat, cfg, rng);
  EXPECT_EQ(plan.pairs.size(), 3u);
  EXPECT_EQ(plan.survivors.size(), 1u);
  for (const auto& p : plan.pairs) {
    EXPECT_EQ(p.first % 2, 0u);
    EXPECT_EQ(p.second % 2, 1u);
  }
  cfg.r = 0;
  EXPECT_TRUE(plan_reduction(feat, cfg, rng).pairs.empty());
}
