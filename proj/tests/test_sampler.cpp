// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"

namespace tron {
namespace {

constexpr Granularity kGrans[] = {Granularity::kElementwise, Granularity::kSessionwise, Granularity::kBatchwise};

TEST(SamplerShapes, GranularityTable) {
  EXPECT_EQ(granularity_shape(Granularity::kElementwise, 4, 5, 7), (std::array<std::size_t, 3>{4, 5, 7}));
  EXPECT_EQ(granularity_shape(Granularity::kSessionwise, 4, 5, 7), (std::array<std::size_t, 3>{4, 1, 7}));
  EXPECT_EQ(granularity_shape(Granularity::kBatchwise, 4, 5, 7), (std::array<std::size_t, 3>{1, 1, 7}));
  EXPECT_EQ(parse_granularity("sessionwise"), Granularity::kSessionwise);
  EXPECT_THROW(parse_granularity("rowwise"), ConfigError);
}

TEST(SamplerShapes, ShapeLawAllCombinations) {
  std::mt19937_64 gen(17);
  const std::size_t n_items = 500;
  std::vector<std::int64_t> freq(n_items);
  for (std::size_t i = 0; i < n_items; ++i) freq[i] = static_cast<std::int64_t>(1 + i % 13);
  ItemDistribution dist(n_items, freq);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + gen() % 12, t = 2 + gen() % 10, k = 1 + gen() % 40, m = 1 + gen() % 40;
    const auto g = kGrans[trial % 3];
    const int source = (trial / 3) % 4;  // uniform, frequency, in-batch, uniform+frequency
    auto batch = testing::random_batch(gen, b, t, n_items);
    NegativeConfig cfg;
    std::size_t n = 0;
    if (source == 0 || source == 3) {
      cfg.uniform_count = k;
      cfg.uniform_granularity = g;
      n += k;
    }
    if (source == 1 || source == 3) {
      cfg.frequency_count = m;
      cfg.frequency_granularity = g;
      n += m;
    }
    if (source == 2) {
      cfg.inbatch_count = m;
      cfg.inbatch_granularity = g;
      n += m;
    }
    auto negs = sample_negatives(batch, dist, cfg, 5, 0, static_cast<std::uint64_t>(trial));
    ASSERT_EQ(negs.shape, granularity_shape(g, batch.batch_size, batch.width, n)) << "trial " << trial;
    ASSERT_EQ(negs.ids.size(), negs.shape[0] * negs.shape[1] * negs.shape[2]);
    for (auto id : negs.ids) ASSERT_TRUE(id >= 0 && static_cast<std::size_t>(id) < n_items);
  }
}

TEST(SamplerShapes, TronXlConcat) {
  std::mt19937_64 gen(3);
  auto batch = testing::random_batch(gen, 128, 10, 1000);
  CounterRng u(1, 0, 0, StreamTag::kUniform), ib(1, 0, 0, StreamTag::kInBatch);
  auto uniform = sample_uniform(1000, Granularity::kBatchwise, 16384, 128, batch.width, u);
  auto inbatch = sample_inbatch(batch, 127, ib, {Granularity::kSessionwise, InBatchPool::kMultiset, true});
  auto both = concat_negatives(inbatch, uniform);
  EXPECT_EQ(both.shape, (std::array<std::size_t, 3>{128, 1, 16511}));
  EXPECT_EQ(both.granularity, Granularity::kSessionwise);
  for (std::size_t s = 0; s < 128; s += 37) {
    auto row = both.row(s);
    EXPECT_TRUE(std::equal(row.begin(), row.begin() + 127, inbatch.row(s).begin()));
    EXPECT_TRUE(std::equal(row.begin() + 127, row.end(), uniform.row(0).begin()));
  }
  NegativeSet a, b;
  a.shape = {2, 3, 1};
  a.ids.assign(6, 0);
  b.shape = {3, 1, 1};
  b.ids.assign(3, 0);
  EXPECT_THROW(concat_negatives(a, b), DimensionError);
  EXPECT_EQ(concat_negatives(NegativeSet{}, b).shape, b.shape);
}

TEST(SamplerDraws, DrawCountLaw) {
  std::mt19937_64 gen(5);
  auto batch = testing::random_batch(gen, 16, 12, 300);
  ItemDistribution dist(testing::make_dataset(300, {{0, 1}}, {{0, 1}}).catalog);
  for (auto g : kGrans) {
    NegativeConfig cfg;
    cfg.uniform_count = 100;
    cfg.uniform_granularity = g;
    cfg.frequency_count = 30;
    cfg.frequency_granularity = g;
    DrawCounts c;
    sample_negatives(batch, dist, cfg, 1, 0, 0, &c);
    const std::size_t groups = g == Granularity::kBatchwise ? 1 : g == Granularity::kSessionwise ? 16 : 16 * 12;
    EXPECT_EQ(c.uniform, groups * 100u) << to_string(g);
    EXPECT_EQ(c.frequency, groups * 30u) << to_string(g);
  }
}

TEST(SamplerDraws, CapAndEmptyTables) {
  CounterRng rng(1);
  EXPECT_THROW(sample_uniform(10, Granularity::kBatchwise, kMaxNegatives + 1, 1, 1, rng), ConfigError);
  EXPECT_NO_THROW(sample_uniform(10, Granularity::kBatchwise, 0, 1, 1, rng));
  std::vector<std::int64_t> zeros(5, 0);
  EXPECT_THROW(AliasTable(std::span<const std::int64_t>(zeros)), ConfigError);
  std::vector<std::int64_t> neg{1, -1};
  EXPECT_THROW(AliasTable(std::span<const std::int64_t>(neg)), ConfigError);
  EXPECT_THROW(sample_uniform(0, Granularity::kBatchwise, 3, 1, 1, rng), ConfigError);
}

TEST(SamplerStats, UniformChiSquare) {
  CounterRng rng(2024, 0, 0, StreamTag::kUniform);
  auto negs = sample_uniform(50, Granularity::kBatchwise, 100000, 1, 1, rng);
  std::vector<double> counts(50, 0.0);
  for (auto id : negs.ids) counts[static_cast<std::size_t>(id)] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 2000.0) * (c - 2000.0) / 2000.0;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(49), chi2));
  EXPECT_GT(p, 0.01) << "chi2=" << chi2;
}

TEST(SamplerStats, FrequencyTotalVariation) {
  std::vector<std::int64_t> freq(200);
  for (std::size_t i = 0; i < freq.size(); ++i) freq[i] = static_cast<std::int64_t>(1000.0 / std::pow(i + 1.0, 1.1)) + 1;
  ItemDistribution dist(freq.size(), freq);
  CounterRng rng(99, 0, 0, StreamTag::kFrequency);
  auto negs = sample_frequency(dist, Granularity::kBatchwise, 100000, 1, 1, rng);
  EXPECT_EQ(rng.draws(), 100000u);
  const double total = std::accumulate(freq.begin(), freq.end(), 0.0);
  std::vector<double> emp(freq.size(), 0.0);
  for (auto id : negs.ids) emp[static_cast<std::size_t>(id)] += 1.0 / 100000.0;
  double tv = 0.0;
  for (std::size_t i = 0; i < freq.size(); ++i) tv += std::abs(emp[i] - static_cast<double>(freq[i]) / total);
  EXPECT_LT(tv / 2.0, 0.02);
}

TEST(SamplerInBatch, ExclusionOverManyBatches) {
  std::mt19937_64 gen(11);
  std::size_t checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t b = 2 + gen() % 8;
    auto batch = testing::random_batch(gen, b, 6, 40);
    const auto g = trial % 2 ? Granularity::kSessionwise : Granularity::kElementwise;
    const auto pool = trial % 3 ? InBatchPool::kMultiset : InBatchPool::kDistinct;
    CounterRng rng(7, 0, static_cast<std::uint64_t>(trial), StreamTag::kInBatch);
    auto negs = sample_inbatch(batch, 5, rng, {g, pool, true, 40});
    for (std::size_t s = 0; s < b; ++s) {
      const auto& own = batch.session_items[s];
      for (std::size_t t = 0; t < negs.shape[1]; ++t) {
        for (auto id : negs.row(negs.group_of(s, t))) {
          ASSERT_EQ(std::count(own.begin(), own.end(), id), 0) << "trial " << trial;
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 100000u);
}

TEST(SamplerInBatch, WithoutReplacementAndPoolErrors) {
  auto d = testing::make_dataset(10, {{0, 1}, {2, 3}, {4, 5, 6}}, {{0, 1}});
  BatchOptions o;
  o.batch_size = 3;
  o.shuffle = false;
  auto batch = BatchStream(d.train, 10, o).at(0);
  CounterRng rng(1);
  // Pools: session 0 {2,3,4,5,6}, session 2 {0,1,2,3}. Draws are distinct.
  auto negs = sample_inbatch(batch, 4, rng, {Granularity::kSessionwise, InBatchPool::kMultiset, false});
  auto row = std::vector<std::int32_t>(negs.row(0).begin(), negs.row(0).end());
  std::sort(row.begin(), row.end());
  EXPECT_EQ(std::adjacent_find(row.begin(), row.end()), row.end());
  for (auto id : row) EXPECT_TRUE(id >= 2 && id <= 6);
  row.assign(negs.row(2).begin(), negs.row(2).end());
  std::sort(row.begin(), row.end());
  EXPECT_EQ(row, (std::vector<std::int32_t>{0, 1, 2, 3}));
  EXPECT_THROW(sample_inbatch(batch, 5, rng, {Granularity::kSessionwise, InBatchPool::kMultiset, false}),
               PoolExhaustedError);
  EXPECT_NO_THROW(sample_inbatch(batch, 6, rng, {Granularity::kSessionwise, InBatchPool::kMultiset, true}));
  o.batch_size = 1;
  auto single = BatchStream(d.train, 10, o).at(0);
  EXPECT_THROW(sample_inbatch(single, 2, rng, {Granularity::kSessionwise, InBatchPool::kMultiset, true}),
               PoolExhaustedError);
  auto fallback = sample_inbatch(single, 50, rng, {Granularity::kSessionwise, InBatchPool::kMultiset, true, 10});
  for (auto id : fallback.ids) EXPECT_TRUE(id >= 2 && id < 10);
}

TEST(SamplerInBatch, MultisetFollowsBatchFrequency) {
  // Item 9 occurs 8 times in other sessions, item 8 once: multiset draws favour 9.
  auto d = testing::make_dataset(10, {{0, 1}, {9, 9, 9, 9}, {9, 9, 9, 9, 8}}, {{0, 1}});
  BatchOptions o;
  o.batch_size = 3;
  o.shuffle = false;
  auto batch = BatchStream(d.train, 10, o).at(0);
  std::size_t nine = 0, eight = 0;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    CounterRng rng(i);
    auto negs = sample_inbatch(batch, 1, rng, {Granularity::kSessionwise, InBatchPool::kMultiset, false});
    nine += negs.row(0)[0] == 9;
    eight += negs.row(0)[0] == 8;
  }
  EXPECT_NEAR(static_cast<double>(nine) / 2000.0, 8.0 / 9.0, 0.03);
  EXPECT_EQ(nine + eight, 2000u);
}

TEST(TopK, MatchesFullSortOn10kVectors) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + gen() % (trial % 10 == 0 ? 4096 : 256);
    const std::size_t k = 1 + gen() % n;
    std::vector<double> v(n);
    const bool ties = trial % 2 == 0;
    for (auto& x : v) x = ties ? static_cast<double>(gen() % 7) : std::ldexp(static_cast<double>(gen() >> 11), -53);
    auto sel = topk_filter(v, 1, n, k);
    ASSERT_EQ(sel.indices, testing::sort_topk(v, k)) << "trial " << trial;
    for (std::size_t j = 0; j < k; ++j) ASSERT_EQ(sel.scores[j], v[sel.indices[j]]);
  }
  std::vector<double> small{1.0, 2.0};
  EXPECT_THROW(topk_filter(small, 1, 2, 3), ConfigError);
}

TEST(TopK, TensorFormZeroGradientOutsideSelection) {
  auto scores = testing::random_tensor({4, 50}, 8);
  auto [sel, picked] = topk_filter(scores, 5);
  testing::contract(picked).backward();
  for (std::size_t r = 0; r < 4; ++r) {
    std::size_t nonzero = 0;
    for (std::size_t c = 0; c < 50; ++c) {
      const bool kept = std::find(sel.indices.begin() + r * 5, sel.indices.begin() + r * 5 + 5, c) !=
                        sel.indices.begin() + r * 5 + 5;
      if (!kept) EXPECT_EQ(scores.grad()[r * 50 + c], 0.0);
      nonzero += scores.grad()[r * 50 + c] != 0.0;
    }
    EXPECT_EQ(nonzero, 5u);
  }
}

}  // namespace
}  // namespace tron
