// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Negative sampling (uniform, frequency, in-batch) at elementwise,
// sessionwise or batchwise granularity, plus top-k filtering of scored
// negatives.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tron/data.hpp"
#include "tron/errors.hpp"
#include "tron/rng.hpp"
#include "tron/tensor.hpp"

namespace tron {

enum class Granularity { kElementwise, kSessionwise, kBatchwise };

inline Granularity parse_granularity(const std::string& s) {
  if (s == "elementwise") return Granularity::kElementwise;
  if (s == "sessionwise") return Granularity::kSessionwise;
  if (s == "batchwise") return Granularity::kBatchwise;
  throw ConfigError("unknown granularity '" + s + "' (expected elementwise, sessionwise or batchwise)");
}

inline std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::kElementwise: return "elementwise";
    case Granularity::kSessionwise: return "sessionwise";
    case Granularity::kBatchwise: return "batchwise";
  }
  return "?";
}

inline constexpr std::size_t kMaxNegatives = std::size_t{1} << 20;

/// Sampled negative ids shaped [b,T,n], [b,1,n] or [1,1,n].
struct NegativeSet {
  std::array<std::size_t, 3> shape{1, 1, 0};
  std::vector<std::int32_t> ids;
  Granularity granularity = Granularity::kBatchwise;
  std::size_t k_uniform = 0;  // leading sources: frequency / in-batch count
  std::size_t m_other = 0;

  std::size_t count() const { return shape[2]; }
  bool empty() const { return shape[2] == 0; }
  std::size_t groups() const { return shape[0] * shape[1]; }
  /// Row of `ids` (length count()) used for session s at position t.
  std::size_t group_of(std::size_t s, std::size_t t) const {
    return (shape[0] == 1 ? 0 : s) * shape[1] + (shape[1] == 1 ? 0 : t);
  }
  std::span<const std::int32_t> row(std::size_t group) const {
    return std::span<const std::int32_t>(ids).subspan(group * shape[2], shape[2]);
  }
};

inline std::array<std::size_t, 3> granularity_shape(Granularity g, std::size_t b, std::size_t t, std::size_t n) {
  switch (g) {
    case Granularity::kElementwise: return {b, t, n};
    case Granularity::kSessionwise: return {b, 1, n};
    case Granularity::kBatchwise: return {1, 1, n};
  }
  return {1, 1, n};
}

/// Walker/Vose alias table; one RNG draw per sample (the high half of a
/// 128-bit product picks the column, the low half is the coin).
class AliasTable {
 public:
  AliasTable() = default;

  template <typename W>
  explicit AliasTable(std::span<const W> weights) {
    const std::size_t n = weights.size();
    double total = 0.0;
    for (auto w : weights) {
      if (w < 0) throw ConfigError("alias table: negative weight");
      total += static_cast<double>(w);
    }
    if (n == 0 || total <= 0.0) throw ConfigError("alias table: all-zero frequency table");
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::uint32_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = static_cast<double>(weights[i]) * static_cast<double>(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;  // rounding leftovers
  }

  std::size_t size() const { return prob_.size(); }

  std::int32_t sample(CounterRng& rng) const {
    const auto prod = static_cast<unsigned __int128>(rng.next()) * prob_.size();
    const auto col = static_cast<std::size_t>(prod >> 64);
    const double coin = static_cast<double>(static_cast<std::uint64_t>(prod) >> 11) * 0x1.0p-53;
    return static_cast<std::int32_t>(coin < prob_[col] ? col : alias_[col]);
  }

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

/// Catalog-wide sampling state: item count and the frequency alias table.
class ItemDistribution {
 public:
  ItemDistribution() = default;
  explicit ItemDistribution(const Catalog& catalog)
      : n_items_(catalog.size()),
        alias_(catalog.empty() ? AliasTable() : AliasTable(std::span<const std::int64_t>(catalog.frequencies()))) {}
  ItemDistribution(std::size_t n_items, std::span<const std::int64_t> frequencies)
      : n_items_(n_items), alias_(frequencies) {
    if (frequencies.size() != n_items) throw ConfigError("frequency table size differs from item count");
  }

  std::size_t size() const { return n_items_; }
  const AliasTable& alias() const { return alias_; }

 private:
  std::size_t n_items_ = 0;
  AliasTable alias_;
};

namespace sampler_detail {

inline void check_count(std::size_t n) {
  if (n > kMaxNegatives) {
    throw ConfigError("negative count " + std::to_string(n) + " exceeds cap " + std::to_string(kMaxNegatives));
  }
}

template <typename Draw>
NegativeSet fill(Granularity g, std::size_t b, std::size_t t, std::size_t n, Draw&& draw) {
  NegativeSet out;
  out.granularity = g;
  out.shape = granularity_shape(g, b, t, n);
  out.ids.resize(out.shape[0] * out.shape[1] * n);
  for (auto& id : out.ids) id = draw();
  return out;
}

}  // namespace sampler_detail

/// k iid uniform draws over [0, n_items) per group. Positives are not
/// excluded.
inline NegativeSet sample_uniform(std::size_t n_items, Granularity g, std::size_t k, std::size_t b, std::size_t t,
                                  CounterRng& rng) {
  sampler_detail::check_count(k);
  if (n_items == 0) throw ConfigError("cannot sample from an empty catalog");
  auto out = sampler_detail::fill(g, b, t, k, [&] { return static_cast<std::int32_t>(rng.uniform_index(n_items)); });
  out.k_uniform = k;
  return out;
}

/// m iid draws proportional to train frequency per group. Positives are not
/// excluded.
inline NegativeSet sample_frequency(const ItemDistribution& dist, Granularity g, std::size_t m, std::size_t b,
                                    std::size_t t, CounterRng& rng) {
  sampler_detail::check_count(m);
  if (m > 0 && dist.alias().size() == 0) throw ConfigError("frequency sampling needs a frequency table");
  auto out = sampler_detail::fill(g, b, t, m, [&] { return dist.alias().sample(rng); });
  out.m_other = m;
  return out;
}

enum class InBatchPool { kMultiset, kDistinct };

inline InBatchPool parse_inbatch_pool(const std::string& s) {
  if (s == "multiset") return InBatchPool::kMultiset;
  if (s == "distinct") return InBatchPool::kDistinct;
  throw ConfigError("unknown in-batch pool '" + s + "' (expected multiset or distinct)");
}

struct InBatchOptions {
  Granularity granularity = Granularity::kSessionwise;
  InBatchPool pool = InBatchPool::kMultiset;
  // When a session's pool holds fewer than m candidates: false raises
  // PoolExhaustedError, true starts a fresh pass over the pool.
  bool refill = false;
  // Nonzero: an empty pool (e.g. a one-session batch) draws uniformly from
  // [0, fallback_items) instead, still rejecting the owner's items.
  std::size_t fallback_items = 0;
};

/// In-batch negatives: each session draws m candidates without replacement
/// from the item occurrences of the OTHER sessions in the batch, excluding
/// every item of its own session. Batchwise granularity shares one draw over
/// the whole batch, which cannot honour per-session exclusion; it samples
/// from all batch occurrences.
inline NegativeSet sample_inbatch(const SessionBatch& batch, std::size_t m, CounterRng& rng,
                                  const InBatchOptions& opts = {}) {
  sampler_detail::check_count(m);
  const std::size_t b = batch.batch_size;
  NegativeSet out;
  out.granularity = opts.granularity;
  out.shape = granularity_shape(opts.granularity, b, batch.width, m);
  out.m_other = m;
  out.ids.resize(out.shape[0] * out.shape[1] * m);
  if (m == 0) return out;

  std::vector<std::vector<std::int32_t>> positives(b);
  for (std::size_t s = 0; s < b; ++s) {
    positives[s] = batch.session_items[s];
    std::sort(positives[s].begin(), positives[s].end());
    positives[s].erase(std::unique(positives[s].begin(), positives[s].end()), positives[s].end());
  }

  auto build_pool = [&](std::size_t owner, bool exclude) {
    std::vector<std::int32_t> pool;
    for (std::size_t r = 0; r < b; ++r) {
      if (exclude && r == owner) continue;
      for (auto id : batch.session_items[r]) {
        if (exclude && std::binary_search(positives[owner].begin(), positives[owner].end(), id)) continue;
        pool.push_back(id);
      }
    }
    if (opts.pool == InBatchPool::kDistinct) {
      std::sort(pool.begin(), pool.end());
      pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    }
    return pool;
  };

  // Partial Fisher-Yates over a scratch copy; exhausted pools refill or fail.
  auto draw_into = [&](std::span<std::int32_t> dst, const std::vector<std::int32_t>& pool, std::size_t owner) {
    if (pool.empty() && opts.fallback_items > 0) {
      const bool exclude = opts.granularity != Granularity::kBatchwise;
      const auto& own = positives[owner];
      if (exclude && own.size() >= opts.fallback_items) {
        throw PoolExhaustedError("session " + std::to_string(batch.session_ids[owner]) + " covers the whole catalog");
      }
      for (auto& slot : dst) {
        do {
          slot = static_cast<std::int32_t>(rng.uniform_index(opts.fallback_items));
        } while (exclude && std::binary_search(own.begin(), own.end(), slot));
      }
      return;
    }
    if (pool.empty()) {
      throw PoolExhaustedError("in-batch pool empty for session " + std::to_string(batch.session_ids[owner]));
    }
    if (dst.size() > pool.size() && !opts.refill) {
      throw PoolExhaustedError("in-batch pool of session " + std::to_string(batch.session_ids[owner]) + " holds " +
                               std::to_string(pool.size()) + " candidates, " + std::to_string(dst.size()) +
                               " requested");
    }
    std::vector<std::int32_t> scratch = pool;
    std::size_t left = scratch.size();
    for (auto& slot : dst) {
      if (left == 0) left = scratch.size();
      const std::size_t j = rng.uniform_index(left);
      slot = scratch[j];
      std::swap(scratch[j], scratch[left - 1]);
      --left;
    }
  };

  if (opts.granularity == Granularity::kBatchwise) {
    draw_into(out.ids, build_pool(0, false), 0);
    return out;
  }
  for (std::size_t s = 0; s < b; ++s) {
    const auto pool = build_pool(s, true);
    const std::size_t reps = opts.granularity == Granularity::kElementwise ? batch.width : 1;
    for (std::size_t t = 0; t < reps; ++t) {
      draw_into(std::span<std::int32_t>(out.ids).subspan((s * reps + t) * m, m), pool, s);
    }
  }
  return out;
}

/// Last-axis concatenation [first | second] after broadcasting the leading
/// two axes. An empty operand yields the other unchanged.
inline NegativeSet concat_negatives(const NegativeSet& first, const NegativeSet& second) {
  if (first.empty()) return second;
  if (second.empty()) return first;
  std::array<std::size_t, 3> shape{};
  for (int a = 0; a < 2; ++a) {
    const auto x = first.shape[a], y = second.shape[a];
    if (x != y && x != 1 && y != 1) {
      throw DimensionError("cannot broadcast negative sets [" + std::to_string(first.shape[0]) + "," +
                           std::to_string(first.shape[1]) + "," + std::to_string(first.shape[2]) + "] and [" +
                           std::to_string(second.shape[0]) + "," + std::to_string(second.shape[1]) + "," +
                           std::to_string(second.shape[2]) + "]");
    }
    shape[a] = std::max(x, y);
  }
  shape[2] = first.shape[2] + second.shape[2];
  NegativeSet out;
  out.shape = shape;
  out.k_uniform = first.k_uniform + second.k_uniform;
  out.m_other = first.m_other + second.m_other;
  // Finest granularity present wins.
  out.granularity = std::min(first.granularity, second.granularity);
  out.ids.resize(shape[0] * shape[1] * shape[2]);
  for (std::size_t i = 0; i < shape[0]; ++i) {
    for (std::size_t j = 0; j < shape[1]; ++j) {
      auto* dst = out.ids.data() + (i * shape[1] + j) * shape[2];
      auto a = first.row(first.group_of(i, j));
      auto b = second.row(second.group_of(i, j));
      std::copy(a.begin(), a.end(), dst);
      std::copy(b.begin(), b.end(), dst + a.size());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Top-k
// ---------------------------------------------------------------------------

/// Per-row indices of the K largest scores, in rank order. Ties go to the
/// lower index.
struct TopKSelection {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // [rows * k]
  std::vector<double> scores;        // [rows * k]
};

inline TopKSelection topk_filter(std::span<const double> scores, std::size_t rows, std::size_t n, std::size_t k) {
  if (k > n) throw ConfigError("top-k of " + std::to_string(k) + " exceeds " + std::to_string(n) + " negatives");
  if (scores.size() != rows * n) throw DimensionError("topk_filter: score count mismatch");
  TopKSelection sel{rows, k, std::vector<std::size_t>(rows * k), std::vector<double>(rows * k)};
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = scores.data() + r * n;
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
    if (k < n) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), better);
    for (std::size_t j = 0; j < k; ++j) {
      sel.indices[r * k + j] = idx[j];
      sel.scores[r * k + j] = row[idx[j]];
    }
  }
  return sel;
}

/// Tensor form: selects on the last axis of `scores` and returns the selection
/// plus a differentiable [..., K] view whose backward leaves every
/// non-selected score with exactly zero gradient.
inline std::pair<TopKSelection, Tensor> topk_filter(const Tensor& scores, std::size_t k) {
  if (scores.rank() == 0) throw DimensionError("topk_filter on a scalar");
  const std::size_t n = scores.shape().back();
  const std::size_t rows = n == 0 ? 0 : scores.numel() / n;
  auto sel = topk_filter(scores.values(), rows, n, k);
  auto picked = gather_last(scores, sel.indices, k);
  return {std::move(sel), std::move(picked)};
}

// ---------------------------------------------------------------------------
// Composite sampler
// ---------------------------------------------------------------------------

struct NegativeConfig {
  std::size_t uniform_count = 0;
  Granularity uniform_granularity = Granularity::kBatchwise;
  std::size_t frequency_count = 0;
  Granularity frequency_granularity = Granularity::kBatchwise;
  std::size_t inbatch_count = 0;
  Granularity inbatch_granularity = Granularity::kSessionwise;
  InBatchPool inbatch_pool = InBatchPool::kMultiset;
  bool inbatch_refill = true;
  std::size_t topk = 0;  // 0 disables filtering

  std::size_t total() const { return uniform_count + frequency_count + inbatch_count; }
};

struct DrawCounts {
  std::uint64_t uniform = 0;
  std::uint64_t frequency = 0;
  std::uint64_t inbatch = 0;

  DrawCounts& operator+=(const DrawCounts& o) {
    uniform += o.uniform;
    frequency += o.frequency;
    inbatch += o.inbatch;
    return *this;
  }
};

/// Draws every configured source for one batch from streams keyed by
/// (seed, epoch, batch_index) and concatenates them as
/// [frequency | in-batch | uniform].
inline NegativeSet sample_negatives(const SessionBatch& batch, const ItemDistribution& dist,
                                    const NegativeConfig& cfg, std::uint64_t seed, std::uint64_t epoch,
                                    std::uint64_t batch_index, DrawCounts* counts = nullptr) {
  if (cfg.total() == 0) throw ConfigError("no negatives configured");
  const std::size_t b = batch.batch_size, t = batch.width;
  NegativeSet result;
  if (cfg.frequency_count > 0) {
    CounterRng rng(seed, epoch, batch_index, StreamTag::kFrequency);
    result = sample_frequency(dist, cfg.frequency_granularity, cfg.frequency_count, b, t, rng);
    if (counts) counts->frequency += rng.draws();
  }
  if (cfg.inbatch_count > 0) {
    CounterRng rng(seed, epoch, batch_index, StreamTag::kInBatch);
    InBatchOptions o{cfg.inbatch_granularity, cfg.inbatch_pool, cfg.inbatch_refill,
                     cfg.inbatch_refill ? dist.size() : 0};
    result = concat_negatives(result, sample_inbatch(batch, cfg.inbatch_count, rng, o));
    if (counts) counts->inbatch += rng.draws();
  }
  if (cfg.uniform_count > 0) {
    CounterRng rng(seed, epoch, batch_index, StreamTag::kUniform);
    result = concat_negatives(result, sample_uniform(dist.size(), cfg.uniform_granularity, cfg.uniform_count, b, t, rng));
    if (counts) counts->uniform += rng.draws();
  }
  return result;
}

}  // namespace tron
