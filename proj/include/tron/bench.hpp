// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0
//
// Throughput of the uniform negative sampler per granularity.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tron/rng.hpp"
#include "tron/sampler.hpp"

namespace tron {

struct BenchRow {
  Granularity granularity = Granularity::kBatchwise;
  std::size_t negatives = 0;
  std::size_t batch = 0;
  std::size_t width = 0;
  std::size_t repeats = 0;  // negative sets sampled
  std::uint64_t draws_per_batch = 0;
  double seconds = 0.0;
  double samples_per_sec = 0.0;  // negative sets (one per training batch) per second
  double draws_per_sec = 0.0;
};

/// Samples [b, T] batches' worth of uniform negatives until `min_seconds`
/// have passed (at least `min_repeats` times).
inline BenchRow bench_uniform(Granularity g, std::size_t n_items, std::size_t negatives, std::size_t b,
                              std::size_t width, double min_seconds = 0.5, std::size_t min_repeats = 3,
                              std::uint64_t seed = 1) {
  BenchRow row;
  row.granularity = g;
  row.negatives = negatives;
  row.batch = b;
  row.width = width;
  std::uint64_t draws = 0;
  std::size_t checksum = 0;
  const auto start = std::chrono::steady_clock::now();
  double elapsed = 0.0;
  while (row.repeats < min_repeats || elapsed < min_seconds) {
    CounterRng rng(seed, 0, row.repeats, StreamTag::kUniform);
    const NegativeSet s = sample_uniform(n_items, g, negatives, b, width, rng);
    checksum += static_cast<std::size_t>(s.ids.back());
    draws += rng.draws();
    ++row.repeats;
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  [[maybe_unused]] static volatile std::size_t sink;
  sink = checksum;
  row.seconds = elapsed;
  row.draws_per_batch = draws / row.repeats;
  row.samples_per_sec = static_cast<double>(row.repeats) / elapsed;
  row.draws_per_sec = static_cast<double>(draws) / elapsed;
  return row;
}

}  // namespace tron
