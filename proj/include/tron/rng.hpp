// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace tron {

/// Purpose tags so independent consumers of one (seed, epoch, batch) key never
/// share a stream.
enum class StreamTag : std::uint64_t {
  kShuffle = 1,
  kInit = 2,
  kDropout = 3,
  kUniform = 4,
  kFrequency = 5,
  kInBatch = 6,
  kTest = 99,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the n-th output is a pure function of (key, n), so
/// a stream keyed by (seed, epoch, batch, tag) yields the same values no matter
/// which worker produces it or in which order batches are prepared.
///
/// Every call to next() counts as one draw; draws() is the instrumentation
/// hook behind the sampler draw-count accounting.
class CounterRng {
 public:
  CounterRng() = default;

  explicit CounterRng(std::uint64_t seed, std::uint64_t epoch = 0, std::uint64_t batch = 0,
                      StreamTag tag = StreamTag::kTest) noexcept
      : key_(derive_key(seed, epoch, batch, static_cast<std::uint64_t>(tag))) {}

  static constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t epoch,
                                            std::uint64_t batch, std::uint64_t tag) noexcept {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ epoch);
    k = splitmix64(k ^ (batch * 0xD1B54A32D192ED03ULL));
    return splitmix64(k ^ (tag * 0xAEF17502108EF2D9ULL));
  }

  std::uint64_t next() noexcept {
    ++draws_;
    return splitmix64(key_ ^ splitmix64(counter_++));
  }

  /// Uniform integer in [0, n) by 128-bit multiply-shift; one draw.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits; one draw.
  double uniform01() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t draws() const noexcept { return draws_; }
  void reset_draws() noexcept { draws_ = 0; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t draws_ = 0;
};

}  // namespace tron
