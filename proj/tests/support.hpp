// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Shared oracles and fixtures for the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "tron/tron.hpp"

namespace tron::testing {

/// Deterministic pseudo-random values in [-1, 1).
inline std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true) {
  const std::size_t n = numel(shape);
  return Tensor::from(std::move(shape), random_values(n, seed), requires_grad);
}

/// Reduces any output to a scalar through fixed random weights, so every
/// output element carries a distinct upstream gradient.
inline Tensor contract(const Tensor& out, std::uint64_t seed = 7) {
  return sum(mul(out, Tensor::from(out.shape(), random_values(out.numel(), seed))));
}

/// Largest per-parameter relative error ||a - n|| / max(||a||, ||n||, floor)
/// between backprop (a) and central differences (n) of the scalar f(). The
/// floor is 1e-3 of the global gradient norm, so parameters whose gradient is
/// identically zero (a key bias under softmax, say) compare rounding noise
/// against the model's gradient scale rather than against itself.
inline double gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> params, double h = 1e-6) {
  for (auto& p : params) p.zero_grad();
  f().backward();
  std::vector<std::vector<double>> analytic, numeric;
  double global = 0.0;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0);
    numeric.emplace_back(p.numel());
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      NoGradGuard guard;
      w[i] = saved + h;
      const double up = f().item();
      w[i] = saved - h;
      const double down = f().item();
      w[i] = saved;
      numeric.back()[i] = (up - down) / (2.0 * h);
    }
    for (double g : analytic.back()) global += g * g;
  }
  const double floor = std::max(1e-3 * std::sqrt(global), 1e-12);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric[p].size(); ++i) {
      diff += (analytic[p][i] - numeric[p][i]) * (analytic[p][i] - numeric[p][i]);
      na += analytic[p][i] * analytic[p][i];
      nn += numeric[p][i] * numeric[p][i];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor}));
  }
  return worst;
}

/// Builds a split dataset directly from dense-id sessions.
inline SplitDataset make_dataset(std::size_t n_items, std::vector<std::vector<std::int32_t>> train,
                                 std::vector<std::vector<std::int32_t>> test) {
  SplitDataset d;
  std::vector<std::int64_t> keys(n_items), freq(n_items, 0);
  std::iota(keys.begin(), keys.end(), std::int64_t{0});
  std::int64_t sid = 0, ts = 0;
  auto to_sessions = [&](std::vector<std::vector<std::int32_t>>& in, std::vector<Session>& out, bool count) {
    for (auto& items : in) {
      Session s;
      s.session_id = sid++;
      for (auto id : items) {
        s.items.push_back(id);
        s.timestamps.push_back(ts++);
        if (count) ++freq[static_cast<std::size_t>(id)];
      }
      out.push_back(std::move(s));
    }
  };
  to_sessions(train, d.train, true);
  to_sessions(test, d.test, false);
  for (auto& f : freq) f = std::max<std::int64_t>(f, 1);
  d.catalog = Catalog(keys, freq);
  return d;
}

/// Every item is deterministically followed by the next one (mod n).
inline SplitDataset cyclic_dataset(std::size_t n_items, std::size_t n_train, std::size_t n_test, std::size_t len,
                                   std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto make = [&](std::size_t count) {
    std::vector<std::vector<std::int32_t>> out;
    for (std::size_t s = 0; s < count; ++s) {
      std::vector<std::int32_t> items(len);
      const auto start = static_cast<std::int32_t>(gen() % n_items);
      for (std::size_t t = 0; t < len; ++t) items[t] = static_cast<std::int32_t>((start + t) % n_items);
      out.push_back(std::move(items));
    }
    return out;
  };
  auto train = make(n_train);
  auto test = make(n_test);
  return make_dataset(n_items, std::move(train), std::move(test));
}

/// Clickstream-like data: Zipf item popularity and a sparse first-order
/// transition structure (each item has a few preferred successors, mixed with
/// popularity-driven jumps).
inline SplitDataset markov_dataset(std::size_t n_items, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                                   std::size_t successors = 4, double jump = 0.2, double zipf = 1.1) {
  std::mt19937_64 gen(seed);
  std::vector<double> pop(n_items);
  for (std::size_t i = 0; i < n_items; ++i) pop[i] = 1.0 / std::pow(static_cast<double>(i + 1), zipf);
  std::discrete_distribution<std::int32_t> popular(pop.begin(), pop.end());
  std::vector<std::vector<std::int32_t>> next(n_items);
  for (auto& n : next)
    for (std::size_t j = 0; j < successors; ++j) n.push_back(popular(gen));
  std::vector<double> succ_w(successors);
  for (std::size_t j = 0; j < successors; ++j) succ_w[j] = 1.0 / static_cast<double>(j + 1);
  std::discrete_distribution<std::size_t> pick(succ_w.begin(), succ_w.end());
  std::geometric_distribution<std::size_t> extra(0.15);
  std::bernoulli_distribution jumps(jump);
  auto make = [&](std::size_t count) {
    std::vector<std::vector<std::int32_t>> out;
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t len = 2 + std::min<std::size_t>(extra(gen), 30);
      std::vector<std::int32_t> items{popular(gen)};
      while (items.size() < len) {
        const auto cur = static_cast<std::size_t>(items.back());
        items.push_back(jumps(gen) ? popular(gen) : next[cur][pick(gen)]);
      }
      out.push_back(std::move(items));
    }
    return out;
  };
  auto train = make(n_train);
  auto test = make(n_test);
  return make_dataset(n_items, std::move(train), std::move(test));
}

/// Reference ranking: sorts each full score vector and reads the target's
/// position, with every tied item placed ahead of the target.
inline std::size_t brute_force_rank(const std::vector<double>& scores, std::size_t target) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return (a == target) < (b == target);
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

/// Random batch of b sessions padded to width t (lengths in [2, t]).
inline SessionBatch random_batch(std::mt19937_64& gen, std::size_t b, std::size_t t, std::size_t n_items) {
  std::vector<std::vector<std::int32_t>> sessions(b);
  for (auto& s : sessions) {
    s.resize(2 + gen() % (t - 1));
    for (auto& id : s) id = static_cast<std::int32_t>(gen() % n_items);
  }
  auto d = make_dataset(n_items, sessions, {{0, 1}});
  BatchOptions o;
  o.batch_size = b;
  o.max_len = t;
  o.shuffle = false;
  return BatchStream(d.train, static_cast<std::int32_t>(n_items), o).at(0);
}

// Oracle: full stable sort by descending score, ties by ascending index.
inline std::vector<std::size_t> sort_topk(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  idx.resize(k);
  return idx;
}


inline std::vector<Session> random_sessions(std::size_t n, std::size_t vocab, std::uint64_t seed, std::size_t max_len = 12) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::int32_t> item(0, static_cast<std::int32_t>(vocab) - 1);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::vector<Session> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    out[s].session_id = static_cast<std::int64_t>(s);
    const std::size_t L = len(gen);
    for (std::size_t t = 0; t < L; ++t) {
      out[s].items.push_back(item(gen));
      out[s].timestamps.push_back(static_cast<std::int64_t>(t));
    }
  }
  return out;
}

// Scores one prefix at a time, keeping only the last max_len items.
inline std::vector<double> prefix_scores(const Model& m, const std::vector<std::int32_t>& items, std::size_t t) {
  const std::size_t max_len = m.config().max_len;
  const std::size_t begin = t + 1 > max_len ? t + 1 - max_len : 0;
  std::vector<std::int32_t> ids(items.begin() + static_cast<std::ptrdiff_t>(begin),
                                items.begin() + static_cast<std::ptrdiff_t>(t + 1));
  NoGradGuard guard;
  auto h = m.forward(ids, 1, ids.size(), false);
  const std::size_t d = m.config().hidden_dim;
  std::vector<double> last(h.values().end() - static_cast<std::ptrdiff_t>(d), h.values().end());
  return m.score_all(last, 1);
}

struct EvalOracle {
  std::uint64_t transitions = 0, hits = 0;
  double recall = 0.0, mrr = 0.0;
  double session_recall = 0.0, session_mrr = 0.0;
};

/// Recall@k and MRR@k from per-prefix full sorts. The overall MRR sums
/// reciprocal ranks grouped by rank (1/1 * n1 + 1/2 * n2 + ...), a fixed
/// order that makes exact comparison meaningful.
inline EvalOracle brute_force(const Model& m, const std::vector<Session>& test, std::size_t k) {
  EvalOracle o;
  std::vector<std::uint64_t> at_rank(k + 1, 0);
  std::size_t sessions = 0;
  for (const auto& s : test) {
    if (s.size() < 2) continue;
    std::size_t h = 0;
    double srr = 0.0;
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      const auto scores = prefix_scores(m, s.items, t);
      const auto rank = brute_force_rank(scores, static_cast<std::size_t>(s.items[t + 1]));
      ++o.transitions;
      if (rank <= k) {
        ++h;
        ++at_rank[rank];
        srr += 1.0 / static_cast<double>(rank);
      }
    }
    o.hits += h;
    o.session_recall += static_cast<double>(h) / static_cast<double>(s.size() - 1);
    o.session_mrr += srr / static_cast<double>(s.size() - 1);
    ++sessions;
  }
  o.recall = static_cast<double>(o.hits) / static_cast<double>(o.transitions);
  double rr = 0.0;
  for (std::size_t r = 1; r <= k; ++r) rr += static_cast<double>(at_rank[r]) / static_cast<double>(r);
  o.mrr = rr / static_cast<double>(o.transitions);
  o.session_recall /= static_cast<double>(sessions);
  o.session_mrr /= static_cast<double>(sessions);
  return o;
}

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tron_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tron::testing
