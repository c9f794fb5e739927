// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Exhaustive next-item evaluation: every transition of every test session is
// ranked against the whole catalog.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tron/data.hpp"
#include "tron/errors.hpp"
#include "tron/model.hpp"
#include "tron/tensor.hpp"

namespace tron {

enum class EvalAverage { kTransition, kSession };

inline EvalAverage parse_eval_average(const std::string& s) {
  if (s == "transition") return EvalAverage::kTransition;
  if (s == "session") return EvalAverage::kSession;
  throw ConfigError("unknown eval average '" + s + "' (expected transition or session)");
}

struct EvalOptions {
  std::size_t k = 20;
  std::size_t batch_windows = 64;  // sequences encoded per forward pass
  std::size_t item_chunk = 0;      // 0 scores the whole catalog at once
  std::size_t workers = 1;
  EvalAverage average = EvalAverage::kTransition;
};

/// Exact tallies; merging shards only adds integers.
struct EvalCounts {
  std::size_t k = 20;
  std::uint64_t transitions = 0;
  std::vector<std::uint64_t> rank_hist;  // rank_hist[r-1] = transitions ranked r (r <= k)
  // per-session averaging
  std::uint64_t sessions = 0;
  double session_recall_sum = 0.0;
  double session_mrr_sum = 0.0;

  std::uint64_t hits() const {
    std::uint64_t h = 0;
    for (auto c : rank_hist) h += c;
    return h;
  }
  double reciprocal_rank_sum() const {
    double s = 0.0;
    for (std::size_t r = 0; r < rank_hist.size(); ++r) s += static_cast<double>(rank_hist[r]) / static_cast<double>(r + 1);
    return s;
  }
};

struct EvalResult {
  double recall = 0.0;
  double mrr = 0.0;
  std::size_t k = 20;
  std::uint64_t n_transitions = 0;
  std::uint64_t hits = 0;
};

/// 1-based pessimistic rank: the target loses every tie.
inline std::size_t pessimistic_rank(std::span<const double> scores, std::size_t target) {
  const double ts = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != target && scores[j] >= ts) ++rank;
  }
  return rank;
}

namespace eval_detail {

// One encoder input: ids [start, start+len) of a session; rows [first_row,
// len-1) of it are scored (row t predicts the item after position t).
struct Window {
  std::size_t session = 0;
  std::size_t start = 0;
  std::size_t len = 0;
  std::size_t first_row = 0;
};

inline std::vector<Window> windows_for(const std::vector<Session>& sessions, std::size_t max_len) {
  std::vector<Window> out;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    const std::size_t L = sessions[s].size();
    if (L < 2) continue;
    // The first window covers every prefix that fits; longer prefixes slide.
    out.push_back({s, 0, std::min(L, max_len), 0});
    for (std::size_t t = max_len; t + 1 < L; ++t) out.push_back({s, t + 1 - max_len, max_len, max_len - 1});
  }
  return out;
}

inline void accumulate_hits(EvalCounts& c, std::size_t rank) {
  ++c.transitions;
  if (rank <= c.k) ++c.rank_hist[rank - 1];
}

}  // namespace eval_detail

/// Ranks of every evaluated transition in session order (internal helper,
/// also used by tests).
inline std::vector<std::vector<std::size_t>> transition_ranks(const Model& model, const std::vector<Session>& sessions,
                                                              const EvalOptions& opts,
                                                              std::size_t session_begin = 0,
                                                              std::size_t session_end = std::size_t(-1)) {
  NoGradGuard no_grad;
  session_end = std::min(session_end, sessions.size());
  const std::size_t max_len = model.config().max_len;
  const std::size_t vocab = model.config().vocab;
  const std::size_t d = model.config().hidden_dim;
  std::vector<Session> slice(sessions.begin() + static_cast<std::ptrdiff_t>(session_begin),
                             sessions.begin() + static_cast<std::ptrdiff_t>(session_end));
  std::vector<std::vector<std::size_t>> ranks(slice.size());
  for (std::size_t s = 0; s < slice.size(); ++s) {
    for (auto id : slice[s].items) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw IndexError("test item " + std::to_string(id) + " is not in the train catalog");
      }
    }
    ranks[s].resize(slice[s].size() > 0 ? slice[s].size() - 1 : 0);
  }
  const auto windows = eval_detail::windows_for(slice, max_len);
  const std::size_t per = std::max<std::size_t>(1, opts.batch_windows);
  const std::size_t chunk = opts.item_chunk == 0 ? vocab : opts.item_chunk;
  for (std::size_t w0 = 0; w0 < windows.size(); w0 += per) {
    const std::size_t w1 = std::min(windows.size(), w0 + per);
    std::size_t width = 0;
    for (std::size_t w = w0; w < w1; ++w) width = std::max(width, windows[w].len);
    const std::size_t b = w1 - w0;
    std::vector<std::int32_t> grid(b * width, model.pad_id());
    std::vector<std::int64_t> rows;
    std::vector<std::int32_t> targets;
    std::vector<std::pair<std::size_t, std::size_t>> where;  // (session, transition index)
    for (std::size_t w = w0; w < w1; ++w) {
      const auto& win = windows[w];
      const auto& items = slice[win.session].items;
      for (std::size_t t = 0; t < win.len; ++t) grid[(w - w0) * width + t] = items[win.start + t];
      for (std::size_t t = win.first_row; t < win.len && win.start + t + 1 < items.size(); ++t) {
        rows.push_back(static_cast<std::int64_t>((w - w0) * width + t));
        targets.push_back(items[win.start + t + 1]);
        where.emplace_back(win.session, win.start + t);
      }
    }
    if (rows.empty()) continue;
    const Tensor hidden = model.forward(grid, b, width, false);
    const Tensor h = gather_rows(hidden, rows);
    const std::size_t R = rows.size();
    // Pessimistic rank = 1 + #(non-target items scoring >= target).
    std::vector<double> target_score(R);
    for (std::size_t r = 0; r < R; ++r) target_score[r] = model.item_score(h.values().subspan(r * d, d), targets[r]);
    std::vector<std::size_t> rank(R, 1);
    for (std::size_t begin = 0; begin < vocab; begin += chunk) {
      const std::size_t end = std::min(vocab, begin + chunk);
      const auto scores = model.score_range(h.values(), R, begin, end);
      for (std::size_t r = 0; r < R; ++r) {
        const double* row = scores.data() + r * (end - begin);
        const auto tgt = static_cast<std::size_t>(targets[r]);
        for (std::size_t j = begin; j < end; ++j) {
          if (j != tgt && row[j - begin] >= target_score[r]) ++rank[r];
        }
      }
    }
    for (std::size_t r = 0; r < R; ++r) ranks[where[r].first][where[r].second] = rank[r];
  }
  return ranks;
}

/// Recall@k and MRR@k over all transitions of all test sessions.
inline EvalResult evaluate(const Model& model, const std::vector<Session>& test, const EvalOptions& opts = {}) {
  if (test.empty()) throw DataError("evaluation needs a non-empty test set");
  if (opts.k == 0) throw ConfigError("eval k must be positive");
  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, test.size());
  std::vector<EvalCounts> shard(workers);
  auto run = [&](std::size_t w) {
    const std::size_t begin = test.size() * w / workers, end = test.size() * (w + 1) / workers;
    EvalCounts& c = shard[w];
    c.k = opts.k;
    c.rank_hist.assign(opts.k, 0);
    const auto ranks = transition_ranks(model, test, opts, begin, end);
    for (const auto& session : ranks) {
      if (session.empty()) continue;
      std::size_t hits = 0;
      double rr = 0.0;
      for (auto r : session) {
        eval_detail::accumulate_hits(c, r);
        if (r <= opts.k) {
          ++hits;
          rr += 1.0 / static_cast<double>(r);
        }
      }
      ++c.sessions;
      c.session_recall_sum += static_cast<double>(hits) / static_cast<double>(session.size());
      c.session_mrr_sum += rr / static_cast<double>(session.size());
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  EvalCounts total;
  total.k = opts.k;
  total.rank_hist.assign(opts.k, 0);
  for (const auto& c : shard) {
    total.transitions += c.transitions;
    for (std::size_t r = 0; r < opts.k; ++r) total.rank_hist[r] += c.rank_hist[r];
    total.sessions += c.sessions;
    total.session_recall_sum += c.session_recall_sum;
    total.session_mrr_sum += c.session_mrr_sum;
  }
  if (total.transitions == 0) throw DataError("test set has no transitions");
  EvalResult res;
  res.k = opts.k;
  res.n_transitions = total.transitions;
  res.hits = total.hits();
  if (opts.average == EvalAverage::kTransition) {
    res.recall = static_cast<double>(res.hits) / static_cast<double>(total.transitions);
    res.mrr = total.reciprocal_rank_sum() / static_cast<double>(total.transitions);
  } else {
    res.recall = total.session_recall_sum / static_cast<double>(total.sessions);
    res.mrr = total.session_mrr_sum / static_cast<double>(total.sessions);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Metric curves
// ---------------------------------------------------------------------------

struct MetricPoint {
  std::size_t epoch = 0;
  double recall = 0.0;
  double mrr = 0.0;
  double wall_seconds = 0.0;

  friend bool operator==(const MetricPoint&, const MetricPoint&) = default;
};

/// CSV with header `epoch,recall_at_K,mrr_at_K,wall_seconds`; values are
/// printed with 17 significant digits so parsing restores them exactly.
inline void export_metrics(const std::vector<MetricPoint>& series, const std::filesystem::path& path,
                           std::size_t k = 20) {
  if (series.empty()) throw DataError("no metrics to export");
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write metrics file " + path.string() + (ec ? ": " + ec.message() : ""));
  os << "epoch,recall_at_" << k << ",mrr_at_" << k << ",wall_seconds\n";
  os << std::setprecision(17);
  for (const auto& p : series) os << p.epoch << ',' << p.recall << ',' << p.mrr << ',' << p.wall_seconds << '\n';
  if (!os) throw IoError("write failed for metrics file " + path.string());
}

inline std::vector<MetricPoint> parse_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,recall_at_", 0) != 0) {
    throw ParseError("missing metrics header", 1);
  }
  std::vector<MetricPoint> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricPoint p;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> p.epoch >> c1 >> p.recall >> c2 >> p.mrr >> c3 >> p.wall_seconds) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw ParseError("malformed metrics row", n);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace tron
