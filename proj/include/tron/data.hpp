// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Clickstream ingestion, support/length filtering, temporal train/test split,
// and padded session batches with next-item targets.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tron/errors.hpp"
#include "tron/rng.hpp"

namespace tron {

enum class EventType : std::uint8_t { kClick, kCart, kOrder };

struct Event {
  std::int64_t session_id = 0;
  std::int64_t item_key = 0;  // raw item identifier; dense ids come from Catalog
  std::int64_t timestamp = 0;  // epoch milliseconds
  EventType type = EventType::kClick;

  friend bool operator==(const Event&, const Event&) = default;
};

struct Session {
  std::int64_t session_id = 0;
  std::vector<std::int32_t> items;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return items.size(); }
  std::int64_t last_timestamp() const { return timestamps.empty() ? 0 : timestamps.back(); }

  friend bool operator==(const Session&, const Session&) = default;
};

/// Dense item universe. Ids are contiguous in [0, size()) and follow ascending
/// raw-key order.
class Catalog {
 public:
  Catalog() = default;

  Catalog(std::vector<std::int64_t> keys, std::vector<std::int64_t> frequencies)
      : keys_(std::move(keys)), frequencies_(std::move(frequencies)) {
    if (keys_.size() != frequencies_.size()) throw DataError("catalog keys/frequencies length mismatch");
    index_.reserve(keys_.size());
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (!index_.emplace(keys_[i], static_cast<std::int32_t>(i)).second) {
        throw DataError("duplicate catalog key " + std::to_string(keys_[i]));
      }
    }
  }

  std::size_t size() const { return keys_.size(); }
  bool empty() const { return keys_.empty(); }
  std::int64_t key_of(std::int32_t id) const { return keys_.at(static_cast<std::size_t>(id)); }
  std::optional<std::int32_t> id_of(std::int64_t key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::int64_t frequency(std::int32_t id) const { return frequencies_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::int64_t>& frequencies() const { return frequencies_; }
  const std::vector<std::int64_t>& keys() const { return keys_; }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto f : frequencies_) s += f;
    return s;
  }

  friend bool operator==(const Catalog& a, const Catalog& b) {
    return a.keys_ == b.keys_ && a.frequencies_ == b.frequencies_;
  }

 private:
  std::vector<std::int64_t> keys_;
  std::vector<std::int64_t> frequencies_;
  std::unordered_map<std::int64_t, std::int32_t> index_;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

enum class InputFormat { kSessionJsonLines, kEventCsv };

inline InputFormat parse_input_format(const std::string& s) {
  if (s == "jsonl" || s == "session-json-lines") return InputFormat::kSessionJsonLines;
  if (s == "csv" || s == "event-csv") return InputFormat::kEventCsv;
  throw ConfigError("unknown input format '" + s + "' (expected jsonl or csv)");
}

inline InputFormat guess_input_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".csv" ? InputFormat::kEventCsv : InputFormat::kSessionJsonLines;
}

struct ParseStats {
  std::size_t events = 0;
  std::size_t skipped = 0;
  std::vector<std::string> messages;  // "line N: ..." for each skipped record
};

inline std::optional<EventType> parse_event_type(std::string_view s) {
  if (s == "clicks" || s == "click") return EventType::kClick;
  if (s == "carts" || s == "cart") return EventType::kCart;
  if (s == "orders" || s == "order") return EventType::kOrder;
  return std::nullopt;
}

namespace data_detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::int64_t to_int(const std::string& s, std::size_t line, const char* field) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(std::string("bad integer for ") + field + ": '" + s + "'", line);
  }
  if (pos != s.size()) throw ParseError(std::string("bad integer for ") + field + ": '" + s + "'", line);
  return v;
}

inline void parse_json_line(const std::string& text, std::size_t line, const std::function<void(const Event&)>& sink) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object() || !j.contains("session") || !j.contains("events") || !j["session"].is_number_integer() ||
      !j["events"].is_array()) {
    throw ParseError("record needs integer 'session' and array 'events'", line);
  }
  const auto sid = j["session"].get<std::int64_t>();
  std::vector<Event> buf;
  for (const auto& e : j["events"]) {
    if (!e.is_object() || !e.contains("aid") || !e.contains("ts") || !e["aid"].is_number_integer() ||
        !e["ts"].is_number_integer()) {
      throw ParseError("event needs integer 'aid' and 'ts'", line);
    }
    Event ev{sid, e["aid"].get<std::int64_t>(), e["ts"].get<std::int64_t>(), EventType::kClick};
    if (ev.timestamp < 0) throw ParseError("negative timestamp", line);
    if (e.contains("type")) {
      if (!e["type"].is_string()) throw ParseError("'type' must be a string", line);
      auto t = parse_event_type(e["type"].get<std::string>());
      if (!t) throw ParseError("unknown event type '" + e["type"].get<std::string>() + "'", line);
      ev.type = *t;
    }
    buf.push_back(ev);
  }
  for (const auto& ev : buf) sink(ev);
}

}  // namespace data_detail

/// Streams events from `in` to `sink`. Malformed records throw ParseError in
/// strict mode; in lenient mode they are skipped and counted in the stats.
///
/// CSV input has the header `session_id,item_id,timestamp` with an optional
/// fourth `type` column.
inline ParseStats parse_events(std::istream& in, InputFormat format, bool strict,
                               const std::function<void(const Event&)>& sink) {
  ParseStats stats;
  std::string text;
  std::size_t line = 0;
  std::size_t columns = 0;
  auto counted_sink = [&](const Event& e) {
    ++stats.events;
    sink(e);
  };
  while (std::getline(in, text)) {
    ++line;
    const std::string trimmed = data_detail::trim(text);
    if (trimmed.empty()) continue;
    try {
      if (format == InputFormat::kSessionJsonLines) {
        data_detail::parse_json_line(trimmed, line, counted_sink);
        continue;
      }
      std::vector<std::string> fields;
      std::stringstream ss(trimmed);
      std::string f;
      while (std::getline(ss, f, ',')) fields.push_back(data_detail::trim(f));
      if (columns == 0) {
        if (fields.size() < 3 || fields[0] != "session_id" || fields[1] != "item_id" || fields[2] != "timestamp" ||
            (fields.size() == 4 && fields[3] != "type") || fields.size() > 4) {
          throw ParseError("expected header session_id,item_id,timestamp[,type]", line);
        }
        columns = fields.size();
        continue;
      }
      if (fields.size() != columns) {
        throw ParseError("expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()), line);
      }
      Event ev{data_detail::to_int(fields[0], line, "session_id"), data_detail::to_int(fields[1], line, "item_id"),
               data_detail::to_int(fields[2], line, "timestamp"), EventType::kClick};
      if (ev.timestamp < 0) throw ParseError("negative timestamp", line);
      if (columns == 4) {
        auto t = parse_event_type(fields[3]);
        if (!t) throw ParseError("unknown event type '" + fields[3] + "'", line);
        ev.type = *t;
      }
      counted_sink(ev);
    } catch (const ParseError& e) {
      if (strict) throw;
      ++stats.skipped;
      stats.messages.push_back(e.what());
    }
  }
  return stats;
}

inline std::vector<Event> parse_events(const std::filesystem::path& path, InputFormat format, bool strict = true,
                                       ParseStats* stats_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Event> events;
  auto stats = parse_events(in, format, strict, [&](const Event& e) { events.push_back(e); });
  if (stats_out) *stats_out = std::move(stats);
  return events;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Session with raw item keys, before dense id assignment.
struct RawSession {
  std::int64_t session_id = 0;
  std::vector<std::int64_t> keys;
  std::vector<std::int64_t> timestamps;
};

struct PreprocessOptions {
  std::int64_t min_support = 5;
  std::size_t min_len = 2;
  std::vector<EventType> keep_types{EventType::kClick};
};

struct Preprocessed {
  std::vector<Session> sessions;
  Catalog catalog;
};

/// Groups events by session (ascending session id), keeps the requested event
/// types and sorts each session by timestamp (stable for equal stamps).
inline std::vector<RawSession> group_sessions(std::span<const Event> events, std::span<const EventType> keep_types) {
  std::map<std::int64_t, std::vector<std::pair<std::int64_t, std::int64_t>>> by_session;
  for (const auto& e : events) {
    if (std::find(keep_types.begin(), keep_types.end(), e.type) == keep_types.end()) continue;
    by_session[e.session_id].emplace_back(e.timestamp, e.item_key);
  }
  std::vector<RawSession> out;
  out.reserve(by_session.size());
  for (auto& [sid, evs] : by_session) {
    std::stable_sort(evs.begin(), evs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    RawSession s{sid, {}, {}};
    for (const auto& [ts, key] : evs) {
      s.keys.push_back(key);
      s.timestamps.push_back(ts);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Alternately drops items below min_support and sessions shorter than
/// min_len until neither step removes anything.
inline void filter_to_fixpoint(std::vector<RawSession>& sessions, std::int64_t min_support, std::size_t min_len) {
  for (;;) {
    bool changed = false;
    std::unordered_map<std::int64_t, std::int64_t> support;
    for (const auto& s : sessions)
      for (auto k : s.keys) ++support[k];
    for (auto& s : sessions) {
      std::size_t w = 0;
      for (std::size_t i = 0; i < s.keys.size(); ++i) {
        if (support[s.keys[i]] >= min_support) {
          s.keys[w] = s.keys[i];
          s.timestamps[w] = s.timestamps[i];
          ++w;
        }
      }
      if (w != s.keys.size()) {
        changed = true;
        s.keys.resize(w);
        s.timestamps.resize(w);
      }
    }
    const auto before = sessions.size();
    std::erase_if(sessions, [&](const RawSession& s) { return s.keys.size() < min_len; });
    changed = changed || sessions.size() != before;
    if (!changed) return;
  }
}

/// Builds a catalog over every key in `sessions` (frequencies counted there)
/// and the dense-id view of the sessions.
inline Preprocessed densify(const std::vector<RawSession>& sessions) {
  std::map<std::int64_t, std::int64_t> counts;
  for (const auto& s : sessions)
    for (auto k : s.keys) ++counts[k];
  std::vector<std::int64_t> keys, freqs;
  for (const auto& [k, c] : counts) {
    keys.push_back(k);
    freqs.push_back(c);
  }
  Preprocessed out;
  out.catalog = Catalog(std::move(keys), std::move(freqs));
  out.sessions.reserve(sessions.size());
  for (const auto& s : sessions) {
    Session d{s.session_id, {}, s.timestamps};
    d.items.reserve(s.keys.size());
    for (auto k : s.keys) d.items.push_back(*out.catalog.id_of(k));
    out.sessions.push_back(std::move(d));
  }
  return out;
}

inline Preprocessed preprocess(std::span<const Event> events, const PreprocessOptions& opts = {}) {
  auto raw = group_sessions(events, opts.keep_types);
  filter_to_fixpoint(raw, opts.min_support, opts.min_len);
  if (raw.empty()) throw DataError("dataset empty after preprocessing");
  return densify(raw);
}

// ---------------------------------------------------------------------------
// Temporal split
// ---------------------------------------------------------------------------

enum class StraddlePolicy {
  kTestIntact,  // a session ending inside the window goes to test whole
  kCut,         // events before the boundary stay in train, the rest go to test
};

struct SplitOptions {
  std::int64_t holdout_ms = 7LL * 24 * 3600 * 1000;
  std::size_t min_len = 2;
  StraddlePolicy straddle = StraddlePolicy::kTestIntact;
};

struct SplitDataset {
  std::vector<Session> train;
  std::vector<Session> test;
  Catalog catalog;  // built from train only
};

namespace data_detail {

inline std::vector<RawSession> to_raw(const std::vector<Session>& sessions, const Catalog& catalog) {
  std::vector<RawSession> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) {
    RawSession r{s.session_id, {}, s.timestamps};
    r.keys.reserve(s.items.size());
    for (auto id : s.items) r.keys.push_back(catalog.key_of(id));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::pair<std::vector<RawSession>, std::vector<RawSession>> split_raw(std::vector<RawSession> sessions,
                                                                            const SplitOptions& opts) {
  std::int64_t max_ts = 0;
  for (const auto& s : sessions)
    if (!s.timestamps.empty()) max_ts = std::max(max_ts, s.timestamps.back());
  const std::int64_t boundary = max_ts - opts.holdout_ms;  // test iff last event > boundary
  std::vector<RawSession> train, test;
  for (auto& s : sessions) {
    if (s.timestamps.empty()) continue;
    if (s.timestamps.back() <= boundary) {
      train.push_back(std::move(s));
      continue;
    }
    if (opts.straddle == StraddlePolicy::kCut && s.timestamps.front() <= boundary) {
      RawSession head{s.session_id, {}, {}}, tail{s.session_id, {}, {}};
      for (std::size_t i = 0; i < s.keys.size(); ++i) {
        auto& dst = s.timestamps[i] <= boundary ? head : tail;
        dst.keys.push_back(s.keys[i]);
        dst.timestamps.push_back(s.timestamps[i]);
      }
      if (head.keys.size() >= opts.min_len) train.push_back(std::move(head));
      test.push_back(std::move(tail));
    } else {
      test.push_back(std::move(s));
    }
  }
  return {std::move(train), std::move(test)};
}

inline SplitDataset finish_split(const std::vector<RawSession>& train, const std::vector<RawSession>& test,
                                 std::size_t min_len) {
  if (train.empty()) throw DataError("temporal split produced an empty train set");
  Preprocessed tr = densify(train);
  SplitDataset out{std::move(tr.sessions), {}, std::move(tr.catalog)};
  for (const auto& s : test) {
    Session d{s.session_id, {}, {}};
    for (std::size_t i = 0; i < s.keys.size(); ++i) {
      if (auto id = out.catalog.id_of(s.keys[i])) {
        d.items.push_back(*id);
        d.timestamps.push_back(s.timestamps[i]);
      }
    }
    if (d.items.size() >= min_len) out.test.push_back(std::move(d));
  }
  if (out.test.empty()) throw DataError("temporal split produced an empty test set");
  return out;
}

}  // namespace data_detail

/// Sessions whose last event lies within the final `holdout_ms` of the data
/// become test; the catalog is rebuilt from train and test items unknown to
/// train are dropped (sessions then shorter than min_len are dropped too).
inline SplitDataset temporal_split(const std::vector<Session>& sessions, const Catalog& catalog,
                                   const SplitOptions& opts = {}) {
  if (opts.holdout_ms < 0) throw ConfigError("holdout must be non-negative");
  auto [train, test] = data_detail::split_raw(data_detail::to_raw(sessions, catalog), opts);
  return data_detail::finish_split(train, test, opts.min_len);
}

enum class SupportScope { kAll, kTrain };

struct DataOptions {
  PreprocessOptions preprocess;
  SplitOptions split;
  SupportScope support_scope = SupportScope::kAll;
};

/// Full preparation pipeline. With kAll the support/length fixpoint runs on
/// the whole log before splitting; with kTrain it runs on the train portion
/// only.
inline SplitDataset prepare_dataset(std::span<const Event> events, const DataOptions& opts) {
  if (opts.support_scope == SupportScope::kAll) {
    auto pre = preprocess(events, opts.preprocess);
    return temporal_split(pre.sessions, pre.catalog, opts.split);
  }
  auto raw = group_sessions(events, opts.preprocess.keep_types);
  std::erase_if(raw, [&](const RawSession& s) { return s.keys.size() < opts.preprocess.min_len; });
  auto [train, test] = data_detail::split_raw(std::move(raw), opts.split);
  filter_to_fixpoint(train, opts.preprocess.min_support, opts.preprocess.min_len);
  return data_detail::finish_split(train, test, opts.split.min_len);
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// b sessions laid out left-aligned in a [b x width] grid. Position t holds
/// item i_t and, when mask[t] is set, target i_{t+1}.
struct SessionBatch {
  std::size_t batch_size = 0;
  std::size_t width = 0;
  std::int32_t pad_id = 0;
  std::vector<std::int32_t> item_ids;  // [b * width], pad_id past the end of a row
  std::vector<std::int32_t> targets;   // [b * width], -1 where no target
  std::vector<std::uint8_t> mask;      // [b * width]
  std::vector<std::size_t> lengths;    // truncated row lengths
  std::vector<std::int64_t> session_ids;
  std::vector<std::vector<std::int32_t>> session_items;  // full member sessions

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

struct BatchOptions {
  std::size_t batch_size = 128;
  std::size_t max_len = 50;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  bool shuffle = true;
  bool pad_to_longest = false;  // width = longest row in the batch instead of max_len
};

/// Lazy epoch view: the shuffled order is fixed at construction, batches are
/// materialized on demand so any worker can build batch i independently.
class BatchStream {
 public:
  BatchStream(const std::vector<Session>& sessions, std::int32_t pad_id, BatchOptions opts)
      : sessions_(&sessions), pad_id_(pad_id), opts_(opts) {
    if (opts_.max_len < 2) throw ConfigError("max_len must be at least 2");
    if (opts_.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (sessions.empty()) throw DataError("cannot batch an empty session list");
    order_.resize(sessions.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (opts_.shuffle) {
      CounterRng rng(opts_.seed, opts_.epoch, 0, StreamTag::kShuffle);
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_index(i)]);
    }
  }

  std::size_t size() const { return (order_.size() + opts_.batch_size - 1) / opts_.batch_size; }

  SessionBatch at(std::size_t index) const {
    const std::size_t begin = index * opts_.batch_size;
    if (begin >= order_.size()) throw IndexError("batch index " + std::to_string(index) + " out of range");
    const std::size_t end = std::min(order_.size(), begin + opts_.batch_size);
    SessionBatch b;
    b.batch_size = end - begin;
    b.pad_id = pad_id_;
    std::size_t width = opts_.max_len;
    if (opts_.pad_to_longest) {
      width = 0;
      for (std::size_t i = begin; i < end; ++i) width = std::max(width, (*sessions_)[order_[i]].size());
      width = std::clamp<std::size_t>(width, 1, opts_.max_len);
    }
    b.width = width;
    b.item_ids.assign(b.batch_size * width, pad_id_);
    b.targets.assign(b.batch_size * width, -1);
    b.mask.assign(b.batch_size * width, 0);
    for (std::size_t r = 0; r < b.batch_size; ++r) {
      const Session& s = (*sessions_)[order_[begin + r]];
      const std::size_t len = std::min(s.size(), opts_.max_len);
      const std::size_t off = s.size() - len;
      for (std::size_t t = 0; t < len; ++t) {
        b.item_ids[r * width + t] = s.items[off + t];
        if (t + 1 < len) {
          b.targets[r * width + t] = s.items[off + t + 1];
          b.mask[r * width + t] = 1;
        }
      }
      b.lengths.push_back(len);
      b.session_ids.push_back(s.session_id);
      b.session_items.push_back(s.items);
    }
    return b;
  }

  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const std::vector<Session>* sessions_;
  std::int32_t pad_id_;
  BatchOptions opts_;
  std::vector<std::size_t> order_;
};

inline std::vector<SessionBatch> make_batches(const std::vector<Session>& sessions, std::int32_t pad_id,
                                              const BatchOptions& opts) {
  BatchStream stream(sessions, pad_id, opts);
  std::vector<SessionBatch> out;
  out.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) out.push_back(stream.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Prepared-dataset cache
// ---------------------------------------------------------------------------

struct DatasetCounts {
  std::size_t train_sessions = 0, train_events = 0, test_sessions = 0, test_events = 0, items = 0;
};

inline DatasetCounts count(const SplitDataset& d) {
  DatasetCounts c;
  c.train_sessions = d.train.size();
  c.test_sessions = d.test.size();
  for (const auto& s : d.train) c.train_events += s.size();
  for (const auto& s : d.test) c.test_events += s.size();
  c.items = d.catalog.size();
  return c;
}

namespace data_detail {

inline constexpr char kDatasetMagic[8] = {'T', 'R', 'O', 'N', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated binary file");
  return v;
}

inline void put_sessions(std::ostream& os, const std::vector<Session>& ss) {
  put<std::uint64_t>(os, ss.size());
  for (const auto& s : ss) {
    put<std::int64_t>(os, s.session_id);
    put<std::uint64_t>(os, s.items.size());
    os.write(reinterpret_cast<const char*>(s.items.data()), static_cast<std::streamsize>(s.items.size() * 4));
    os.write(reinterpret_cast<const char*>(s.timestamps.data()), static_cast<std::streamsize>(s.timestamps.size() * 8));
  }
}

inline std::vector<Session> get_sessions(std::istream& is, std::size_t n_items) {
  const auto n = get<std::uint64_t>(is);
  std::vector<Session> ss(n);
  for (auto& s : ss) {
    s.session_id = get<std::int64_t>(is);
    const auto len = get<std::uint64_t>(is);
    if (len > (1u << 30)) throw IoError("corrupt session length");
    s.items.resize(len);
    s.timestamps.resize(len);
    is.read(reinterpret_cast<char*>(s.items.data()), static_cast<std::streamsize>(len * 4));
    is.read(reinterpret_cast<char*>(s.timestamps.data()), static_cast<std::streamsize>(len * 8));
    if (!is) throw IoError("truncated dataset file");
    for (auto id : s.items) {
      if (id < 0 || static_cast<std::size_t>(id) >= n_items) throw IoError("dataset item id out of catalog range");
    }
  }
  return ss;
}

}  // namespace data_detail

/// Writes `dataset.bin` and a key=value `manifest.txt` into `dir`.
inline void save_dataset(const std::filesystem::path& dir, const SplitDataset& d,
                         const std::vector<std::pair<std::string, std::string>>& extra_manifest = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "dataset.bin", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "dataset.bin").string());
    os.write(data_detail::kDatasetMagic, 8);
    data_detail::put(os, data_detail::kDatasetVersion);
    data_detail::put<std::uint64_t>(os, d.catalog.size());
    for (std::size_t i = 0; i < d.catalog.size(); ++i) {
      data_detail::put(os, d.catalog.keys()[i]);
      data_detail::put(os, d.catalog.frequencies()[i]);
    }
    data_detail::put_sessions(os, d.train);
    data_detail::put_sessions(os, d.test);
    if (!os) throw IoError("write failed for " + (dir / "dataset.bin").string());
  }
  const auto c = count(d);
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw IoError("cannot write " + (dir / "manifest.txt").string());
  m << "format_version=" << data_detail::kDatasetVersion << "\n"
    << "train_sessions=" << c.train_sessions << "\n"
    << "train_events=" << c.train_events << "\n"
    << "test_sessions=" << c.test_sessions << "\n"
    << "test_events=" << c.test_events << "\n"
    << "items=" << c.items << "\n";
  for (const auto& [k, v] : extra_manifest) m << k << "=" << v << "\n";
}

inline SplitDataset load_dataset(const std::filesystem::path& dir) {
  const auto path = std::filesystem::is_directory(dir) ? dir / "dataset.bin" : dir;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, data_detail::kDatasetMagic, 8) != 0) throw IoError(path.string() + " is not a dataset file");
  if (data_detail::get<std::uint32_t>(is) != data_detail::kDatasetVersion) throw IoError("unsupported dataset version");
  const auto n = data_detail::get<std::uint64_t>(is);
  std::vector<std::int64_t> keys(n), freqs(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = data_detail::get<std::int64_t>(is);
    freqs[i] = data_detail::get<std::int64_t>(is);
  }
  SplitDataset d;
  d.catalog = Catalog(std::move(keys), std::move(freqs));
  d.train = data_detail::get_sessions(is, n);
  d.test = data_detail::get_sessions(is, n);
  return d;
}

inline std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace tron
