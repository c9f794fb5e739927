// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "support.hpp"

namespace tron {
namespace {

using testing::TempDir;

constexpr std::int64_t kDay = 24LL * 3600 * 1000;

std::vector<Event> parse_string(const std::string& text, InputFormat f, bool strict, ParseStats* stats = nullptr) {
  std::istringstream in(text);
  std::vector<Event> out;
  auto s = parse_events(in, f, strict, [&](const Event& e) { out.push_back(e); });
  if (stats) *stats = s;
  return out;
}

std::vector<Event> events_of(const std::vector<std::vector<std::int64_t>>& sessions, std::int64_t t0 = 0) {
  std::vector<Event> ev;
  std::int64_t ts = t0;
  for (std::size_t s = 0; s < sessions.size(); ++s)
    for (auto key : sessions[s]) ev.push_back({static_cast<std::int64_t>(s), key, ts++, EventType::kClick});
  return ev;
}

TEST(Parse, JsonLineRecord) {
  auto ev = parse_string(R"({"session": 1, "events": [{"aid": 5, "ts": 100, "type": "clicks"}]})",
                         InputFormat::kSessionJsonLines, true);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].session_id, 1);
  EXPECT_EQ(ev[0].item_key, 5);
  EXPECT_EQ(ev[0].timestamp, 100);
  EXPECT_EQ(ev[0].type, EventType::kClick);
}

TEST(Parse, EmptyInput) {
  ParseStats stats;
  EXPECT_TRUE(parse_string("", InputFormat::kSessionJsonLines, true, &stats).empty());
  EXPECT_EQ(stats.skipped, 0u);
  EXPECT_TRUE(parse_string("", InputFormat::kEventCsv, true, &stats).empty());
  EXPECT_EQ(stats.skipped, 0u);
}

TEST(Parse, LenientSkipsMalformedLines) {
  const std::string text =
      "{\"session\": 1, \"events\": [{\"aid\": 5, \"ts\": 100, \"type\": \"clicks\"}]}\n"
      "{\"session\": 2, \"events\": [{\"aid\": \n"
      "{\"session\": 3, \"events\": [{\"aid\": 7, \"ts\": 200, \"type\": \"carts\"}]}\n";
  ParseStats stats;
  auto ev = parse_string(text, InputFormat::kSessionJsonLines, false, &stats);
  EXPECT_EQ(ev.size(), 2u);
  EXPECT_EQ(stats.skipped, 1u);
  ASSERT_EQ(stats.messages.size(), 1u);
  EXPECT_NE(stats.messages[0].find("line 2"), std::string::npos);
  EXPECT_EQ(ev[1].type, EventType::kCart);
  try {
    parse_string(text, InputFormat::kSessionJsonLines, true);
    FAIL() << "strict mode accepted a malformed line";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Parse, CsvWithAndWithoutType) {
  auto ev = parse_string("session_id,item_id,timestamp\n1,10,5\n1,11,6\n", InputFormat::kEventCsv, true);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[1].item_key, 11);
  ev = parse_string("session_id,item_id,timestamp,type\n2,3,4,orders\n", InputFormat::kEventCsv, true);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].type, EventType::kOrder);
  EXPECT_THROW(parse_string("sid,item,ts\n1,2,3\n", InputFormat::kEventCsv, true), ParseError);
  EXPECT_THROW(parse_string("session_id,item_id,timestamp\n1,x,3\n", InputFormat::kEventCsv, true), ParseError);
  EXPECT_THROW(parse_string("session_id,item_id,timestamp\n1,2,-3\n", InputFormat::kEventCsv, true), ParseError);
  ParseStats stats;
  ev = parse_string("session_id,item_id,timestamp\n1,2\n1,2,3\n", InputFormat::kEventCsv, false, &stats);
  EXPECT_EQ(ev.size(), 1u);
  EXPECT_EQ(stats.skipped, 1u);
}

TEST(Parse, MissingFileIsIoError) {
  EXPECT_THROW(parse_events(std::filesystem::path("/nonexistent/x.jsonl"), InputFormat::kSessionJsonLines), IoError);
  EXPECT_EQ(guess_input_format("a/b.csv"), InputFormat::kEventCsv);
  EXPECT_EQ(guess_input_format("a/b.jsonl"), InputFormat::kSessionJsonLines);
  EXPECT_THROW(parse_input_format("parquet"), ConfigError);
}

TEST(Preprocess, FixpointExample) {
  // a=1, b=2, c=3
  auto pre = preprocess(events_of({{1, 2, 1}, {1, 2}, {3, 1}}), {2, 2, {EventType::kClick}});
  ASSERT_EQ(pre.sessions.size(), 2u);
  EXPECT_EQ(pre.catalog.size(), 2u);
  const auto a = *pre.catalog.id_of(1), b = *pre.catalog.id_of(2);
  EXPECT_FALSE(pre.catalog.id_of(3).has_value());
  EXPECT_EQ(pre.catalog.frequency(a), 3);
  EXPECT_EQ(pre.catalog.frequency(b), 2);
  EXPECT_EQ(pre.sessions[0].items, (std::vector<std::int32_t>{a, b, a}));
  EXPECT_EQ(pre.sessions[1].items, (std::vector<std::int32_t>{a, b}));
}

// Brute-force reference: recount everything from scratch each round.
std::vector<std::vector<std::int64_t>> reference_fixpoint(std::vector<std::vector<std::int64_t>> s, std::int64_t sup,
                                                          std::size_t len) {
  for (;;) {
    std::map<std::int64_t, std::int64_t> c;
    for (auto& x : s)
      for (auto k : x) ++c[k];
    auto next = s;
    for (auto& x : next) std::erase_if(x, [&](std::int64_t k) { return c[k] < sup; });
    std::erase_if(next, [&](const auto& x) { return x.size() < len; });
    if (next == s) return s;
    s = next;
  }
}

TEST(Preprocess, MatchesBruteForceFixpoint) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<std::int64_t>> sessions(40);
    for (auto& s : sessions) {
      s.resize(1 + gen() % 6);
      for (auto& k : s) k = static_cast<std::int64_t>(gen() % 30);
    }
    const auto expected = reference_fixpoint(sessions, 3, 2);
    if (expected.empty()) {
      EXPECT_THROW(preprocess(events_of(sessions), {3, 2, {EventType::kClick}}), DataError);
      continue;
    }
    auto pre = preprocess(events_of(sessions), {3, 2, {EventType::kClick}});
    ASSERT_EQ(pre.sessions.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      std::vector<std::int64_t> keys;
      for (auto id : pre.sessions[i].items) keys.push_back(pre.catalog.key_of(id));
      EXPECT_EQ(keys, expected[i]);
    }
    std::int64_t total = 0;
    for (const auto& s : pre.sessions) total += static_cast<std::int64_t>(s.size());
    EXPECT_EQ(pre.catalog.total(), total);
    for (std::size_t id = 0; id < pre.catalog.size(); ++id) EXPECT_GE(pre.catalog.frequency(static_cast<std::int32_t>(id)), 3);
    // Idempotent on its own output.
    std::vector<std::vector<std::int64_t>> again;
    for (const auto& s : pre.sessions) {
      again.emplace_back();
      for (auto id : s.items) again.back().push_back(pre.catalog.key_of(id));
    }
    auto pre2 = preprocess(events_of(again), {3, 2, {EventType::kClick}});
    EXPECT_EQ(pre2.catalog, pre.catalog);
  }
}

TEST(Preprocess, FiltersEventTypesAndSortsByTime) {
  std::vector<Event> ev{{1, 10, 30, EventType::kClick}, {1, 11, 10, EventType::kClick},
                        {1, 12, 20, EventType::kOrder}, {2, 10, 5, EventType::kClick},
                        {2, 11, 6, EventType::kClick}};
  auto pre = preprocess(ev, {1, 2, {EventType::kClick}});
  ASSERT_EQ(pre.sessions.size(), 2u);
  EXPECT_EQ(pre.catalog.size(), 2u);
  EXPECT_EQ(pre.sessions[0].items, (std::vector<std::int32_t>{*pre.catalog.id_of(11), *pre.catalog.id_of(10)}));
  EXPECT_TRUE(std::is_sorted(pre.sessions[0].timestamps.begin(), pre.sessions[0].timestamps.end()));
  EXPECT_THROW(preprocess(ev, {5, 2, {EventType::kClick}}), DataError);
}

TEST(Split, BoundaryConstruction) {
  std::vector<Event> ev{{1, 1, 1 * kDay, EventType::kClick}, {1, 2, 1 * kDay + 1, EventType::kClick},
                        {2, 1, 9 * kDay, EventType::kClick}, {2, 2, 9 * kDay + 1, EventType::kClick}};
  auto pre = preprocess(ev, {1, 2, {EventType::kClick}});
  auto split = temporal_split(pre.sessions, pre.catalog, {7 * kDay, 2, StraddlePolicy::kTestIntact});
  ASSERT_EQ(split.train.size(), 1u);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.train[0].session_id, 1);
  EXPECT_EQ(split.test[0].session_id, 2);
  EXPECT_THROW(temporal_split(pre.sessions, pre.catalog, {0, 2, StraddlePolicy::kTestIntact}), DataError);
}

TEST(Split, SoundnessAndUnknownItems) {
  // Session 3 is test and carries item 9, unseen in train: it is dropped, and
  // the session survives with length 2.
  std::vector<Event> ev{{1, 1, 0, EventType::kClick},          {1, 2, 1, EventType::kClick},
                        {2, 2, 2, EventType::kClick},          {2, 3, 3, EventType::kClick},
                        {3, 1, 10 * kDay, EventType::kClick},  {3, 9, 10 * kDay + 1, EventType::kClick},
                        {3, 3, 10 * kDay + 2, EventType::kClick}, {4, 9, 10 * kDay, EventType::kClick},
                        {4, 9, 10 * kDay + 5, EventType::kClick}, {4, 1, 10 * kDay + 6, EventType::kClick}};
  auto pre = preprocess(ev, {1, 2, {EventType::kClick}});
  auto split = temporal_split(pre.sessions, pre.catalog, {7 * kDay, 2, StraddlePolicy::kTestIntact});
  EXPECT_EQ(split.catalog.size(), 3u);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.test[0].items, (std::vector<std::int32_t>{*split.catalog.id_of(1), *split.catalog.id_of(3)}));
  std::int64_t max_ts = 10 * kDay + 6;
  for (const auto& s : split.train) EXPECT_LE(s.last_timestamp(), max_ts - 7 * kDay);
  std::int64_t total = 0;
  for (const auto& s : split.train) total += static_cast<std::int64_t>(s.size());
  EXPECT_EQ(split.catalog.total(), total);
}

TEST(Split, CutPolicyMovesTailOnly) {
  std::vector<Event> ev{{1, 1, 0, EventType::kClick}, {1, 2, 1, EventType::kClick},
                        {2, 1, 5, EventType::kClick}, {2, 2, 6, EventType::kClick},
                        {2, 1, 20, EventType::kClick}, {2, 2, 21, EventType::kClick}};
  auto pre = preprocess(ev, {1, 2, {EventType::kClick}});
  auto intact = temporal_split(pre.sessions, pre.catalog, {10, 2, StraddlePolicy::kTestIntact});
  EXPECT_EQ(intact.train.size(), 1u);
  EXPECT_EQ(intact.test[0].size(), 4u);
  auto cut = temporal_split(pre.sessions, pre.catalog, {10, 2, StraddlePolicy::kCut});
  EXPECT_EQ(cut.train.size(), 2u);
  EXPECT_EQ(cut.test[0].size(), 2u);
}

TEST(Split, SupportScopeTrain) {
  DataOptions opts;
  opts.preprocess = {2, 2, {EventType::kClick}};
  opts.split = {7 * kDay, 2, StraddlePolicy::kTestIntact};
  // Item 3 has support 2 overall but only 1 in train.
  std::vector<Event> ev{{1, 1, 0, EventType::kClick},      {1, 2, 1, EventType::kClick},
                        {2, 1, 2, EventType::kClick},      {2, 2, 3, EventType::kClick},
                        {3, 3, 4, EventType::kClick},      {3, 1, 5, EventType::kClick},
                        {4, 3, 9 * kDay, EventType::kClick}, {4, 1, 9 * kDay + 1, EventType::kClick},
                        {4, 2, 9 * kDay + 2, EventType::kClick}};
  opts.support_scope = SupportScope::kAll;
  auto all = prepare_dataset(ev, opts);
  EXPECT_TRUE(all.catalog.id_of(3).has_value());
  EXPECT_EQ(all.catalog.frequency(*all.catalog.id_of(3)), 1);
  opts.support_scope = SupportScope::kTrain;
  auto train = prepare_dataset(ev, opts);
  EXPECT_FALSE(train.catalog.id_of(3).has_value());
  EXPECT_EQ(train.test[0].size(), 2u);
}

TEST(Batches, ShiftConstruction) {
  auto d = testing::make_dataset(5, {{0, 1, 2}}, {{0, 1}});
  BatchOptions o;
  o.batch_size = 4;
  o.max_len = 5;
  auto b = make_batches(d.train, 5, o);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].item_ids, (std::vector<std::int32_t>{0, 1, 2, 5, 5}));
  EXPECT_EQ(b[0].targets, (std::vector<std::int32_t>{1, 2, -1, -1, -1}));
  EXPECT_EQ(b[0].mask, (std::vector<std::uint8_t>{1, 1, 0, 0, 0}));
}

TEST(Batches, TruncationKeepsMostRecent) {
  auto d = testing::make_dataset(10, {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}}, {{0, 1}});
  BatchOptions o;
  o.max_len = 4;
  auto b = make_batches(d.train, 10, o);
  EXPECT_EQ(b[0].item_ids, (std::vector<std::int32_t>{6, 7, 8, 9}));
  EXPECT_EQ(b[0].session_items[0].size(), 10u);
}

TEST(Batches, SizesAndRoundTrip) {
  auto d = testing::markov_dataset(50, 300, 5, 9);
  BatchOptions o;
  o.batch_size = 128;
  o.max_len = 8;
  o.seed = 4;
  auto batches = make_batches(d.train, 50, o);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].batch_size, 128u);
  EXPECT_EQ(batches[1].batch_size, 128u);
  EXPECT_EQ(batches[2].batch_size, 44u);
  std::multiset<std::vector<std::int32_t>> expected, got;
  for (const auto& s : d.train) {
    const auto len = std::min<std::size_t>(s.size(), 8);
    expected.insert(std::vector<std::int32_t>(s.items.end() - static_cast<std::ptrdiff_t>(len), s.items.end()));
  }
  for (const auto& b : batches) {
    for (std::size_t r = 0; r < b.batch_size; ++r) {
      std::vector<std::int32_t> row;
      for (std::size_t t = 0; t < b.width && b.item_ids[r * b.width + t] != b.pad_id; ++t) row.push_back(b.item_ids[r * b.width + t]);
      got.insert(row);
      // Prefix property and real targets.
      bool open = true;
      for (std::size_t t = 0; t < b.width; ++t) {
        const bool m = b.mask[r * b.width + t];
        if (!open) EXPECT_FALSE(m);
        if (!m) open = false;
        if (m) EXPECT_GE(b.targets[r * b.width + t], 0);
      }
    }
  }
  EXPECT_EQ(got, expected);
}

TEST(Batches, DeterministicShuffle) {
  auto d = testing::markov_dataset(50, 100, 5, 9);
  BatchOptions o;
  o.batch_size = 16;
  o.seed = 8;
  BatchStream a(d.train, 50, o), b(d.train, 50, o);
  EXPECT_EQ(a.order(), b.order());
  o.epoch = 1;
  BatchStream c(d.train, 50, o);
  EXPECT_NE(a.order(), c.order());
  o.pad_to_longest = true;
  BatchStream p(d.train, 50, o);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto bt = p.at(i);
    EXPECT_EQ(bt.width, *std::max_element(bt.lengths.begin(), bt.lengths.end()));
  }
  EXPECT_THROW(p.at(p.size()), IndexError);
  std::vector<Session> none;
  EXPECT_THROW(BatchStream(none, 0, o), DataError);
}

TEST(Cache, RoundTripAndManifest) {
  TempDir dir("cache");
  auto d = testing::markov_dataset(40, 60, 10, 2);
  save_dataset(dir.path(), d, {{"source", "synthetic"}});
  auto back = load_dataset(dir.path());
  EXPECT_EQ(back.catalog, d.catalog);
  ASSERT_EQ(back.train.size(), d.train.size());
  ASSERT_EQ(back.test.size(), d.test.size());
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    EXPECT_EQ(back.train[i].items, d.train[i].items);
    EXPECT_EQ(back.train[i].timestamps, d.train[i].timestamps);
    EXPECT_EQ(back.train[i].session_id, d.train[i].session_id);
  }
  auto m = read_manifest(dir / "manifest.txt");
  const auto c = count(d);
  EXPECT_EQ(m["train_sessions"], std::to_string(c.train_sessions));
  EXPECT_EQ(m["train_events"], std::to_string(c.train_events));
  EXPECT_EQ(m["items"], std::to_string(c.items));
  EXPECT_EQ(m["source"], "synthetic");
  std::ofstream(dir / "junk.bin") << "nope";
  EXPECT_THROW(load_dataset(dir / "junk.bin"), IoError);
}

}  // namespace
}  // namespace tron
