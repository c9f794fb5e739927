// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Key-value run configuration: schema, file parsing, override resolution and
// resolved snapshots.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tron/data.hpp"
#include "tron/errors.hpp"
#include "tron/train.hpp"

namespace tron {

struct RunConfig {
  TrainConfig train = make_preset("tron-xl");
  DataOptions data;
};

using KeyValues = std::map<std::string, std::string>;

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest representation that parses back to the same double.
inline std::string fmt(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

inline std::string fmt(bool b) { return b ? "true" : "false"; }

template <class T>
  requires std::is_integral_v<T>
std::string fmt(T x) {
  return std::to_string(x);
}

inline std::string event_type_name(EventType t) {
  switch (t) {
    case EventType::kClick: return "click";
    case EventType::kCart: return "cart";
    case EventType::kOrder: return "order";
  }
  return "?";
}

inline std::string to_string(InBatchPool p) { return p == InBatchPool::kMultiset ? "multiset" : "distinct"; }

inline std::string to_string(EvalAverage a) { return a == EvalAverage::kTransition ? "transition" : "session"; }

}  // namespace config_detail

struct KeySpec {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every accepted key, in resolution and snapshot order.
inline const std::vector<KeySpec>& config_schema() {
  using namespace config_detail;
  static const std::vector<KeySpec> schema = [] {
    std::vector<KeySpec> s;
    auto size_key = [&s](std::string key, std::string doc, auto member) {
      s.push_back({key, std::move(doc), [key, member](RunConfig& c, const std::string& v) {
                     member(c) = parse_integer<std::size_t>(key, v);
                   },
                   [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }});
    };
    auto real_key = [&s](std::string key, std::string doc, auto member) {
      s.push_back({key, std::move(doc), [key, member](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); },
                   [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }});
    };
    auto flag_key = [&s](std::string key, std::string doc, auto member) {
      s.push_back({key, std::move(doc), [key, member](RunConfig& c, const std::string& v) { member(c) = parse_flag(key, v); },
                   [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }});
    };

    size_key("train.epochs", "number of passes over the train split", [](RunConfig& c) -> auto& { return c.train.epochs; });
    size_key("train.batch_size", "sessions per batch", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    s.push_back({"train.seed", "master seed for every random stream",
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_integer<std::uint64_t>("train.seed", v); },
                 [](const RunConfig& c) { return fmt(c.train.seed); }});
    real_key("train.lr", "Adam learning rate", [](RunConfig& c) -> auto& { return c.train.adam.lr; });
    real_key("train.beta1", "Adam first-moment decay", [](RunConfig& c) -> auto& { return c.train.adam.beta1; });
    real_key("train.beta2", "Adam second-moment decay", [](RunConfig& c) -> auto& { return c.train.adam.beta2; });
    real_key("train.eps", "Adam denominator epsilon", [](RunConfig& c) -> auto& { return c.train.adam.eps; });
    real_key("train.clip_norm", "global gradient-norm cap (0 = off)", [](RunConfig& c) -> auto& { return c.train.adam.clip_norm; });
    flag_key("train.pad_to_longest", "pad batches to their longest session instead of max_len",
             [](RunConfig& c) -> auto& { return c.train.pad_to_longest; });
    flag_key("train.prefetch", "prepare the next batch and its negatives on a worker thread",
             [](RunConfig& c) -> auto& { return c.train.prefetch; });
    size_key("train.eval_every", "evaluate on the test split every N epochs (0 = never)",
             [](RunConfig& c) -> auto& { return c.train.eval_every; });

    size_key("model.hidden_dim", "embedding and hidden width", [](RunConfig& c) -> auto& { return c.train.model.hidden_dim; });
    size_key("model.num_layers", "transformer blocks", [](RunConfig& c) -> auto& { return c.train.model.num_layers; });
    size_key("model.num_heads", "attention heads", [](RunConfig& c) -> auto& { return c.train.model.num_heads; });
    size_key("model.max_len", "longest encoded prefix", [](RunConfig& c) -> auto& { return c.train.model.max_len; });
    real_key("model.dropout", "dropout rate", [](RunConfig& c) -> auto& { return c.train.model.dropout; });
    s.push_back({"model.norm", "layer-norm placement: post or pre",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "post" && v != "pre") throw ConfigError("model.norm: expected post or pre, got '" + v + "'");
                   c.train.model.post_norm = v == "post";
                 },
                 [](const RunConfig& c) { return std::string(c.train.model.post_norm ? "post" : "pre"); }});
    real_key("model.ln_eps", "layer-norm epsilon", [](RunConfig& c) -> auto& { return c.train.model.ln_eps; });
    s.push_back({"model.init_seed", "parameter init seed (0 = train.seed)",
                 [](RunConfig& c, const std::string& v) {
                   c.train.model.init_seed = parse_integer<std::uint64_t>("model.init_seed", v);
                 },
                 [](const RunConfig& c) { return fmt(c.train.model.init_seed); }});

    auto gran_key = [&s](std::string key, std::string doc, auto member) {
      s.push_back({key, std::move(doc), [member](RunConfig& c, const std::string& v) { member(c) = parse_granularity(v); },
                   [member](const RunConfig& c) { return to_string(member(const_cast<RunConfig&>(c))); }});
    };
    size_key("negs.uniform.count", "uniform negatives", [](RunConfig& c) -> auto& { return c.train.negs.uniform_count; });
    gran_key("negs.uniform.granularity", "elementwise, sessionwise or batchwise",
             [](RunConfig& c) -> auto& { return c.train.negs.uniform_granularity; });
    size_key("negs.frequency.count", "frequency-proportional negatives",
             [](RunConfig& c) -> auto& { return c.train.negs.frequency_count; });
    gran_key("negs.frequency.granularity", "elementwise, sessionwise or batchwise",
             [](RunConfig& c) -> auto& { return c.train.negs.frequency_granularity; });
    size_key("negs.inbatch.count", "in-batch negatives", [](RunConfig& c) -> auto& { return c.train.negs.inbatch_count; });
    gran_key("negs.inbatch.granularity", "elementwise, sessionwise or batchwise",
             [](RunConfig& c) -> auto& { return c.train.negs.inbatch_granularity; });
    s.push_back({"negs.inbatch.pool", "multiset (frequency-weighted) or distinct",
                 [](RunConfig& c, const std::string& v) { c.train.negs.inbatch_pool = parse_inbatch_pool(v); },
                 [](const RunConfig& c) { return config_detail::to_string(c.train.negs.inbatch_pool); }});
    flag_key("negs.inbatch.refill", "top up with replacement when the pool is smaller than the count",
             [](RunConfig& c) -> auto& { return c.train.negs.inbatch_refill; });
    size_key("negs.topk", "keep the k highest-scoring negatives per row (0 = all)",
             [](RunConfig& c) -> auto& { return c.train.negs.topk; });

    s.push_back({"loss", "bce, bpr-max or ssm",
                 [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss_kind(v); },
                 [](const RunConfig& c) { return to_string(c.train.loss); }});
    real_key("loss.bpr_max.lambda", "BPR-MAX score regularization weight",
             [](RunConfig& c) -> auto& { return c.train.bpr_lambda; });

    size_key("eval.k", "cutoff for Recall and MRR", [](RunConfig& c) -> auto& { return c.train.eval.k; });
    s.push_back({"eval.average", "transition or session",
                 [](RunConfig& c, const std::string& v) { c.train.eval.average = parse_eval_average(v); },
                 [](const RunConfig& c) { return config_detail::to_string(c.train.eval.average); }});
    size_key("eval.chunk", "items scored per pass (0 = whole catalog)",
             [](RunConfig& c) -> auto& { return c.train.eval.item_chunk; });
    size_key("eval.batch", "sequences encoded per forward pass",
             [](RunConfig& c) -> auto& { return c.train.eval.batch_windows; });
    size_key("eval.workers", "evaluation threads", [](RunConfig& c) -> auto& { return c.train.eval.workers; });

    s.push_back({"data.min_support", "minimum occurrences per item",
                 [](RunConfig& c, const std::string& v) {
                   c.data.preprocess.min_support = parse_integer<std::int64_t>("data.min_support", v);
                 },
                 [](const RunConfig& c) { return fmt(c.data.preprocess.min_support); }});
    s.push_back({"data.min_len", "minimum session length",
                 [](RunConfig& c, const std::string& v) {
                   c.data.preprocess.min_len = c.data.split.min_len = parse_integer<std::size_t>("data.min_len", v);
                 },
                 [](const RunConfig& c) { return fmt(c.data.preprocess.min_len); }});
    s.push_back({"data.holdout_days", "length of the test window in days",
                 [](RunConfig& c, const std::string& v) {
                   const double days = parse_real("data.holdout_days", v);
                   if (days <= 0.0) throw ConfigError("data.holdout_days must be positive");
                   c.data.split.holdout_ms = static_cast<std::int64_t>(days * 24.0 * 3600.0 * 1000.0);
                 },
                 [](const RunConfig& c) {
                   return fmt(static_cast<double>(c.data.split.holdout_ms) / (24.0 * 3600.0 * 1000.0));
                 }});
    s.push_back({"data.support_scope", "count item support on all events or on the train portion",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "all") c.data.support_scope = SupportScope::kAll;
                   else if (v == "train") c.data.support_scope = SupportScope::kTrain;
                   else throw ConfigError("data.support_scope: expected all or train, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return std::string(c.data.support_scope == SupportScope::kAll ? "all" : "train"); }});
    s.push_back({"data.straddle", "sessions crossing the split boundary: intact or cut",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "intact") c.data.split.straddle = StraddlePolicy::kTestIntact;
                   else if (v == "cut") c.data.split.straddle = StraddlePolicy::kCut;
                   else throw ConfigError("data.straddle: expected intact or cut, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.data.split.straddle == StraddlePolicy::kTestIntact ? "intact" : "cut");
                 }});
    s.push_back({"data.event_types", "comma-separated event types to keep",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<EventType> types;
                   std::stringstream ss(v);
                   std::string part;
                   while (std::getline(ss, part, ',')) {
                     const auto t = parse_event_type(trim(part));
                     if (!t) throw ConfigError("data.event_types: unknown event type '" + part + "'");
                     types.push_back(*t);
                   }
                   if (types.empty()) throw ConfigError("data.event_types must not be empty");
                   c.data.preprocess.keep_types = types;
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (auto t : c.data.preprocess.keep_types) out += (out.empty() ? "" : ",") + event_type_name(t);
                   return out;
                 }});
    return s;
  }();
  return schema;
}

/// Reads `key = value` lines; `#` starts a comment.
inline KeyValues parse_config_text(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", n);
    const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", n);
    if (kv.count(key)) throw ParseError("duplicate key '" + key + "'", n);
    kv[key] = value;
  }
  return kv;
}

inline KeyValues parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  try {
    return parse_config_text(in);
  } catch (const ParseError& e) {
    std::string msg = e.what();
    const std::string prefix = "line " + std::to_string(e.line()) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    throw ParseError(path.string() + ": " + msg, e.line());
  }
}

/// Parses a dotted `key=value` override.
inline std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not key=value");
  return {config_detail::trim(std::string_view(text).substr(0, eq)),
          config_detail::trim(std::string_view(text).substr(eq + 1))};
}

/// Preset first, then every other key in schema order. Unknown keys are
/// rejected before anything is applied.
inline RunConfig resolve_config(const KeyValues& kv) {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    bool found = false;
    for (const auto& spec : config_schema()) found = found || spec.key == k;
    if (!found) unknown.push_back(k);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    msg += unknown.size() > 1 ? "s:" : ":";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg + " (see `tron_cli keys` for the schema)");
  }
  RunConfig c;
  if (auto it = kv.find("preset"); it != kv.end()) c.train = make_preset(it->second);
  for (const auto& spec : config_schema()) {
    if (auto it = kv.find(spec.key); it != kv.end()) spec.set(c, it->second);
  }
  if (c.train.negs.topk > 0 && c.train.negs.topk > c.train.negs.total()) {
    throw ConfigError("negs.topk (" + std::to_string(c.train.negs.topk) + ") exceeds the negative count (" +
                      std::to_string(c.train.negs.total()) + ")");
  }
  if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (c.train.eval.k == 0) throw ConfigError("eval.k must be positive");
  return c;
}

/// Complete key-value image of a config; resolving it yields the same config.
inline KeyValues config_to_kv(const RunConfig& c) {
  KeyValues kv;
  kv["preset"] = c.train.preset;
  for (const auto& spec : config_schema()) kv[spec.key] = spec.get(c);
  return kv;
}

inline void write_config(const std::filesystem::path& path, const RunConfig& c) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config snapshot " + path.string() + (ec ? ": " + ec.message() : ""));
  os << "# resolved configuration\n";
  os << "preset = " << c.train.preset << '\n';
  for (const auto& spec : config_schema()) os << spec.key << " = " << spec.get(c) << '\n';
  if (!os) throw IoError("write failed for config snapshot " + path.string());
}

}  // namespace tron
