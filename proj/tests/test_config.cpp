// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

namespace tron {
namespace {

using testing::TempDir;

KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config_text(in);
}

TEST(ConfigText, CommentsBlanksAndWhitespace) {
  const auto kv = parse("# header\n\n  preset = sasrec-ssm  # trailing\nnegs.topk=0\n\t eval.k =\t10\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("preset"), "sasrec-ssm");
  EXPECT_EQ(kv.at("negs.topk"), "0");
  EXPECT_EQ(kv.at("eval.k"), "10");
}

TEST(ConfigText, ErrorsCarryLineNumbers) {
  try {
    parse("eval.k = 5\n\nnot a pair\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  try {
    parse("eval.k = 5\neval.k = 6\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse(" = 5\n"), ParseError);
  EXPECT_THROW(parse_config_file("/nonexistent/tron.conf"), IoError);
}

TEST(ConfigResolve, DefaultsToTronXl) {
  const auto c = resolve_config({});
  EXPECT_EQ(c.train.preset, "tron-xl");
  EXPECT_EQ(c.train.negs.uniform_count, 16384u);
  EXPECT_EQ(c.train.negs.topk, 100u);
}

TEST(ConfigResolve, PresetThenOverrides) {
  const auto c = resolve_config({{"preset", "sasrec-l-negs"},
                                 {"negs.uniform.count", "100"},
                                 {"negs.uniform.granularity", "sessionwise"},
                                 {"loss", "bpr-max"},
                                 {"loss.bpr_max.lambda", "0.5"},
                                 {"model.norm", "pre"},
                                 {"train.lr", "0.0005"},
                                 {"data.holdout_days", "1.5"},
                                 {"data.event_types", "click,cart"},
                                 {"data.min_len", "3"}});
  EXPECT_EQ(c.train.preset, "sasrec-l-negs");
  EXPECT_EQ(c.train.negs.uniform_count, 100u);
  EXPECT_EQ(c.train.negs.uniform_granularity, Granularity::kSessionwise);
  EXPECT_EQ(c.train.negs.inbatch_count, 127u);
  EXPECT_EQ(c.train.loss, LossKind::kBprMax);
  EXPECT_EQ(c.train.bpr_lambda, 0.5);
  EXPECT_FALSE(c.train.model.post_norm);
  EXPECT_EQ(c.train.adam.lr, 0.0005);
  EXPECT_EQ(c.data.split.holdout_ms, 36LL * 3600 * 1000);
  EXPECT_EQ(c.data.preprocess.keep_types.size(), 2u);
  EXPECT_EQ(c.data.preprocess.min_len, 3u);
  EXPECT_EQ(c.data.split.min_len, 3u);
}

TEST(ConfigResolve, RejectsUnknownKeysAndBadValues) {
  try {
    resolve_config({{"negs.uniform.cnt", "5"}, {"eval.kk", "1"}});
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("negs.uniform.cnt"), std::string::npos);
    EXPECT_NE(msg.find("eval.kk"), std::string::npos);
    EXPECT_NE(msg.find("tron_cli keys"), std::string::npos);
  }
  EXPECT_THROW(resolve_config({{"preset", "nope"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"negs.uniform.granularity", "rowwise"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"train.epochs", "-1"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"train.epochs", "3x"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"train.prefetch", "maybe"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"loss", "hinge"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"negs.topk", "20000"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"train.batch_size", "0"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"eval.k", "0"}}), ConfigError);
  EXPECT_THROW(resolve_config({{"data.event_types", "click,hover"}}), ConfigError);
}

TEST(ConfigResolve, OverrideSyntax) {
  EXPECT_EQ(parse_override("negs.topk=50"), (std::pair<std::string, std::string>{"negs.topk", "50"}));
  EXPECT_EQ(parse_override(" eval.k = 5 ").second, "5");
  EXPECT_THROW(parse_override("negs.topk"), ConfigError);
  EXPECT_THROW(parse_override("=3"), ConfigError);
}

TEST(ConfigSnapshot, RoundTripsEveryPreset) {
  TempDir dir("config");
  for (const auto& name : preset_names()) {
    KeyValues kv{{"preset", name}, {"train.seed", "7"}, {"train.lr", "0.1"}, {"model.dropout", "0.3"},
                 {"data.holdout_days", "2.25"}};
    const auto c = resolve_config(kv);
    const auto path = dir / (name + ".conf");
    write_config(path, c);
    const auto back = resolve_config(parse_config_file(path));
    EXPECT_EQ(config_to_kv(back), config_to_kv(c)) << name;
    EXPECT_EQ(back.train.adam.lr, 0.1);
    EXPECT_EQ(back.train.model.dropout, 0.3);
  }
  std::ofstream(dir / "blocker") << "x";
  EXPECT_THROW(write_config(dir / "blocker" / "c.conf", RunConfig{}), IoError);
}

TEST(ConfigSchema, KeysAreUniqueAndDocumented) {
  std::set<std::string> keys;
  for (const auto& spec : config_schema()) {
    EXPECT_TRUE(keys.insert(spec.key).second) << spec.key;
    EXPECT_FALSE(spec.doc.empty()) << spec.key;
  }
  EXPECT_GE(keys.size(), 40u);
  const auto kv = config_to_kv(RunConfig{});
  EXPECT_EQ(kv.size(), keys.size() + 1);
}

}  // namespace
}  // namespace tron
