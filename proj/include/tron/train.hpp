// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Training loop: batch -> encode -> sample negatives -> score -> top-k ->
// loss -> Adam step.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tron/data.hpp"
#include "tron/errors.hpp"
#include "tron/eval.hpp"
#include "tron/loss.hpp"
#include "tron/model.hpp"
#include "tron/optim.hpp"
#include "tron/sampler.hpp"
#include "tron/tensor.hpp"

namespace tron {

struct TrainConfig {
  std::string preset = "tron-xl";
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  std::uint64_t seed = 42;
  bool pad_to_longest = true;
  bool prefetch = true;
  std::size_t eval_every = 0;  // evaluate on the test split every N epochs; 0 = never
  ModelConfig model;
  AdamOptions adam;
  NegativeConfig negs;
  LossKind loss = LossKind::kSsm;
  double bpr_lambda = 1.0;
  EvalOptions eval;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"sasrec",         "sasrec-m-negs", "sasrec-l-negs", "sasrec-bpr-max",
                                              "sasrec-ssm",     "tron-l",        "tron-xl"};
  return names;
}

/// The experiment grid: SASRec with one uniform negative per position and
/// BCE; M/L-Negs add uniform plus in-batch sessionwise negatives; BPR-MAX and
/// SSM swap the loss; TRON samples its uniform negatives batchwise and keeps
/// only the top 100 scored negatives.
inline TrainConfig make_preset(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  c.model.hidden_dim = 200;
  c.model.num_layers = 2;
  c.batch_size = 128;
  auto l_negs = [](NegativeConfig& n) {
    n.uniform_count = 8192;
    n.uniform_granularity = Granularity::kElementwise;
    n.inbatch_count = 127;
    n.inbatch_granularity = Granularity::kSessionwise;
  };
  if (name == "sasrec") {
    c.negs.uniform_count = 1;
    c.negs.uniform_granularity = Granularity::kElementwise;
    c.loss = LossKind::kBce;
  } else if (name == "sasrec-m-negs") {
    c.negs.uniform_count = 512;
    c.negs.uniform_granularity = Granularity::kElementwise;
    c.negs.inbatch_count = 16;
    c.loss = LossKind::kBce;
  } else if (name == "sasrec-l-negs") {
    l_negs(c.negs);
    c.loss = LossKind::kBce;
  } else if (name == "sasrec-bpr-max") {
    l_negs(c.negs);
    c.loss = LossKind::kBprMax;
  } else if (name == "sasrec-ssm") {
    l_negs(c.negs);
    c.loss = LossKind::kSsm;
  } else if (name == "tron-l" || name == "tron-xl") {
    c.negs.uniform_count = name == "tron-l" ? 8192 : 16384;
    c.negs.uniform_granularity = Granularity::kBatchwise;
    c.negs.inbatch_count = 127;
    c.negs.inbatch_granularity = Granularity::kSessionwise;
    c.negs.topk = 100;
    c.loss = LossKind::kSsm;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss_mean = 0.0;
  double seconds = 0.0;
  double epochs_per_hour = 0.0;
  std::size_t batches = 0;
  std::size_t rows = 0;  // scored (session, position) pairs
  DrawCounts draws;
  double backward_negatives = 0.0;  // negatives per row that reach the loss
  std::optional<EvalResult> eval;
};

struct TrainReport {
  std::vector<EpochStats> epochs;

  std::vector<MetricPoint> metric_series() const {
    std::vector<MetricPoint> out;
    double wall = 0.0;
    for (const auto& e : epochs) {
      wall += e.seconds;
      if (e.eval) out.push_back({e.epoch, e.eval->recall, e.eval->mrr, wall});
    }
    return out;
  }
};

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"loss_mean", e.loss_mean},
                     {"seconds", e.seconds},
                     {"epochs_per_hour", e.epochs_per_hour},
                     {"batches", e.batches},
                     {"rows", e.rows},
                     {"backward_negatives", e.backward_negatives},
                     {"draws", {{"uniform", e.draws.uniform}, {"frequency", e.draws.frequency}, {"inbatch", e.draws.inbatch}}}};
    if (e.eval) {
      j["eval"] = {{"k", e.eval->k},
                   {"recall", e.eval->recall},
                   {"mrr", e.eval->mrr},
                   {"transitions", e.eval->n_transitions},
                   {"hits", e.eval->hits}};
    }
    epochs.push_back(std::move(j));
  }
  return {{"epochs", epochs}};
}

inline TrainReport report_from_json(const nlohmann::json& j) {
  TrainReport r;
  for (const auto& e : j.at("epochs")) {
    EpochStats s;
    s.epoch = e.at("epoch").get<std::size_t>();
    s.loss_mean = e.at("loss_mean").get<double>();
    s.seconds = e.at("seconds").get<double>();
    s.epochs_per_hour = e.at("epochs_per_hour").get<double>();
    s.batches = e.at("batches").get<std::size_t>();
    s.rows = e.at("rows").get<std::size_t>();
    s.backward_negatives = e.at("backward_negatives").get<double>();
    s.draws.uniform = e.at("draws").at("uniform").get<std::uint64_t>();
    s.draws.frequency = e.at("draws").at("frequency").get<std::uint64_t>();
    s.draws.inbatch = e.at("draws").at("inbatch").get<std::uint64_t>();
    if (e.contains("eval")) {
      EvalResult ev;
      ev.k = e["eval"].at("k").get<std::size_t>();
      ev.recall = e["eval"].at("recall").get<double>();
      ev.mrr = e["eval"].at("mrr").get<double>();
      ev.n_transitions = e["eval"].at("transitions").get<std::uint64_t>();
      ev.hits = e["eval"].at("hits").get<std::uint64_t>();
      s.eval = ev;
    }
    r.epochs.push_back(std::move(s));
  }
  return r;
}

struct StepResult {
  double loss = 0.0;
  std::size_t rows = 0;
  std::size_t backward_negatives = 0;
};

/// Owns the model and optimizer; the dataset must outlive it.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const SplitDataset& data) : cfg_(std::move(cfg)), data_(&data), model_(init_model(cfg_, data)) {
    adam_ = Adam(cfg_.adam);
    dist_ = ItemDistribution(data.catalog);
    if (cfg_.negs.total() == 0) throw ConfigError("training needs at least one negative");
    if (cfg_.batch_size == 0) throw ConfigError("batch_size must be positive");
  }

  const TrainConfig& config() const { return cfg_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  Adam& optimizer() { return adam_; }
  const TrainReport& report() const { return report_; }
  std::size_t epochs_done() const { return epochs_done_; }

  BatchStream batches(std::size_t epoch) const {
    BatchOptions o;
    o.batch_size = cfg_.batch_size;
    o.max_len = cfg_.model.max_len;
    o.seed = cfg_.seed;
    o.epoch = epoch;
    o.pad_to_longest = cfg_.pad_to_longest;
    return BatchStream(data_->train, model_.pad_id(), o);
  }

  NegativeSet negatives(const SessionBatch& batch, std::size_t epoch, std::size_t index, DrawCounts* counts) const {
    return sample_negatives(batch, dist_, cfg_.negs, cfg_.seed, epoch, index, counts);
  }

  /// Negative scores that reach the loss: all of them, or the top-k per row
  /// when filtering is on. With filtering the full score matrix is computed
  /// outside the graph and only the selected ids are re-scored with autodiff,
  /// so discarded negatives get no gradient at all.
  Tensor negative_scores(const Tensor& h, const ValidRows& rows, const NegativeSet& negs) const {
    const auto groups = rows.groups(negs);
    const std::size_t topk = cfg_.negs.topk;
    if (topk == 0 || topk >= negs.count()) return model_.score_negatives(h, negs, groups);
    std::vector<double> full;
    {
      NoGradGuard guard;
      const Tensor scored = model_.score_negatives(h, negs, groups);
      full.assign(scored.values().begin(), scored.values().end());
    }
    const auto sel = topk_filter(full, rows.size(), negs.count(), topk);
    std::vector<std::int32_t> picked(rows.size() * topk);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = negs.row(groups[r]);
      for (std::size_t j = 0; j < topk; ++j) picked[r * topk + j] = row[sel.indices[r * topk + j]];
    }
    return model_.score_ids(h, picked, topk);
  }

  /// Loss of one batch under the current parameters, recording the graph.
  Tensor batch_loss(const SessionBatch& batch, const NegativeSet& negs, std::size_t epoch, std::size_t index,
                    StepResult* info = nullptr) const {
    const ValidRows rows = ValidRows::of(batch);
    if (rows.size() == 0) throw DataError("batch has no valid positions");
    CounterRng drop_rng(cfg_.seed, epoch, index, StreamTag::kDropout);
    const Tensor hidden = model_.forward(batch, true, &drop_rng);
    const Tensor h = gather_rows(hidden, rows.flat);
    const Tensor pos = model_.score_targets(h, rows.targets);
    const Tensor neg = negative_scores(h, rows, negs);
    if (info) {
      info->rows = rows.size();
      info->backward_negatives = neg.dim(1);
    }
    return ranking_loss(cfg_.loss, pos, neg, {}, cfg_.bpr_lambda);
  }

  StepResult step(const SessionBatch& batch, const NegativeSet& negs, std::size_t epoch, std::size_t index) {
    StepResult info;
    model_.zero_grad();
    Tensor loss = batch_loss(batch, negs, epoch, index, &info);
    info.loss = loss.item();
    if (!std::isfinite(info.loss)) {
      std::ostringstream os;
      os << "training diverged at epoch " << epoch + 1 << " batch " << index << ": loss=" << info.loss
         << " rows=" << info.rows << " negatives=" << info.backward_negatives
         << " last_finite_loss=" << last_finite_loss_;
      throw NumericError(os.str());
    }
    last_finite_loss_ = info.loss;
    loss.backward();
    auto params = model_.parameters();
    adam_.step(params);
    return info;
  }

  /// One pass over the train split. `epoch` is 0-based.
  EpochStats run_epoch(std::size_t epoch) {
    const auto stream = batches(epoch);
    EpochStats stats;
    stats.epoch = epoch + 1;
    double loss_sum = 0.0;
    double neg_sum = 0.0;
    using Prepared = std::pair<SessionBatch, std::pair<NegativeSet, DrawCounts>>;
    auto prepare = [this, &stream, epoch](std::size_t i) -> Prepared {
      SessionBatch b = stream.at(i);
      DrawCounts c;
      NegativeSet n = negatives(b, epoch, i, &c);
      return {std::move(b), {std::move(n), c}};
    };
    const auto start = std::chrono::steady_clock::now();
    std::future<Prepared> next;
    if (cfg_.prefetch && stream.size() > 0) next = std::async(std::launch::async, prepare, 0);
    for (std::size_t i = 0; i < stream.size(); ++i) {
      Prepared cur = cfg_.prefetch ? next.get() : prepare(i);
      if (cfg_.prefetch && i + 1 < stream.size()) next = std::async(std::launch::async, prepare, i + 1);
      const auto& [batch, ns] = cur;
      stats.draws += ns.second;
      if (batch.valid_count() == 0) continue;
      const auto r = step(batch, ns.first, epoch, i);
      loss_sum += r.loss;
      neg_sum += static_cast<double>(r.backward_negatives) * static_cast<double>(r.rows);
      stats.rows += r.rows;
      ++stats.batches;
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats.epochs_per_hour = stats.seconds > 0.0 ? 3600.0 / stats.seconds : 0.0;
    stats.loss_mean = stats.batches ? loss_sum / static_cast<double>(stats.batches) : 0.0;
    stats.backward_negatives = stats.rows ? neg_sum / static_cast<double>(stats.rows) : 0.0;
    ++epochs_done_;
    return stats;
  }

  /// Runs the configured epochs. The hook fires after each epoch (after any
  /// interleaved evaluation) and is excluded from epoch timing.
  const TrainReport& fit(const std::function<void(const EpochStats&, Trainer&)>& hook = {}) {
    for (std::size_t e = epochs_done_; e < cfg_.epochs; ++e) {
      EpochStats s = run_epoch(e);
      if (cfg_.eval_every > 0 && (e + 1) % cfg_.eval_every == 0) s.eval = evaluate(model_, data_->test, cfg_.eval);
      report_.epochs.push_back(s);
      if (hook) hook(report_.epochs.back(), *this);
    }
    return report_;
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(path, model_, &adam_, epochs_done_); }

  /// Restores parameters, optimizer moments and the epoch counter.
  void load(const std::filesystem::path& path) {
    Adam restored(cfg_.adam);
    std::uint64_t epoch = 0;
    Model m = load_checkpoint(path, &restored, &epoch);
    if (!(m.config() == model_.config())) throw ConfigError("checkpoint model config differs from trainer config");
    model_ = std::move(m);
    adam_ = std::move(restored);
    epochs_done_ = epoch;
  }

 private:
  static Model init_model(TrainConfig& cfg, const SplitDataset& data) {
    cfg.model.vocab = data.catalog.size();
    if (cfg.model.init_seed == 0) cfg.model.init_seed = cfg.seed;
    return Model(cfg.model);
  }

  TrainConfig cfg_;
  const SplitDataset* data_;
  Model model_;
  Adam adam_;
  ItemDistribution dist_;
  TrainReport report_;
  std::size_t epochs_done_ = 0;
  double last_finite_loss_ = std::nan("");
};

struct TrainOutcome {
  Model model;
  TrainReport report;
};

inline TrainOutcome train(const TrainConfig& cfg, const SplitDataset& data,
                          const std::function<void(const EpochStats&, Trainer&)>& hook = {}) {
  Trainer t(cfg, data);
  t.fit(hook);
  return {t.model().clone(), t.report()};
}

}  // namespace tron
