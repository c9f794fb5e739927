// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0
//
// tron_cli: prepare datasets, train presets, evaluate checkpoints, export
// metric curves and benchmark the negative samplers.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tron/tron.hpp"

namespace fs = std::filesystem;
using namespace tron;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

fs::path default_data_dir() {
  const char* env = std::getenv("TRON_DATA_DIR");
  return fs::path(env && *env ? env : "data") / "prepared";
}

// Options shared by the verbs that resolve a run configuration.
struct ConfigOptions {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::map<std::string, std::string> keys;     // --<schema key>
  std::map<std::string, std::string> aliases;  // short spellings of common keys
  std::map<std::string, CLI::Option*> key_opts, alias_opts;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "experiment preset");
    app->add_option("--set", sets, "override key=value (repeatable)");
    const std::vector<std::pair<std::string, std::string>> short_names{{"--seed", "train.seed"},
                                                                       {"--epochs", "train.epochs"},
                                                                       {"--min-support", "data.min_support"},
                                                                       {"--min-len", "data.min_len"},
                                                                       {"--holdout-days", "data.holdout_days"}};
    for (const auto& [flag, key] : short_names) alias_opts[key] = app->add_option(flag, aliases[key], "sets " + key);
    for (const auto& spec : config_schema()) {
      key_opts[spec.key] = app->add_option("--" + spec.key, keys[spec.key], spec.doc)->group("Config keys");
    }
  }

  RunConfig resolve() const {
    KeyValues kv;
    if (!config_file.empty()) kv = parse_config_file(config_file);
    if (!preset.empty()) kv["preset"] = preset;
    for (const auto& [key, opt] : alias_opts)
      if (opt->count() > 0) kv[key] = aliases.at(key);
    for (const auto& [key, opt] : key_opts)
      if (opt->count() > 0) kv[key] = keys.at(key);
    for (const auto& s : sets) {
      auto [k, v] = parse_override(s);
      kv[k] = v;
    }
    return resolve_config(kv);
  }
};

SplitDataset load_input(const fs::path& input, const std::string& format, const DataOptions& opts) {
  if (fs::is_directory(input) || input.filename() == "dataset.bin") return load_dataset(input);
  if (!fs::exists(input)) throw IoError("input not found: " + input.string());
  const auto fmt = format.empty() ? guess_input_format(input) : parse_input_format(format);
  std::cerr << "reading " << input.string() << "\n";
  const auto events = parse_events(input, fmt);
  return prepare_dataset(events, opts);
}

void log_counts(const SplitDataset& d) {
  const auto c = count(d);
  std::cerr << "items=" << c.items << " train_sessions=" << c.train_sessions << " train_events=" << c.train_events
            << " test_sessions=" << c.test_sessions << " test_events=" << c.test_events << "\n";
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string epoch_line(const EpochStats& e, std::size_t total) {
  std::ostringstream os;
  os << "epoch " << e.epoch << "/" << total << " loss=" << std::setprecision(6) << e.loss_mean << " "
     << std::setprecision(3) << std::fixed << e.seconds << "s (" << std::setprecision(1) << e.epochs_per_hour
     << " epochs/h) draws=" << e.draws.uniform + e.draws.frequency + e.draws.inbatch;
  if (e.eval) {
    os << std::setprecision(4) << " recall@" << e.eval->k << "=" << e.eval->recall << " mrr@" << e.eval->k << "="
       << e.eval->mrr;
  }
  return os.str();
}

// ---------------------------------------------------------------------------

struct PrepArgs {
  ConfigOptions cfg;
  std::string input, output_dir, format;
  bool lenient = false;
};

int run_prep(const PrepArgs& a) {
  const RunConfig rc = a.cfg.resolve();
  const fs::path out = a.output_dir.empty() ? default_data_dir() : fs::path(a.output_dir);
  const auto fmt = a.format.empty() ? guess_input_format(a.input) : parse_input_format(a.format);
  std::cerr << "reading " << a.input << "\n";
  ParseStats stats;
  const auto events = parse_events(a.input, fmt, !a.lenient, &stats);
  for (const auto& m : stats.messages) std::cerr << "skipped " << m << "\n";
  const auto data = prepare_dataset(events, rc.data);
  const auto kv = config_to_kv(rc);
  save_dataset(out, data,
               {{"input", fs::absolute(a.input).string()},
                {"events_read", std::to_string(stats.events)},
                {"records_skipped", std::to_string(stats.skipped)},
                {"min_support", kv.at("data.min_support")},
                {"min_len", kv.at("data.min_len")},
                {"holdout_days", kv.at("data.holdout_days")},
                {"support_scope", kv.at("data.support_scope")},
                {"event_types", kv.at("data.event_types")}});
  write_config(out / "config.conf", rc);
  log_counts(data);
  std::cerr << "wrote " << (out / "dataset.bin").string() << "\n";
  return 0;
}

struct TrainArgs {
  ConfigOptions cfg;
  std::string input, output_dir, format, resume;
};

int run_train(const TrainArgs& a) {
  const RunConfig rc = a.cfg.resolve();
  const fs::path input = a.input.empty() ? default_data_dir() : fs::path(a.input);
  const auto data = load_input(input, a.format, rc.data);
  log_counts(data);
  const fs::path out = a.output_dir.empty() ? fs::path("runs") / rc.train.preset : fs::path(a.output_dir);
  fs::create_directories(out / "ckpt");
  write_config(out / "config.conf", rc);

  Trainer trainer(rc.train, data);
  if (!a.resume.empty()) {
    trainer.load(a.resume);
    std::cerr << "resumed from " << a.resume << " at epoch " << trainer.epochs_done() << "\n";
  }
  std::cerr << "training preset " << rc.train.preset << " for " << rc.train.epochs << " epochs\n";
  TrainReport full;
  if (!a.resume.empty() && fs::exists(out / "report.json")) {
    std::ifstream in(out / "report.json");
    full = report_from_json(nlohmann::json::parse(in));
    std::erase_if(full.epochs, [&](const EpochStats& e) { return e.epoch > trainer.epochs_done(); });
  }
  trainer.fit([&](const EpochStats& e, Trainer& t) {
    t.save(out / "ckpt" / ("epoch-" + std::to_string(e.epoch) + ".bin"));
    full.epochs.push_back(e);
    write_json(out / "report.json", to_json(full));
    std::cerr << epoch_line(e, rc.train.epochs) << "\n";
  });
  write_json(out / "report.json", to_json(full));
  const auto series = full.metric_series();
  if (!series.empty()) export_metrics(series, out / "metrics.csv", rc.train.eval.k);
  std::cerr << "outputs in " << out.string() << "\n";
  return 0;
}

struct EvalArgs {
  ConfigOptions cfg;
  std::string input, output_dir, format, checkpoint;
};

int run_eval(const EvalArgs& a) {
  const RunConfig rc = a.cfg.resolve();
  const fs::path input = a.input.empty() ? default_data_dir() : fs::path(a.input);
  const auto data = load_input(input, a.format, rc.data);
  const Model model = load_checkpoint(a.checkpoint);
  if (model.config().vocab != data.catalog.size()) {
    throw ConfigError("checkpoint vocabulary (" + std::to_string(model.config().vocab) + ") does not match dataset (" +
                      std::to_string(data.catalog.size()) + " items)");
  }
  std::cerr << "evaluating " << a.checkpoint << " on " << data.test.size() << " test sessions\n";
  const auto r = evaluate(model, data.test, rc.train.eval);
  const fs::path out = a.output_dir.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.output_dir);
  if (!out.empty()) fs::create_directories(out);
  const auto kv = config_to_kv(rc);
  write_json(out / "eval.json", {{"checkpoint", a.checkpoint},
                                 {"k", r.k},
                                 {"recall", r.recall},
                                 {"mrr", r.mrr},
                                 {"transitions", r.n_transitions},
                                 {"hits", r.hits},
                                 {"average", kv.at("eval.average")}});
  std::cout << "recall@" << r.k << "=" << std::setprecision(6) << r.recall << " mrr@" << r.k << "=" << r.mrr
            << " transitions=" << r.n_transitions << "\n";
  return 0;
}

struct ExportArgs {
  std::string report, output;
};

int run_export(const ExportArgs& a) {
  std::ifstream in(a.report);
  if (!in) throw IoError("cannot open report " + a.report);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed report " + a.report + ": " + e.what());
  }
  const auto report = report_from_json(j);
  const auto series = report.metric_series();
  if (series.empty()) throw DataError("report has no evaluated epochs (train with --train.eval_every)");
  std::size_t k = 20;
  for (const auto& e : report.epochs)
    if (e.eval) k = e.eval->k;
  const fs::path out = a.output.empty() ? fs::path(a.report).parent_path() / "metrics.csv" : fs::path(a.output);
  export_metrics(series, out, k);
  std::cerr << "wrote " << series.size() << " rows to " << out.string() << "\n";
  return 0;
}

struct BenchArgs {
  std::size_t negs = 16384;
  std::string granularity = "batchwise,elementwise";
  std::size_t batch = 128, width = 50, items = 100000, repeats = 3;
  double seconds = 0.5;
  std::string output;
};

int run_bench(const BenchArgs& a) {
  std::vector<Granularity> gs;
  std::stringstream ss(a.granularity);
  for (std::string part; std::getline(ss, part, ',');) gs.push_back(parse_granularity(config_detail::trim(part)));
  if (gs.empty()) throw ConfigError("--granularity needs at least one value");
  std::vector<BenchRow> rows;
  for (auto g : gs) {
    std::cerr << "benchmarking " << to_string(g) << "\n";
    rows.push_back(bench_uniform(g, a.items, a.negs, a.batch, a.width, a.seconds, a.repeats));
  }
  std::ostringstream table;
  table << "granularity,negatives,batch,width,draws_per_batch,samples_per_sec,draws_per_sec\n";
  for (const auto& r : rows) {
    table << to_string(r.granularity) << ',' << r.negatives << ',' << r.batch << ',' << r.width << ','
          << r.draws_per_batch << ',' << std::setprecision(6) << r.samples_per_sec << ',' << r.draws_per_sec << '\n';
  }
  std::cout << table.str();
  if (!a.output.empty()) {
    std::ofstream os(a.output);
    if (!os) throw IoError("cannot write " + a.output);
    os << table.str();
  }
  return 0;
}

int run_keys() {
  const auto kv = config_to_kv(RunConfig{});
  std::cout << std::left << std::setw(28) << "preset" << std::setw(14) << kv.at("preset")
            << "one of:";
  for (const auto& p : preset_names()) std::cout << ' ' << p;
  std::cout << '\n';
  for (const auto& spec : config_schema())
    std::cout << std::left << std::setw(28) << spec.key << std::setw(14) << kv.at(spec.key) << spec.doc << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-based transformer recommender with sampled negatives"};
  app.require_subcommand(1);

  PrepArgs prep;
  auto* prep_cmd = app.add_subcommand("prep", "preprocess an event log into a prepared dataset");
  prep_cmd->add_option("--input", prep.input, "JSON-lines sessions or event CSV")->required()->check(CLI::ExistingFile);
  prep_cmd->add_option("--output-dir", prep.output_dir, "output directory (default $TRON_DATA_DIR/prepared)");
  prep_cmd->add_option("--format", prep.format, "jsonl or csv (default: from extension)");
  prep_cmd->add_flag("--lenient", prep.lenient, "skip malformed records instead of failing");
  prep.cfg.attach(prep_cmd);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a preset and write checkpoints and a report");
  train_cmd->add_option("--input", tr.input, "prepared dataset dir or raw event file (default $TRON_DATA_DIR/prepared)");
  train_cmd->add_option("--output-dir", tr.output_dir, "run directory (default runs/<preset>)");
  train_cmd->add_option("--format", tr.format, "jsonl or csv for raw input");
  train_cmd->add_option("--resume", tr.resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  tr.cfg.attach(train_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "full-catalog Recall@k and MRR@k of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--input", ev.input, "prepared dataset dir or raw event file (default $TRON_DATA_DIR/prepared)");
  eval_cmd->add_option("--output-dir", ev.output_dir, "where eval.json goes (default: next to the checkpoint)");
  eval_cmd->add_option("--format", ev.format, "jsonl or csv for raw input");
  ev.cfg.attach(eval_cmd);

  ExportArgs ex;
  auto* export_cmd = app.add_subcommand("export", "write the metric curve of a report as CSV");
  export_cmd->add_option("--report", ex.report, "report.json of a run")->required();
  export_cmd->add_option("--output", ex.output, "CSV path (default: metrics.csv next to the report)");

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "uniform sampler throughput per granularity");
  bench_cmd->add_option("--negs", be.negs, "negatives per set")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--granularity", be.granularity, "comma-separated granularities");
  bench_cmd->add_option("--batch", be.batch, "sessions per batch")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--width", be.width, "positions per session")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--items", be.items, "catalog size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--repeats", be.repeats, "minimum sets sampled per row")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seconds", be.seconds, "minimum time per row");
  bench_cmd->add_option("--output", be.output, "also write the table to this CSV file");

  auto* keys_cmd = app.add_subcommand("keys", "list config keys with defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*prep_cmd) return run_prep(prep);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*export_cmd) return run_export(ex);
    if (*bench_cmd) return run_bench(be);
    if (*keys_cmd) return run_keys();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
