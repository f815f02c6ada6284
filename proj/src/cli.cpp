// SPDX-License-Identifier: Apache-2.0
#include "relearn/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "relearn/checkpoint.hpp"
#include "relearn/config.hpp"
#include "relearn/diagnostics.hpp"
#include "relearn/errors.hpp"
#include "relearn/eval.hpp"
#include "relearn/metrics.hpp"
#include "relearn/trainer.hpp"

namespace relearn {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Config sources shared by every subcommand: a file plus one flag per key.
struct ConfigOptions {
  std::string file;
  std::map<std::string, std::string> flags;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    for (const auto& k : config_keys()) {
      options.emplace_back(k.key, app->add_option("--" + k.key, flags[k.key], k.doc));
    }
  }

  // Base entries (from a checkpoint) first, then the file, then flags.
  RunConfig resolve(const ConfigEntries& base = {}) const {
    ConfigEntries entries = base;
    if (!file.empty()) {
      auto f = read_config_file(file);
      entries.insert(entries.end(), f.begin(), f.end());
    }
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) entries.emplace_back(key, flags.at(key));
    }
    return resolve_config(entries);
  }
};

Json mask_summary(const LayeredModel& model, const std::optional<HypothesisMask>& mask) {
  Json j;
  if (!mask) return j;
  j["scheme"] = scheme_name(mask->scheme);
  j["threshold"] = mask->threshold;
  j["forget_tensors"] = mask->forget.size();
  j["fit_tensors"] = mask->fit.size();
  j["forget_scalars"] = mask->forget_scalars(model);
  j["fit_scalars"] = mask->fit_scalars(model);
  return j;
}

Json provenance_json(const Dataset& d) {
  Json j;
  j["source"] = d.provenance.source;
  j["params"] = d.provenance.params;
  j["seed"] = d.provenance.seed;
  j["path"] = d.provenance.path;
  j["checksum"] = d.provenance.checksum;
  j["samples"] = d.size();
  j["classes"] = d.classes;
  return j;
}

Json config_json(const RunConfig& cfg) {
  Json j = Json::object();
  for (const auto& [k, v] : config_values(cfg)) j[k] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct TrainArgs {
  ConfigOptions config;
  std::string out_dir;
  std::string resume;
};

int cmd_train(const TrainArgs& args, std::ostream& out) {
  const RunConfig cfg = args.config.resolve();
  const std::string id = run_id(cfg);
  auto [train, test] = load_datasets(cfg.data);
  LayeredModel model = build_model(cfg.model, train, cfg.schedule.seed);

  IterativeTrainer trainer(std::move(model), cfg.schedule);
  if (!args.resume.empty()) {
    if (!fs::exists(args.resume)) throw CheckpointError("checkpoint not found: " + args.resume);
    Checkpoint ck = load_checkpoint(args.resume);
    if (ck.config != canonical_config(cfg)) {
      throw ConfigError("resume checkpoint was written under a different config", "resume");
    }
    trainer.resume(std::move(ck.model), std::move(ck.state), ck.next_epoch);
  }

  const fs::path dir(args.out_dir);
  fs::create_directories(dir / "checkpoints");
  const std::string started = utc_now();
  MetricsWriter metrics(dir / "metrics.jsonl", !args.resume.empty());
  if (args.resume.empty()) {
    Json rec = {{"type", "config"}, {"run_id", id}, {"generation", 0}, {"epoch", 0}};
    rec["config"] = config_json(cfg);
    metrics.write(rec);
  }

  const std::string canonical = canonical_config(cfg);
  TrainerHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r, const LayeredModel&) { metrics.write(epoch_record(id, r)); };
  hooks.on_generation_end = [&](std::size_t gen, const LayeredModel& m, const SgdState& s) {
    Checkpoint ck{m, s, gen + 1, (gen + 1) * cfg.schedule.epochs, canonical};
    save_checkpoint(dir / "checkpoints" / ("gen" + std::to_string(gen + 1) + ".ckpt"), ck);
    if (cfg.eval.probe_each_generation && m.probe_count() > 0) {
      metrics.write(probe_record(id, gen + 1, ck.next_epoch, probe_report(m, train, test, cfg.eval.knn_k)));
    }
  };
  trainer.set_hooks(hooks);
  const RunReport report = trainer.run(train, &test);

  const std::size_t done_gen = trainer.next_epoch() / cfg.schedule.epochs;
  save_checkpoint(dir / "final.ckpt", Checkpoint{trainer.model(), trainer.state(), done_gen, trainer.next_epoch(), canonical});
  Json end = {{"type", "run_end"}, {"run_id", id}, {"generation", done_gen}, {"epoch", trainer.next_epoch()}};
  end["diverged"] = report.diverged;
  end["error"] = report.error;
  if (report.diverged) end["batch"] = report.diverged_batch;
  if (!report.records.empty()) end["final_test_accuracy"] = report.records.back().test_accuracy;
  metrics.write(end);

  Json manifest;
  manifest["run_id"] = id;
  manifest["version"] = kVersion;
  manifest["seed"] = cfg.schedule.seed;
  manifest["config"] = config_json(cfg);
  manifest["dataset"] = {{"train", provenance_json(train)}, {"test", provenance_json(test)}};
  manifest["mask"] = mask_summary(trainer.model(), trainer.mask());
  manifest["resumed_from"] = args.resume;
  manifest["started"] = started;
  manifest["finished"] = utc_now();
  manifest["diverged"] = report.diverged;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  if (report.diverged) {
    out << "run " << id << " diverged: " << report.error << "\n";
    return kExitDiverged;
  }
  out << "run " << id << ": " << report.records.size() << " epochs, final test accuracy "
      << (report.records.empty() ? 0.0 : report.records.back().test_accuracy) << "\n";
  return kExitOk;
}

struct EvalArgs {
  ConfigOptions config;
  std::string checkpoint;
  std::string metrics;
};

struct Loaded {
  Checkpoint ck;
  RunConfig cfg;
  std::string id;
};

Loaded load_for_eval(const EvalArgs& args) {
  if (!fs::exists(args.checkpoint)) throw CheckpointError("checkpoint not found: " + args.checkpoint);
  Loaded l{load_checkpoint(args.checkpoint), {}, {}};
  l.cfg = args.config.resolve(read_config_text(l.ck.config));
  l.id = run_id(l.cfg);
  return l;
}

void emit(const EvalArgs& args, const Json& record, std::ostream& out) {
  out << record.dump() << "\n";
  if (!args.metrics.empty()) MetricsWriter(args.metrics, true).write(record);
}

int cmd_probe(const EvalArgs& args, std::ostream& out) {
  const Loaded l = load_for_eval(args);
  if (l.ck.model.probe_count() == 0) throw ConfigError("checkpoint model has no probe points", "probe");
  const auto [train, test] = load_datasets(l.cfg.data);
  const auto report = probe_report(l.ck.model, train, test, l.cfg.eval.knn_k);
  emit(args, probe_record(l.id, l.ck.generation, l.ck.next_epoch, report), out);
  return kExitOk;
}

int cmd_hessian(const EvalArgs& args, std::ostream& out) {
  const Loaded l = load_for_eval(args);
  const auto [train, test] = load_datasets(l.cfg.data);
  const Dataset batch = hessian_batch(train, l.cfg.eval.hessian_batch, l.cfg.schedule.seed);
  const auto report = hessian_spectrum(l.ck.model, batch.samples, batch.labels, l.cfg.schedule.smoothing,
                                       l.cfg.eval.hessian_eps);
  emit(args, spectrum_record(l.id, l.ck.generation, l.ck.next_epoch, report), out);
  return kExitOk;
}

int cmd_transfer(const EvalArgs& args, std::ostream& out) {
  const Loaded l = load_for_eval(args);
  const auto [train, test] = load_target(l.cfg);
  TransferConfig tc = l.cfg.eval.transfer;
  tc.seed = l.cfg.schedule.seed;
  const auto result = linear_probe(l.ck.model, train, test, tc);
  emit(args, transfer_record(l.id, l.ck.generation, l.ck.next_epoch, result), out);
  return kExitOk;
}

int cmd_fewshot(const EvalArgs& args, std::ostream& out) {
  const Loaded l = load_for_eval(args);
  const auto [train, test] = load_target(l.cfg);
  FewShotConfig fc = l.cfg.eval.fewshot;
  fc.seed = l.cfg.schedule.seed;
  const auto result = fewshot_eval(l.ck.model, train, fc);
  emit(args, fewshot_record(l.id, l.ck.generation, l.ck.next_epoch, fc, result), out);
  return kExitOk;
}

struct CompareArgs {
  std::vector<std::string> runs;
  std::string out_dir;
};

int cmd_compare(const CompareArgs& args, std::ostream& out) {
  // strategy -> generation -> final test accuracies of that generation
  std::vector<std::string> strategies;
  std::map<std::string, std::map<std::size_t, std::vector<double>>> acc;
  std::ostringstream depth_csv;
  depth_csv << "strategy,run_id,seed,generation,mean_depth,model_accuracy,layer_accuracy\n";
  std::size_t max_gen = 0;
  for (const auto& run : args.runs) {
    const fs::path metrics_path = fs::path(run) / "metrics.jsonl";
    if (!fs::exists(metrics_path)) throw ConfigError("no metrics.jsonl in " + run, "runs");
    const auto records = read_metrics(metrics_path);
    std::string strategy, seed;
    std::map<std::size_t, double> last;  // generation -> test accuracy of its last epoch
    for (const auto& r : records) {
      const std::string type = r.at("type");
      if (type == "config") {
        strategy = r.at("config").at("strategy");
        seed = r.at("config").at("seed");
      } else if (type == "epoch") {
        const std::size_t g = r.at("generation").get<std::size_t>() + 1;
        last[g] = r.at("test_accuracy").is_null() ? 0.0 : r.at("test_accuracy").get<double>();
        max_gen = std::max(max_gen, g);
      } else if (type == "probe") {
        depth_csv << strategy << "," << r.at("run_id").get<std::string>() << "," << seed << ","
                  << r.at("generation").get<std::size_t>() << "," << r.at("mean_depth").dump() << ","
                  << r.at("model_accuracy").dump() << ",";
        const auto& la = r.at("layer_accuracy");
        for (std::size_t i = 0; i < la.size(); ++i) depth_csv << (i ? ";" : "") << la[i].dump();
        depth_csv << "\n";
      }
    }
    if (strategy.empty()) throw ConfigError("metrics of " + run + " lack a config record", "runs");
    if (std::find(strategies.begin(), strategies.end(), strategy) == strategies.end()) strategies.push_back(strategy);
    for (const auto& [g, a] : last) acc[strategy][g].push_back(a);
  }

  std::ostringstream table;
  table << "generation";
  for (const auto& s : strategies) table << "," << s;
  table << "\n";
  out << std::left << std::setw(12) << "generation";
  for (const auto& s : strategies) out << std::setw(14) << s;
  out << "\n";
  for (std::size_t g = 1; g <= max_gen; ++g) {
    table << g;
    out << std::setw(12) << g;
    for (const auto& s : strategies) {
      const auto it = acc[s].find(g);
      if (it == acc[s].end()) {
        table << ",";
        out << std::setw(14) << "-";
        continue;
      }
      double mean = 0.0;
      for (double a : it->second) mean += a;
      mean /= static_cast<double>(it->second.size());
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * mean);
      table << "," << buf;
      out << std::setw(14) << buf;
    }
    table << "\n";
    out << "\n";
  }
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_text(fs::path(args.out_dir) / "accuracy_table.csv", table.str());
    write_text(fs::path(args.out_dir) / "depth_evolution.csv", depth_csv.str());
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative forget-and-relearn training laboratory", "relearn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "run a training schedule");
  train.config.attach(train_cmd);
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");

  EvalArgs probe, hessian, transfer, fewshot;
  auto eval_cmd = [&](const char* name, const char* doc, EvalArgs& a) {
    auto* c = app.add_subcommand(name, doc);
    a.config.attach(c);
    c->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
    c->add_option("--metrics", a.metrics, "append the record to this metrics file");
    return c;
  };
  auto* probe_cmd = eval_cmd("probe", "layer-wise k-NN probes and prediction depth", probe);
  auto* hessian_cmd = eval_cmd("hessian", "dense Hessian eigenvalue statistics", hessian);
  auto* transfer_cmd = eval_cmd("transfer", "linear-probe transfer to the target dataset", transfer);
  auto* fewshot_cmd = eval_cmd("fewshot", "episodic few-shot evaluation on the target dataset", fewshot);

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "per-generation accuracy table across runs");
  compare_cmd->add_option("runs", compare.runs, "run directories")->required();
  compare_cmd->add_option("--out", compare.out_dir, "directory for the CSV outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train, out);
    if (probe_cmd->parsed()) return cmd_probe(probe, out);
    if (hessian_cmd->parsed()) return cmd_hessian(hessian, out);
    if (transfer_cmd->parsed()) return cmd_transfer(transfer, out);
    if (fewshot_cmd->parsed()) return cmd_fewshot(fewshot, out);
    if (compare_cmd->parsed()) return cmd_compare(compare, out);
  } catch (const ConfigError& e) {
    err << "config error";
    if (!e.key().empty()) err << " [" << e.key() << "]";
    err << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CapacityError& e) {
    err << "capacity error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace relearn
