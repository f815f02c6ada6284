// SPDX-License-Identifier: Apache-2.0
#include "relearn/metrics.hpp"

#include <cmath>

#include "relearn/errors.hpp"

namespace relearn {

namespace {

Json header(const char* type, const std::string& run_id, std::size_t generation, std::size_t epoch) {
  Json j;
  j["type"] = type;
  j["run_id"] = run_id;
  j["generation"] = generation;
  j["epoch"] = epoch;
  return j;
}

// NaN has no JSON spelling; it is written as null.
Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json epoch_record(const std::string& run_id, const EpochRecord& r) {
  Json j = header("epoch", run_id, r.generation, r.epoch);
  j["epoch_in_generation"] = r.epoch_in_generation;
  j["phase"] = r.phase == Direction::kAscent ? "ascent" : "descent";
  j["lr"] = r.lr;
  j["train_loss"] = number(r.train_loss);
  j["train_accuracy"] = number(r.train_accuracy);
  j["test_accuracy"] = number(r.test_accuracy);
  return j;
}

Json probe_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const ProbeReport& r) {
  Json j = header("probe", run_id, generation, epoch);
  j["K"] = r.K;
  j["layer_accuracy"] = r.layer_accuracy;
  j["depth_histogram"] = r.histogram;
  j["mean_depth"] = r.mean_depth;
  j["model_accuracy"] = r.model_accuracy;
  return j;
}

Json spectrum_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const SpectrumReport& r) {
  Json j = header("spectrum", run_id, generation, epoch);
  j["parameter_count"] = r.parameter_count;
  j["max_eigenvalue"] = r.max_eigenvalue;
  j["fraction_negative"] = r.fraction_negative;
  j["tau"] = r.tau;
  j["trace"] = r.trace;
  j["raw_asymmetry"] = r.raw_asymmetry;
  j["raw_abs_max"] = r.raw_abs_max;
  j["eigenvalues"] = r.eigenvalues;
  return j;
}

Json transfer_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const TransferResult& r) {
  Json j = header("transfer", run_id, generation, epoch);
  j["target"] = r.target;
  j["epochs"] = r.epochs;
  j["lr_grid"] = r.lr_grid;
  j["accuracy"] = r.accuracy;
  j["best"] = r.best;
  j["best_lr"] = r.best_lr;
  return j;
}

Json fewshot_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const FewShotConfig& config,
                    const FewShotResult& r) {
  Json j = header("fewshot", run_id, generation, epoch);
  j["mode"] = fewshot_mode_name(config.mode);
  j["n_way"] = config.n_way;
  j["k_shot"] = config.k_shot;
  j["q_query"] = config.q_query;
  j["steps"] = config.steps;
  j["lr_grid"] = config.lr_grid;
  j["seed"] = config.seed;
  j["episodes"] = r.episodes;
  j["diverged"] = r.diverged;
  j["mean"] = r.mean;
  j["ci95"] = r.ci95;
  return j;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append)
    : path_(path), out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw Error("cannot open metrics file " + path.string());
}

void MetricsWriter::write(const Json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw Error("write failed for " + path_.string());
}

std::vector<Json> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open metrics file " + path.string(), 0);
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace relearn
