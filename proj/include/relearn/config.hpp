// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "relearn/data.hpp"
#include "relearn/eval.hpp"
#include "relearn/layers.hpp"
#include "relearn/trainer.hpp"

namespace relearn {

struct DatasetConfig {
  std::string kind = "teacher";  // teacher | blobs | spirals | idx | csv
  SyntheticParams params;
  std::string path;        // csv file or idx image file
  std::string label_path;  // idx label file
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  std::string arch = "mlp";  // mlp | cnn
  std::vector<std::size_t> hidden = {24, 24, 24, 24, 24};
  std::vector<std::size_t> conv_channels = {8, 16};
  std::vector<std::size_t> pool = {1, 1};
  bool norm_affine = false;
};

struct EvalConfig {
  std::size_t knn_k = 5;
  bool probe_each_generation = true;
  std::size_t hessian_batch = 512;
  double hessian_eps = 1e-5;
  std::uint64_t target_seed = 1;
  std::string target_shift = "none";
  TransferConfig transfer;
  FewShotConfig fewshot;
};

struct RunConfig {
  std::string preset = "desk";
  ScheduleConfig schedule;
  DatasetConfig data;
  ModelConfig model;
  EvalConfig eval;
};

/// Key-value pairs in file order.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// `key = value` lines; `#` starts a comment. ParseError carries the line.
ConfigEntries read_config_text(const std::string& text);
ConfigEntries read_config_file(const std::string& path);

/// Applies the preset (if any entry names one), then every entry in order, and
/// validates. Unknown keys and bad values raise ConfigError naming the key.
RunConfig resolve_config(const ConfigEntries& entries);

/// Every key with its resolved value, sorted by key.
std::map<std::string, std::string> config_values(const RunConfig& config);
/// Sorted `key=value` lines; resolving them reproduces the config.
std::string canonical_config(const RunConfig& config);
/// crc32 of the canonical config.
std::string run_id(const RunConfig& config);

struct KeyDoc {
  std::string key;
  std::string doc;
};
std::vector<KeyDoc> config_keys();

/// Training and test splits described by the dataset section.
std::pair<Dataset, Dataset> load_datasets(const DatasetConfig& config);
/// Transfer target: the same generator under the target seed, domain-shifted.
std::pair<Dataset, Dataset> load_target(const RunConfig& config);
/// Initialized model for the configured architecture and dataset.
LayeredModel build_model(const ModelConfig& config, const Dataset& data, std::uint64_t seed);

}  // namespace relearn
