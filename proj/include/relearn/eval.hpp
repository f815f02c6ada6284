// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "relearn/data.hpp"
#include "relearn/layers.hpp"

namespace relearn {

// --- linear probe transfer ---------------------------------------------------------

struct TransferConfig {
  std::vector<double> lr_grid = {1e-1, 1e-2, 1e-3};
  std::size_t epochs = 30;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TransferResult {
  std::string target;
  std::vector<double> lr_grid;
  std::vector<double> accuracy;  // final test accuracy per grid entry
  double best = 0.0;
  double best_lr = 0.0;
  std::size_t epochs = 0;
};

/// Fresh head of the target's class count on top of the frozen body, one run
/// per learning rate. The body is never modified.
TransferResult linear_probe(const LayeredModel& model, const Dataset& train, const Dataset& test,
                            const TransferConfig& config);

// --- few-shot episodes -------------------------------------------------------------

struct Episode {
  std::vector<int> classes;  // original labels, in relabel order
  Tensor support_x;
  std::vector<int> support_y;  // relabelled to [0, n_way)
  Tensor query_x;
  std::vector<int> query_y;
  std::vector<std::size_t> support_index;  // rows of the source dataset
  std::vector<std::size_t> query_index;
};

/// Classes and within-class samples drawn without replacement.
Episode sample_episode(const Dataset& dataset, std::size_t n_way, std::size_t k_shot, std::size_t q_query,
                       Rng& rng);

enum class FewShotMode { kLinear, kLinearAffine };

const char* fewshot_mode_name(FewShotMode mode);
FewShotMode parse_fewshot_mode(const std::string& name);

struct FewShotConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t q_query = 15;
  std::size_t episodes = 600;
  FewShotMode mode = FewShotMode::kLinear;
  std::size_t steps = 100;
  std::vector<double> lr_grid = {1e-1, 1e-2};
  double momentum = 0.9;
  std::uint64_t seed = 0;
  void validate() const;
};

struct EpisodeOutcome {
  double accuracy = 0.0;
  double lr = 0.0;
  double support_loss = 0.0;
  LayeredModel tuned;
};

/// Fine-tunes a fresh head (and, in linear+affine mode, every norm-affine
/// scale and shift) on the full support set, choosing the learning rate by
/// final support loss. DivergenceError when every rate diverges.
EpisodeOutcome finetune_episode(const LayeredModel& model, const Episode& episode, const FewShotConfig& config,
                                std::size_t episode_index);

struct FewShotResult {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(n)
  std::vector<double> accuracies;
  std::size_t episodes = 0;
  std::size_t diverged = 0;
};

/// Scores one episode; a thrown DivergenceError excludes it and is counted.
using EpisodeScorer = std::function<double(const Episode&, std::size_t index)>;

FewShotResult run_episodes(const Dataset& dataset, const FewShotConfig& config, const EpisodeScorer& scorer);

FewShotResult fewshot_eval(const LayeredModel& model, const Dataset& dataset, const FewShotConfig& config);

}  // namespace relearn
