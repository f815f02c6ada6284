// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relearn/data.hpp"
#include "relearn/layers.hpp"
#include "relearn/mask.hpp"
#include "relearn/optim.hpp"

namespace relearn {

enum class Strategy { kNormal, kNormalLong, kLlf, kSeal, kSealFreeze, kSealReinit, kSealReverse };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Ascent iff (e mod E) < k.
Direction phase_of(std::size_t epoch, std::size_t epochs_per_generation, std::size_t ascent_epochs);

struct ScheduleConfig {
  std::size_t generations = 10;
  std::size_t epochs = 20;                    // E, per generation
  std::optional<std::size_t> ascent_epochs;   // k; floor(E/4) when unset
  double lr = 0.01;                           // eta0
  double ascent_scale = 0.01;                 // S
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  double smoothing = 0.1;
  Strategy strategy = Strategy::kSeal;
  std::optional<std::size_t> threshold;       // L; default_threshold() when unset
  std::uint64_t seed = 0;
  bool flip = false;
  std::size_t crop_pad = 0;

  /// Generations actually run: 1 for Normal.
  std::size_t effective_generations() const;
  /// Ascent epochs actually run: 0 for the descent-only strategies.
  std::size_t effective_ascent_epochs() const;
  std::size_t total_epochs() const { return effective_generations() * epochs; }
  MaskScheme scheme() const;
  /// ConfigError naming the offending key.
  void validate() const;
};

struct EpochRecord {
  std::size_t generation = 0;
  std::size_t epoch = 0;  // global index
  std::size_t epoch_in_generation = 0;
  Direction phase = Direction::kDescent;
  double lr = 0.0;
  double train_loss = 0.0;      // mean over the epoch's batches
  double train_accuracy = 0.0;  // whole training set, measured after the epoch
  double test_accuracy = 0.0;   // NaN without a test set
};

struct RunReport {
  std::vector<EpochRecord> records;
  std::vector<Tensor> final_params;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::size_t diverged_batch = 0;
  std::string error;
};

/// One parameter update, for replaying what the optimizer did.
struct UpdateEvent {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  ParamId param = 0;
  Direction direction = Direction::kDescent;
};

struct TrainerHooks {
  std::function<void(const EpochRecord&, const LayeredModel&)> on_epoch;
  /// After the last epoch of a generation, before any boundary intervention.
  std::function<void(std::size_t generation, const LayeredModel&, const SgdState&)> on_generation_end;
  /// At the start of generation `generation` >= 1, around the interventions.
  std::function<void(std::size_t generation, const LayeredModel& before, const LayeredModel& after)> on_boundary;
};

/// The generation/epoch/phase state machine. All randomness is drawn from
/// streams keyed by (seed, epoch) or (seed, generation), so a trainer resumed
/// from a checkpoint continues bitwise like an uninterrupted run.
class IterativeTrainer {
 public:
  IterativeTrainer(LayeredModel model, ScheduleConfig config);

  const ScheduleConfig& config() const { return config_; }
  const LayeredModel& model() const { return model_; }
  LayeredModel& model() { return model_; }
  const SgdState& state() const { return state_; }
  const std::optional<HypothesisMask>& mask() const { return mask_; }
  std::size_t next_epoch() const { return next_epoch_; }
  bool finished() const { return next_epoch_ >= config_.total_epochs(); }

  void set_hooks(TrainerHooks hooks) { hooks_ = std::move(hooks); }
  void set_update_log(std::vector<UpdateEvent>* log) { log_ = log; }

  /// Restores model, momentum and position from a checkpoint.
  void resume(LayeredModel model, SgdState state, std::size_t next_epoch);

  /// Runs the next epoch. DivergenceError carries the batch index.
  EpochRecord train_epoch(const Dataset& train, const Dataset* test);

  /// Runs every remaining epoch. Divergence ends the run early with
  /// `diverged` set and the records so far kept.
  RunReport run(const Dataset& train, const Dataset* test);

 private:
  void generation_start(std::size_t generation);
  double train_pass(const Dataset& train, std::size_t epoch, Direction phase, double lr);

  LayeredModel model_;
  ScheduleConfig config_;
  SgdState state_;
  std::optional<HypothesisMask> mask_;
  std::size_t next_epoch_ = 0;
  TrainerHooks hooks_;
  std::vector<UpdateEvent>* log_ = nullptr;
};

RunReport run_schedule(const ScheduleConfig& config, LayeredModel model, const Dataset& train,
                       const Dataset* test, TrainerHooks hooks = {});

/// Accuracy of the model on a dataset, evaluated in chunks.
double evaluate_accuracy(const LayeredModel& model, const Dataset& data);

}  // namespace relearn
