// SPDX-License-Identifier: Apache-2.0
#include "relearn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "relearn/errors.hpp"

namespace relearn {

namespace {

constexpr double kDivergenceLoss = 1e6;

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kNormal: return "normal";
    case Strategy::kNormalLong: return "normal-long";
    case Strategy::kLlf: return "llf";
    case Strategy::kSeal: return "seal";
    case Strategy::kSealFreeze: return "seal+freeze";
    case Strategy::kSealReinit: return "seal+reinit";
    case Strategy::kSealReverse: return "seal+reverse";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::kNormal, Strategy::kNormalLong, Strategy::kLlf, Strategy::kSeal,
                     Strategy::kSealFreeze, Strategy::kSealReinit, Strategy::kSealReverse}) {
    if (name == strategy_name(s)) return s;
  }
  throw ConfigError("unknown strategy '" + name + "'", "strategy");
}

Direction phase_of(std::size_t epoch, std::size_t epochs_per_generation, std::size_t ascent_epochs) {
  if (epochs_per_generation == 0) throw ContractError("phase_of: epochs per generation must be positive");
  return epoch % epochs_per_generation < ascent_epochs ? Direction::kAscent : Direction::kDescent;
}

std::size_t ScheduleConfig::effective_generations() const {
  return strategy == Strategy::kNormal ? 1 : generations;
}

std::size_t ScheduleConfig::effective_ascent_epochs() const {
  switch (strategy) {
    case Strategy::kNormal:
    case Strategy::kNormalLong:
    case Strategy::kLlf:
      return 0;
    default:
      return ascent_epochs.value_or(epochs / 4);
  }
}

MaskScheme ScheduleConfig::scheme() const {
  switch (strategy) {
    case Strategy::kLlf: return MaskScheme::kLlf;
    case Strategy::kSealReverse: return MaskScheme::kReverse;
    default: return MaskScheme::kSeal;
  }
}

void ScheduleConfig::validate() const {
  if (generations < 1) throw ConfigError("generations must be at least 1", "generations");
  if (epochs < 1) throw ConfigError("epochs must be at least 1", "epochs");
  if (ascent_epochs && *ascent_epochs >= epochs) throw ConfigError("ascent epochs k must be < E", "k");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive", "lr");
  if (!(ascent_scale > 0.0) || !std::isfinite(ascent_scale)) throw ConfigError("ascent scale S must be positive", "ascent_scale");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)", "momentum");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be >= 0", "weight_decay");
  if (batch_size < 1) throw ConfigError("batch size must be positive", "batch_size");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("label smoothing must be in [0, 1)", "smoothing");
}

double evaluate_accuracy(const LayeredModel& model, const Dataset& data) {
  if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  return accuracy(argmax_rows(model.predict_logits(data.samples)), data.labels);
}

IterativeTrainer::IterativeTrainer(LayeredModel model, ScheduleConfig config)
    : model_(std::move(model)), config_(std::move(config)) {
  config_.validate();
  state_ = SgdState::for_model(model_, config_.momentum, config_.weight_decay);
  const bool needs_mask = config_.strategy != Strategy::kNormal && config_.strategy != Strategy::kNormalLong;
  if (needs_mask || model_.layer_count() >= 2) {
    const std::size_t L = config_.threshold.value_or(default_threshold(model_));
    mask_ = split_hypotheses(model_, L, config_.scheme());
  }
}

void IterativeTrainer::resume(LayeredModel model, SgdState state, std::size_t next_epoch) {
  if (state.buffers.size() != model.param_count()) throw CheckpointError("momentum buffers do not match the model");
  if (next_epoch > config_.total_epochs()) throw CheckpointError("resume position past the end of the schedule");
  model_ = std::move(model);
  state_ = std::move(state);
  state_.momentum = config_.momentum;
  state_.weight_decay = config_.weight_decay;
  next_epoch_ = next_epoch;
  if (mask_) mask_ = split_hypotheses(model_, mask_->threshold, mask_->scheme);
}

void IterativeTrainer::generation_start(std::size_t generation) {
  if (generation == 0) return;
  const bool reinit_forget = config_.strategy == Strategy::kLlf;
  const bool reinit_fit = config_.strategy == Strategy::kSealReinit;
  if (!reinit_forget && !reinit_fit) {
    if (hooks_.on_boundary) hooks_.on_boundary(generation, model_, model_);
    return;
  }
  const LayeredModel before = model_;
  Rng rng = stream_rng(config_.seed, Stream::kReinit, generation);
  reinitialize(model_, reinit_forget ? mask_->forget : mask_->fit, rng, &state_);
  if (hooks_.on_boundary) hooks_.on_boundary(generation, before, model_);
}

double IterativeTrainer::train_pass(const Dataset& train, std::size_t epoch, Direction phase, double lr) {
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle = stream_rng(config_.seed, Stream::kShuffle, epoch);
  shuffle.shuffle(order);
  Rng aug = stream_rng(config_.seed, Stream::kAugment, epoch);
  const bool augmenting = config_.flip || config_.crop_pad > 0;

  std::vector<Direction> directions(model_.param_count(), Direction::kDescent);
  if (phase == Direction::kAscent) {
    for (ParamId id : mask_->forget) directions[id] = Direction::kAscent;
  }
  const double ascent_lr = config_.ascent_scale * lr;

  double loss_sum = 0.0;
  std::size_t batch = 0;
  for (std::size_t b = 0; b < n; b += config_.batch_size, ++batch) {
    const std::size_t e = std::min(n, b + config_.batch_size);
    const std::span<const std::size_t> idx(order.data() + b, e - b);
    Tensor x = train.samples.gather_rows(idx);
    if (augmenting) x = augment(x, config_.flip, config_.crop_pad, aug);
    std::vector<int> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(train.labels[i]);

    std::vector<Tensor> grads(model_.param_count());
    double loss = 0.0;
    try {
      ad::Tape tape;
      const auto bound = model_.bind(tape, true);
      const auto out = model_.forward(tape.constant(std::move(x)), bound);
      const ad::Var l = smoothed_cross_entropy(out.logits, y, config_.smoothing);
      loss = l.value().item();
      if (!std::isfinite(loss) || loss > kDivergenceLoss) {
        throw DivergenceError("loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batch),
                              batch);
      }
      const auto gm = tape.backward(l);
      for (ParamId id = 0; id < grads.size(); ++id) {
        if (gm.contains(bound[id])) grads[id] = gm.at(bound[id]);
      }
    } catch (const NumericError& err) {
      throw DivergenceError("non-finite values at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch) + ": " + err.what(),
                            batch);
    }
    sgd_step(model_, grads, state_, directions, lr, ascent_lr);
    if (log_) {
      for (ParamId id = 0; id < grads.size(); ++id) {
        if (!model_.param(id).frozen) log_->push_back({epoch, batch, id, directions[id]});
      }
    }
    loss_sum += loss;
  }
  return loss_sum / static_cast<double>(batch);
}

EpochRecord IterativeTrainer::train_epoch(const Dataset& train, const Dataset* test) {
  if (finished()) throw StateError("schedule already complete");
  if (train.size() == 0) throw ConfigError("training set is empty", "dataset");
  if (config_.crop_pad > 0 || config_.flip) {
    if (!train.is_image()) throw ConfigError("augmentation requested on vector data", "crop_pad");
  }
  const std::size_t E = config_.epochs;
  const std::size_t k = config_.effective_ascent_epochs();
  const std::size_t e = next_epoch_;
  const std::size_t gen = e / E;
  const std::size_t ein = e % E;
  if (ein == 0) generation_start(gen);

  const Direction phase = phase_of(e, E, k);
  if (mask_ && e > 0 && phase != phase_of(e - 1, E, k)) state_.zero(mask_->forget);
  if (config_.strategy == Strategy::kSealFreeze) set_frozen(model_, mask_->fit, phase == Direction::kAscent);

  EpochRecord rec;
  rec.generation = gen;
  rec.epoch = e;
  rec.epoch_in_generation = ein;
  rec.phase = phase;
  rec.lr = cosine_lr(ein, E, config_.lr);
  rec.train_loss = train_pass(train, e, phase, rec.lr);
  rec.train_accuracy = evaluate_accuracy(model_, train);
  rec.test_accuracy = test ? evaluate_accuracy(model_, *test) : std::numeric_limits<double>::quiet_NaN();
  ++next_epoch_;

  if (hooks_.on_epoch) hooks_.on_epoch(rec, model_);
  if (ein + 1 == E && hooks_.on_generation_end) hooks_.on_generation_end(gen, model_, state_);
  return rec;
}

RunReport IterativeTrainer::run(const Dataset& train, const Dataset* test) {
  RunReport report;
  report.seed = config_.seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    while (!finished()) report.records.push_back(train_epoch(train, test));
  } catch (const DivergenceError& err) {
    report.diverged = true;
    report.diverged_batch = err.batch();
    report.error = err.what();
  }
  if (config_.strategy == Strategy::kSealFreeze && mask_) set_frozen(model_, mask_->fit, false);
  report.final_params = model_.parameter_values();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

RunReport run_schedule(const ScheduleConfig& config, LayeredModel model, const Dataset& train,
                       const Dataset* test, TrainerHooks hooks) {
  IterativeTrainer trainer(std::move(model), config);
  trainer.set_hooks(std::move(hooks));
  return trainer.run(train, test);
}

}  // namespace relearn
