// SPDX-License-Identifier: Apache-2.0
#include "relearn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "relearn/errors.hpp"
#include "relearn/optim.hpp"

namespace relearn {

namespace {

// Head-only model matching the target model's head layer.
LayeredModel head_model(const LayeredModel& model) {
  LayeredModel h;
  h.add_layer(model.layer(model.layer_count() - 1));
  return h;
}

void copy_head(const LayeredModel& from, LayeredModel& to) {
  to.layer(to.layer_count() - 1).params = from.layer(0).params;
}

// Mini-batch SGD over the whole model, unfrozen parameters only.
void sgd_epochs(LayeredModel& model, const Tensor& x, std::span<const int> y, std::size_t epochs,
                std::size_t batch_size, double lr, double momentum, double weight_decay, std::uint64_t seed) {
  SgdState state = SgdState::for_model(model, momentum, weight_decay);
  const std::vector<Direction> dirs(model.param_count(), Direction::kDescent);
  std::vector<std::size_t> order(x.dim(0));
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = stream_rng(seed, Stream::kShuffle, e);
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::size_t end = std::min(order.size(), b + batch_size);
      const std::span<const std::size_t> idx(order.data() + b, end - b);
      std::vector<int> yb;
      for (auto i : idx) yb.push_back(y[i]);
      ad::Tape tape;
      const auto bound = model.bind(tape, true);
      const auto out = model.forward(tape.constant(x.gather_rows(idx)), bound);
      const ad::Var loss = smoothed_cross_entropy(out.logits, yb, 0.0);
      if (!std::isfinite(loss.value().item())) throw DivergenceError("non-finite loss in head training", b / batch_size);
      const auto gm = tape.backward(loss);
      std::vector<Tensor> grads(model.param_count());
      for (ParamId id = 0; id < grads.size(); ++id) {
        if (gm.contains(bound[id])) grads[id] = gm.at(bound[id]);
      }
      sgd_step(model, grads, state, dirs, lr, lr);
    }
  }
}

double loss_of(const LayeredModel& model, const Tensor& x, std::span<const int> y) {
  ad::Tape tape;
  const auto bound = model.bind(tape, false);
  return smoothed_cross_entropy(model.forward(tape.constant(x), bound).logits, y, 0.0).value().item();
}

}  // namespace

TransferResult linear_probe(const LayeredModel& model, const Dataset& train, const Dataset& test,
                            const TransferConfig& config) {
  if (!model.has_head()) throw ConfigError("linear probe needs a model with a classifier head", "model");
  if (config.lr_grid.empty()) throw ConfigError("linear probe needs at least one learning rate", "transfer_lrs");
  if (train.size() == 0 || test.size() == 0) throw ConfigError("linear probe needs train and test data", "dataset");
  const Tensor ftrain = model.penultimate_features(train.samples);
  const Tensor ftest = model.penultimate_features(test.samples);

  TransferResult r;
  r.target = train.provenance.source;
  r.lr_grid = config.lr_grid;
  r.epochs = config.epochs;
  r.best = -1.0;
  for (std::size_t g = 0; g < config.lr_grid.size(); ++g) {
    LayeredModel fresh = model;
    Rng rng = stream_rng(config.seed, Stream::kHead, g);
    fresh.replace_head(train.classes, rng);
    LayeredModel head = head_model(fresh);
    double acc = 0.0;
    try {
      sgd_epochs(head, ftrain, train.labels, config.epochs, config.batch_size, config.lr_grid[g], config.momentum,
                 config.weight_decay, config.seed);
      acc = accuracy(argmax_rows(head.predict_logits(ftest)), test.labels);
    } catch (const NumericError&) {
      acc = 0.0;
    } catch (const DivergenceError&) {
      acc = 0.0;
    }
    r.accuracy.push_back(acc);
    if (acc > r.best) {
      r.best = acc;
      r.best_lr = config.lr_grid[g];
    }
  }
  return r;
}

Episode sample_episode(const Dataset& dataset, std::size_t n_way, std::size_t k_shot, std::size_t q_query,
                       Rng& rng) {
  if (n_way < 1 || k_shot < 1) throw SamplingError("episode needs n_way >= 1 and k_shot >= 1");
  if (n_way > dataset.classes) {
    throw SamplingError("episode asks for " + std::to_string(n_way) + " classes but the dataset has " +
                        std::to_string(dataset.classes));
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  std::vector<int> classes(dataset.classes);
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);
  classes.resize(n_way);

  Episode ep;
  ep.classes = classes;
  for (std::size_t w = 0; w < n_way; ++w) {
    auto pool = by_class[static_cast<std::size_t>(classes[w])];
    if (pool.size() < k_shot + q_query) {
      throw SamplingError("class " + std::to_string(classes[w]) + " has " + std::to_string(pool.size()) +
                          " samples, episode needs " + std::to_string(k_shot + q_query));
    }
    rng.shuffle(pool);
    for (std::size_t j = 0; j < k_shot; ++j) {
      ep.support_index.push_back(pool[j]);
      ep.support_y.push_back(static_cast<int>(w));
    }
    for (std::size_t j = k_shot; j < k_shot + q_query; ++j) {
      ep.query_index.push_back(pool[j]);
      ep.query_y.push_back(static_cast<int>(w));
    }
  }
  ep.support_x = dataset.samples.gather_rows(ep.support_index);
  if (!ep.query_index.empty()) ep.query_x = dataset.samples.gather_rows(ep.query_index);
  return ep;
}

const char* fewshot_mode_name(FewShotMode mode) {
  return mode == FewShotMode::kLinear ? "linear" : "linear+affine";
}

FewShotMode parse_fewshot_mode(const std::string& name) {
  if (name == "linear") return FewShotMode::kLinear;
  if (name == "linear+affine") return FewShotMode::kLinearAffine;
  throw ConfigError("unknown few-shot mode '" + name + "'", "mode");
}

void FewShotConfig::validate() const {
  if (n_way < 2) throw ConfigError("n_way must be at least 2", "n_way");
  if (k_shot < 1) throw ConfigError("k_shot must be at least 1", "k_shot");
  if (q_query < 1) throw ConfigError("q_query must be at least 1", "q_query");
  if (episodes < 1) throw ConfigError("episodes must be at least 1", "episodes");
  if (steps < 1) throw ConfigError("steps must be at least 1", "steps");
  if (lr_grid.empty()) throw ConfigError("few-shot needs at least one learning rate", "fewshot_lrs");
}

EpisodeOutcome finetune_episode(const LayeredModel& model, const Episode& episode, const FewShotConfig& config,
                                std::size_t episode_index) {
  const std::size_t n_way = episode.classes.size();
  LayeredModel base = model;
  Rng rng = stream_rng(config.seed, Stream::kHead, episode_index);
  base.replace_head(n_way, rng);

  const bool affine = config.mode == FewShotMode::kLinearAffine;
  Tensor support = episode.support_x;
  Tensor query = episode.query_x;
  if (!affine) {
    support = base.penultimate_features(support);
    query = base.penultimate_features(query);
  } else {
    base.unfreeze_all();
    std::vector<ParamId> frozen;
    const std::size_t head = base.layer_count() - 1;
    for (ParamId id = 0; id < base.param_count(); ++id) {
      const std::size_t l = base.layer_of(id);
      if (l != head && !base.layer(l).is_affine()) frozen.push_back(id);
    }
    base.set_frozen(frozen, true);
  }

  EpisodeOutcome best;
  best.support_loss = std::numeric_limits<double>::infinity();
  bool any = false;
  for (double lr : config.lr_grid) {
    LayeredModel m = affine ? base : head_model(base);
    try {
      // Full-batch steps: one epoch over the support set is one step.
      sgd_epochs(m, support, episode.support_y, config.steps, support.dim(0), lr, config.momentum, 0.0,
                 config.seed);
      const double loss = loss_of(m, support, episode.support_y);
      if (!std::isfinite(loss)) continue;
      if (loss < best.support_loss) {
        best.support_loss = loss;
        best.lr = lr;
        best.accuracy = accuracy(argmax_rows(m.predict_logits(query)), episode.query_y);
        if (affine) {
          best.tuned = std::move(m);
        } else {
          best.tuned = base;
          copy_head(m, best.tuned);
        }
        any = true;
      }
    } catch (const NumericError&) {
    } catch (const DivergenceError&) {
    }
  }
  if (!any) throw DivergenceError("every learning rate diverged in episode " + std::to_string(episode_index), 0);
  best.tuned.unfreeze_all();
  return best;
}

FewShotResult run_episodes(const Dataset& dataset, const FewShotConfig& config, const EpisodeScorer& scorer) {
  config.validate();
  FewShotResult r;
  r.episodes = config.episodes;
  for (std::size_t i = 0; i < config.episodes; ++i) {
    Rng rng = stream_rng(config.seed, Stream::kEpisode, i);
    const Episode ep = sample_episode(dataset, config.n_way, config.k_shot, config.q_query, rng);
    try {
      r.accuracies.push_back(scorer(ep, i));
    } catch (const DivergenceError&) {
      ++r.diverged;
    }
  }
  const std::size_t n = r.accuracies.size();
  if (n == 0) return r;
  r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
    r.ci95 = 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  }
  return r;
}

FewShotResult fewshot_eval(const LayeredModel& model, const Dataset& dataset, const FewShotConfig& config) {
  if (!model.has_head()) throw ConfigError("few-shot evaluation needs a model with a classifier head", "model");
  return run_episodes(dataset, config, [&](const Episode& ep, std::size_t i) {
    return finetune_episode(model, ep, config, i).accuracy;
  });
}

}  // namespace relearn
