// SPDX-License-Identifier: Apache-2.0
#include "relearn/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "relearn/errors.hpp"

namespace relearn {

void LossConfig::validate() const {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)", "label_smoothing");
  if (classes < 2) throw ConfigError("class count must be at least 2", "classes");
}

ad::Var smoothed_cross_entropy(ad::Var logits, std::span<const int> labels, double alpha) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross-entropy expects [batch, C] logits, got " + shape_string(s));
  LossConfig{alpha, s[1]}.validate();
  const std::size_t N = s[0], C = s[1];
  if (labels.size() != N) throw DimensionError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                                               std::to_string(N) + " rows");
  Tensor target(Shape{N, C}, alpha / static_cast<double>(C));
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= C) {
      throw IndexError("label " + std::to_string(labels[n]) + " outside [0, " + std::to_string(C) + ")");
    }
    target.at(n, static_cast<std::size_t>(labels[n])) += 1.0 - alpha;
  }
  ad::Tape& tape = *logits.tape;
  ad::Var weighted = ad::mul(ad::log_softmax(logits), tape.constant(std::move(target)));
  return ad::scale(ad::sum(weighted), -1.0 / static_cast<double>(N));
}

double cosine_lr(std::size_t epoch_in_generation, std::size_t epochs_per_generation, double eta0) {
  if (epochs_per_generation == 0 || epoch_in_generation >= epochs_per_generation) {
    throw ContractError("cosine_lr: epoch " + std::to_string(epoch_in_generation) + " outside [0, " +
                        std::to_string(epochs_per_generation) + ")");
  }
  const double t = static_cast<double>(epoch_in_generation) / static_cast<double>(epochs_per_generation);
  return eta0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

const char* direction_name(Direction d) { return d == Direction::kAscent ? "ascent" : "descent"; }

SgdState SgdState::for_model(const LayeredModel& model, double momentum, double weight_decay) {
  SgdState s;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (ParamId id = 0; id < model.param_count(); ++id) s.buffers.emplace_back(model.param(id).value.shape(), 0.0);
  return s;
}

void SgdState::zero(std::span<const ParamId> ids) {
  for (ParamId id : ids) buffers.at(id).fill(0.0);
}

void sgd_update(Tensor& theta, const Tensor& grad, Tensor& buffer, double momentum, double weight_decay,
                Direction direction, double lr) {
  if (grad.shape() != theta.shape() || buffer.shape() != theta.shape()) {
    throw DimensionError("sgd: parameter " + shape_string(theta.shape()) + ", gradient " +
                         shape_string(grad.shape()) + ", buffer " + shape_string(buffer.shape()));
  }
  const std::size_t n = theta.size();
  if (direction == Direction::kDescent) {
    for (std::size_t i = 0; i < n; ++i) {
      buffer[i] = momentum * buffer[i] + (grad[i] + weight_decay * theta[i]);
      theta[i] = theta[i] - lr * buffer[i];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      buffer[i] = momentum * buffer[i] + grad[i];
      theta[i] = theta[i] + lr * buffer[i] - lr * weight_decay * theta[i];
    }
  }
}

void sgd_step(LayeredModel& model, std::span<const Tensor> grads, SgdState& state,
              std::span<const Direction> directions, double lr, double ascent_lr) {
  const std::size_t n = model.param_count();
  if (grads.size() != n || directions.size() != n || state.buffers.size() != n) {
    throw ContractError("sgd_step: gradients, directions and buffers must cover every parameter");
  }
  if (!(lr > 0.0)) throw ContractError("sgd_step: learning rate must be positive");
  for (ParamId id = 0; id < n; ++id) {
    Parameter& p = model.param(id);
    if (p.frozen) continue;
    const double rate = directions[id] == Direction::kAscent ? ascent_lr : lr;
    sgd_update(p.value, grads[id], state.buffers[id], state.momentum, state.weight_decay, directions[id], rate);
  }
}

}  // namespace relearn
