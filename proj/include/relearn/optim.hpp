// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "relearn/autodiff.hpp"
#include "relearn/layers.hpp"

namespace relearn {

struct LossConfig {
  double smoothing = 0.1;  // alpha in [0, 1)
  std::size_t classes = 2;

  void validate() const;
};

/// Mean over the batch of -sum_c target_c * log softmax(logits)_c with
/// target = (1 - alpha) * onehot + alpha / C.
ad::Var smoothed_cross_entropy(ad::Var logits, std::span<const int> labels, double alpha);

/// Cosine decay within a generation: eta0 * (1 + cos(pi * e / E)) / 2.
double cosine_lr(std::size_t epoch_in_generation, std::size_t epochs_per_generation, double eta0);

enum class Direction { kDescent, kAscent };

const char* direction_name(Direction d);

/// Momentum buffers aligned with the model's ParamIds.
struct SgdState {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Tensor> buffers;

  static SgdState for_model(const LayeredModel& model, double momentum, double weight_decay);
  void zero(std::span<const ParamId> ids);
};

/// Single-tensor update.
///
/// descent: buf <- mu*buf + (g + lambda*theta); theta <- theta - lr*buf
/// ascent:  buf <- mu*buf + g;                   theta <- theta + lr*buf - lr*lambda*theta
///
/// Under ascent the loss gradient raises the objective while weight decay
/// still shrinks the norm.
void sgd_update(Tensor& theta, const Tensor& grad, Tensor& buffer, double momentum, double weight_decay,
                Direction direction, double lr);

/// Applies sgd_update to every unfrozen parameter. Parameters whose direction
/// is kAscent use `ascent_lr`, all others `lr`.
void sgd_step(LayeredModel& model, std::span<const Tensor> grads, SgdState& state,
              std::span<const Direction> directions, double lr, double ascent_lr);

}  // namespace relearn
