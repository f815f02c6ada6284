// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "relearn/layers.hpp"
#include "relearn/optim.hpp"
#include "relearn/rng.hpp"

namespace relearn {

/// seal: layers [0, L) forget, [L, end) fit.
/// llf: layers [L, end) forget (head included), [0, L) fit.
/// reverse: the seal partition with the two sets swapped.
enum class MaskScheme { kSeal, kLlf, kReverse };

const char* scheme_name(MaskScheme scheme);
MaskScheme parse_scheme(const std::string& name);

/// Partition of parameter tensors into forgetting and fit hypotheses.
struct HypothesisMask {
  std::size_t threshold = 0;
  MaskScheme scheme = MaskScheme::kSeal;
  std::vector<ParamId> forget;  // ascending
  std::vector<ParamId> fit;     // ascending

  bool in_forget(ParamId id) const;
  std::size_t forget_scalars(const LayeredModel& model) const;
  std::size_t fit_scalars(const LayeredModel& model) const;
};

/// Requires 0 < threshold < layer_count, otherwise ConfigError.
HypothesisMask split_hypotheses(const LayeredModel& model, std::size_t threshold, MaskScheme scheme);

/// Default layer threshold: floor(depth / 2), at least 1.
std::size_t default_threshold(const LayeredModel& model);

/// Redraws the selected parameters and zeroes their momentum. All other
/// parameters are left untouched.
void reinitialize(LayeredModel& model, std::span<const ParamId> selected, Rng& rng, SgdState* state = nullptr);

/// Frozen parameters are skipped by sgd_step until unfrozen.
void set_frozen(LayeredModel& model, std::span<const ParamId> selected, bool frozen);

}  // namespace relearn
