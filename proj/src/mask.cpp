// SPDX-License-Identifier: Apache-2.0
#include "relearn/mask.hpp"

#include <algorithm>

#include "relearn/errors.hpp"

namespace relearn {

const char* scheme_name(MaskScheme scheme) {
  switch (scheme) {
    case MaskScheme::kSeal: return "seal";
    case MaskScheme::kLlf: return "llf";
    case MaskScheme::kReverse: return "reverse";
  }
  return "unknown";
}

MaskScheme parse_scheme(const std::string& name) {
  if (name == "seal") return MaskScheme::kSeal;
  if (name == "llf") return MaskScheme::kLlf;
  if (name == "reverse") return MaskScheme::kReverse;
  throw ConfigError("unknown mask scheme '" + name + "'", "scheme");
}

bool HypothesisMask::in_forget(ParamId id) const {
  return std::binary_search(forget.begin(), forget.end(), id);
}

std::size_t HypothesisMask::forget_scalars(const LayeredModel& model) const {
  std::size_t n = 0;
  for (ParamId id : forget) n += model.param(id).value.size();
  return n;
}

std::size_t HypothesisMask::fit_scalars(const LayeredModel& model) const {
  std::size_t n = 0;
  for (ParamId id : fit) n += model.param(id).value.size();
  return n;
}

HypothesisMask split_hypotheses(const LayeredModel& model, std::size_t threshold, MaskScheme scheme) {
  if (threshold == 0 || threshold >= model.layer_count()) {
    throw ConfigError("layer threshold " + std::to_string(threshold) + " outside (0, " +
                          std::to_string(model.layer_count()) + ")",
                      "layer_threshold");
  }
  HypothesisMask m;
  m.threshold = threshold;
  m.scheme = scheme;
  for (ParamId id = 0; id < model.param_count(); ++id) {
    const bool early = model.layer_of(id) < threshold;
    const bool forget = scheme == MaskScheme::kSeal ? early : !early;
    (forget ? m.forget : m.fit).push_back(id);
  }
  return m;
}

std::size_t default_threshold(const LayeredModel& model) {
  return std::max<std::size_t>(1, model.layer_count() / 2);
}

void reinitialize(LayeredModel& model, std::span<const ParamId> selected, Rng& rng, SgdState* state) {
  model.reinitialize(selected, rng);
  if (state) state->zero(selected);
}

void set_frozen(LayeredModel& model, std::span<const ParamId> selected, bool frozen) {
  model.set_frozen(selected, frozen);
}

}  // namespace relearn
