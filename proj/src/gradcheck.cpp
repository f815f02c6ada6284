// SPDX-License-Identifier: Apache-2.0
#include "relearn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "relearn/errors.hpp"
#include "relearn/rng.hpp"

namespace relearn::ad {

namespace {

// Locates flat coordinate `flat` inside the parameter list.
std::pair<std::size_t, std::size_t> locate(std::span<const Tensor> params, std::size_t flat) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (flat < params[p].size()) return {p, flat};
    flat -= params[p].size();
  }
  throw IndexError("flat coordinate out of range");
}

Var build(const LossFn& fn, Tape& tape, std::span<const Tensor> params, bool requires_grad,
          std::vector<Var>& leaves) {
  leaves.clear();
  for (const auto& p : params) leaves.push_back(tape.leaf(p, requires_grad));
  return fn(tape, leaves);
}

}  // namespace

std::size_t total_size(std::span<const Tensor> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

Evaluation evaluate(const LossFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  Var loss = build(fn, tape, params, true, leaves);
  Evaluation ev;
  ev.loss = loss.value().item();
  GradientMap grads = tape.backward(loss);
  ev.grads.reserve(leaves.size());
  for (const auto& leaf : leaves) ev.grads.push_back(grads.at(leaf));
  return ev;
}

double loss_value(const LossFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  return build(fn, tape, params, false, leaves).value().item();
}

double grad_check(const LossFn& fn, std::span<const Tensor> params, double eps,
                  const GradCheckOptions& options) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  const std::size_t total = total_size(params);
  if (total == 0) throw ContractError("grad_check: no parameters");

  const Evaluation base = evaluate(fn, params);
  const double again = loss_value(fn, params);
  if (std::memcmp(&base.loss, &again, sizeof(double)) != 0) {
    throw DeterminismError("grad_check: loss differs between repeated evaluations");
  }

  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (total > options.max_coords) {
    Rng rng = stream_rng(options.seed, Stream::kGradCheck);
    rng.shuffle(coords);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  std::vector<Tensor> work(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t flat : coords) {
    auto [p, i] = locate(params, flat);
    const double orig = work[p][i];
    work[p][i] = orig + eps;
    const double up = loss_value(fn, work);
    work[p][i] = orig - eps;
    const double down = loss_value(fn, work);
    work[p][i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = base.grads[p][i];
    const double err = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

DenseHessian hessian_dense(const LossFn& fn, std::span<const Tensor> params, double eps, std::size_t cap) {
  if (!(eps > 0.0)) throw ContractError("hessian_dense: eps must be positive");
  const std::size_t n = total_size(params);
  if (n > cap) {
    throw CapacityError("dense Hessian over " + std::to_string(n) + " parameters exceeds the cap of " +
                        std::to_string(cap) + "; subsample the spectrum or shrink the model");
  }
  std::vector<double> raw(n * n);
  std::vector<Tensor> work(params.begin(), params.end());
  // Gates are pinned at the base point, giving the Hessian of the active
  // linear piece instead of spikes wherever a perturbation flips a relu.
  ActivationPattern pattern;
  PatternScope scope(&pattern);
  evaluate(fn, work);
  pattern.mode = ActivationPattern::Mode::kReplay;
  auto flat_grad = [&](double* out) {
    pattern.cursor = 0;
    const Evaluation ev = evaluate(fn, work);
    std::size_t o = 0;
    for (const auto& g : ev.grads) {
      std::memcpy(out + o, g.data().data(), g.size() * sizeof(double));
      o += g.size();
    }
  };
  std::vector<double> up(n), down(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [p, k] = locate(params, i);
    const double orig = work[p][k];
    work[p][k] = orig + eps;
    flat_grad(up.data());
    work[p][k] = orig - eps;
    flat_grad(down.data());
    work[p][k] = orig;
    for (std::size_t j = 0; j < n; ++j) raw[i * n + j] = (up[j] - down[j]) / (2.0 * eps);
  }

  DenseHessian h;
  h.n = n;
  h.values.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double rij = raw[i * n + j], rji = raw[j * n + i];
      h.values[i * n + j] = 0.5 * (rij + rji);
      h.raw_asymmetry = std::max(h.raw_asymmetry, std::abs(rij - rji));
      h.raw_abs_max = std::max(h.raw_abs_max, std::abs(rij));
    }
  }
  return h;
}

}  // namespace relearn::ad
