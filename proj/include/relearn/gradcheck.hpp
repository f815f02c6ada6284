// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "relearn/autodiff.hpp"

namespace relearn::ad {

/// A scalar objective built on a fresh tape from one leaf per parameter.
using LossFn = std::function<Var(Tape&, std::span<const Var>)>;

struct Evaluation {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with the parameter list
};

/// Loss value and analytic gradient at `params`.
Evaluation evaluate(const LossFn& fn, std::span<const Tensor> params);

/// Loss value only.
double loss_value(const LossFn& fn, std::span<const Tensor> params);

struct GradCheckOptions {
  std::size_t max_coords = 64;  // coordinates compared; all when the total is smaller
  std::uint64_t seed = 0;       // picks the sampled coordinates
};

/// Compares backward() against central differences with step `eps`.
///
/// Returns max |analytic - numeric| / (|analytic| + |numeric| + 1e-12) over the
/// sampled coordinates. Throws ContractError for eps <= 0 and DeterminismError
/// when two evaluations at the same point disagree bitwise.
double grad_check(const LossFn& fn, std::span<const Tensor> params, double eps,
                  const GradCheckOptions& options = {});

inline constexpr std::size_t kDenseHessianCap = 4000;

/// Symmetrized finite-difference Hessian over the concatenated parameters.
struct DenseHessian {
  std::size_t n = 0;
  std::vector<double> values;  // row-major n x n, symmetric
  double raw_asymmetry = 0.0;  // max |R - R^T| of the unsymmetrized estimate
  double raw_abs_max = 0.0;    // max |R|

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

/// Row i is the central difference of the gradient along coordinate i, with
/// relu gates and max-pool winners held at their base-point pattern. The
/// result is (R + R^T) / 2. Throws CapacityError above `cap` parameters.
DenseHessian hessian_dense(const LossFn& fn, std::span<const Tensor> params, double eps,
                           std::size_t cap = kDenseHessianCap);

std::size_t total_size(std::span<const Tensor> params);

}  // namespace relearn::ad
