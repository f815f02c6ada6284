// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "relearn/data.hpp"
#include "relearn/gradcheck.hpp"
#include "relearn/layers.hpp"

namespace relearn {

/// Pooled activations of every probe layer, rows aligned with `inputs`.
/// ConfigError when the model has no probe points.
std::vector<Tensor> layer_features(const LayeredModel& model, const Tensor& inputs, std::size_t chunk = 256);

/// Majority vote among the K nearest reference rows by squared Euclidean
/// distance, ties in distance broken by lower row index. A tie in votes goes
/// to the tied class whose nearest member is closest.
std::vector<int> knn_predict(const Tensor& train_feats, std::span<const int> train_labels,
                             const Tensor& query_feats, std::size_t K);

/// Smallest 1-based d such that every probe from d on agrees with the model;
/// D + 1 when even the last probe disagrees.
std::size_t prediction_depth(std::span<const int> per_layer_preds, int model_pred);

struct ProbeReport {
  std::size_t generation = 0;
  std::size_t epoch = 0;
  std::size_t K = 5;
  std::vector<double> layer_accuracy;  // one per probe layer
  std::vector<std::size_t> depths;     // one per query sample
  std::vector<std::size_t> histogram;  // histogram[d - 1] = count of depth d, size D + 1
  double mean_depth = 0.0;
  double model_accuracy = 0.0;
};

/// k-NN probes of every probe layer with the whole training set as reference.
ProbeReport probe_report(const LayeredModel& model, const Dataset& train, const Dataset& test, std::size_t K = 5);

struct SpectrumReport {
  std::vector<double> eigenvalues;  // descending
  double max_eigenvalue = 0.0;
  double fraction_negative = 0.0;   // share below -tau
  double tau = 0.0;                 // 1e-6 * max |eigenvalue|
  std::size_t parameter_count = 0;
  double trace = 0.0;
  double raw_asymmetry = 0.0;       // before symmetrization
  double raw_abs_max = 0.0;
};

inline constexpr double kNegativeTolerance = 1e-6;

/// Eigen-decomposition of a symmetric matrix given row-major.
SpectrumReport spectrum_of(std::span<const double> symmetric, std::size_t n);

/// Dense finite-difference Hessian of an arbitrary loss, then its spectrum.
SpectrumReport hessian_spectrum(const ad::LossFn& fn, std::span<const Tensor> params, double eps = 1e-5,
                                std::size_t cap = ad::kDenseHessianCap);

/// Hessian of the smoothed cross-entropy of the model on a data batch with
/// respect to every parameter.
SpectrumReport hessian_spectrum(const LayeredModel& model, const Tensor& inputs, std::span<const int> labels,
                                double smoothing, double eps = 1e-5, std::size_t cap = ad::kDenseHessianCap);

/// Fixed seeded batch of min(size, n) training samples.
Dataset hessian_batch(const Dataset& train, std::size_t n, std::uint64_t seed);

}  // namespace relearn
