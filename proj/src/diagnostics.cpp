// SPDX-License-Identifier: Apache-2.0
#include "relearn/diagnostics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relearn/errors.hpp"
#include "relearn/optim.hpp"

namespace relearn {

std::vector<Tensor> layer_features(const LayeredModel& model, const Tensor& inputs, std::size_t chunk) {
  const std::size_t D = model.probe_count();
  if (D == 0) throw ConfigError("model has no probe points", "probe");
  std::vector<std::vector<Tensor>> parts(D);
  for (std::size_t b = 0; b < inputs.dim(0); b += chunk) {
    const std::size_t e = std::min(inputs.dim(0), b + chunk);
    ad::Tape tape;
    const auto bound = model.bind(tape, false);
    const auto out = model.forward(tape.constant(inputs.rows(b, e)), bound, true);
    for (std::size_t d = 0; d < D; ++d) parts[d].push_back(out.probes[d].value());
  }
  std::vector<Tensor> feats;
  feats.reserve(D);
  for (auto& p : parts) feats.push_back(concat_rows(p));
  return feats;
}

std::vector<int> knn_predict(const Tensor& train_feats, std::span<const int> train_labels,
                             const Tensor& query_feats, std::size_t K) {
  if (train_feats.rank() != 2 || query_feats.rank() != 2) throw DimensionError("knn_predict expects feature matrices");
  const std::size_t N = train_feats.dim(0), F = train_feats.dim(1);
  if (N == 0 || train_labels.empty()) throw ContractError("knn_predict: empty reference set");
  if (train_labels.size() != N) throw ContractError("knn_predict: one label per reference row required");
  if (query_feats.dim(1) != F) {
    throw DimensionError("knn_predict: reference features " + shape_string(train_feats.shape()) + " vs queries " +
                         shape_string(query_feats.shape()));
  }
  if (K == 0 || K > N) throw ContractError("knn_predict: K must be in [1, " + std::to_string(N) + "]");

  const int max_label = *std::max_element(train_labels.begin(), train_labels.end());
  std::vector<std::pair<double, std::size_t>> dist(N);
  std::vector<std::size_t> votes(static_cast<std::size_t>(max_label) + 1);
  std::vector<int> out;
  out.reserve(query_feats.dim(0));
  for (std::size_t q = 0; q < query_feats.dim(0); ++q) {
    const double* x = query_feats.data().data() + q * F;
    for (std::size_t i = 0; i < N; ++i) {
      const double* r = train_feats.data().data() + i * F;
      double s = 0.0;
      for (std::size_t f = 0; f < F; ++f) {
        const double d = x[f] - r[f];
        s += d * d;
      }
      dist[i] = {s, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(K), dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    std::size_t best = 0;
    for (std::size_t j = 0; j < K; ++j) best = std::max(best, ++votes[static_cast<std::size_t>(train_labels[dist[j].second])]);
    // Neighbours are sorted nearest first, so the first one from a tied class wins.
    int label = train_labels[dist[0].second];
    for (std::size_t j = 0; j < K; ++j) {
      const int c = train_labels[dist[j].second];
      if (votes[static_cast<std::size_t>(c)] == best) {
        label = c;
        break;
      }
    }
    out.push_back(label);
  }
  return out;
}

std::size_t prediction_depth(std::span<const int> per_layer_preds, int model_pred) {
  if (per_layer_preds.empty()) throw ContractError("prediction_depth: at least one probe layer required");
  std::size_t d = per_layer_preds.size();
  while (d > 0 && per_layer_preds[d - 1] == model_pred) --d;
  return d + 1;
}

ProbeReport probe_report(const LayeredModel& model, const Dataset& train, const Dataset& test, std::size_t K) {
  const auto train_feats = layer_features(model, train.samples);
  const auto test_feats = layer_features(model, test.samples);
  const std::size_t D = train_feats.size();
  const auto model_preds = argmax_rows(model.predict_logits(test.samples));

  ProbeReport r;
  r.K = K;
  std::vector<std::vector<int>> preds(D);
  for (std::size_t d = 0; d < D; ++d) {
    preds[d] = knn_predict(train_feats[d], train.labels, test_feats[d], K);
    r.layer_accuracy.push_back(accuracy(preds[d], test.labels));
  }
  r.histogram.assign(D + 1, 0);
  std::vector<int> column(D);
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t d = 0; d < D; ++d) column[d] = preds[d][i];
    const std::size_t depth = prediction_depth(column, model_preds[i]);
    r.depths.push_back(depth);
    ++r.histogram[depth - 1];
    total += static_cast<double>(depth);
  }
  r.mean_depth = test.size() ? total / static_cast<double>(test.size()) : 0.0;
  r.model_accuracy = accuracy(model_preds, test.labels);
  return r;
}

SpectrumReport spectrum_of(std::span<const double> symmetric, std::size_t n) {
  if (symmetric.size() != n * n || n == 0) throw DimensionError("spectrum_of: expected a square matrix");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(symmetric.data(),
                                                                                             static_cast<Eigen::Index>(n),
                                                                                             static_cast<Eigen::Index>(n));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition did not converge");
  SpectrumReport r;
  r.parameter_count = n;
  const auto& ev = solver.eigenvalues();
  r.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  std::sort(r.eigenvalues.begin(), r.eigenvalues.end(), std::greater<>());
  r.max_eigenvalue = r.eigenvalues.front();
  double amax = 0.0;
  for (double v : r.eigenvalues) amax = std::max(amax, std::abs(v));
  r.tau = kNegativeTolerance * amax;
  const auto negative = std::count_if(r.eigenvalues.begin(), r.eigenvalues.end(), [&](double v) { return v < -r.tau; });
  r.fraction_negative = static_cast<double>(negative) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) r.trace += symmetric[i * n + i];
  return r;
}

SpectrumReport hessian_spectrum(const ad::LossFn& fn, std::span<const Tensor> params, double eps, std::size_t cap) {
  const auto h = ad::hessian_dense(fn, params, eps, cap);
  SpectrumReport r = spectrum_of(h.values, h.n);
  r.raw_asymmetry = h.raw_asymmetry;
  r.raw_abs_max = h.raw_abs_max;
  return r;
}

SpectrumReport hessian_spectrum(const LayeredModel& model, const Tensor& inputs, std::span<const int> labels,
                                double smoothing, double eps, std::size_t cap) {
  const std::vector<int> y(labels.begin(), labels.end());
  const ad::LossFn fn = [&model, &inputs, y, smoothing](ad::Tape& tape, std::span<const ad::Var> params) {
    const auto out = model.forward(tape.constant(inputs), params);
    return smoothed_cross_entropy(out.logits, y, smoothing);
  };
  const auto values = model.parameter_values();
  return hessian_spectrum(fn, values, eps, cap);
}

Dataset hessian_batch(const Dataset& train, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = stream_rng(seed, Stream::kProbe, 1);
  rng.shuffle(idx);
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  return train.subset(idx);
}

}  // namespace relearn
