// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "relearn/errors.hpp"
#include "relearn/eval.hpp"

using namespace relearn;

namespace {

Dataset blobs(std::size_t classes, std::size_t per_class, double separation, std::uint64_t seed) {
  SyntheticParams p;
  p.classes = classes;
  p.per_class = per_class;
  p.dim = 4;
  p.separation = separation;
  return gen_synthetic(SyntheticKind::kGaussianBlobs, p, seed);
}

// Body that passes inputs through unchanged.
LayeredModel identity_body(std::size_t dim, std::size_t classes) {
  LayeredModel m;
  m.add_linear("fc", dim, dim, false).add_head("head", dim, classes);
  Rng rng(1);
  m.initialize(rng);
  m.param(0).value = Tensor::identity(dim);
  m.param(1).value.fill(0.0);
  return m;
}

// Least squares onto one-hot targets, solved by Gaussian elimination on the
// normal equations; returns training accuracy of the fitted linear map.
double least_squares_accuracy(const Dataset& d) {
  const std::size_t n = d.size(), w = d.samples.row_size() + 1, C = d.classes;
  std::vector<double> A(w * w, 0.0), B(w * C, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(w, 1.0);
    for (std::size_t k = 0; k + 1 < w; ++k) x[k] = d.samples[i * (w - 1) + k];
    for (std::size_t r = 0; r < w; ++r) {
      for (std::size_t c = 0; c < w; ++c) A[r * w + c] += x[r] * x[c];
      B[r * C + static_cast<std::size_t>(d.labels[i])] += x[r];
    }
  }
  for (std::size_t col = 0; col < w; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < w; ++r) {
      if (std::abs(A[r * w + col]) > std::abs(A[piv * w + col])) piv = r;
    }
    for (std::size_t c = 0; c < w; ++c) std::swap(A[col * w + c], A[piv * w + c]);
    for (std::size_t c = 0; c < C; ++c) std::swap(B[col * C + c], B[piv * C + c]);
    for (std::size_t r = 0; r < w; ++r) {
      if (r == col) continue;
      const double f = A[r * w + col] / A[col * w + col];
      for (std::size_t c = 0; c < w; ++c) A[r * w + c] -= f * A[col * w + c];
      for (std::size_t c = 0; c < C; ++c) B[r * C + c] -= f * B[col * C + c];
    }
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) {
      double s = B[(w - 1) * C + c] / A[(w - 1) * w + (w - 1)];
      for (std::size_t k = 0; k + 1 < w; ++k) s += d.samples[i * (w - 1) + k] * B[k * C + c] / A[k * w + k];
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(c);
      }
    }
    hit += best == d.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

LayeredModel affine_cnn() {
  const std::vector<std::size_t> ch = {3, 4};
  const bool pool[] = {true, false};
  LayeredModel m = make_cnn(1, ch, pool, 6, true);
  Rng rng(2);
  m.initialize(rng);
  return m;
}

Dataset image_classes(std::size_t classes, std::size_t per_class) {
  SyntheticParams p;
  p.classes = classes;
  p.per_class = per_class;
  p.separation = 2.0;
  p.image = {1, 4, 4};
  return gen_synthetic(SyntheticKind::kGaussianBlobs, p, 5);
}

}  // namespace

TEST_CASE("linear probe reaches 100% on separable features") {
  const Dataset d = blobs(3, 40, 20.0, 1);
  REQUIRE(least_squares_accuracy(d) == 1.0);
  TransferConfig c;
  c.seed = 2;
  const TransferResult r = linear_probe(identity_body(4, 7), d, d, c);
  CHECK(r.best == 1.0);
  CHECK(r.accuracy.size() == 3);
  CHECK(r.epochs == 30);
}

TEST_CASE("single-rate grid reports that rate") {
  const Dataset d = blobs(3, 20, 3.0, 2);
  TransferConfig c;
  c.lr_grid = {0.05};
  c.epochs = 5;
  const TransferResult r = linear_probe(identity_body(4, 3), d, d, c);
  CHECK(r.best == r.accuracy[0]);
  CHECK(r.best_lr == 0.05);
}

TEST_CASE("constant features cannot beat chance") {
  const Dataset d = blobs(4, 30, 5.0, 3);
  LayeredModel m = identity_body(4, 4);
  m.param(0).value.fill(0.0);
  TransferConfig c;
  c.epochs = 10;
  const TransferResult r = linear_probe(m, d, d, c);
  CHECK(r.best <= 0.25 + 0.05);
}

TEST_CASE("linear probe leaves the body untouched") {
  const Dataset d = blobs(3, 20, 3.0, 4);
  const LayeredModel m = identity_body(4, 3);
  const LayeredModel copy = m;
  TransferConfig c;
  c.epochs = 3;
  linear_probe(m, d, d, c);
  CHECK(m.same_parameters(copy));
}

TEST_CASE("episode shapes and balance") {
  const Dataset d = image_classes(8, 20);
  Rng rng(1);
  const Episode e = sample_episode(d, 5, 1, 15, rng);
  CHECK(e.support_x.dim(0) == 5);
  CHECK(e.query_x.dim(0) == 75);
  CHECK(e.support_x.shape() == Shape{5, 1, 4, 4});
  const std::set<std::size_t> s(e.support_index.begin(), e.support_index.end());
  for (std::size_t q : e.query_index) CHECK(s.count(q) == 0);
  std::vector<int> counts(5, 0);
  for (int y : e.query_y) ++counts[y];
  for (int c : counts) CHECK(c == 15);
  for (std::size_t i = 0; i < e.support_index.size(); ++i) {
    CHECK(d.labels[e.support_index[i]] == e.classes[e.support_y[i]]);
  }
  CHECK(std::set<int>(e.classes.begin(), e.classes.end()).size() == 5);

  Rng a(4), b(4);
  const Episode x = sample_episode(d, 5, 5, 15, a), y = sample_episode(d, 5, 5, 15, b);
  CHECK(x.support_index == y.support_index);
  CHECK(x.query_index == y.query_index);
}

TEST_CASE("episode sampling guards") {
  const Dataset d = image_classes(4, 10);
  Rng rng(1);
  CHECK_THROWS_AS(sample_episode(d, 5, 1, 1, rng), SamplingError);
  try {
    sample_episode(d, 2, 5, 6, rng);
    FAIL("expected a sampling error");
  } catch (const SamplingError& e) {
    CHECK(std::string(e.what()).find("class") != std::string::npos);
  }
}

TEST_CASE("fine-tuning modes restrict what changes") {
  const Dataset d = image_classes(6, 10);
  const LayeredModel m = affine_cnn();
  Rng rng(3);
  const Episode e = sample_episode(d, 3, 2, 4, rng);
  FewShotConfig c;
  c.steps = 10;
  for (FewShotMode mode : {FewShotMode::kLinear, FewShotMode::kLinearAffine}) {
    c.mode = mode;
    const EpisodeOutcome out = finetune_episode(m, e, c, 0);
    CHECK(out.tuned.num_classes() == 3);
    const std::size_t head = m.layer_count() - 1;
    for (ParamId id = 0; id < m.param_count(); ++id) {
      if (m.layer_of(id) == head) continue;
      const bool same = out.tuned.param(id).value == m.param(id).value;
      const bool affine = m.layer(m.layer_of(id)).is_affine();
      CHECK(same == !(affine && mode == FewShotMode::kLinearAffine));
      CHECK_FALSE(out.tuned.param(id).frozen);
    }
    CHECK(out.accuracy >= 0.0);
    CHECK(out.accuracy <= 1.0);
  }
}

TEST_CASE("few-shot evaluation is deterministic and leaves the model intact") {
  const Dataset d = image_classes(6, 12);
  const LayeredModel m = affine_cnn();
  FewShotConfig c;
  c.n_way = 3;
  c.k_shot = 2;
  c.q_query = 5;
  c.episodes = 8;
  c.steps = 10;
  c.seed = 5;
  const FewShotResult a = fewshot_eval(m, d, c), b = fewshot_eval(m, d, c);
  CHECK(std::memcmp(&a.mean, &b.mean, sizeof(double)) == 0);
  CHECK(std::memcmp(&a.ci95, &b.ci95, sizeof(double)) == 0);
  CHECK(a.episodes == 8);
  CHECK(m.same_parameters(affine_cnn()));
}

TEST_CASE("confidence interval shrinks like one over root n") {
  const Dataset d = image_classes(6, 20);
  // Oracle model: each query is right with probability 0.6, independently.
  const EpisodeScorer oracle = [](const Episode& e, std::size_t index) {
    Rng rng({77, index});
    std::size_t hit = 0;
    for (std::size_t i = 0; i < e.query_y.size(); ++i) hit += rng.uniform() < 0.6;
    return static_cast<double>(hit) / static_cast<double>(e.query_y.size());
  };
  FewShotConfig c;
  std::vector<double> logn, logci;
  for (std::size_t n : {50, 200, 600}) {
    c.episodes = n;
    const FewShotResult r = run_episodes(d, c, oracle);
    CHECK(std::abs(r.mean - 0.6) < 0.03);
    logn.push_back(std::log(static_cast<double>(n)));
    logci.push_back(std::log(r.ci95));
  }
  const double mx = (logn[0] + logn[1] + logn[2]) / 3, my = (logci[0] + logci[1] + logci[2]) / 3;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 3; ++i) {
    sxy += (logn[i] - mx) * (logci[i] - my);
    sxx += (logn[i] - mx) * (logn[i] - mx);
  }
  CHECK(std::abs(sxy / sxx + 0.5) <= 0.1);
}

TEST_CASE("diverged episodes are excluded and counted") {
  const Dataset d = image_classes(6, 20);
  FewShotConfig c;
  c.episodes = 10;
  const EpisodeScorer flaky = [](const Episode&, std::size_t index) -> double {
    if (index % 3 == 0) throw DivergenceError("boom", 0);
    return 0.5;
  };
  const FewShotResult r = run_episodes(d, c, flaky);
  CHECK(r.diverged == 4);
  CHECK(r.accuracies.size() == 6);
  CHECK(r.mean == 0.5);
  CHECK(r.ci95 == 0.0);
}

TEST_CASE("few-shot config validation") {
  FewShotConfig c;
  c.lr_grid.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_fewshot_mode("linear+affine") == FewShotMode::kLinearAffine);
  CHECK_THROWS_AS(parse_fewshot_mode("full"), ConfigError);
}
