// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "helpers.hpp"
#include "relearn/autodiff.hpp"
#include "relearn/errors.hpp"
#include "relearn/gradcheck.hpp"

namespace ad = relearn::ad;
using relearn::Shape;
using relearn::Tensor;

namespace {

Tensor eval1(ad::Var (*op)(ad::Var), const Tensor& x) {
  ad::Tape tape;
  return op(tape.constant(x)).value();
}

// Two-argument loss helper: sum over an elementwise expression.
ad::LossFn mlp_loss(const Tensor& x, std::size_t layers) {
  return [x, layers](ad::Tape& tape, std::span<const ad::Var> p) {
    ad::Var h = tape.constant(x);
    for (std::size_t l = 0; l < layers; ++l) {
      h = ad::add(ad::matmul(h, p[2 * l]), p[2 * l + 1]);
      if (l + 1 < layers) h = ad::relu(h);
    }
    return ad::scale(ad::sum(ad::mul(h, h)), 0.5);
  };
}

}  // namespace

TEST_CASE("matmul with identity") {
  ad::Tape tape;
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const auto y = ad::matmul(tape.constant(a), tape.constant(Tensor::identity(2)));
  CHECK(y.value() == a);
}

TEST_CASE("relu clamps negatives") {
  CHECK(eval1(ad::relu, Tensor::vector({-1, 0, 2})) == Tensor::vector({0, 0, 2}));
}

TEST_CASE("conv2d window counts on a ones image") {
  ad::Tape tape;
  const auto x = tape.constant(Tensor(Shape{1, 1, 4, 4}, 1.0));
  const auto k = tape.constant(Tensor(Shape{1, 1, 3, 3}, 1.0));
  const Tensor y = ad::conv2d(x, k).value();
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  // Overlap of a 3x3 window with the 4x4 image, counted by hand.
  const double expected[4][4] = {{4, 6, 6, 4}, {6, 9, 9, 6}, {6, 9, 9, 6}, {4, 6, 6, 4}};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(y[r * 4 + c] == expected[r][c]);
  }
}

TEST_CASE("shape mismatches name the op and shapes") {
  ad::Tape tape;
  const auto a = tape.constant(Tensor(Shape{2, 3}));
  const auto b = tape.constant(Tensor(Shape{2, 3}));
  try {
    ad::matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const relearn::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(a, tape.constant(Tensor(Shape{3, 2}))), relearn::DimensionError);
}

TEST_CASE("non-finite outputs are reported") {
  ad::Tape tape;
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::vector({0.0}))), relearn::NumericError);
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::vector({-1.0}))), relearn::NumericError);
}

TEST_CASE("quadratic gradient") {
  ad::Tape tape;
  const auto p = tape.leaf(Tensor::vector({3, -1}), true);
  const auto loss = ad::scale(ad::sum(ad::mul(p, p)), 0.5);
  const auto g = tape.backward(loss);
  CHECK(g.at(p) == Tensor::vector({3, -1}));
}

TEST_CASE("constant loss gives zero gradients") {
  ad::Tape tape;
  const auto p = tape.leaf(Tensor::vector({3, -1}), true);
  const auto c = tape.constant(Tensor::vector({1, 2}));
  const auto g = tape.backward(ad::sum(c));
  REQUIRE(g.contains(p));
  CHECK(g.at(p) == Tensor::vector({0, 0}));
}

TEST_CASE("backward contract") {
  ad::Tape tape;
  const auto p = tape.leaf(Tensor::vector({1, 2}), true);
  CHECK_THROWS_AS(tape.backward(p), relearn::ContractError);
  const auto loss = ad::sum(p);
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), relearn::StateError);
  CHECK_THROWS_AS(tape.backward(ad::Var{}), relearn::StateError);
}

TEST_CASE("gradient entries exist exactly for requiring leaves") {
  ad::Tape tape;
  const auto p = tape.leaf(Tensor(Shape{2, 2}, 1.0), true);
  const auto q = tape.leaf(Tensor(Shape{2, 2}, 1.0), false);
  const auto g = tape.backward(ad::sum(ad::mul(p, q)));
  CHECK(g.size() == 1);
  CHECK(g.contains(p));
  CHECK_FALSE(g.contains(q));
  CHECK(g.at(p).shape() == p.shape());
}

TEST_CASE("three-layer network matches central differences") {
  const Tensor x = testing::random_tensor(Shape{6, 5}, 1);
  const std::vector<Tensor> params = {
      testing::random_tensor(Shape{5, 7}, 2, 0.5), testing::random_tensor(Shape{7}, 3, 0.1),
      testing::random_tensor(Shape{7, 6}, 4, 0.5), testing::random_tensor(Shape{6}, 5, 0.1),
      testing::random_tensor(Shape{6, 3}, 6, 0.5), testing::random_tensor(Shape{3}, 7, 0.1)};
  CHECK(ad::grad_check(mlp_loss(x, 3), params, 1e-5, {1000, 0}) <= 1e-5);
}

TEST_CASE("every op passes a gradient check") {
  const Tensor img = testing::random_tensor(Shape{2, 2, 4, 4}, 11);
  const Tensor ker = testing::random_tensor(Shape{3, 2, 3, 3}, 12, 0.3);
  const std::vector<Tensor> params = {img, ker, testing::random_tensor(Shape{2, 3}, 13)};
  const ad::LossFn fn = [](ad::Tape& tape, std::span<const ad::Var> p) {
    ad::Var c = ad::relu(ad::conv2d(p[0], p[1]));
    ad::Var pooled = ad::max_pool2(c);
    ad::Var feat = ad::spatial_mean(pooled);                    // [2,3]
    ad::Var n = ad::normalize(ad::add(feat, p[2]));
    ad::Var ls = ad::log_softmax(ad::sub(n, ad::scale(p[2], 0.5)));
    ad::Var sm = ad::softmax(ad::reshape(feat, Shape{3, 2}));
    ad::Var fm = ad::feature_mean(ad::mul(c, c));
    ad::Var lg = ad::log(ad::add(sm, tape.constant(Tensor(Shape{3, 2}, 1.0))));
    return ad::add(ad::add(ad::sum(ls), ad::sum(lg)), ad::sum(fm));
  };
  CHECK(ad::grad_check(fn, params, 1e-5, {1000, 0}) <= 1e-5);
}

TEST_CASE("grad_check guards") {
  const std::vector<Tensor> params = {Tensor::vector({1.0, 2.0})};
  const ad::LossFn quad = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::mul(p[0], p[0])); };
  for (double eps : {1e-6, 1e-5, 1e-4}) CHECK(ad::grad_check(quad, params, eps) <= 1e-8);
  CHECK_THROWS_AS(ad::grad_check(quad, params, 0.0), relearn::ContractError);
  int calls = 0;
  const ad::LossFn flaky = [&calls](ad::Tape& tape, std::span<const ad::Var> p) {
    ++calls;
    return ad::add(ad::sum(p[0]), tape.constant(Tensor::scalar(calls * 1e-3)));
  };
  CHECK_THROWS_AS(ad::grad_check(flaky, params, 1e-5), relearn::DeterminismError);
}

TEST_CASE("backward is linear in the loss") {
  const Tensor x = testing::random_tensor(Shape{4, 3}, 21);
  const std::vector<Tensor> params = {testing::random_tensor(Shape{3, 4}, 22), testing::random_tensor(Shape{4}, 23),
                                      testing::random_tensor(Shape{4, 2}, 24), testing::random_tensor(Shape{2}, 25)};
  const auto l1 = mlp_loss(x, 2);
  const ad::LossFn l2 = [x](ad::Tape& tape, std::span<const ad::Var> p) {
    return ad::sum(ad::log_softmax(ad::matmul(ad::relu(ad::matmul(tape.constant(x), p[0])), p[2])));
  };
  const double a = 0.7, b = -1.3;
  const ad::LossFn combo = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    return ad::add(ad::scale(l1(tape, p), a), ad::scale(l2(tape, p), b));
  };
  const auto g1 = ad::evaluate(l1, params).grads;
  const auto g2 = ad::evaluate(l2, params).grads;
  const auto gc = ad::evaluate(combo, params).grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j) CHECK(std::abs(gc[i][j] - (a * g1[i][j] + b * g2[i][j])) <= 1e-10);
  }
}

TEST_CASE("forward and backward are deterministic") {
  const Tensor x = testing::random_tensor(Shape{8, 5}, 31);
  const std::vector<Tensor> params = {testing::random_tensor(Shape{5, 6}, 32), testing::random_tensor(Shape{6}, 33),
                                      testing::random_tensor(Shape{6, 2}, 34), testing::random_tensor(Shape{2}, 35)};
  const auto a = ad::evaluate(mlp_loss(x, 2), params);
  const auto b = ad::evaluate(mlp_loss(x, 2), params);
  CHECK(std::memcmp(&a.loss, &b.loss, sizeof(double)) == 0);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(a.grads[i] == b.grads[i]);
}

TEST_CASE("dense Hessian of analytic quadratics") {
  const std::vector<Tensor> xy = {Tensor::vector({0.3, -0.7})};
  const ad::LossFn q = [](ad::Tape& tape, std::span<const ad::Var> p) {
    const auto c = tape.constant(Tensor::vector({1.5, 0.5}));
    return ad::sum(ad::mul(c, ad::mul(p[0], p[0])));
  };
  const auto h = ad::hessian_dense(q, xy, 1e-4);
  CHECK(std::abs(h(0, 0) - 3.0) <= 1e-6);
  CHECK(std::abs(h(1, 1) - 1.0) <= 1e-6);
  CHECK(std::abs(h(0, 1)) <= 1e-6);

  const ad::LossFn saddle = [](ad::Tape& tape, std::span<const ad::Var> p) {
    const auto c = tape.constant(Tensor::vector({1.0, -1.0}));
    return ad::sum(ad::mul(c, ad::mul(p[0], p[0])));
  };
  const auto s = ad::hessian_dense(saddle, xy, 1e-4);
  CHECK(std::abs(s(0, 0) - 2.0) <= 1e-6);
  CHECK(std::abs(s(1, 1) + 2.0) <= 1e-6);
}

TEST_CASE("dense Hessian reproduces a random quadratic form") {
  // loss = x^T A x / 2 with A symmetric; the Hessian is A.
  const std::size_t n = 6;
  Tensor A = testing::random_tensor(Shape{n, n}, 41);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) A.at(j, i) = A.at(i, j);
  }
  const std::vector<Tensor> x = {testing::random_tensor(Shape{1, n}, 42)};
  const ad::LossFn fn = [A](ad::Tape& tape, std::span<const ad::Var> p) {
    return ad::scale(ad::sum(ad::mul(ad::matmul(p[0], tape.constant(A)), p[0])), 0.5);
  };
  const auto h = ad::hessian_dense(fn, x, 1e-4);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(h(i, j) - A.at(i, j)) <= 1e-6);
  }
}

TEST_CASE("dense Hessian guards") {
  const std::vector<Tensor> big = {Tensor(Shape{50})};
  const ad::LossFn fn = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::mul(p[0], p[0])); };
  CHECK_THROWS_AS(ad::hessian_dense(fn, big, 1e-4, 49), relearn::CapacityError);
  CHECK_THROWS_AS(ad::hessian_dense(fn, big, 0.0), relearn::ContractError);
}

TEST_CASE("pinned activation patterns replay the recorded gates") {
  ad::ActivationPattern pattern;
  {
    ad::PatternScope scope(&pattern);
    ad::Tape tape;
    CHECK(ad::relu(tape.constant(Tensor::vector({-1, 2}))).value() == Tensor::vector({0, 2}));
  }
  pattern.mode = ad::ActivationPattern::Mode::kReplay;
  ad::PatternScope scope(&pattern);
  ad::Tape tape;
  const auto x = tape.leaf(Tensor::vector({1, -2}), true);
  const auto y = ad::relu(x);
  CHECK(y.value() == Tensor::vector({0, -2}));
  const auto g = tape.backward(ad::sum(y));
  CHECK(g.at(x) == Tensor::vector({0, 1}));
}
