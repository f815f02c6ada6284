// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relearn/tensor.hpp"

namespace relearn::ad {

/// Operation vocabulary recorded on the tape.
///
/// Binary elementwise kinds (add, sub, mul) broadcast their second operand
/// when it has the same rank with unit extents, or when it is a vector whose
/// length matches axis 1 of the first operand (per-feature / per-channel).
enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kConv2d,      // 3x3 kernel, stride 1, zero padding 1
  kAdd,
  kSub,
  kScalarMul,
  kRelu,
  kSpatialMean,  // [N,C,H,W] -> [N,C]
  kFeatureMean,  // mean over axis 1, extent kept as 1
  kSoftmax,      // along axis 1 of [N,C]
  kLogSoftmax,   // along axis 1 of [N,C]
  kLog,
  kMul,
  kReshape,
  kMaxPool2,     // 2x2 window, stride 2
  kSum,          // all elements -> scalar
  kNormalize,    // zero mean, unit variance along axis 1, per sample
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Extra scalar/shape arguments for kinds that need them.
struct OpAttrs {
  double scalar = 0.0;
  Shape shape;
};

/// Gradients keyed by leaf identity.
class GradientMap {
 public:
  bool contains(Var leaf) const { return grads_.count(leaf.id) != 0; }
  const Tensor& at(Var leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::uint32_t, Tensor> grads_;
};

/// Records operations in creation order, which is a topological order of the
/// computation graph. A tape supports exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Generic entry point; the typed helpers below forward to it.
  Var apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

  /// Reverse sweep from a scalar. Every leaf recorded with requires_grad gets
  /// an entry, zero-filled when the loss does not depend on it.
  GradientMap backward(Var loss);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::uint32_t in0 = UINT32_MAX;
    std::uint32_t in1 = UINT32_MAX;
    bool requires_grad = false;
    double scalar = 0.0;
    Tensor value;
    // Saved state for the reverse sweep: broadcast map, pool argmax, or
    // per-row inverse standard deviations (stored as doubles in `saved`).
    std::vector<std::uint32_t> index;
    std::vector<double> saved;
  };

  void check_live(Var v) const;
  Tensor forward(Node& node, OpKind kind, const Tensor* a, const Tensor* b);
  void reverse(const Node& node, const Tensor& g, std::vector<Tensor>& grads);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Typed helpers -------------------------------------------------------------

Var matmul(Var a, Var b);
Var conv2d(Var input, Var kernel);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var spatial_mean(Var a);
Var feature_mean(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var log(Var a);
Var reshape(Var a, Shape shape);
Var max_pool2(Var a);
Var sum(Var a);
Var normalize(Var a);

/// Variance floor inside `normalize`.
inline constexpr double kNormalizeEps = 1e-10;

/// Switching pattern of the piecewise-linear ops (relu gates and max-pool
/// winners), one entry per op in evaluation order.
struct ActivationPattern {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<std::vector<std::uint32_t>> entries;
  std::size_t cursor = 0;
};

/// While alive, relu and max-pool on this thread record into or replay from
/// the pattern. Replaying holds every gate fixed, so finite differences taken
/// around a point never straddle a kink.
class PatternScope {
 public:
  explicit PatternScope(ActivationPattern* pattern);
  ~PatternScope();
  PatternScope(const PatternScope&) = delete;
  PatternScope& operator=(const PatternScope&) = delete;

 private:
  ActivationPattern* previous_;
};

}  // namespace relearn::ad
