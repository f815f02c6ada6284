// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "relearn/autodiff.hpp"
#include "relearn/rng.hpp"
#include "relearn/tensor.hpp"

namespace relearn {

enum class LayerKind : std::uint8_t {
  kLinear = 0,
  kConvBlock = 1,   // conv3x3 + bias + relu, optional 2x2 max-pool
  kNormAffine = 2,  // per-sample normalization over channels, then gamma/beta
  kClassifierHead = 3,
};

enum class ParamRole : std::uint8_t { kWeight = 0, kBias = 1, kScale = 2, kShift = 3 };

const char* layer_kind_name(LayerKind kind);

struct Parameter {
  std::string name;
  ParamRole role = ParamRole::kWeight;
  Tensor value;
  bool frozen = false;
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  std::vector<Parameter> params;
  bool probe_point = false;
  bool relu = false;  // linear layers only
  bool pool = false;  // conv blocks only

  std::size_t fan_in() const;
  bool is_affine() const { return kind == LayerKind::kNormAffine; }
};

/// Flat index of a parameter tensor in forward order.
using ParamId = std::size_t;

/// Activations produced by one forward pass.
struct ForwardResult {
  ad::Var logits;
  std::vector<ad::Var> probes;  // pooled features, one per probe layer
};

/// Applies one layer given leaves bound to its parameters.
ad::Var layer_forward(const Layer& layer, ad::Var input, std::span<const ad::Var> params);
/// Convenience evaluation on a private tape.
Tensor layer_forward(const Layer& layer, const Tensor& input);
/// Pools a layer output into a feature matrix: spatial mean for images.
ad::Var probe_features(ad::Var activation);

/// Ordered stack of parameterized layers. Layer indices count parameterized
/// layers only, in forward order; the last layer is the classifier head.
class LayeredModel {
 public:
  LayeredModel() = default;

  LayeredModel& add_linear(std::string name, std::size_t in, std::size_t out, bool relu = true,
                           bool probe = true);
  LayeredModel& add_conv_block(std::string name, std::size_t in_channels, std::size_t out_channels,
                               bool pool, bool probe = true);
  LayeredModel& add_norm_affine(std::string name, std::size_t channels);
  LayeredModel& add_head(std::string name, std::size_t in, std::size_t classes, bool probe = true);
  /// Appends a fully described layer (used by checkpoint loading).
  LayeredModel& add_layer(Layer layer);

  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t param_count() const { return index_.size(); }
  std::size_t scalar_count() const;
  const Parameter& param(ParamId id) const;
  Parameter& param(ParamId id);
  std::size_t layer_of(ParamId id) const { return index_.at(id).first; }
  std::vector<ParamId> params_of_layer(std::size_t layer) const;
  std::string param_label(ParamId id) const;

  bool has_head() const;
  std::size_t num_classes() const;
  std::size_t probe_count() const;

  /// Draws every parameter from its initialization distribution in order.
  void initialize(Rng& rng);
  /// Redraws the selected parameters with the same procedure as initialize().
  void reinitialize(std::span<const ParamId> selected, Rng& rng);

  /// Replaces the classifier head with a fresh one of `classes` outputs.
  void replace_head(std::size_t classes, Rng& rng);

  void set_frozen(std::span<const ParamId> selected, bool frozen);
  void unfreeze_all();

  /// One leaf per parameter tensor, in ParamId order. Frozen parameters are
  /// bound without gradients.
  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad = true) const;
  ForwardResult forward(ad::Var input, std::span<const ad::Var> bound, bool capture_probes = false) const;

  /// Logits for a batch of inputs, evaluated in chunks.
  Tensor predict_logits(const Tensor& inputs, std::size_t chunk = 256) const;
  /// Input of the classifier head (after global pooling), in chunks.
  Tensor penultimate_features(const Tensor& inputs, std::size_t chunk = 256) const;

  /// All parameters concatenated in ParamId order.
  std::vector<Tensor> parameter_values() const;
  void set_parameter_values(std::span<const Tensor> values);

  /// Bitwise equality of architecture and parameter payloads.
  bool same_parameters(const LayeredModel& other) const;

 private:
  void rebuild_index();
  std::vector<Layer> layers_;
  std::vector<std::pair<std::size_t, std::size_t>> index_;
};

/// Row-wise argmax of a logits matrix; ties resolve to the lowest class.
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

/// Multilayer perceptron: relu hidden layers then a head.
LayeredModel make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t classes,
                      bool norm_affine = false);
/// Conv blocks (each halving the resolution when `pool`), global average pool,
/// then a head.
LayeredModel make_cnn(std::size_t channels, std::span<const std::size_t> conv_channels,
                      std::span<const bool> pool, std::size_t classes, bool norm_affine = false);

}  // namespace relearn
