// SPDX-License-Identifier: Apache-2.0
#include "relearn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "relearn/errors.hpp"

namespace relearn {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kConvBlock: return "conv2d-block";
    case LayerKind::kNormAffine: return "norm-affine";
    case LayerKind::kClassifierHead: return "classifier-head";
  }
  return "unknown";
}

std::size_t Layer::fan_in() const {
  switch (kind) {
    case LayerKind::kLinear:
    case LayerKind::kClassifierHead: return params.at(0).value.dim(0);
    case LayerKind::kConvBlock: return params.at(0).value.dim(1) * 9;
    case LayerKind::kNormAffine: return params.at(0).value.dim(0);
  }
  return 1;
}

namespace {

void draw(Parameter& p, const Layer& layer, Rng& rng) {
  switch (p.role) {
    case ParamRole::kScale: p.value.fill(1.0); return;
    case ParamRole::kShift: p.value.fill(0.0); return;
    case ParamRole::kWeight:
    case ParamRole::kBias: {
      const double fan = static_cast<double>(layer.fan_in());
      // He-uniform for weights, 1/sqrt(fan_in) for biases.
      const double bound = p.role == ParamRole::kWeight ? std::sqrt(6.0 / fan) : 1.0 / std::sqrt(fan);
      for (double& v : p.value.data()) v = rng.uniform(-bound, bound);
      return;
    }
  }
}

ad::Var dense(ad::Var x, ad::Var w, ad::Var b) { return ad::add(ad::matmul(x, w), b); }

}  // namespace

ad::Var probe_features(ad::Var activation) {
  return activation.shape().size() == 4 ? ad::spatial_mean(activation) : activation;
}

ad::Var layer_forward(const Layer& layer, ad::Var input, std::span<const ad::Var> params) {
  if (params.size() != layer.params.size()) {
    throw ContractError("layer " + layer.name + ": expected " + std::to_string(layer.params.size()) +
                        " bound parameters");
  }
  const Shape& in = input.shape();
  switch (layer.kind) {
    case LayerKind::kLinear: {
      if (in.size() != 2) throw DimensionError("linear layer " + layer.name + " got input " + shape_string(in));
      ad::Var y = dense(input, params[0], params[1]);
      return layer.relu ? ad::relu(y) : y;
    }
    case LayerKind::kClassifierHead: {
      ad::Var x = in.size() == 4 ? ad::spatial_mean(input) : input;
      if (x.shape().size() != 2) throw DimensionError("head " + layer.name + " got input " + shape_string(in));
      return dense(x, params[0], params[1]);
    }
    case LayerKind::kConvBlock: {
      if (in.size() != 4) throw DimensionError("conv block " + layer.name + " got input " + shape_string(in));
      ad::Var y = ad::relu(ad::add(ad::conv2d(input, params[0]), params[1]));
      return layer.pool ? ad::max_pool2(y) : y;
    }
    case LayerKind::kNormAffine: {
      if (in.size() < 2) throw DimensionError("norm layer " + layer.name + " got input " + shape_string(in));
      return ad::add(ad::mul(ad::normalize(input), params[0]), params[1]);
    }
  }
  throw ContractError("unknown layer kind");
}

Tensor layer_forward(const Layer& layer, const Tensor& input) {
  ad::Tape tape;
  std::vector<ad::Var> bound;
  for (const auto& p : layer.params) bound.push_back(tape.constant(p.value));
  return layer_forward(layer, tape.constant(input), bound).value();
}

// --- LayeredModel -----------------------------------------------------------

LayeredModel& LayeredModel::add_layer(Layer layer) {
  for (const auto& l : layers_) {
    if (l.name == layer.name) throw ConfigError("duplicate layer name '" + layer.name + "'");
  }
  for (std::size_t i = 0; i < layer.params.size(); ++i) {
    for (std::size_t j = i + 1; j < layer.params.size(); ++j) {
      if (layer.params[i].name == layer.params[j].name) {
        throw ConfigError("duplicate parameter name '" + layer.params[i].name + "' in " + layer.name);
      }
    }
  }
  layers_.push_back(std::move(layer));
  rebuild_index();
  return *this;
}

LayeredModel& LayeredModel::add_linear(std::string name, std::size_t in, std::size_t out, bool relu,
                                       bool probe) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kLinear;
  l.relu = relu;
  l.probe_point = probe;
  l.params.push_back({"weight", ParamRole::kWeight, Tensor(Shape{in, out}), false});
  l.params.push_back({"bias", ParamRole::kBias, Tensor(Shape{out}), false});
  return add_layer(std::move(l));
}

LayeredModel& LayeredModel::add_conv_block(std::string name, std::size_t in_channels,
                                           std::size_t out_channels, bool pool, bool probe) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kConvBlock;
  l.pool = pool;
  l.probe_point = probe;
  l.params.push_back({"weight", ParamRole::kWeight, Tensor(Shape{out_channels, in_channels, 3, 3}), false});
  l.params.push_back({"bias", ParamRole::kBias, Tensor(Shape{out_channels}), false});
  return add_layer(std::move(l));
}

LayeredModel& LayeredModel::add_norm_affine(std::string name, std::size_t channels) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kNormAffine;
  l.params.push_back({"gamma", ParamRole::kScale, Tensor(Shape{channels}, 1.0), false});
  l.params.push_back({"beta", ParamRole::kShift, Tensor(Shape{channels}, 0.0), false});
  return add_layer(std::move(l));
}

LayeredModel& LayeredModel::add_head(std::string name, std::size_t in, std::size_t classes, bool probe) {
  if (classes < 2) throw ConfigError("classifier head needs at least 2 classes");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kClassifierHead;
  l.probe_point = probe;
  l.params.push_back({"weight", ParamRole::kWeight, Tensor(Shape{in, classes}), false});
  l.params.push_back({"bias", ParamRole::kBias, Tensor(Shape{classes}), false});
  return add_layer(std::move(l));
}

void LayeredModel::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t j = 0; j < layers_[i].params.size(); ++j) index_.emplace_back(i, j);
  }
}

std::size_t LayeredModel::scalar_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) n += p.value.size();
  }
  return n;
}

const Parameter& LayeredModel::param(ParamId id) const {
  if (id >= index_.size()) throw LookupError("unknown parameter id " + std::to_string(id));
  const auto [l, s] = index_[id];
  return layers_[l].params[s];
}

Parameter& LayeredModel::param(ParamId id) {
  if (id >= index_.size()) throw LookupError("unknown parameter id " + std::to_string(id));
  const auto [l, s] = index_[id];
  return layers_[l].params[s];
}

std::vector<ParamId> LayeredModel::params_of_layer(std::size_t layer) const {
  std::vector<ParamId> ids;
  for (ParamId id = 0; id < index_.size(); ++id) {
    if (index_[id].first == layer) ids.push_back(id);
  }
  return ids;
}

std::string LayeredModel::param_label(ParamId id) const {
  return layers_.at(layer_of(id)).name + "." + param(id).name;
}

bool LayeredModel::has_head() const {
  return !layers_.empty() && layers_.back().kind == LayerKind::kClassifierHead;
}

std::size_t LayeredModel::num_classes() const {
  if (!has_head()) throw ConfigError("model has no classifier head");
  return layers_.back().params[0].value.dim(1);
}

std::size_t LayeredModel::probe_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers_.begin(), layers_.end(), [](const Layer& l) { return l.probe_point; }));
}

void LayeredModel::initialize(Rng& rng) {
  std::vector<ParamId> all(index_.size());
  for (ParamId i = 0; i < all.size(); ++i) all[i] = i;
  reinitialize(all, rng);
}

void LayeredModel::reinitialize(std::span<const ParamId> selected, Rng& rng) {
  for (ParamId id : selected) {
    if (id >= index_.size()) throw LookupError("unknown parameter id " + std::to_string(id));
  }
  for (ParamId id : selected) {
    const auto [l, s] = index_[id];
    draw(layers_[l].params[s], layers_[l], rng);
  }
}

void LayeredModel::replace_head(std::size_t classes, Rng& rng) {
  if (!has_head()) throw ConfigError("model has no classifier head");
  Layer old = layers_.back();
  layers_.pop_back();
  rebuild_index();
  add_head(old.name, old.params[0].value.dim(0), classes, old.probe_point);
  auto ids = params_of_layer(layers_.size() - 1);
  reinitialize(ids, rng);
}

void LayeredModel::set_frozen(std::span<const ParamId> selected, bool frozen) {
  for (ParamId id : selected) param(id).frozen = frozen;
}

void LayeredModel::unfreeze_all() {
  for (auto& l : layers_) {
    for (auto& p : l.params) p.frozen = false;
  }
}

std::vector<ad::Var> LayeredModel::bind(ad::Tape& tape, bool requires_grad) const {
  std::vector<ad::Var> out;
  out.reserve(index_.size());
  for (const auto& [l, s] : index_) {
    const Parameter& p = layers_[l].params[s];
    out.push_back(tape.leaf(p.value, requires_grad && !p.frozen));
  }
  return out;
}

ForwardResult LayeredModel::forward(ad::Var input, std::span<const ad::Var> bound, bool capture_probes) const {
  if (bound.size() != index_.size()) throw ContractError("forward: bound parameter count mismatch");
  if (layers_.empty()) throw ConfigError("forward through an empty model");
  ForwardResult r;
  ad::Var x = input;
  std::size_t offset = 0;
  for (const auto& layer : layers_) {
    const std::size_t n = layer.params.size();
    x = layer_forward(layer, x, bound.subspan(offset, n));
    offset += n;
    if (capture_probes && layer.probe_point) r.probes.push_back(probe_features(x));
  }
  r.logits = x;
  return r;
}

Tensor LayeredModel::predict_logits(const Tensor& inputs, std::size_t chunk) const {
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < inputs.dim(0); b += chunk) {
    const std::size_t e = std::min(inputs.dim(0), b + chunk);
    ad::Tape tape;
    auto bound = bind(tape, false);
    parts.push_back(forward(tape.constant(inputs.rows(b, e)), bound).logits.value());
  }
  return concat_rows(parts);
}

Tensor LayeredModel::penultimate_features(const Tensor& inputs, std::size_t chunk) const {
  if (!has_head()) throw ConfigError("model has no classifier head");
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < inputs.dim(0); b += chunk) {
    const std::size_t e = std::min(inputs.dim(0), b + chunk);
    ad::Tape tape;
    auto bound = bind(tape, false);
    ad::Var x = tape.constant(inputs.rows(b, e));
    std::size_t offset = 0;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      const std::size_t n = layers_[i].params.size();
      x = layer_forward(layers_[i], x, std::span<const ad::Var>(bound).subspan(offset, n));
      offset += n;
    }
    parts.push_back(probe_features(x).value());
  }
  return concat_rows(parts);
}

std::vector<Tensor> LayeredModel::parameter_values() const {
  std::vector<Tensor> out;
  out.reserve(index_.size());
  for (const auto& [l, s] : index_) out.push_back(layers_[l].params[s].value);
  return out;
}

void LayeredModel::set_parameter_values(std::span<const Tensor> values) {
  if (values.size() != index_.size()) throw ContractError("set_parameter_values: count mismatch");
  for (ParamId id = 0; id < index_.size(); ++id) {
    Parameter& p = param(id);
    if (values[id].shape() != p.value.shape()) {
      throw DimensionError("parameter " + param_label(id) + " expects " + shape_string(p.value.shape()) +
                           ", got " + shape_string(values[id].shape()));
    }
    p.value = values[id];
  }
}

bool LayeredModel::same_parameters(const LayeredModel& other) const {
  if (other.index_.size() != index_.size()) return false;
  for (ParamId id = 0; id < index_.size(); ++id) {
    if (!(param(id).value == other.param(id).value)) return false;
  }
  return true;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [N,C], got " + shape_string(logits.shape()));
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (logits.at(n, c) > logits.at(n, best)) best = c;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

LayeredModel make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t classes,
                      bool norm_affine) {
  LayeredModel m;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    m.add_linear("fc" + std::to_string(i + 1), in, hidden[i]);
    if (norm_affine) m.add_norm_affine("norm" + std::to_string(i + 1), hidden[i]);
    in = hidden[i];
  }
  m.add_head("head", in, classes);
  return m;
}

LayeredModel make_cnn(std::size_t channels, std::span<const std::size_t> conv_channels,
                      std::span<const bool> pool, std::size_t classes, bool norm_affine) {
  if (pool.size() != conv_channels.size()) throw ConfigError("make_cnn: pool flags must match conv blocks");
  LayeredModel m;
  std::size_t in = channels;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    m.add_conv_block("conv" + std::to_string(i + 1), in, conv_channels[i], pool[i]);
    if (norm_affine) m.add_norm_affine("norm" + std::to_string(i + 1), conv_channels[i]);
    in = conv_channels[i];
  }
  m.add_head("head", in, classes);
  return m;
}

}  // namespace relearn
