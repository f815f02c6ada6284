// SPDX-License-Identifier: Apache-2.0
#include "relearn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "relearn/errors.hpp"

namespace relearn::ad {

namespace {

thread_local ActivationPattern* active_pattern = nullptr;

// Records `fresh` or swaps in the replayed entry of the same op.
void pin_pattern(std::vector<std::uint32_t>& fresh) {
  ActivationPattern* p = active_pattern;
  if (!p) return;
  if (p->mode == ActivationPattern::Mode::kRecord) {
    p->entries.push_back(fresh);
    return;
  }
  if (p->cursor >= p->entries.size() || p->entries[p->cursor].size() != fresh.size()) {
    throw ContractError("activation pattern replay does not match the recorded evaluation");
  }
  fresh = p->entries[p->cursor++];
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape* b = nullptr,
                             const std::string& detail = {}) {
  std::string msg = std::string(op_name(kind)) + ": incompatible shape " + shape_string(a);
  if (b) msg += " and " + shape_string(*b);
  if (!detail.empty()) msg += " (" + detail + ")";
  throw DimensionError(msg);
}

// Maps every flat index of `a` onto the flat index of the broadcast operand.
// Returns an empty map when the shapes are identical.
std::vector<std::uint32_t> broadcast_map(OpKind kind, const Shape& a, const Shape& b) {
  if (a == b) return {};
  const std::size_t rank = a.size();
  Shape bb;
  if (b.size() == 1 && rank >= 2 && b[0] == a[1]) {
    bb.assign(rank, 1);
    bb[1] = b[0];
  } else if (b.size() == rank) {
    bb = b;
    for (std::size_t i = 0; i < rank; ++i) {
      if (bb[i] != a[i] && bb[i] != 1) shape_fail(kind, a, &b, "not broadcastable");
    }
  } else {
    shape_fail(kind, a, &b, "not broadcastable");
  }
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    stride[i] = (bb[i] == 1) ? 0 : s;
    s *= bb[i];
  }
  const std::size_t n = shape_size(a);
  std::vector<std::uint32_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = static_cast<std::uint32_t>(off);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < a[d]) break;
      off -= stride[d] * a[d];
      idx[d] = 0;
    }
  }
  return map;
}

std::size_t trailing(const Shape& s, std::size_t from) {
  std::size_t r = 1;
  for (std::size_t i = from; i < s.size(); ++i) r *= s[i];
  return r;
}

Tensor& accumulate_slot(std::vector<Tensor>& grads, std::uint32_t id, const Shape& shape) {
  if (grads[id].size() == 0) grads[id] = Tensor(shape, 0.0);
  return grads[id];
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kScalarMul: return "scalar-mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kSpatialMean: return "spatial-mean";
    case OpKind::kFeatureMean: return "feature-mean";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log-softmax";
    case OpKind::kLog: return "log";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kReshape: return "reshape";
    case OpKind::kMaxPool2: return "max-pool";
    case OpKind::kSum: return "sum";
    case OpKind::kNormalize: return "normalize";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape) throw StateError("variable is not attached to a tape");
  return tape->value(*this);
}

const Tensor& GradientMap::at(Var leaf) const {
  auto it = grads_.find(leaf.id);
  if (it == grads_.end()) throw LookupError("no gradient for node " + std::to_string(leaf.id));
  return it->second;
}

void Tape::check_live(Var v) const {
  if (v.tape != this) throw StateError("variable belongs to a different or missing tape");
  if (consumed_) throw StateError("tape already consumed by backward()");
  if (v.id >= nodes_.size()) throw StateError("dangling variable id " + std::to_string(v.id));
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw StateError("variable belongs to a different tape");
  return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw StateError("variable belongs to a different tape");
  return nodes_[v.id].requires_grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  Node n;
  n.kind = OpKind::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  const bool binary = kind == OpKind::kMatmul || kind == OpKind::kConv2d || kind == OpKind::kAdd ||
                      kind == OpKind::kSub || kind == OpKind::kMul;
  if (kind == OpKind::kLeaf) throw ContractError("use Tape::leaf for leaves");
  if (inputs.size() != (binary ? 2u : 1u)) {
    throw ContractError(std::string(op_name(kind)) + " expects " + (binary ? "2" : "1") + " inputs");
  }
  for (const auto& v : inputs) check_live(v);

  Node node;
  node.kind = kind;
  node.in0 = inputs[0].id;
  node.requires_grad = nodes_[inputs[0].id].requires_grad;
  if (binary) {
    node.in1 = inputs[1].id;
    node.requires_grad = node.requires_grad || nodes_[inputs[1].id].requires_grad;
  }
  node.scalar = attrs.scalar;
  if (kind == OpKind::kReshape) {
    if (shape_size(attrs.shape) != nodes_[node.in0].value.size()) {
      shape_fail(kind, nodes_[node.in0].value.shape(), &attrs.shape);
    }
    node.value = nodes_[node.in0].value.reshaped(attrs.shape);
  } else {
    const Tensor* a = &nodes_[node.in0].value;
    const Tensor* b = binary ? &nodes_[node.in1].value : nullptr;
    node.value = forward(node, kind, a, b);
  }
  if (!node.value.all_finite()) {
    throw NumericError(std::string(op_name(kind)) + " produced a non-finite value");
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::forward(Node& node, OpKind kind, const Tensor* a, const Tensor* b) {
  const Shape& as = a->shape();
  switch (kind) {
    case OpKind::kMatmul: {
      const Shape& bs = b->shape();
      if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) shape_fail(kind, as, &bs);
      const std::size_t m = as[0], k = as[1], n = bs[1];
      Tensor out(Shape{m, n});
      const double* A = a->data().data();
      const double* B = b->data().data();
      double* O = out.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          const double* brow = B + p * n;
          double* orow = O + i * n;
          for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
      }
      return out;
    }
    case OpKind::kConv2d: {
      const Shape& ws = b->shape();
      if (as.size() != 4 || ws.size() != 4 || ws[1] != as[1] || ws[2] != 3 || ws[3] != 3) {
        shape_fail(kind, as, &ws, "expects [N,C,H,W] and [O,C,3,3]");
      }
      const std::size_t N = as[0], C = as[1], H = as[2], W = as[3], O = ws[0];
      Tensor out(Shape{N, O, H, W});
      const double* X = a->data().data();
      const double* K = b->data().data();
      double* Y = out.data().data();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
          double* y = Y + (n * O + o) * H * W;
          for (std::size_t c = 0; c < C; ++c) {
            const double* x = X + (n * C + c) * H * W;
            const double* k = K + (o * C + c) * 9;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const double kv = k[ky * 3 + kx];
                // Output row r reads input row r + ky - 1.
                const std::size_t r0 = ky == 0 ? 1 : 0;
                const std::size_t r1 = ky == 2 ? H - 1 : H;
                const std::size_t c0 = kx == 0 ? 1 : 0;
                const std::size_t c1 = kx == 2 ? W - 1 : W;
                for (std::size_t r = r0; r < r1; ++r) {
                  const double* xr = x + (r + ky - 1) * W;
                  double* yr = y + r * W;
                  for (std::size_t cc = c0; cc < c1; ++cc) yr[cc] += kv * xr[cc + kx - 1];
                }
              }
            }
          }
        }
      }
      return out;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      node.index = broadcast_map(kind, as, b->shape());
      Tensor out(as);
      const auto& map = node.index;
      const double* A = a->data().data();
      const double* B = b->data().data();
      double* O = out.data().data();
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double bv = map.empty() ? B[i] : B[map[i]];
        O[i] = kind == OpKind::kAdd ? A[i] + bv : kind == OpKind::kSub ? A[i] - bv : A[i] * bv;
      }
      return out;
    }
    case OpKind::kScalarMul: {
      Tensor out = *a;
      for (double& v : out.data()) v *= node.scalar;
      return out;
    }
    case OpKind::kRelu: {
      Tensor out = *a;
      if (!active_pattern) {
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        return out;
      }
      node.index.resize(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) node.index[i] = (*a)[i] > 0.0;
      pin_pattern(node.index);
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!node.index[i]) out[i] = 0.0;
      }
      return out;
    }
    case OpKind::kSpatialMean: {
      if (as.size() != 4) shape_fail(kind, as, nullptr, "expects [N,C,H,W]");
      const std::size_t NC = as[0] * as[1], HW = as[2] * as[3];
      Tensor out(Shape{as[0], as[1]});
      for (std::size_t i = 0; i < NC; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < HW; ++j) s += (*a)[i * HW + j];
        out[i] = s / static_cast<double>(HW);
      }
      return out;
    }
    case OpKind::kFeatureMean: {
      if (as.size() < 2) shape_fail(kind, as, nullptr, "expects rank >= 2");
      const std::size_t N = as[0], F = as[1], R = trailing(as, 2);
      Shape os = as;
      os[1] = 1;
      Tensor out(os);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t r = 0; r < R; ++r) {
          double s = 0.0;
          for (std::size_t f = 0; f < F; ++f) s += (*a)[(n * F + f) * R + r];
          out[n * R + r] = s / static_cast<double>(F);
        }
      }
      return out;
    }
    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
      if (as.size() != 2) shape_fail(kind, as, nullptr, "expects [N,C]");
      const std::size_t N = as[0], C = as[1];
      Tensor out(as);
      for (std::size_t n = 0; n < N; ++n) {
        const double* x = a->data().data() + n * C;
        double* y = out.data().data() + n * C;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(x[c] - mx);
        if (kind == OpKind::kSoftmax) {
          for (std::size_t c = 0; c < C; ++c) y[c] = std::exp(x[c] - mx) / z;
        } else {
          const double lz = mx + std::log(z);
          for (std::size_t c = 0; c < C; ++c) y[c] = x[c] - lz;
        }
      }
      return out;
    }
    case OpKind::kLog: {
      Tensor out = *a;
      for (double& v : out.data()) v = std::log(v);
      return out;
    }
    case OpKind::kMaxPool2: {
      if (as.size() != 4 || as[2] < 2 || as[3] < 2) shape_fail(kind, as, nullptr, "expects [N,C,H>=2,W>=2]");
      const std::size_t NC = as[0] * as[1], H = as[2], W = as[3], OH = H / 2, OW = W / 2;
      Tensor out(Shape{as[0], as[1], OH, OW});
      node.index.resize(out.size());
      for (std::size_t i = 0; i < NC; ++i) {
        for (std::size_t r = 0; r < OH; ++r) {
          for (std::size_t c = 0; c < OW; ++c) {
            std::size_t best = i * H * W + (2 * r) * W + 2 * c;
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = i * H * W + (2 * r + dy) * W + 2 * c + dx;
                if ((*a)[idx] > (*a)[best]) best = idx;
              }
            }
            node.index[(i * OH + r) * OW + c] = static_cast<std::uint32_t>(best);
          }
        }
      }
      pin_pattern(node.index);
      for (std::size_t o = 0; o < out.size(); ++o) out[o] = (*a)[node.index[o]];
      return out;
    }
    case OpKind::kSum:
      return Tensor::scalar(a->sum());
    case OpKind::kNormalize: {
      if (as.size() < 2) shape_fail(kind, as, nullptr, "expects rank >= 2");
      const std::size_t N = as[0], F = as[1], R = trailing(as, 2);
      Tensor out(as);
      node.saved.resize(N * R);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t r = 0; r < R; ++r) {
          double mean = 0.0;
          for (std::size_t f = 0; f < F; ++f) mean += (*a)[(n * F + f) * R + r];
          mean /= static_cast<double>(F);
          double var = 0.0;
          for (std::size_t f = 0; f < F; ++f) {
            const double d = (*a)[(n * F + f) * R + r] - mean;
            var += d * d;
          }
          var /= static_cast<double>(F);
          const double inv = 1.0 / std::sqrt(var + kNormalizeEps);
          node.saved[n * R + r] = inv;
          for (std::size_t f = 0; f < F; ++f) {
            const std::size_t i = (n * F + f) * R + r;
            out[i] = ((*a)[i] - mean) * inv;
          }
        }
      }
      return out;
    }
    case OpKind::kLeaf:
    case OpKind::kReshape:
      break;
  }
  throw ContractError("unhandled operation kind");
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape == nullptr) throw StateError("backward() on a variable without a tape");
  check_live(loss);
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));

  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id] = Tensor(lv.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.kind == OpKind::kLeaf || !node.requires_grad || grads[i].size() == 0) continue;
    reverse(node, grads[i], grads);
    grads[i] = Tensor();
  }

  GradientMap result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.kind != OpKind::kLeaf || !node.requires_grad) continue;
    Tensor g = grads[i].size() ? std::move(grads[i]) : Tensor(node.value.shape(), 0.0);
    result.grads_.emplace(static_cast<std::uint32_t>(i), std::move(g));
  }
  consumed_ = true;
  return result;
}

void Tape::reverse(const Node& node, const Tensor& g, std::vector<Tensor>& grads) {
  const Node& an = nodes_[node.in0];
  const bool ga = an.requires_grad;
  const Node* bn = node.in1 != UINT32_MAX ? &nodes_[node.in1] : nullptr;
  const bool gb = bn && bn->requires_grad;
  const Tensor& a = an.value;

  switch (node.kind) {
    case OpKind::kMatmul: {
      const Tensor& b = bn->value;
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (ga) {
        Tensor& da = accumulate_slot(grads, node.in0, a.shape());
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
            da[i * k + p] += s;
          }
        }
      }
      if (gb) {
        Tensor& db = accumulate_slot(grads, node.in1, b.shape());
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += av * g[i * n + j];
          }
        }
      }
      return;
    }
    case OpKind::kConv2d: {
      const Tensor& w = bn->value;
      const std::size_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3), O = w.dim(0);
      Tensor* da = ga ? &accumulate_slot(grads, node.in0, a.shape()) : nullptr;
      Tensor* dw = gb ? &accumulate_slot(grads, node.in1, w.shape()) : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
          const double* gy = g.data().data() + (n * O + o) * H * W;
          for (std::size_t c = 0; c < C; ++c) {
            const double* x = a.data().data() + (n * C + c) * H * W;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::size_t r0 = ky == 0 ? 1 : 0;
                const std::size_t r1 = ky == 2 ? H - 1 : H;
                const std::size_t c0 = kx == 0 ? 1 : 0;
                const std::size_t c1 = kx == 2 ? W - 1 : W;
                const std::size_t widx = (o * C + c) * 9 + ky * 3 + kx;
                double acc = 0.0;
                for (std::size_t r = r0; r < r1; ++r) {
                  const std::size_t xr = (r + ky - 1) * W;
                  for (std::size_t cc = c0; cc < c1; ++cc) {
                    const double gv = gy[r * W + cc];
                    acc += gv * x[xr + cc + kx - 1];
                    if (da) (*da)[(n * C + c) * H * W + xr + cc + kx - 1] += gv * w[widx];
                  }
                }
                if (dw) (*dw)[widx] += acc;
              }
            }
          }
        }
      }
      return;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Tensor& b = bn->value;
      const auto& map = node.index;
      const std::size_t n = g.size();
      if (ga) {
        Tensor& da = accumulate_slot(grads, node.in0, a.shape());
        for (std::size_t i = 0; i < n; ++i) {
          da[i] += node.kind == OpKind::kMul ? g[i] * (map.empty() ? b[i] : b[map[i]]) : g[i];
        }
      }
      if (gb) {
        Tensor& db = accumulate_slot(grads, node.in1, b.shape());
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = map.empty() ? i : map[i];
          db[j] += node.kind == OpKind::kAdd ? g[i] : node.kind == OpKind::kSub ? -g[i] : g[i] * a[i];
        }
      }
      return;
    }
    case OpKind::kScalarMul: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += node.scalar * g[i];
      return;
    }
    case OpKind::kRelu: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      const bool pinned = !node.index.empty();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (pinned ? node.index[i] != 0 : a[i] > 0.0) da[i] += g[i];
      }
      return;
    }
    case OpKind::kSpatialMean: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      const std::size_t HW = a.dim(2) * a.dim(3);
      const double inv = 1.0 / static_cast<double>(HW);
      for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = 0; j < HW; ++j) da[i * HW + j] += g[i] * inv;
      }
      return;
    }
    case OpKind::kFeatureMean: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      const std::size_t N = a.dim(0), F = a.dim(1), R = trailing(a.shape(), 2);
      const double inv = 1.0 / static_cast<double>(F);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t f = 0; f < F; ++f) {
          for (std::size_t r = 0; r < R; ++r) da[(n * F + f) * R + r] += g[n * R + r] * inv;
        }
      }
      return;
    }
    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      const std::size_t N = a.dim(0), C = a.dim(1);
      const Tensor& y = node.value;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t o = n * C;
        if (node.kind == OpKind::kSoftmax) {
          double dot = 0.0;
          for (std::size_t c = 0; c < C; ++c) dot += g[o + c] * y[o + c];
          for (std::size_t c = 0; c < C; ++c) da[o + c] += y[o + c] * (g[o + c] - dot);
        } else {
          double gs = 0.0;
          for (std::size_t c = 0; c < C; ++c) gs += g[o + c];
          for (std::size_t c = 0; c < C; ++c) da[o + c] += g[o + c] - std::exp(y[o + c]) * gs;
        }
      }
      return;
    }
    case OpKind::kLog: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / a[i];
      return;
    }
    case OpKind::kReshape: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      return;
    }
    case OpKind::kMaxPool2: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      for (std::size_t i = 0; i < g.size(); ++i) da[node.index[i]] += g[i];
      return;
    }
    case OpKind::kSum: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      const double gv = g[0];
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += gv;
      return;
    }
    case OpKind::kNormalize: {
      Tensor& da = accumulate_slot(grads, node.in0, a.shape());
      const std::size_t N = a.dim(0), F = a.dim(1), R = trailing(a.shape(), 2);
      const Tensor& y = node.value;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t r = 0; r < R; ++r) {
          double mg = 0.0, mgy = 0.0;
          for (std::size_t f = 0; f < F; ++f) {
            const std::size_t i = (n * F + f) * R + r;
            mg += g[i];
            mgy += g[i] * y[i];
          }
          mg /= static_cast<double>(F);
          mgy /= static_cast<double>(F);
          const double inv = node.saved[n * R + r];
          for (std::size_t f = 0; f < F; ++f) {
            const std::size_t i = (n * F + f) * R + r;
            da[i] += inv * (g[i] - mg - y[i] * mgy);
          }
        }
      }
      return;
    }
    case OpKind::kLeaf:
      return;
  }
}

// Typed helpers -------------------------------------------------------------

namespace {
Var apply2(OpKind k, Var a, Var b) {
  if (!a.tape) throw StateError(std::string(op_name(k)) + ": input without a tape");
  const Var in[2] = {a, b};
  return a.tape->apply(k, in);
}
Var apply1(OpKind k, Var a, OpAttrs attrs = {}) {
  if (!a.tape) throw StateError(std::string(op_name(k)) + ": input without a tape");
  const Var in[1] = {a};
  return a.tape->apply(k, in, attrs);
}
}  // namespace

Var matmul(Var a, Var b) { return apply2(OpKind::kMatmul, a, b); }
Var conv2d(Var input, Var kernel) { return apply2(OpKind::kConv2d, input, kernel); }
Var add(Var a, Var b) { return apply2(OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return apply2(OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return apply2(OpKind::kMul, a, b); }
Var scale(Var a, double s) { return apply1(OpKind::kScalarMul, a, OpAttrs{s, {}}); }
Var relu(Var a) { return apply1(OpKind::kRelu, a); }
Var spatial_mean(Var a) { return apply1(OpKind::kSpatialMean, a); }
Var feature_mean(Var a) { return apply1(OpKind::kFeatureMean, a); }
Var softmax(Var a) { return apply1(OpKind::kSoftmax, a); }
Var log_softmax(Var a) { return apply1(OpKind::kLogSoftmax, a); }
Var log(Var a) { return apply1(OpKind::kLog, a); }
Var reshape(Var a, Shape shape) { return apply1(OpKind::kReshape, a, OpAttrs{0.0, std::move(shape)}); }
Var max_pool2(Var a) { return apply1(OpKind::kMaxPool2, a); }
Var sum(Var a) { return apply1(OpKind::kSum, a); }
Var normalize(Var a) { return apply1(OpKind::kNormalize, a); }

PatternScope::PatternScope(ActivationPattern* pattern) : previous_(active_pattern) { active_pattern = pattern; }

PatternScope::~PatternScope() { active_pattern = previous_; }

}  // namespace relearn::ad
