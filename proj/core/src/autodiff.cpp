/*
 * Copyright 2026 The obfcheck Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "obfcheck/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace obfcheck {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kLinear: return "linear";
    case OpKind::kBiasAdd: return "bias_add";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kAvgPool2: return "avg_pool2";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

template <typename T>
std::string Tape<T>::describe(std::size_t id, OpKind kind) const {
  return "node " + std::to_string(id) + " (" + std::string(op_name(kind)) + ")";
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v, std::string_view op) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw StateError(std::string(op) + ": variable does not belong to this tape");
  }
  return nodes_[v.id];
}

template <typename T>
Var Tape<T>::push(OpKind kind, std::vector<std::size_t> inputs, TensorT value, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  if (check_finite_ && kind != OpKind::kLeaf && !value.all_finite()) {
    throw NumericError(describe(id, kind) + ": non-finite value in output");
  }
  bool needs = false;
  for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::nullopt, needs, std::move(backward)});
  return Var{id};
}

template <typename T>
Var Tape<T>::leaf(TensorT value, bool requires_grad) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{OpKind::kLeaf, {}, std::move(value), std::nullopt, requires_grad, {}});
  return Var{id};
}

template <typename T>
Var Tape<T>::linear(Var xv, Var wv) {
  const auto& x = node(xv, "linear").value;
  const auto& w = node(wv, "linear").value;
  const std::size_t id = nodes_.size();
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError(describe(id, OpKind::kLinear),
                     "input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  TensorT y({batch, out});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xr = x.begin() + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wr = w.begin() + o * in;
      T acc = 0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      y[b * out + o] = acc;
    }
  }
  return push(OpKind::kLinear, {xv.id, wv.id}, std::move(y), [batch, in, out](const BackwardArgs<T>& a) {
    const auto& g = a.grad_out;
    const auto& x = *a.inputs[0];
    const auto& w = *a.inputs[1];
    if (auto* gx = a.input_grads[0]) {
      for (std::size_t b = 0; b < batch; ++b) {
        T* gxr = gx->begin() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
          const T go = g[b * out + o];
          const T* wr = w.begin() + o * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
      }
    }
    if (auto* gw = a.input_grads[1]) {
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xr = x.begin() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
          const T go = g[b * out + o];
          T* gwr = gw->begin() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
      }
    }
  });
}

template <typename T>
Var Tape<T>::bias_add(Var xv, Var bv) {
  const auto& x = node(xv, "bias_add").value;
  const auto& bias = node(bv, "bias_add").value;
  const std::size_t id = nodes_.size();
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError(describe(id, OpKind::kBiasAdd),
                     "bias " + to_string(bias.shape()) + " does not match axis 1 of " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), inner = x.size() / (batch * channels);
  TensorT y = x;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      T* p = y.begin() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bias[c];
    }
  }
  return push(OpKind::kBiasAdd, {xv.id, bv.id}, std::move(y), [batch, channels, inner](const BackwardArgs<T>& a) {
    const auto& g = a.grad_out;
    if (auto* gx = a.input_grads[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (auto* gb = a.input_grads[1]) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const T* p = g.begin() + (b * channels + c) * inner;
          T acc = 0;
          for (std::size_t i = 0; i < inner; ++i) acc += p[i];
          (*gb)[c] += acc;
        }
      }
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kernel, pad, out_h, out_w;

  // Output columns [lo, hi) whose input column ox + k - pad is inside [0, extent).
  static std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t pad, std::size_t out,
                                                         std::size_t extent) {
    const std::ptrdiff_t shift = std::ptrdiff_t(k) - std::ptrdiff_t(pad);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(std::ptrdiff_t(out), std::ptrdiff_t(extent) - shift);
    if (hi <= lo) return {0, 0};
    return {std::size_t(lo), std::size_t(hi)};
  }
};

}  // namespace

template <typename T>
Var Tape<T>::conv2d(Var xv, Var wv, std::size_t padding) {
  const auto& x = node(xv, "conv2d").value;
  const auto& w = node(wv, "conv2d").value;
  const std::size_t id = nodes_.size();
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError(describe(id, OpKind::kConv2d),
                     "input " + to_string(x.shape()) + " incompatible with kernel " + to_string(w.shape()));
  }
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), padding, 0, 0};
  if (geo.height + 2 * padding < geo.kernel || geo.width + 2 * padding < geo.kernel) {
    throw ShapeError(describe(id, OpKind::kConv2d), "kernel larger than padded input");
  }
  geo.out_h = geo.height + 2 * padding - geo.kernel + 1;
  geo.out_w = geo.width + 2 * padding - geo.kernel + 1;

  TensorT y({geo.batch, geo.out_ch, geo.out_h, geo.out_w});
  const std::size_t in_plane = geo.height * geo.width, out_plane = geo.out_h * geo.out_w;
  const std::size_t kk = geo.kernel * geo.kernel;
  for (std::size_t b = 0; b < geo.batch; ++b) {
    for (std::size_t o = 0; o < geo.out_ch; ++o) {
      T* yp = y.begin() + (b * geo.out_ch + o) * out_plane;
      for (std::size_t c = 0; c < geo.in_ch; ++c) {
        const T* xp = x.begin() + (b * geo.in_ch + c) * in_plane;
        const T* wp = w.begin() + (o * geo.in_ch + c) * kk;
        for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
          const auto [ylo, yhi] = ConvGeometry::valid_range(ky, padding, geo.out_h, geo.height);
          for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
            const auto [xlo, xhi] = ConvGeometry::valid_range(kx, padding, geo.out_w, geo.width);
            const T wt = wp[ky * geo.kernel + kx];
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const T* xrow = xp + (oy + ky - padding) * geo.width;
              T* yrow = yp + oy * geo.out_w;
              for (std::size_t ox = xlo; ox < xhi; ++ox) yrow[ox] += wt * xrow[ox + kx - padding];
            }
          }
        }
      }
    }
  }
  return push(OpKind::kConv2d, {xv.id, wv.id}, std::move(y), [geo](const BackwardArgs<T>& a) {
    const auto& g = a.grad_out;
    const auto& x = *a.inputs[0];
    const auto& w = *a.inputs[1];
    auto* gx = a.input_grads[0];
    auto* gw = a.input_grads[1];
    const std::size_t in_plane = geo.height * geo.width, out_plane = geo.out_h * geo.out_w;
    const std::size_t kk = geo.kernel * geo.kernel;
    for (std::size_t b = 0; b < geo.batch; ++b) {
      for (std::size_t o = 0; o < geo.out_ch; ++o) {
        const T* gp = g.begin() + (b * geo.out_ch + o) * out_plane;
        for (std::size_t c = 0; c < geo.in_ch; ++c) {
          const std::size_t xoff = (b * geo.in_ch + c) * in_plane;
          const std::size_t woff = (o * geo.in_ch + c) * kk;
          for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
            const auto [ylo, yhi] = ConvGeometry::valid_range(ky, geo.pad, geo.out_h, geo.height);
            for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
              const auto [xlo, xhi] = ConvGeometry::valid_range(kx, geo.pad, geo.out_w, geo.width);
              if (gx) {
                const T wt = w[woff + ky * geo.kernel + kx];
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                  T* gxrow = gx->begin() + xoff + (oy + ky - geo.pad) * geo.width;
                  const T* grow = gp + oy * geo.out_w;
                  for (std::size_t ox = xlo; ox < xhi; ++ox) gxrow[ox + kx - geo.pad] += wt * grow[ox];
                }
              }
              if (gw) {
                T acc = 0;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                  const T* xrow = x.begin() + xoff + (oy + ky - geo.pad) * geo.width;
                  const T* grow = gp + oy * geo.out_w;
                  for (std::size_t ox = xlo; ox < xhi; ++ox) acc += grow[ox] * xrow[ox + kx - geo.pad];
                }
                (*gw)[woff + ky * geo.kernel + kx] += acc;
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var Tape<T>::relu(Var xv) {
  TensorT y = node(xv, "relu").value;
  for (auto& v : y) v = v > T(0) ? v : T(0);
  return push(OpKind::kRelu, {xv.id}, std::move(y), [](const BackwardArgs<T>& a) {
    if (auto* gx = a.input_grads[0]) {
      const auto& x = *a.inputs[0];
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T(0)) (*gx)[i] += a.grad_out[i];
      }
    }
  });
}

template <typename T>
Var Tape<T>::avg_pool2(Var xv) {
  const auto& x = node(xv, "avg_pool2").value;
  const std::size_t id = nodes_.size();
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError(describe(id, OpKind::kAvgPool2), "needs [B, C, H, W] with even H, W; got " + to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / 2, ow = w / 2;
  TensorT y({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x.begin() + p * h * w;
    T* yp = y.begin() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* r0 = xp + 2 * oy * w + 2 * ox;
        const T* r1 = r0 + w;
        yp[oy * ow + ox] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
    }
  }
  return push(OpKind::kAvgPool2, {xv.id}, std::move(y), [planes, h, w, oh, ow](const BackwardArgs<T>& a) {
    auto* gx = a.input_grads[0];
    if (!gx) return;
    for (std::size_t p = 0; p < planes; ++p) {
      T* gp = gx->begin() + p * h * w;
      const T* go = a.grad_out.begin() + p * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T q = go[oy * ow + ox] * T(0.25);
          T* r0 = gp + 2 * oy * w + 2 * ox;
          T* r1 = r0 + w;
          r0[0] += q;
          r0[1] += q;
          r1[0] += q;
          r1[1] += q;
        }
      }
    }
  });
}

template <typename T>
Var Tape<T>::flatten(Var xv) {
  const auto& x = node(xv, "flatten").value;
  const std::size_t batch = x.dim(0);
  TensorT y = x.reshaped({batch, x.size() / batch});
  return push(OpKind::kFlatten, {xv.id}, std::move(y), [](const BackwardArgs<T>& a) {
    if (auto* gx = a.input_grads[0]) {
      for (std::size_t i = 0; i < a.grad_out.size(); ++i) (*gx)[i] += a.grad_out[i];
    }
  });
}

template <typename T>
Var Tape<T>::add(Var av, Var bv) {
  const auto& lhs = node(av, "add").value;
  const auto& rhs = node(bv, "add").value;
  const std::size_t id = nodes_.size();
  if (lhs.shape() != rhs.shape()) {
    throw ShapeError(describe(id, OpKind::kAdd), to_string(lhs.shape()) + " vs " + to_string(rhs.shape()));
  }
  TensorT y = lhs;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += rhs[i];
  return push(OpKind::kAdd, {av.id, bv.id}, std::move(y), [](const BackwardArgs<T>& a) {
    for (auto* gi : a.input_grads) {
      if (!gi) continue;
      for (std::size_t i = 0; i < a.grad_out.size(); ++i) (*gi)[i] += a.grad_out[i];
    }
  });
}

template <typename T>
Var Tape<T>::scale(Var av, T factor) {
  TensorT y = node(av, "scale").value;
  for (auto& v : y) v *= factor;
  return push(OpKind::kScale, {av.id}, std::move(y), [factor](const BackwardArgs<T>& a) {
    if (auto* gx = a.input_grads[0]) {
      for (std::size_t i = 0; i < a.grad_out.size(); ++i) (*gx)[i] += factor * a.grad_out[i];
    }
  });
}

template <typename T>
Var Tape<T>::sum(Var av) {
  const auto& x = node(av, "sum").value;
  T acc = 0;
  for (auto v : x) acc += v;
  return push(OpKind::kSum, {av.id}, TensorT({1}, std::vector<T>{acc}), [](const BackwardArgs<T>& a) {
    if (auto* gx = a.input_grads[0]) {
      const T g = a.grad_out[0];
      for (auto& v : *gx) v += g;
    }
  });
}

template <typename T>
Var Tape<T>::softmax_cross_entropy(Var lv, std::span<const std::size_t> labels) {
  const auto& logits = node(lv, "softmax_cross_entropy").value;
  const std::size_t id = nodes_.size();
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError(describe(id, OpKind::kSoftmaxCrossEntropy),
                     "logits " + to_string(logits.shape()) + " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<std::size_t> owned(labels.begin(), labels.end());
  for (auto l : owned) {
    if (l >= classes) {
      throw ArgumentError("label " + std::to_string(l) + " out of range for " + std::to_string(classes) + " classes");
    }
  }
  if (!logits.all_finite()) throw NumericError(describe(id, OpKind::kSoftmaxCrossEntropy) + ": non-finite logits");
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.begin() + b * classes;
    const double m = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[b * classes + k] = std::exp(double(row[k]) - m);
      z += probs[b * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] /= z;
    total += m + std::log(z) - double(row[owned[b]]);
  }
  const T loss = T(total / double(batch));
  return push(OpKind::kSoftmaxCrossEntropy, {lv.id}, TensorT({1}, std::vector<T>{loss}),
              [probs = std::move(probs), owned = std::move(owned), batch, classes](const BackwardArgs<T>& a) {
                auto* gl = a.input_grads[0];
                if (!gl) return;
                const double g = double(a.grad_out[0]) / double(batch);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t k = 0; k < classes; ++k) {
                    const double onehot = k == owned[b] ? 1.0 : 0.0;
                    (*gl)[b * classes + k] += T(g * (probs[b * classes + k] - onehot));
                  }
                }
              });
}

template <typename T>
Var Tape<T>::custom(std::vector<Var> inputs, TensorT output, BackwardFn backward) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (auto v : inputs) ids.push_back((node(v, "custom"), v.id));
  return push(OpKind::kCustom, std::move(ids), std::move(output), std::move(backward));
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward called before any forward was recorded");
  const auto& root = node(loss, "backward");
  if (root.value.size() != 1) {
    throw ArgumentError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad.reset();
  nodes_[loss.id].grad = TensorT(root.value.shape(), T(1));

  std::vector<const TensorT*> in_values;
  std::vector<TensorT*> in_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad || !n.requires_grad || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto i : n.inputs) {
      Node& in = nodes_[i];
      in_values.push_back(&in.value);
      if (in.requires_grad) {
        if (!in.grad) in.grad = TensorT(in.value.shape());
        in_grads.push_back(&*in.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(BackwardArgs<T>{*n.grad, n.value, in_values, in_grads});
#ifndef NDEBUG
    for (auto* g : in_grads) assert(!g || g->all_finite());
#endif
  }
}

template <typename T>
const typename Tape<T>::TensorT& Tape<T>::value(Var v) const {
  return node(v, "value").value;
}

template <typename T>
const typename Tape<T>::TensorT* Tape<T>::grad(Var v) const {
  const auto& n = node(v, "grad");
  return n.grad ? &*n.grad : nullptr;
}

template <typename T>
typename Tape<T>::TensorT Tape<T>::grad_or_zeros(Var v) const {
  const auto& n = node(v, "grad");
  return n.grad ? *n.grad : TensorT(n.value.shape());
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v, "requires_grad").requires_grad;
}

template <typename T>
OpKind Tape<T>::kind(Var v) const {
  return node(v, "kind").kind;
}

template <typename T>
double Tape<T>::relu_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& n : nodes_) {
    if (n.kind != OpKind::kRelu) continue;
    for (auto v : nodes_[n.inputs[0]].value) m = std::min(m, std::abs(double(v)));
  }
  return m;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace obfcheck
