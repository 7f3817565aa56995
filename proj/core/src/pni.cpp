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

#include "obfcheck/pni.hpp"

#include <cmath>

namespace obfcheck {

std::string_view to_string(PniGranularity g) {
  switch (g) {
    case PniGranularity::kLayerwise: return "layerwise";
    case PniGranularity::kChannelwise: return "channelwise";
    case PniGranularity::kElementwise: return "elementwise";
  }
  return "?";
}

std::string_view to_string(PniPlacement p) {
  switch (p) {
    case PniPlacement::kNone: return "none";
    case PniPlacement::kWeight: return "w";
    case PniPlacement::kActivation: return "a-a";
  }
  return "?";
}

PniGranularity parse_granularity(std::string_view text) {
  if (text == "layer" || text == "layerwise") return PniGranularity::kLayerwise;
  if (text == "channel" || text == "channelwise") return PniGranularity::kChannelwise;
  if (text == "element" || text == "elementwise") return PniGranularity::kElementwise;
  throw ArgumentError("unknown PNI granularity '" + std::string(text) + "' (expected layer, channel or element)");
}

PniPlacement parse_placement(std::string_view text) {
  if (text == "none") return PniPlacement::kNone;
  if (text == "w" || text == "W") return PniPlacement::kWeight;
  if (text == "a-a" || text == "A-a") return PniPlacement::kActivation;
  throw ArgumentError("unknown PNI placement '" + std::string(text) + "' (expected none, w or a-a)");
}

NoiseSetting NoiseSetting::alpha_override(double s) {
  if (!(s >= 0.0) || !std::isfinite(s)) {
    throw ArgumentError("alpha override scale must be a finite value >= 0, got " + std::to_string(s));
  }
  return {Mode::kAlphaOverride, s};
}

namespace {

template <typename T>
double sigma_impl(std::span<const T> v) {
  if (v.empty()) throw ArgumentError("compute_sigma: empty tensor");
  double mean = 0.0;
  for (auto x : v) mean += double(x);
  mean /= double(v.size());
  double ss = 0.0;
  for (auto x : v) {
    const double d = double(x) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / double(v.size()));
}

template <typename T>
NoiseDraw draw_impl(const BasicTensor<T>& v, Rng& rng) {
  NoiseDraw d;
  d.shape = v.shape();
  d.sigma = sigma_impl(v.data());
  d.rng_seed = rng.seed();
  d.counter_begin = rng.counter();
  d.eta.resize(v.size());
  for (auto& e : d.eta) e = d.sigma * rng.normal();
  d.counter_end = rng.counter();
  return d;
}

}  // namespace

double compute_sigma(std::span<const float> v) { return sigma_impl(v); }
double compute_sigma(std::span<const double> v) { return sigma_impl(v); }

NoiseDraw draw_noise(const Tensor& v, Rng& rng) { return draw_impl(v, rng); }
NoiseDraw draw_noise(const TensorD& v, Rng& rng) { return draw_impl(v, rng); }

Shape alpha_shape(const Shape& shape, PniGranularity granularity, std::size_t channel_axis) {
  if (channel_axis >= shape.size()) {
    throw ShapeError("pni", "channel axis " + std::to_string(channel_axis) + " out of range for " + to_string(shape));
  }
  switch (granularity) {
    case PniGranularity::kLayerwise: return {1};
    case PniGranularity::kChannelwise: return {shape[channel_axis]};
    case PniGranularity::kElementwise: return Shape(shape.begin() + std::ptrdiff_t(channel_axis), shape.end());
  }
  return {1};
}

AlphaIndex::AlphaIndex(const Shape& v_shape, PniGranularity granularity, std::size_t channel_axis)
    : granularity_(granularity) {
  if (channel_axis >= v_shape.size()) {
    throw ShapeError("pni", "channel axis out of range for " + to_string(v_shape));
  }
  channels_ = v_shape[channel_axis];
  inner_ = 1;
  for (std::size_t a = channel_axis + 1; a < v_shape.size(); ++a) inner_ *= v_shape[a];
  period_ = channels_ * inner_;
}

template <typename T>
BasicTensor<T> apply_noise(const BasicTensor<T>& v, const BasicTensor<T>& alpha, PniGranularity granularity,
                           std::size_t channel_axis, const NoiseDraw& draw, double scale) {
  if (draw.shape != v.shape() || draw.eta.size() != v.size()) {
    throw StateError("noise draw of shape " + to_string(draw.shape) + " does not match tensor " + to_string(v.shape()));
  }
  if (alpha.shape() != alpha_shape(v.shape(), granularity, channel_axis)) {
    throw ShapeError("pni", "alpha shape " + to_string(alpha.shape()) + " does not match granularity " +
                                std::string(to_string(granularity)) + " of " + to_string(v.shape()));
  }
  const AlphaIndex index(v.shape(), granularity, channel_axis);
  BasicTensor<T> out = v;
  const T s = T(scale);
  for (std::size_t e = 0; e < v.size(); ++e) {
    const T noise = (s * alpha[index(e)]) * T(draw.eta[e]);
    if (noise != T(0)) out[e] = v[e] + noise;
  }
  return out;
}

template <typename T>
PniGradients<T> pni_backward(const Shape& v_shape, const BasicTensor<T>& alpha, PniGranularity granularity,
                             std::size_t channel_axis, const NoiseDraw& draw, const BasicTensor<T>& grad_out,
                             double scale) {
  if (draw.shape != v_shape || grad_out.shape() != v_shape || draw.eta.size() != grad_out.size()) {
    throw StateError("pni_backward: draw " + to_string(draw.shape) + " / gradient " + to_string(grad_out.shape()) +
                     " do not match parameter " + to_string(v_shape));
  }
  const AlphaIndex index(v_shape, granularity, channel_axis);
  PniGradients<T> g{grad_out, BasicTensor<T>(alpha.shape())};
  const T s = T(scale);
  for (std::size_t e = 0; e < grad_out.size(); ++e) {
    g.grad_alpha[index(e)] += s * T(draw.eta[e]) * grad_out[e];
  }
  return g;
}

template Tensor apply_noise(const Tensor&, const Tensor&, PniGranularity, std::size_t, const NoiseDraw&, double);
template TensorD apply_noise(const TensorD&, const TensorD&, PniGranularity, std::size_t, const NoiseDraw&, double);
template PniGradients<float> pni_backward(const Shape&, const Tensor&, PniGranularity, std::size_t, const NoiseDraw&,
                                          const Tensor&, double);
template PniGradients<double> pni_backward(const Shape&, const TensorD&, PniGranularity, std::size_t,
                                           const NoiseDraw&, const TensorD&, double);

void PniParameter::validate() const {
  const Shape expected = alpha_shape(v.shape(), granularity, channel_axis());
  if (alpha.shape() != expected) {
    throw ShapeError("pni", "alpha shape " + to_string(alpha.shape()) + ", expected " + to_string(expected) + " for " +
                                std::string(to_string(granularity)));
  }
}

PniOutput pni_forward(const PniParameter& p, Rng& rng, NoiseSetting setting) {
  p.validate();
  if (!setting.draws_noise()) return {p.v, std::nullopt};
  NoiseDraw draw = draw_noise(p.v, rng);
  Tensor value = apply_noise(p.v, p.alpha, p.granularity, p.channel_axis(), draw, setting.effective_scale());
  return {std::move(value), std::move(draw)};
}

PniGradients<float> pni_backward(const PniParameter& p, const NoiseDraw& draw, const Tensor& grad_out, double scale) {
  return pni_backward(p.v.shape(), p.alpha, p.granularity, p.channel_axis(), draw, grad_out, scale);
}

template <typename T>
Var pni_node(Tape<T>& tape, Var v, Var alpha, PniGranularity granularity, std::size_t channel_axis, NoiseDraw draw,
             double scale) {
  BasicTensor<T> out = apply_noise(tape.value(v), tape.value(alpha), granularity, channel_axis, draw, scale);
  return tape.custom({v, alpha}, std::move(out),
                     [granularity, channel_axis, scale, draw = std::move(draw)](const BackwardArgs<T>& a) {
                       const auto& g = a.grad_out;
                       if (auto* gv = a.input_grads[0]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
                       }
                       if (auto* ga = a.input_grads[1]) {
                         const AlphaIndex index(draw.shape, granularity, channel_axis);
                         const T s = T(scale);
                         for (std::size_t e = 0; e < g.size(); ++e) (*ga)[index(e)] += s * T(draw.eta[e]) * g[e];
                       }
                     });
}

template Var pni_node(Tape<float>&, Var, Var, PniGranularity, std::size_t, NoiseDraw, double);
template Var pni_node(Tape<double>&, Var, Var, PniGranularity, std::size_t, NoiseDraw, double);

}  // namespace obfcheck
