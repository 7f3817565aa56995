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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "obfcheck/autodiff.hpp"
#include "obfcheck/rng.hpp"
#include "obfcheck/tensor.hpp"

namespace obfcheck {

// Parametric noise injection: v~ = v + alpha * eta, eta ~ N(0, sigma^2), where sigma is
// the population standard deviation of the noise-free tensor v. sigma is treated as a
// constant in the backward pass.

enum class PniGranularity { kLayerwise, kChannelwise, kElementwise };
enum class PniPlacement { kNone, kWeight, kActivation };

std::string_view to_string(PniGranularity g);
std::string_view to_string(PniPlacement p);
/// Accepts "layer"/"layerwise", "channel"/"channelwise", "element"/"elementwise".
PniGranularity parse_granularity(std::string_view text);
/// Accepts "none", "w", "a-a".
PniPlacement parse_placement(std::string_view text);

/// How stochastic PNI nodes behave during a forward pass.
struct NoiseSetting {
  enum class Mode { kStochastic, kDeterministic, kAlphaOverride };
  Mode mode = Mode::kStochastic;
  double alpha_scale = 1.0;

  static NoiseSetting stochastic() { return {}; }
  static NoiseSetting deterministic() { return {Mode::kDeterministic, 1.0}; }
  /// alpha is replaced by s * alpha. Throws ArgumentError for s < 0.
  static NoiseSetting alpha_override(double s);

  /// True when PNI nodes draw noise; alpha_override(0) is deterministic.
  bool draws_noise() const { return mode != Mode::kDeterministic && alpha_scale != 0.0; }
  double effective_scale() const { return mode == Mode::kAlphaOverride ? alpha_scale : 1.0; }
};

/// Population standard deviation sqrt(mean((v - mean(v))^2)), two-pass, in double.
/// Throws ArgumentError for an empty tensor.
double compute_sigma(std::span<const float> v);
double compute_sigma(std::span<const double> v);

/// Shape of alpha for a tensor of `shape` whose channel axis is `channel_axis`
/// (0 for weights [O, ...], 1 for activations [B, C, ...]). Elementwise alpha drops
/// any batch axis in front of the channel axis.
Shape alpha_shape(const Shape& shape, PniGranularity granularity, std::size_t channel_axis);

/// One realised noise sample: eta already includes the factor sigma.
struct NoiseDraw {
  Shape shape;
  std::vector<double> eta;
  double sigma = 0.0;
  std::uint64_t rng_seed = 0;
  std::uint64_t counter_begin = 0;
  std::uint64_t counter_end = 0;
};

/// sigma = compute_sigma(v); eta_i = sigma * z_i with z_i drawn in order from `rng`.
NoiseDraw draw_noise(const Tensor& v, Rng& rng);
NoiseDraw draw_noise(const TensorD& v, Rng& rng);

/// Maps an element index of v to its alpha slot.
class AlphaIndex {
 public:
  AlphaIndex(const Shape& v_shape, PniGranularity granularity, std::size_t channel_axis);
  std::size_t operator()(std::size_t element) const noexcept {
    switch (granularity_) {
      case PniGranularity::kLayerwise: return 0;
      case PniGranularity::kChannelwise: return (element / inner_) % channels_;
      case PniGranularity::kElementwise: return element % period_;
    }
    return 0;
  }

 private:
  PniGranularity granularity_;
  std::size_t channels_ = 1, inner_ = 1, period_ = 1;
};

/// v + (scale * alpha[g(e)]) * eta_e for every element e. Elements whose noise term is
/// exactly zero are copied unchanged, so alpha = 0 or sigma = 0 reproduces v bitwise.
template <typename T>
BasicTensor<T> apply_noise(const BasicTensor<T>& v, const BasicTensor<T>& alpha, PniGranularity granularity,
                           std::size_t channel_axis, const NoiseDraw& draw, double scale);

template <typename T>
struct PniGradients {
  BasicTensor<T> grad_v;
  BasicTensor<T> grad_alpha;
};

/// grad_v = grad_out; grad_alpha[g] = scale * sum over e in group g of eta_e * grad_out_e,
/// summed in element order. Throws StateError if the draw does not match v.
template <typename T>
PniGradients<T> pni_backward(const Shape& v_shape, const BasicTensor<T>& alpha, PniGranularity granularity,
                             std::size_t channel_axis, const NoiseDraw& draw, const BasicTensor<T>& grad_out,
                             double scale = 1.0);

/// A noise-injected tensor with its learnable scale.
struct PniParameter {
  Tensor v;
  Tensor alpha;
  PniPlacement placement = PniPlacement::kWeight;
  PniGranularity granularity = PniGranularity::kLayerwise;
  bool trainable_alpha = true;

  std::size_t channel_axis() const { return placement == PniPlacement::kActivation ? 1 : 0; }
  /// Throws ShapeError if alpha does not have the granularity-dictated shape.
  void validate() const;
};

struct PniOutput {
  Tensor value;
  std::optional<NoiseDraw> draw;  // empty when no noise was drawn
};

PniOutput pni_forward(const PniParameter& p, Rng& rng, NoiseSetting setting);
PniGradients<float> pni_backward(const PniParameter& p, const NoiseDraw& draw, const Tensor& grad_out,
                                 double scale = 1.0);

/// Records a PNI node on the tape: output = apply_noise(v, alpha, ...), with the draw
/// captured for backward.
template <typename T>
Var pni_node(Tape<T>& tape, Var v, Var alpha, PniGranularity granularity, std::size_t channel_axis,
             NoiseDraw draw, double scale);

}  // namespace obfcheck
