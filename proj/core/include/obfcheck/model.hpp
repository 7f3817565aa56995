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
#include "obfcheck/pni.hpp"
#include "obfcheck/rng.hpp"
#include "obfcheck/tensor.hpp"

namespace obfcheck {

enum class Architecture { kMlp, kCnn };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

struct PniSpec {
  PniPlacement placement = PniPlacement::kNone;
  PniGranularity granularity = PniGranularity::kLayerwise;
  /// PNI-A-a only: inject after the ReLU instead of on the affine output.
  bool post_activation = false;
  double alpha_init = 0.25;

  friend bool operator==(const PniSpec&, const PniSpec&) = default;
};

/// Everything needed to rebuild a model's graph.
struct ModelSpec {
  Architecture arch = Architecture::kCnn;
  Shape input_shape = {1, 16, 16};  // [channels, height, width]
  std::size_t classes = 10;
  /// mlp: hidden layer widths (empty = single linear layer).
  /// cnn: output channels of each conv + ReLU + 2x2 pool stage.
  std::vector<std::size_t> widths = {8, 16};
  PniSpec pni;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class LayerKind { kConv, kLinear, kRelu, kAvgPool2, kFlatten };

struct LayerSpec {
  LayerKind kind;
  std::size_t in = 0, out = 0, kernel = 0, padding = 0;
  /// For conv/linear: indices into the ParameterSet.
  std::size_t weight = 0, bias = 0;
  std::optional<std::size_t> alpha;
  /// Shape of this layer's output for a batch of one.
  Shape output_shape;
};

struct ModelGraph {
  ModelSpec spec;
  std::vector<LayerSpec> layers;

  std::size_t pni_node_count() const;
  bool has_noise() const { return pni_node_count() > 0; }
};

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered parameter tensors. Order is the checkpoint order.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t element_count() const;

  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  static bool is_alpha(std::string_view name);
  /// Clamps every alpha tensor to >= 0.
  void clamp_alpha_nonnegative();
  /// Mean over all alpha elements, 0 without alphas.
  double mean_alpha() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

struct Model {
  ModelGraph graph;
  ParameterSet params;
};

/// Builds the graph with seeded fan-in-scaled uniform init: weights U(+-sqrt(6 / fan_in)),
/// biases U(+-1 / sqrt(fan_in)).
/// PNI-W attaches to every conv/linear weight; PNI-A-a to every conv/linear output.
/// Throws ArgumentError for invalid shapes or class counts.
Model build_model(const ModelSpec& spec, std::uint64_t init_seed);

/// Supplies noise draws to PNI nodes in attachment order: fresh from an Rng, or replayed
/// from a previous forward.
class NoiseContext {
 public:
  NoiseContext(Rng& rng, NoiseSetting setting, bool record = false)
      : rng_(&rng), setting_(setting), record_(record) {}
  static NoiseContext replay(std::vector<NoiseDraw> draws, NoiseSetting setting = NoiseSetting::stochastic());
  static NoiseContext deterministic() { return NoiseContext(NoiseSetting::deterministic()); }

  const NoiseSetting& setting() const noexcept { return setting_; }
  template <typename T>
  NoiseDraw next(const BasicTensor<T>& v);
  /// Draws consumed so far, when recording.
  const std::vector<NoiseDraw>& recorded() const noexcept { return recorded_; }

 private:
  explicit NoiseContext(NoiseSetting setting) : setting_(setting) {}

  Rng* rng_ = nullptr;
  NoiseSetting setting_;
  bool record_ = false;
  std::vector<NoiseDraw> replay_;
  std::size_t replay_pos_ = 0;
  std::vector<NoiseDraw> recorded_;
};

struct ForwardPass {
  Var logits;
  std::vector<Var> params;  // one per ParameterSet entry
};

/// Records the forward pass of `graph` on `tape`. `x` must be [B, c, h, w] (matching
/// spec.input_shape). Parameters become leaves that require gradients when
/// `param_grads` is set. Throws ShapeError naming the layer on mismatch.
template <typename T>
ForwardPass record_forward(Tape<T>& tape, const ModelGraph& graph, const ParameterSet& params, Var x,
                           NoiseContext& noise, bool param_grads);

/// Same as record_forward with caller-supplied parameter leaves, one per ParameterSet entry.
template <typename T>
Var record_layers(Tape<T>& tape, const ModelGraph& graph, std::span<const Var> param_vars, Var x,
                  NoiseContext& noise);

/// Logits for a batch x [B, c, h, w]; advances rng only at PNI nodes.
Tensor forward(const ModelGraph& graph, const Tensor& x, const ParameterSet& params, Rng& rng,
               NoiseSetting setting = NoiseSetting::stochastic());

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace obfcheck
