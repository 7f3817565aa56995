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

#include "obfcheck/model.hpp"

#include <cmath>

namespace obfcheck {

std::string_view to_string(Architecture arch) {
  return arch == Architecture::kMlp ? "mlp" : "cnn";
}

Architecture parse_architecture(std::string_view text) {
  if (text == "mlp") return Architecture::kMlp;
  if (text == "cnn") return Architecture::kCnn;
  throw ArgumentError("unknown architecture '" + std::string(text) + "' (expected mlp or cnn)");
}

std::size_t ModelGraph::pni_node_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.alpha.has_value();
  return n;
}

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

bool ParameterSet::is_alpha(std::string_view name) { return name.ends_with(".alpha"); }

void ParameterSet::clamp_alpha_nonnegative() {
  for (auto& e : entries_) {
    if (!is_alpha(e.name)) continue;
    for (auto& a : e.value) a = a < 0.0f ? 0.0f : a;
  }
}

double ParameterSet::mean_alpha() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (!is_alpha(e.name)) continue;
    for (auto a : e.value) sum += a;
    n += e.value.size();
  }
  return n ? sum / double(n) : 0.0;
}

namespace {

LayerSpec layer_of(LayerKind kind, std::size_t in = 0, std::size_t out = 0, std::size_t kernel = 0,
                   std::size_t padding = 0) {
  LayerSpec l;
  l.kind = kind;
  l.in = in, l.out = out, l.kernel = kernel, l.padding = padding;
  return l;
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (auto& v : t) v = float(rng.uniform(-bound, bound));
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t init_seed) {
  if (spec.input_shape.size() != 3) throw ArgumentError("input shape must be [channels, height, width]");
  for (auto e : spec.input_shape) {
    if (e == 0) throw ArgumentError("input shape has a zero extent");
  }
  if (spec.classes < 2) throw ArgumentError("need at least 2 classes");
  for (auto w : spec.widths) {
    if (w == 0) throw ArgumentError("layer width must be positive");
  }
  if (!(spec.pni.alpha_init >= 0.0)) throw ArgumentError("alpha_init must be >= 0");

  Model model;
  model.graph.spec = spec;
  auto& layers = model.graph.layers;
  Rng rng(derive_seed(init_seed, 0, 0, Purpose::kInit));

  Shape shape = {1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  auto add_affine = [&](LayerSpec layer, const std::string& prefix, Shape weight_shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    Tensor w(weight_shape);
    fill_uniform(w, std::sqrt(6.0) * bound, rng);
    Tensor b({layer.out});
    fill_uniform(b, bound, rng);
    layer.weight = model.params.add(prefix + ".weight", std::move(w));
    layer.bias = model.params.add(prefix + ".bias", std::move(b));
    layer.output_shape = shape;
    if (spec.pni.placement != PniPlacement::kNone) {
      const bool on_weight = spec.pni.placement == PniPlacement::kWeight;
      const Shape a_shape = on_weight ? alpha_shape(weight_shape, spec.pni.granularity, 0)
                                      : alpha_shape(shape, spec.pni.granularity, 1);
      layer.alpha = model.params.add(prefix + ".alpha", Tensor(a_shape, float(spec.pni.alpha_init)));
    }
    layers.push_back(std::move(layer));
  };
  auto add_plain = [&](LayerKind kind) {
    LayerSpec l = layer_of(kind);
    l.output_shape = shape;
    layers.push_back(std::move(l));
  };

  if (spec.arch == Architecture::kCnn) {
    std::size_t in = spec.input_shape[0];
    for (auto width : spec.widths) {
      if (shape[2] % 2 != 0 || shape[3] % 2 != 0) {
        throw ArgumentError("cnn input height/width must be divisible by 2^" + std::to_string(spec.widths.size()));
      }
      const std::size_t idx = layers.size();
      shape = {1, width, shape[2], shape[3]};
      add_affine(layer_of(LayerKind::kConv, in, width, 3, 1), "conv" + std::to_string(idx), {width, in, 3, 3},
                 in * 9);
      add_plain(LayerKind::kRelu);
      shape = {1, width, shape[2] / 2, shape[3] / 2};
      add_plain(LayerKind::kAvgPool2);
      in = width;
    }
  } else if (spec.arch != Architecture::kMlp) {
    throw ArgumentError("unknown architecture");
  }

  shape = {1, element_count(shape)};
  add_plain(LayerKind::kFlatten);
  std::size_t in = shape[1];
  if (spec.arch == Architecture::kMlp) {
    for (auto width : spec.widths) {
      const std::size_t idx = layers.size();
      shape = {1, width};
      add_affine(layer_of(LayerKind::kLinear, in, width), "fc" + std::to_string(idx), {width, in}, in);
      add_plain(LayerKind::kRelu);
      in = width;
    }
  }
  const std::size_t idx = layers.size();
  shape = {1, spec.classes};
  add_affine(layer_of(LayerKind::kLinear, in, spec.classes), "fc" + std::to_string(idx), {spec.classes, in}, in);
  return model;
}

NoiseContext NoiseContext::replay(std::vector<NoiseDraw> draws, NoiseSetting setting) {
  NoiseContext ctx(setting);
  ctx.replay_ = std::move(draws);
  return ctx;
}

template <typename T>
NoiseDraw NoiseContext::next(const BasicTensor<T>& v) {
  NoiseDraw d;
  if (rng_) {
    d = draw_noise(v, *rng_);
  } else {
    if (replay_pos_ >= replay_.size()) throw StateError("noise replay exhausted");
    d = replay_[replay_pos_++];
    if (d.shape != v.shape()) {
      throw StateError("replayed noise draw " + to_string(d.shape) + " does not match tensor " + to_string(v.shape()));
    }
  }
  if (record_) recorded_.push_back(d);
  return d;
}

template NoiseDraw NoiseContext::next(const Tensor&);
template NoiseDraw NoiseContext::next(const TensorD&);

namespace {

std::string layer_name(const LayerSpec& l, std::size_t idx) {
  switch (l.kind) {
    case LayerKind::kConv: return "layer " + std::to_string(idx) + " (conv)";
    case LayerKind::kLinear: return "layer " + std::to_string(idx) + " (linear)";
    case LayerKind::kRelu: return "layer " + std::to_string(idx) + " (relu)";
    case LayerKind::kAvgPool2: return "layer " + std::to_string(idx) + " (avg_pool2)";
    case LayerKind::kFlatten: return "layer " + std::to_string(idx) + " (flatten)";
  }
  return "layer " + std::to_string(idx);
}

}  // namespace

template <typename T>
Var record_layers(Tape<T>& tape, const ModelGraph& graph, std::span<const Var> param_vars, Var x,
                  NoiseContext& noise) {
  const auto& spec = graph.spec;
  const auto& xs = tape.value(x).shape();
  if (xs.size() != 4 || xs[1] != spec.input_shape[0] || xs[2] != spec.input_shape[1] ||
      xs[3] != spec.input_shape[2]) {
    throw ShapeError("input", "expected [B, " + std::to_string(spec.input_shape[0]) + ", " +
                                  std::to_string(spec.input_shape[1]) + ", " + std::to_string(spec.input_shape[2]) +
                                  "], got " + to_string(xs));
  }

  const bool noisy = noise.setting().draws_noise();
  const double scale = noise.setting().effective_scale();
  const auto granularity = spec.pni.granularity;
  const bool on_weight = spec.pni.placement == PniPlacement::kWeight;
  std::optional<std::size_t> pending_alpha;  // PNI-A-a injected after the following ReLU

  Var h = x;
  for (std::size_t idx = 0; idx < graph.layers.size(); ++idx) {
    const auto& layer = graph.layers[idx];
    try {
      switch (layer.kind) {
        case LayerKind::kConv:
        case LayerKind::kLinear: {
          if (layer.weight >= param_vars.size() || layer.bias >= param_vars.size()) {
            throw ShapeError(layer_name(layer, idx), "parameter index out of range");
          }
          Var w = param_vars[layer.weight];
          const bool pni_here = layer.alpha.has_value() && noisy;
          if (pni_here && on_weight) {
            w = pni_node(tape, w, param_vars[*layer.alpha], granularity, 0, noise.next(tape.value(w)), scale);
          }
          h = layer.kind == LayerKind::kConv ? tape.conv2d(h, w, layer.padding) : tape.linear(h, w);
          h = tape.bias_add(h, param_vars[layer.bias]);
          if (pni_here && !on_weight) {
            const bool relu_follows =
                idx + 1 < graph.layers.size() && graph.layers[idx + 1].kind == LayerKind::kRelu;
            if (spec.pni.post_activation && relu_follows) {
              pending_alpha = layer.alpha;
            } else {
              h = pni_node(tape, h, param_vars[*layer.alpha], granularity, 1, noise.next(tape.value(h)), scale);
            }
          }
          break;
        }
        case LayerKind::kRelu:
          h = tape.relu(h);
          if (pending_alpha) {
            h = pni_node(tape, h, param_vars[*pending_alpha], granularity, 1, noise.next(tape.value(h)), scale);
            pending_alpha.reset();
          }
          break;
        case LayerKind::kAvgPool2: h = tape.avg_pool2(h); break;
        case LayerKind::kFlatten: h = tape.flatten(h); break;
      }
    } catch (const ShapeError& e) {
      if (e.where().starts_with("layer ")) throw;
      throw ShapeError(layer_name(layer, idx), e.what());
    } catch (const NumericError& e) {
      throw NumericError(layer_name(layer, idx) + ": " + e.what());
    }
  }
  return h;
}

template <typename T>
ForwardPass record_forward(Tape<T>& tape, const ModelGraph& graph, const ParameterSet& params, Var x,
                           NoiseContext& noise, bool param_grads) {
  ForwardPass pass;
  pass.params.reserve(params.size());
  for (const auto& p : params) {
    if constexpr (std::is_same_v<T, float>) {
      pass.params.push_back(tape.leaf(p.value, param_grads));
    } else {
      pass.params.push_back(tape.leaf(p.value.template cast<T>(), param_grads));
    }
  }
  pass.logits = record_layers(tape, graph, pass.params, x, noise);
  return pass;
}

template Var record_layers(Tape<float>&, const ModelGraph&, std::span<const Var>, Var, NoiseContext&);
template Var record_layers(Tape<double>&, const ModelGraph&, std::span<const Var>, Var, NoiseContext&);
template ForwardPass record_forward(Tape<float>&, const ModelGraph&, const ParameterSet&, Var, NoiseContext&, bool);
template ForwardPass record_forward(Tape<double>&, const ModelGraph&, const ParameterSet&, Var, NoiseContext&, bool);

Tensor forward(const ModelGraph& graph, const Tensor& x, const ParameterSet& params, Rng& rng, NoiseSetting setting) {
  Tape<float> tape;
  NoiseContext noise(rng, setting);
  const Var xv = tape.leaf(x);
  const auto pass = record_forward(tape, graph, params, xv, noise, false);
  return tape.value(pass.logits);
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

}  // namespace obfcheck
