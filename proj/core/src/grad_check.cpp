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

#include "obfcheck/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "obfcheck/errors.hpp"
#include "obfcheck/rng.hpp"

namespace obfcheck {

bool CheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double CheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

const GradCheckEntry* CheckReport::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

std::vector<std::size_t> coords_to_check(std::size_t n, std::size_t max_coords) {
  std::vector<std::size_t> out;
  if (max_coords == 0 || max_coords >= n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  for (std::size_t k = 0; k < max_coords; ++k) out.push_back(k * n / max_coords);
  return out;
}

double rel_error(double analytic, double numeric) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
  return std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
}

struct Evaluation {
  double value = 0.0;
  std::vector<TensorD> grads;
  double relu_margin = std::numeric_limits<double>::infinity();
};

Evaluation evaluate(const std::vector<TensorD>& inputs, const TapeFunction& f, bool with_grads) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, with_grads));
  const Var out = f(tape, vars);
  if (tape.value(out).size() != 1) throw ArgumentError("checked function must be scalar");
  Evaluation e;
  e.value = tape.value(out)[0];
  e.relu_margin = tape.relu_margin();
  if (with_grads) {
    tape.backward(out);
    for (const auto& v : vars) e.grads.push_back(tape.grad_or_zeros(v));
  }
  return e;
}

TensorD random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  TensorD t(shape);
  for (auto& v : t) v = rng.uniform(lo, hi);
  return t;
}

// <out, r> for a fixed random r, as linear(flatten(out), r) then sum.
Var project_to_scalar(Tape<double>& tape, Var out, Rng& rng) {
  const Shape& s = tape.value(out).shape();
  Var flat = s.size() == 1 ? out : tape.flatten(out);
  const Shape& fs = tape.value(flat).shape();
  if (fs.size() == 1) {
    // rank-1: treat as [1, n]
    flat = tape.custom({flat}, tape.value(flat).reshaped({1, fs[0]}), [](const BackwardArgs<double>& a) {
      if (!a.input_grads[0]) return;
      for (std::size_t i = 0; i < a.grad_out.size(); ++i) (*a.input_grads[0])[i] += a.grad_out[i];
    });
  }
  const std::size_t n = tape.value(flat).dim(1);
  const Var r = tape.leaf(random_tensor({1, n}, rng, -1.0, 1.0));
  return tape.sum(tape.linear(flat, r));
}

}  // namespace

CheckReport check_function(const std::string& name, const std::vector<TensorD>& inputs, const TapeFunction& f,
                           const GradCheckOptions& opts) {
  if (!(opts.tol > 0.0)) throw ArgumentError("tolerance must be > 0");
  if (!(opts.step > 0.0)) throw ArgumentError("step must be > 0");
  CheckReport report;
  report.tol = opts.tol;
  const Evaluation base = evaluate(inputs, f, true);
  report.relu_margin = base.relu_margin;
  std::vector<TensorD> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradCheckEntry entry;
    entry.name = inputs.size() == 1 ? name : name + "[" + std::to_string(k) + "]";
    for (std::size_t i : coords_to_check(inputs[k].size(), opts.max_coords)) {
      const double v = inputs[k][i];
      probe[k][i] = v + opts.step;
      const double up = evaluate(probe, f, false).value;
      probe[k][i] = v - opts.step;
      const double down = evaluate(probe, f, false).value;
      probe[k][i] = v;
      const double numeric = (up - down) / (2.0 * opts.step);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_error(base.grads[k][i], numeric));
      ++entry.coords_checked;
    }
    entry.passed = entry.max_rel_error < opts.tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

CheckReport check_primitives(const GradCheckOptions& opts) {
  CheckReport report;
  report.tol = opts.tol;
  report.relu_margin = std::numeric_limits<double>::infinity();
  Rng rng(derive_seed(opts.seed, 0, 0, Purpose::kInit));

  auto run = [&](const std::string& name, std::vector<TensorD> inputs, auto body) {
    const std::uint64_t proj_seed = rng();
    const TapeFunction f = [&, proj_seed](Tape<double>& tape, std::span<const Var> v) {
      Rng proj(proj_seed);
      return project_to_scalar(tape, body(tape, v), proj);
    };
    CheckReport r = check_function(name, inputs, f, opts);
    report.relu_margin = std::min(report.relu_margin, r.relu_margin);
    for (auto& e : r.entries) report.entries.push_back(std::move(e));
  };

  run("linear", {random_tensor({3, 5}, rng, -1, 1), random_tensor({4, 5}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.linear(v[0], v[1]); });
  run("bias_add", {random_tensor({2, 3, 4, 4}, rng, -1, 1), random_tensor({3}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.bias_add(v[0], v[1]); });
  run("conv2d", {random_tensor({2, 2, 5, 5}, rng, -1, 1), random_tensor({3, 2, 3, 3}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.conv2d(v[0], v[1], 1); });
  run("conv2d_valid", {random_tensor({1, 2, 6, 6}, rng, -1, 1), random_tensor({2, 2, 3, 3}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.conv2d(v[0], v[1], 0); });
  {
    // keep every coordinate at least 0.1 away from the kink
    TensorD x = random_tensor({2, 12}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
    run("relu", {x}, [](Tape<double>& t, std::span<const Var> v) { return t.relu(v[0]); });
  }
  run("avg_pool2", {random_tensor({2, 3, 4, 6}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.avg_pool2(v[0]); });
  run("flatten", {random_tensor({2, 3, 2, 2}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.flatten(v[0]); });
  run("add", {random_tensor({3, 4}, rng, -1, 1), random_tensor({3, 4}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.add(v[0], v[1]); });
  run("scale", {random_tensor({3, 4}, rng, -1, 1)},
      [](Tape<double>& t, std::span<const Var> v) { return t.scale(v[0], -1.75); });
  {
    const std::vector<std::size_t> labels = {2, 0, 4};
    auto inputs = std::vector<TensorD>{random_tensor({3, 5}, rng, -3, 3)};
    CheckReport r = check_function(
        "softmax_cross_entropy", inputs,
        [&](Tape<double>& t, std::span<const Var> v) { return t.softmax_cross_entropy(v[0], labels); }, opts);
    for (auto& e : r.entries) report.entries.push_back(std::move(e));
  }
  for (auto g : {PniGranularity::kLayerwise, PniGranularity::kChannelwise, PniGranularity::kElementwise}) {
    for (std::size_t axis : {std::size_t(0), std::size_t(1)}) {
      const Shape vs = {3, 4, 2};
      TensorD v = random_tensor(vs, rng, -1, 1);
      Rng noise_rng(rng());
      const NoiseDraw draw = draw_noise(v, noise_rng);
      TensorD alpha = random_tensor(alpha_shape(vs, g, axis), rng, 0.1, 0.5);
      run("pni_" + std::string(to_string(g)) + (axis == 0 ? "_weight" : "_activation"), {v, alpha},
          [g, axis, draw](Tape<double>& t, std::span<const Var> in) {
            return pni_node(t, in[0], in[1], g, axis, draw, 1.0);
          });
    }
  }
  return report;
}

CheckReport grad_check(const ModelGraph& graph, const ParameterSet& params, const Tensor& x,
                       std::span<const std::size_t> labels, const GradCheckOptions& opts) {
  // one frozen noise realisation, recorded from a float forward at the checked point
  std::vector<NoiseDraw> draws;
  if (graph.has_noise()) {
    Rng rng(derive_seed(opts.seed, 0, 0, Purpose::kUpdate));
    Tape<double> tape;
    NoiseContext noise(rng, NoiseSetting::stochastic(), true);
    record_forward(tape, graph, params, tape.leaf(x.cast<double>()), noise, false);
    draws = noise.recorded();
  }
  const std::vector<std::size_t> label_vec(labels.begin(), labels.end());

  std::vector<TensorD> inputs;
  inputs.push_back(x.cast<double>());
  for (const auto& p : params) inputs.push_back(p.value.cast<double>());

  const TapeFunction f = [&](Tape<double>& tape, std::span<const Var> v) {
    NoiseContext noise = graph.has_noise() ? NoiseContext::replay(draws) : NoiseContext::deterministic();
    const Var logits = record_layers(tape, graph, v.subspan(1), v[0], noise);
    return tape.softmax_cross_entropy(logits, label_vec);
  };
  CheckReport raw = check_function("model", inputs, f, opts);
  raw.entries[0].name = "input";
  for (std::size_t i = 0; i < params.size(); ++i) raw.entries[i + 1].name = params[i].name;
  return raw;
}

}  // namespace obfcheck
