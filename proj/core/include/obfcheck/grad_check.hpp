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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "obfcheck/autodiff.hpp"
#include "obfcheck/model.hpp"

namespace obfcheck {

// Gradient checking in double precision. Analytic gradients from Tape<double> are
// compared against central differences (f(x + h) - f(x - h)) / 2h with the error
// measure |analytic - numeric| / max(1, |numeric|).

struct GradCheckOptions {
  double tol = 1e-4;
  double step = 1e-5;
  /// Coordinates checked per tensor, spread evenly; 0 checks all of them.
  std::size_t max_coords = 0;
  /// Seed for the frozen noise draw of stochastic models and for random primitive inputs.
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;  // primitive name, "input" or a parameter name
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

struct CheckReport {
  double tol = 0.0;
  std::vector<GradCheckEntry> entries;
  /// Smallest |pre-activation| over ReLU nodes at the checked point (infinity without ReLU).
  double relu_margin = 0.0;

  bool passed() const;
  double max_rel_error() const;
  const GradCheckEntry* find(std::string_view name) const;
};

/// A scalar function of `inputs` recorded on a double tape.
using TapeFunction = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Checks d f / d inputs for every input tensor; the entry is named `name`, or
/// name + "[i]" for several inputs.
CheckReport check_function(const std::string& name, const std::vector<TensorD>& inputs, const TapeFunction& f,
                           const GradCheckOptions& opts = {});

/// Every tape primitive on random inputs, each reduced to a scalar through a fixed random
/// projection, plus the PNI node with a frozen draw. Entries named after the primitive.
CheckReport check_primitives(const GradCheckOptions& opts = {});

/// Cross-entropy of the model at (x, labels) against the input and every parameter.
/// PNI noise is drawn once from opts.seed and replayed for every evaluation.
/// Never throws for gradient mismatch; failures are reported.
CheckReport grad_check(const ModelGraph& graph, const ParameterSet& params, const Tensor& x,
                       std::span<const std::size_t> labels, const GradCheckOptions& opts = {});

}  // namespace obfcheck
