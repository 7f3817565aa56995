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

#include "obfcheck/classifier.hpp"

namespace obfcheck {

std::size_t Classifier::predict(const Tensor& x, Rng& rng) const { return argmax_rows(logits(x, rng))[0]; }

NetworkClassifier::NetworkClassifier(Model model, NoiseSetting setting)
    : model_(std::move(model)), setting_(setting) {}

Tensor NetworkClassifier::logits(const Tensor& x, Rng& rng) const {
  return forward(model_.graph, x, model_.params, rng, setting_);
}

LossAndGradient NetworkClassifier::loss_and_input_grad(const Tensor& x, std::size_t label, Rng& rng) const {
  Tape<float> tape;
  NoiseContext noise(rng, setting_);
  const Var xv = tape.leaf(x, true);
  const auto pass = record_forward(tape, model_.graph, model_.params, xv, noise, false);
  const Var loss = loss_ce(tape, pass.logits, label);
  tape.backward(loss);
  return {double(tape.value(loss)[0]), tape.grad_or_zeros(xv)};
}

LossAndGradient NegatedGradientClassifier::loss_and_input_grad(const Tensor& x, std::size_t label, Rng& rng) const {
  auto r = inner_->loss_and_input_grad(x, label, rng);
  for (auto& g : r.grad) g = -g;
  return r;
}

}  // namespace obfcheck
