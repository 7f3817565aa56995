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

#include <cstddef>
#include <memory>

#include "obfcheck/model.hpp"
#include "obfcheck/rng.hpp"
#include "obfcheck/tensor.hpp"

namespace obfcheck {

struct LossAndGradient {
  double loss = 0.0;
  Tensor grad;  // d loss / d x, same shape as x
};

/// What an attack may ask of a model. Inputs are single examples shaped [1, c, h, w].
/// Implementations are immutable after construction: every method is const and draws
/// randomness only from the caller's Rng, so one instance can serve many threads.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual const Shape& input_shape() const = 0;  // [c, h, w]
  virtual std::size_t num_classes() const = 0;
  /// True if logits depend on the Rng.
  virtual bool stochastic() const = 0;

  virtual Tensor logits(const Tensor& x, Rng& rng) const = 0;
  /// Cross-entropy loss against `label` and its input gradient, one noise draw.
  virtual LossAndGradient loss_and_input_grad(const Tensor& x, std::size_t label, Rng& rng) const = 0;

  std::size_t predict(const Tensor& x, Rng& rng) const;
};

/// A trained network with a fixed noise policy.
class NetworkClassifier final : public Classifier {
 public:
  explicit NetworkClassifier(Model model, NoiseSetting setting = NoiseSetting::stochastic());

  const Shape& input_shape() const override { return model_.graph.spec.input_shape; }
  std::size_t num_classes() const override { return model_.graph.spec.classes; }
  bool stochastic() const override { return model_.graph.has_noise() && setting_.draws_noise(); }

  Tensor logits(const Tensor& x, Rng& rng) const override;
  LossAndGradient loss_and_input_grad(const Tensor& x, std::size_t label, Rng& rng) const override;

  const Model& model() const noexcept { return model_; }
  const NoiseSetting& setting() const noexcept { return setting_; }

 private:
  Model model_;
  NoiseSetting setting_;
};

/// Test double for gradient masking: forwards are the wrapped model's, the reported
/// input gradient is negated.
class NegatedGradientClassifier final : public Classifier {
 public:
  explicit NegatedGradientClassifier(std::shared_ptr<const Classifier> inner) : inner_(std::move(inner)) {}

  const Shape& input_shape() const override { return inner_->input_shape(); }
  std::size_t num_classes() const override { return inner_->num_classes(); }
  bool stochastic() const override { return inner_->stochastic(); }

  Tensor logits(const Tensor& x, Rng& rng) const override { return inner_->logits(x, rng); }
  LossAndGradient loss_and_input_grad(const Tensor& x, std::size_t label, Rng& rng) const override;

 private:
  std::shared_ptr<const Classifier> inner_;
};

}  // namespace obfcheck
