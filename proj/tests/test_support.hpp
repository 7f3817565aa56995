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

#include <cmath>
#include <memory>
#include <vector>

#include "obfcheck/attacks.hpp"
#include "obfcheck/classifier.hpp"
#include "obfcheck/data.hpp"
#include "obfcheck/model.hpp"

namespace obfcheck::fixtures {

/// Two classes on a d-dim input [1, 1, 1, d]: class 0 inside the ball |x - c| < r,
/// class 1 outside. logits = (r^2 - |x - c|^2, 0).
class BumpClassifier final : public Classifier {
 public:
  BumpClassifier(std::vector<float> center, double radius) : center_(std::move(center)), r_(radius) {
    shape_ = {1, 1, center_.size()};
  }
  const Shape& input_shape() const override { return shape_; }
  std::size_t num_classes() const override { return 2; }
  bool stochastic() const override { return false; }

  Tensor logits(const Tensor& x, Rng&) const override {
    return Tensor({1, 2}, {float(r_ * r_ - dist2(x)), 0.0f});
  }
  LossAndGradient loss_and_input_grad(const Tensor& x, std::size_t label, Rng&) const override {
    const double z0 = r_ * r_ - dist2(x);
    // softmax over (z0, 0)
    const double p0 = 1.0 / (1.0 + std::exp(-z0));
    const double dz0 = p0 - (label == 0 ? 1.0 : 0.0);
    LossAndGradient out;
    out.loss = label == 0 ? std::log1p(std::exp(-z0)) : std::log1p(std::exp(z0));
    out.grad = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.grad[i] = float(dz0 * -2.0 * (double(x[i]) - center_[i]));
    return out;
  }

 private:
  double dist2(const Tensor& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (double(x[i]) - center_[i]) * (double(x[i]) - center_[i]);
    return s;
  }
  std::vector<float> center_;
  double r_;
  Shape shape_;
};

/// One input coordinate; class 1 on [lo, hi), class 0 elsewhere. Zero gradient everywhere.
class IntervalClassifier final : public Classifier {
 public:
  IntervalClassifier(double lo, double hi) : lo_(lo), hi_(hi) {}
  const Shape& input_shape() const override { return shape_; }
  std::size_t num_classes() const override { return 2; }
  bool stochastic() const override { return false; }
  Tensor logits(const Tensor& x, Rng&) const override {
    const bool inside = x[0] >= lo_ && x[0] < hi_;
    return Tensor({1, 2}, {inside ? 0.0f : 1.0f, inside ? 1.0f : 0.0f});
  }
  LossAndGradient loss_and_input_grad(const Tensor& x, std::size_t label, Rng& rng) const override {
    const Tensor z = logits(x, rng);
    const double lse = std::log(std::exp(double(z[0])) + std::exp(double(z[1])));
    return {lse - z[label], Tensor(x.shape())};
  }

 private:
  double lo_, hi_;
  Shape shape_ = {1, 1, 1};
};

/// n copies of one example.
inline Dataset replicate(const Tensor& x, std::size_t label, std::size_t classes, std::size_t n) {
  Shape s = x.shape();
  s[0] = n;
  std::vector<float> values;
  for (std::size_t i = 0; i < n; ++i) values.insert(values.end(), x.begin(), x.end());
  Dataset d;
  d.inputs = Tensor(s, std::move(values));
  d.labels.assign(n, label);
  d.class_count = classes;
  d.source = "replicated";
  return d;
}

/// Single-linear-layer model on [1, 1, d] inputs with the given weights and biases.
inline Model linear_model(const std::vector<std::vector<float>>& w, const std::vector<float>& b,
                          PniPlacement pni = PniPlacement::kNone, double alpha = 0.25) {
  ModelSpec spec;
  spec.arch = Architecture::kMlp;
  spec.input_shape = {1, 1, w[0].size()};
  spec.classes = w.size();
  spec.widths = {};
  spec.pni.placement = pni;
  spec.pni.alpha_init = alpha;
  Model m = build_model(spec, 0);
  std::vector<float> flat;
  for (const auto& row : w) flat.insert(flat.end(), row.begin(), row.end());
  m.params[*m.params.find("fc1.weight")].value = Tensor({w.size(), w[0].size()}, flat);
  m.params[*m.params.find("fc1.bias")].value = Tensor({b.size()}, b);
  return m;
}

/// 1-nearest-prototype accuracy of `data` against class means of `train`.
inline double nearest_mean_accuracy(const Dataset& train, const Dataset& test) {
  const std::size_t d = train.inputs.size() / train.size();
  std::vector<std::vector<double>> mean(train.class_count, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(train.class_count, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    ++count[train.labels[i]];
    for (std::size_t k = 0; k < d; ++k) mean[train.labels[i]][k] += train.inputs[i * d + k];
  }
  for (std::size_t c = 0; c < mean.size(); ++c) {
    for (auto& v : mean[c]) v /= double(std::max<std::size_t>(1, count[c]));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (test.inputs[i * d + k] - mean[c][k]) * (test.inputs[i * d + k] - mean[c][k]);
      if (s < best_d) best_d = s, best = c;
    }
    correct += best == test.labels[i];
  }
  return double(correct) / double(test.size());
}

inline double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline bool in_unit_box(const Tensor& x) {
  for (float v : x) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  }
  return true;
}

}  // namespace obfcheck::fixtures
