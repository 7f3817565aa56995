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

#include <gtest/gtest.h>

#include <cmath>

#include "obfcheck/grad_check.hpp"
#include "obfcheck/model.hpp"
#include "obfcheck/pni.hpp"

using namespace obfcheck;

namespace {

PniParameter layerwise(Tensor v, float alpha) {
  PniParameter p;
  p.v = std::move(v);
  p.alpha = Tensor({1}, alpha);
  return p;
}

}  // namespace

TEST(Sigma, Examples) {
  const float ones[] = {1, 1, 1, 1};
  EXPECT_EQ(compute_sigma(std::span<const float>(ones)), 0.0);
  const float two[] = {0, 2};
  EXPECT_DOUBLE_EQ(compute_sigma(std::span<const float>(two)), 1.0);
  EXPECT_THROW(compute_sigma(std::span<const float>()), ArgumentError);
}

TEST(Sigma, StandardNormalSample) {
  Rng rng(2024);
  std::vector<double> v(100000);
  for (auto& x : v) x = rng.normal();
  const double s = compute_sigma(std::span<const double>(v));
  EXPECT_GT(s, 0.99);
  EXPECT_LT(s, 1.01);
}

TEST(PniForward, ZeroAlphaIsBitwiseIdentity) {
  const auto p = layerwise(Tensor({2, 3}, {0.1f, -0.4f, 2.0f, 0.0f, -0.0f, 7.5f}), 0.0f);
  Rng rng(1);
  EXPECT_TRUE(bitwise_equal(pni_forward(p, rng, NoiseSetting::stochastic()).value, p.v));
}

TEST(PniForward, ConstantTensorIsUnchanged) {
  const auto p = layerwise(Tensor({5}, 0.3f), 3.0f);
  Rng rng(1);
  EXPECT_TRUE(bitwise_equal(pni_forward(p, rng, NoiseSetting::stochastic()).value, p.v));
}

TEST(PniForward, MatchesReplayedNormalStream) {
  const auto p = layerwise(Tensor({2, 2}, {1.0f, -1.0f, 3.0f, 0.5f}), 1.0f);
  Rng rng(77);
  const auto out = pni_forward(p, rng, NoiseSetting::stochastic());
  const float raw[] = {1.0f, -1.0f, 3.0f, 0.5f};
  const double sigma = compute_sigma(std::span<const float>(raw));
  Rng ref(77);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = sigma * ref.normal();
    EXPECT_NEAR(double(out.value[i]) - double(p.v[i]), expected, 1e-6 * (1 + std::abs(expected)));
  }
  ASSERT_TRUE(out.draw.has_value());
  EXPECT_EQ(out.draw->counter_end, rng.counter());
}

TEST(PniForward, NegativeOverrideRejected) {
  EXPECT_THROW(NoiseSetting::alpha_override(-0.5), ArgumentError);
}

TEST(PniForward, DeterministicAndZeroOverrideDrawNothing) {
  const auto p = layerwise(Tensor({3}, {1.0f, 2.0f, 4.0f}), 0.8f);
  Rng rng(3);
  EXPECT_TRUE(bitwise_equal(pni_forward(p, rng, NoiseSetting::deterministic()).value, p.v));
  EXPECT_TRUE(bitwise_equal(pni_forward(p, rng, NoiseSetting::alpha_override(0.0)).value, p.v));
  EXPECT_EQ(rng.counter(), 0u);
}

TEST(PniForward, AlphaShapeIsValidated) {
  PniParameter p;
  p.v = Tensor({3, 2});
  p.alpha = Tensor({2});
  p.granularity = PniGranularity::kChannelwise;
  Rng rng(0);
  EXPECT_THROW(pni_forward(p, rng, NoiseSetting::stochastic()), ShapeError);
}

TEST(PniStatistics, UnbiasedWithScaleAlphaSigma) {
  const auto p = layerwise(Tensor({4}, {0.0f, 1.0f, 2.0f, 3.0f}), 0.5f);
  const float raw[] = {0.0f, 1.0f, 2.0f, 3.0f};
  const double scale = 0.5 * compute_sigma(std::span<const float>(raw));
  constexpr int kDraws = 100000;
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  Rng rng(5);
  for (int t = 0; t < kDraws; ++t) {
    const Tensor out = pni_forward(p, rng, NoiseSetting::stochastic()).value;
    for (std::size_t i = 0; i < 4; ++i) {
      const double d = double(out[i]) - double(p.v[i]);
      sum[i] += d;
      sq[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const double mean = sum[i] / kDraws;
    EXPECT_LT(std::abs(mean), 4.0 * scale / std::sqrt(double(kDraws)));
    const double sd = std::sqrt(sq[i] / kDraws - mean * mean);
    EXPECT_NEAR(sd / scale, 1.0, 0.02);
  }
}

TEST(PniBackward, ZeroUpstreamGivesZero) {
  const auto p = layerwise(Tensor({3}, {1.0f, 2.0f, 4.0f}), 0.8f);
  Rng rng(3);
  const auto out = pni_forward(p, rng, NoiseSetting::stochastic());
  const auto g = pni_backward(p, *out.draw, Tensor({3}, 0.0f));
  EXPECT_EQ(g.grad_v, Tensor({3}, 0.0f));
  EXPECT_EQ(g.grad_alpha, Tensor({1}, 0.0f));
}

TEST(PniBackward, SingleElementProduct) {
  PniParameter p;
  p.v = Tensor({1}, 5.0f);
  p.alpha = Tensor({1}, 0.25f);
  p.granularity = PniGranularity::kElementwise;
  NoiseDraw d;
  d.shape = {1};
  d.eta = {2.0};
  const auto g = pni_backward(p, d, Tensor({1}, 3.0f));
  EXPECT_FLOAT_EQ(g.grad_alpha[0], 6.0f);
  EXPECT_FLOAT_EQ(g.grad_v[0], 3.0f);
}

TEST(PniBackward, LayerwiseIsDotProduct) {
  const auto p = layerwise(Tensor({2, 2}, {0.3f, -1.2f, 0.8f, 2.2f}), 0.4f);
  Rng rng(8);
  const auto out = pni_forward(p, rng, NoiseSetting::stochastic());
  const Tensor up({2, 2}, {0.5f, -2.0f, 1.5f, 0.25f});
  const auto g = pni_backward(p, *out.draw, up);
  double dot = 0.0;
  for (std::size_t i = 0; i < 4; ++i) dot += out.draw->eta[i] * double(up[i]);
  EXPECT_NEAR(g.grad_alpha[0], dot, 1e-5);
  EXPECT_EQ(g.grad_v, up);
}

TEST(PniBackward, ChannelwiseGroupsRowsOfAWeight) {
  PniParameter p;
  p.v = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  p.alpha = Tensor({2}, 0.1f);
  p.granularity = PniGranularity::kChannelwise;
  NoiseDraw d;
  d.shape = {2, 3};
  d.eta = {1, 1, 1, 2, 2, 2};
  const auto g = pni_backward(p, d, Tensor({2, 3}, 1.0f));
  EXPECT_FLOAT_EQ(g.grad_alpha[0], 3.0f);
  EXPECT_FLOAT_EQ(g.grad_alpha[1], 6.0f);
}

TEST(PniBackward, MismatchedDrawIsStateError) {
  const auto p = layerwise(Tensor({3}, 1.0f), 0.1f);
  NoiseDraw d;
  d.shape = {4};
  d.eta.assign(4, 0.0);
  EXPECT_THROW(pni_backward(p, d, Tensor({3})), StateError);
}

TEST(AlphaShape, ByGranularity) {
  EXPECT_EQ(alpha_shape({8, 3, 3, 3}, PniGranularity::kLayerwise, 0), Shape({1}));
  EXPECT_EQ(alpha_shape({8, 3, 3, 3}, PniGranularity::kChannelwise, 0), Shape({8}));
  EXPECT_EQ(alpha_shape({8, 3, 3, 3}, PniGranularity::kElementwise, 0), Shape({8, 3, 3, 3}));
  EXPECT_EQ(alpha_shape({1, 16, 4, 4}, PniGranularity::kChannelwise, 1), Shape({16}));
  EXPECT_EQ(alpha_shape({1, 16, 4, 4}, PniGranularity::kElementwise, 1), Shape({16, 4, 4}));
}

TEST(Parse, NamesRoundTrip) {
  EXPECT_EQ(parse_granularity("channel"), PniGranularity::kChannelwise);
  EXPECT_EQ(parse_granularity("elementwise"), PniGranularity::kElementwise);
  EXPECT_EQ(parse_placement("a-a"), PniPlacement::kActivation);
  EXPECT_THROW(parse_granularity("pixel"), ArgumentError);
  EXPECT_THROW(parse_placement("b"), ArgumentError);
}

TEST(PniModel, NoPniMeansNoNoise) {
  ModelSpec spec;
  const Model m = build_model(spec, 3);
  EXPECT_EQ(m.graph.pni_node_count(), 0u);
  Rng rng(1);
  forward(m.graph, Tensor({2, 1, 16, 16}, 0.5f), m.params, rng);
  EXPECT_EQ(rng.counter(), 0u);
}

TEST(PniModel, ChannelwiseAlphaCount) {
  ModelSpec spec;
  spec.pni.placement = PniPlacement::kWeight;
  spec.pni.granularity = PniGranularity::kChannelwise;
  const Model m = build_model(spec, 3);
  std::size_t alphas = 0;
  for (const auto& p : m.params) {
    if (ParameterSet::is_alpha(p.name)) alphas += p.value.size();
  }
  EXPECT_EQ(alphas, 8u + 16u + 10u);
  EXPECT_EQ(m.graph.pni_node_count(), 3u);
}

TEST(PniModel, ActivationAlphaShapes) {
  ModelSpec spec;
  spec.pni.placement = PniPlacement::kActivation;
  spec.pni.granularity = PniGranularity::kElementwise;
  const Model m = build_model(spec, 3);
  EXPECT_EQ(m.params[*m.params.find("conv0.alpha")].value.shape(), Shape({8, 16, 16}));
  EXPECT_FLOAT_EQ(m.params[*m.params.find("conv0.alpha")].value[0], 0.25f);
}

TEST(PniModel, SameSeedSameParameters) {
  ModelSpec spec;
  spec.pni.placement = PniPlacement::kWeight;
  const Model a = build_model(spec, 99), b = build_model(spec, 99), c = build_model(spec, 100);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
}

TEST(PniModel, DeterministicModeEqualsPniFreeModel) {
  for (auto placement : {PniPlacement::kWeight, PniPlacement::kActivation}) {
    ModelSpec plain;
    ModelSpec noisy = plain;
    noisy.pni.placement = placement;
    const Model a = build_model(plain, 4), b = build_model(noisy, 4);
    Tensor x({3, 1, 16, 16});
    Rng fill(1);
    for (auto& v : x) v = float(fill.uniform());
    Rng r1(0), r2(0), r3(0);
    const Tensor base = forward(a.graph, x, a.params, r1);
    EXPECT_TRUE(bitwise_equal(forward(b.graph, x, b.params, r2, NoiseSetting::deterministic()), base));
    EXPECT_TRUE(bitwise_equal(forward(b.graph, x, b.params, r3, NoiseSetting::alpha_override(0.0)), base));
    Rng r4(0);
    EXPECT_FALSE(bitwise_equal(forward(b.graph, x, b.params, r4), base));
  }
}

TEST(PniModel, AlphaGradientsMatchFiniteDifferences) {
  for (auto placement : {PniPlacement::kWeight, PniPlacement::kActivation}) {
    for (auto g : {PniGranularity::kLayerwise, PniGranularity::kChannelwise, PniGranularity::kElementwise}) {
      ModelSpec spec;
      spec.input_shape = {1, 4, 4};
      spec.classes = 3;
      spec.widths = {2};
      spec.pni.placement = placement;
      spec.pni.granularity = g;
      const Model m = build_model(spec, 12);
      Tensor x({2, 1, 4, 4});
      Rng fill(6);
      for (auto& v : x) v = float(fill.uniform());
      const std::vector<std::size_t> labels = {0, 2};
      const CheckReport r = grad_check(m.graph, m.params, x, labels);
      for (const auto& e : r.entries) {
        EXPECT_TRUE(e.passed) << to_string(placement) << "/" << to_string(g) << " " << e.name << " "
                              << e.max_rel_error;
      }
      EXPECT_NE(r.find("conv0.alpha"), nullptr);
    }
  }
}
