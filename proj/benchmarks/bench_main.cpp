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

#include <benchmark/benchmark.h>

#include "obfcheck/attacks.hpp"
#include "obfcheck/classifier.hpp"
#include "obfcheck/data.hpp"
#include "obfcheck/model.hpp"
#include "obfcheck/pni.hpp"

namespace {

using namespace obfcheck;

Model default_cnn(PniPlacement pni) {
  ModelSpec spec;
  spec.pni.placement = pni;
  return build_model(spec, 1);
}

const Dataset& sample_data() {
  static const Dataset d = [] {
    SyntheticSpec s;
    s.per_class = 20;
    return generate_synthetic(s).test;
  }();
  return d;
}

PniPlacement placement_arg(const benchmark::State& state) { return static_cast<PniPlacement>(state.range(0)); }

void BM_Forward(benchmark::State& state) {
  const Model m = default_cnn(placement_arg(state));
  const Tensor x = sample_data().head(32).inputs;
  Rng rng(0);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m.graph, x, m.params, rng));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->Arg(2);

void BM_InputGradient(benchmark::State& state) {
  const NetworkClassifier model(default_cnn(placement_arg(state)));
  const Tensor x = sample_data().example(0);
  Rng rng(0);
  for (auto _ : state) benchmark::DoNotOptimize(model.loss_and_input_grad(x, 0, rng));
}
BENCHMARK(BM_InputGradient)->Arg(0)->Arg(1)->Arg(2);

void BM_Pgd10(benchmark::State& state) {
  const NetworkClassifier model(default_cnn(PniPlacement::kWeight));
  const Tensor x = sample_data().example(0);
  const AttackConfig cfg = AttackConfig::pgd(8.0 / 255, 1.0 / 255, 10, 1, int(state.range(0)), 0);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Rng rng(seed++);
    benchmark::DoNotOptimize(pgd(model, x, 0, cfg, rng, verdict_rng(0, 0)));
  }
}
BENCHMARK(BM_Pgd10)->Arg(0)->Arg(25)->Unit(benchmark::kMillisecond);

void BM_EotGradient(benchmark::State& state) {
  const NetworkClassifier model(default_cnn(PniPlacement::kWeight));
  const Tensor x = sample_data().example(0);
  Rng rng(0);
  for (auto _ : state) benchmark::DoNotOptimize(eot_gradient(model, x, 0, int(state.range(0)), rng));
}
BENCHMARK(BM_EotGradient)->Arg(2)->Arg(25)->Unit(benchmark::kMicrosecond);

void BM_NoiseDraw(benchmark::State& state) {
  Tensor v({std::size_t(state.range(0))});
  Rng fill(1);
  for (auto& e : v) e = float(fill.uniform(-1, 1));
  Rng rng(0);
  for (auto _ : state) benchmark::DoNotOptimize(draw_noise(v, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NoiseDraw)->Arg(72)->Arg(1152)->Arg(65536);

}  // namespace
BENCHMARK_MAIN();
