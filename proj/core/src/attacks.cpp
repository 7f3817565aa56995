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

#include "obfcheck/attacks.hpp"

#include <cmath>
#include <limits>

#include "obfcheck/parallel.hpp"

namespace obfcheck {

AttackConfig AttackConfig::fgsm(double epsilon, std::uint64_t seed, int restarts, int eot_samples) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.step_size = epsilon;
  c.num_steps = 1;
  c.restarts = restarts;
  c.eot_samples = eot_samples;
  c.random_init = false;
  c.master_seed = seed;
  return c;
}

AttackConfig AttackConfig::pgd(double epsilon, double step_size, int steps, int restarts, int eot_samples,
                               std::uint64_t seed) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.step_size = step_size;
  c.num_steps = steps;
  c.restarts = restarts;
  c.eot_samples = eot_samples;
  c.random_init = true;
  c.master_seed = seed;
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ArgumentError("epsilon must be in [0, 1]");
  // FGSM at eps = 0 has step 0
  const bool step_ok = step_size > 0.0 || (epsilon == 0.0 && step_size == 0.0);
  if (!step_ok || !std::isfinite(step_size)) throw ArgumentError("step size must be > 0");
  if (num_steps < 1) throw ArgumentError("number of steps must be >= 1");
  if (restarts < 1) throw ArgumentError("restarts must be >= 1");
  if (eot_samples < 0) throw ArgumentError("EoT samples must be >= 0");
  if (verdict_votes < 1) throw ArgumentError("verdict votes must be >= 1");
}

Verdict judge(const Classifier& model, const Tensor& x, std::size_t label, Rng rng, int votes) {
  std::vector<std::size_t> counts(model.num_classes(), 0);
  double loss = 0.0;
  for (int v = 0; v < votes; ++v) {
    const Tensor logits = model.logits(x, rng);
    ++counts[argmax_rows(logits)[0]];
    // cross-entropy from logits, log-sum-exp stabilized
    const float* row = logits.begin();
    const std::size_t k = logits.dim(1);
    double m = row[0];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, double(row[c]));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(double(row[c]) - m);
    loss += m + std::log(z) - double(row[label]);
  }
  Verdict out;
  out.predicted = std::size_t(std::max_element(counts.begin(), counts.end()) - counts.begin());
  out.loss = loss / double(votes);
  out.correct = out.predicted == label;
  return out;
}

Tensor project(const Tensor& candidate, const Tensor& origin, double epsilon) {
  if (candidate.shape() != origin.shape()) {
    throw ShapeError("project", to_string(candidate.shape()) + " vs " + to_string(origin.shape()));
  }
  constexpr float inf = std::numeric_limits<float>::infinity();
  Tensor out(candidate.shape());
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const double lo = double(origin[i]) - epsilon;
    const double hi = double(origin[i]) + epsilon;
    float flo = float(lo);
    if (double(flo) < lo) flo = std::nextafter(flo, inf);
    float fhi = float(hi);
    if (double(fhi) > hi) fhi = std::nextafter(fhi, -inf);
    const float v = std::clamp(candidate[i], flo, fhi);
    out[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

Tensor random_init(const Tensor& x, double epsilon, Rng& rng) {
  Tensor start = x;
  for (auto& v : start) v = float(double(v) + rng.uniform(-epsilon, epsilon));
  return project(start, x, epsilon);
}

namespace {

void require_finite(const Tensor& g, const std::string& what) {
  if (!g.all_finite()) throw NumericError(what + ": non-finite input gradient");
}

Tensor signed_step(const Tensor& current, const Tensor& grad, const Tensor& origin, double step, double epsilon) {
  Tensor candidate = current;
  const float s = float(step);
  for (std::size_t i = 0; i < candidate.size(); ++i) candidate[i] += s * sign(grad[i]);
  return project(candidate, origin, epsilon);
}

Tensor attack_gradient(const Classifier& model, const Tensor& x, std::size_t label, int eot_samples, Rng& rng) {
  if (eot_samples >= 2) return eot_gradient(model, x, label, eot_samples, rng);
  Tensor g = model.loss_and_input_grad(x, label, rng).grad;
  require_finite(g, "attack step");
  return g;
}

AttackOutcome finish(const Classifier& model, Tensor x_adv, std::size_t label, Rng verdict, int votes) {
  const Verdict v = judge(model, x_adv, label, verdict, votes);
  AttackOutcome out;
  out.x_adv = std::move(x_adv);
  out.success = !v.correct;
  out.final_loss = v.loss;
  out.predicted = v.predicted;
  out.per_restart_losses = {v.loss};
  out.per_restart_success = {out.success};
  return out;
}

}  // namespace

Tensor eot_gradient(const Classifier& model, const Tensor& x, std::size_t label, int samples, Rng& rng) {
  if (samples < 1) throw ArgumentError("EoT needs at least one sample");
  if (!model.stochastic()) {
    Tensor g = model.loss_and_input_grad(x, label, rng).grad;
    require_finite(g, "EoT sample 0");
    return g;
  }
  std::vector<double> acc(x.size(), 0.0);
  for (int t = 0; t < samples; ++t) {
    const Tensor g = model.loss_and_input_grad(x, label, rng).grad;
    require_finite(g, "EoT sample " + std::to_string(t));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += double(g[i]);
  }
  Tensor mean(x.shape());
  for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = float(acc[i] / double(samples));
  return mean;
}

AttackOutcome fgsm(const Classifier& model, const Tensor& x, std::size_t label, double epsilon, Rng& rng,
                   Rng verdict) {
  const Tensor g = attack_gradient(model, x, label, 0, rng);
  return finish(model, signed_step(x, g, x, epsilon, epsilon), label, verdict, 1);
}

AttackOutcome pgd(const Classifier& model, const Tensor& x, std::size_t label, const AttackConfig& cfg, Rng& rng,
                  Rng verdict) {
  cfg.validate();
  Tensor current = cfg.random_init ? random_init(x, cfg.epsilon, rng) : x;
  for (int k = 0; k < cfg.num_steps; ++k) {
    const Tensor g = attack_gradient(model, current, label, cfg.eot_samples, rng);
    current = signed_step(current, g, x, cfg.step_size, cfg.epsilon);
  }
  return finish(model, std::move(current), label, verdict, cfg.verdict_votes);
}

std::size_t select_restart(std::span<const RestartResult> results) {
  if (results.empty()) throw ArgumentError("select_restart: no results");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i) {
    const auto& a = results[i];
    const auto& b = results[best];
    if (a.success != b.success) {
      if (a.success) best = i;
    } else if (a.loss > b.loss) {
      best = i;
    }
  }
  return best;
}

AttackOutcome attack_with_restarts(const Classifier& model, const Tensor& x, std::size_t label,
                                   const AttackConfig& cfg, std::size_t example_index) {
  cfg.validate();
  std::vector<AttackOutcome> runs;
  std::vector<RestartResult> results;
  runs.reserve(std::size_t(cfg.restarts));
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng = attack_rng(cfg.master_seed, example_index, std::size_t(r));
    runs.push_back(pgd(model, x, label, cfg, rng, verdict_rng(cfg.master_seed, example_index)));
    results.push_back({runs.back().success, runs.back().final_loss});
  }
  const std::size_t best = select_restart(results);
  AttackOutcome out = std::move(runs[best]);
  out.chosen_restart = best;
  out.per_restart_losses.clear();
  out.per_restart_success.clear();
  for (const auto& r : results) {
    out.per_restart_losses.push_back(r.loss);
    out.per_restart_success.push_back(r.success);
  }
  return out;
}

Evaluation evaluate_attack(const Classifier& model, const Dataset& data, const AttackConfig& cfg,
                           std::size_t threads) {
  cfg.validate();
  Evaluation ev;
  ev.outcomes.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    ev.outcomes[i] = attack_with_restarts(model, data.example(i), data.labels[i], cfg, i);
  });
  std::size_t robust = 0;
  for (const auto& o : ev.outcomes) robust += !o.success;
  ev.robust_accuracy = data.size() ? double(robust) / double(data.size()) : 0.0;
  return ev;
}

std::vector<Verdict> clean_verdicts(const Classifier& model, const Dataset& data, std::uint64_t master_seed,
                                    std::size_t threads, int votes) {
  std::vector<Verdict> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    out[i] = judge(model, data.example(i), data.labels[i], verdict_rng(master_seed, i), votes);
  });
  return out;
}

double accuracy(std::span<const Verdict> verdicts) {
  if (verdicts.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& v : verdicts) ok += v.correct;
  return double(ok) / double(verdicts.size());
}

}  // namespace obfcheck
