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
#include <span>
#include <vector>

#include "obfcheck/classifier.hpp"
#include "obfcheck/data.hpp"
#include "obfcheck/rng.hpp"
#include "obfcheck/tensor.hpp"

namespace obfcheck {

/// One L-infinity attack campaign. Distances are in normalized pixel units.
/// FGSM is num_steps = 1, step_size = epsilon, random_init = false.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 1.0 / 255.0;
  int num_steps = 10;
  int restarts = 1;
  /// Samples per EoT gradient; 0 or 1 means a single-draw gradient.
  int eot_samples = 0;
  bool random_init = true;
  std::uint64_t master_seed = 0;
  /// Stochastic forwards in the final verdict (majority vote, ties to the lowest class).
  int verdict_votes = 1;

  static AttackConfig fgsm(double epsilon, std::uint64_t seed, int restarts = 1, int eot_samples = 0);
  static AttackConfig pgd(double epsilon, double step_size, int steps, int restarts, int eot_samples,
                          std::uint64_t seed);

  /// Throws ArgumentError when a field is out of range.
  void validate() const;
  bool uses_eot() const noexcept { return eot_samples >= 2; }
};

struct AttackOutcome {
  Tensor x_adv;
  /// Untargeted: the verdict forward on x_adv does not predict the true label.
  bool success = false;
  double final_loss = 0.0;
  std::size_t predicted = 0;
  std::size_t chosen_restart = 0;
  std::vector<double> per_restart_losses;
  std::vector<bool> per_restart_success;
};

/// Stream for restart r of example i.
inline Rng attack_rng(std::uint64_t master, std::size_t example, std::size_t restart) {
  return Rng(derive_seed(master, example, restart, Purpose::kAttack));
}
/// Stream for the stochastic forward(s) that decide whether example i is classified correctly.
inline Rng verdict_rng(std::uint64_t master, std::size_t example) {
  return Rng(derive_seed(master, example, 0, Purpose::kVerdict));
}

struct Verdict {
  std::size_t predicted = 0;
  double loss = 0.0;  // mean cross-entropy over the votes
  bool correct = false;
};

/// Classifies x with `votes` forwards drawn from `rng`.
Verdict judge(const Classifier& model, const Tensor& x, std::size_t label, Rng rng, int votes = 1);

/// x + u, u ~ U(-eps, eps)^d, then projected onto the eps-box intersected with [0, 1]^d.
Tensor random_init(const Tensor& x, double epsilon, Rng& rng);

/// Elementwise clamp to [origin - eps, origin + eps], then to [0, 1]. Bounds are rounded
/// inward to float so the result is within eps of origin in exact arithmetic.
Tensor project(const Tensor& candidate, const Tensor& origin, double epsilon);

/// sgn(v) with sgn(0) = 0.
inline float sign(float v) noexcept { return float((v > 0.0f) - (v < 0.0f)); }

/// Mean of T input gradients under independent noise draws, summed in sample order and
/// divided by T. A deterministic model returns its single gradient. Throws NumericError
/// naming the sample index on a non-finite sample.
Tensor eot_gradient(const Classifier& model, const Tensor& x, std::size_t label, int samples, Rng& rng);

/// Single signed step of size eps from x (one stochastic gradient), clamped to [0, 1].
AttackOutcome fgsm(const Classifier& model, const Tensor& x, std::size_t label, double epsilon, Rng& rng,
                   Rng verdict);

/// PGD-K: x_k = project(x_{k-1} + step * sgn(g), x, eps) with g the (EoT) gradient.
AttackOutcome pgd(const Classifier& model, const Tensor& x, std::size_t label, const AttackConfig& cfg, Rng& rng,
                  Rng verdict);

struct RestartResult {
  bool success = false;
  double loss = 0.0;
};

/// Prefer misclassifying restarts, then the largest loss; ties go to the earliest restart.
std::size_t select_restart(std::span<const RestartResult> results);

/// R independent PGD runs seeded by attack_rng(master, example, r), judged with
/// verdict_rng(master, example); keeps the strongest per select_restart.
AttackOutcome attack_with_restarts(const Classifier& model, const Tensor& x, std::size_t label,
                                   const AttackConfig& cfg, std::size_t example_index);

struct Evaluation {
  std::vector<AttackOutcome> outcomes;  // by example index
  double robust_accuracy = 0.0;
  double success_rate() const { return 1.0 - robust_accuracy; }
};

/// Runs attack_with_restarts on every example of `data` using `threads` workers.
Evaluation evaluate_attack(const Classifier& model, const Dataset& data, const AttackConfig& cfg,
                           std::size_t threads);

/// Per-example verdicts on unmodified inputs, seeded exactly like attack verdicts.
std::vector<Verdict> clean_verdicts(const Classifier& model, const Dataset& data, std::uint64_t master_seed,
                                    std::size_t threads, int votes = 1);
double accuracy(std::span<const Verdict> verdicts);

}  // namespace obfcheck
