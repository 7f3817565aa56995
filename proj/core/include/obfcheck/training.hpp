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
#include <string>
#include <vector>

#include "obfcheck/data.hpp"
#include "obfcheck/model.hpp"

namespace obfcheck {

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  LrSchedule schedule = LrSchedule::kCosine;
  double momentum = 0.9;
  /// L2 penalty on conv/linear weights only (not biases or alpha).
  double weight_decay = 5e-4;
  bool train_alpha = true;
  bool adversarial = false;
  double train_epsilon = 8.0 / 255.0;
  /// Signed-gradient step used to craft training examples.
  double train_step_size = 10.0 / 255.0;
  std::uint64_t seed = 0;
  /// Linear learning-rate warm-up from 0 over the first epochs, then the schedule over the rest.
  int warmup_epochs = 3;
  /// Crafting radius grows linearly from 0 to train_epsilon over the first epochs.
  int epsilon_ramp_epochs = 0;

  /// Crafting step paired with eps: 1.25 * eps (2.5/255 for 2/255, 5/255 for 4/255).
  static double default_step_for(double epsilon) { return 1.25 * epsilon; }
  /// Throws ArgumentError on an inconsistent configuration.
  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double clean_accuracy = 0.0;  // on the training set, one stochastic forward per example
  double loss = 0.0;            // mean training loss over the epoch's batches
  double mean_alpha = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  /// "epoch,clean_acc,loss,mean_alpha" followed by one row per epoch.
  std::string to_csv() const;
};

struct TrainResult {
  ParameterSet params;
  TrainLog log;
};

/// Called with (clean batch, crafted batch) for every adversarial training batch.
using CraftObserver = std::function<void(const Tensor& clean, const Tensor& crafted)>;

/// Mini-batch SGD with momentum. With cfg.adversarial each batch is replaced by a single
/// step FGSM example from a random start in the eps-box (noise on), and the update is taken
/// on that example. Alpha is clamped to >= 0 after every step. Single-threaded and
/// bitwise reproducible for a fixed seed.
/// Throws TrainingError if the loss becomes non-finite.
TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg,
                  const CraftObserver& observer = {});

/// Learning rate at optimizer step `step` of `total`.
double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total, std::size_t warmup = 0);

}  // namespace obfcheck
