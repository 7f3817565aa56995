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
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "obfcheck/checklist.hpp"
#include "obfcheck/data.hpp"
#include "obfcheck/model.hpp"
#include "obfcheck/training.hpp"

namespace obfcheck::cli {

/// Thrown for bad flags, config keys or values; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "0.5", "8/255" or "2.5/255".
double parse_fraction(const std::string& text);

/// Everything a command needs, with defaults materialized.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::filesystem::path out = "obfcheck_out";
  std::filesystem::path checkpoint;

  // data
  SyntheticSpec synthetic;
  std::filesystem::path idx_images, idx_labels, idx_test_images, idx_test_labels;
  /// Attack/checklist examples taken from the head of the test split; 0 = all.
  std::size_t eval_examples = 0;

  // model
  ModelSpec model;

  // training
  TrainConfig train;
  std::optional<double> train_step_override;

  // attacks (epsilon defaults to the training epsilon)
  std::optional<double> epsilon;
  double step_size = 1.0 / 255.0;
  int steps = 10;
  int restarts = 5;
  int eot = 25;
  std::optional<double> alpha_override;
  int verdict_votes = 1;

  // checklist
  double slack = 0.02;
  double eot_gap_threshold = 0.05;
  std::size_t random_samples = 1000;
  std::uint64_t substitute_seed = 1;
  std::vector<double> epsilon_grid;

  std::vector<std::string> models;
  std::size_t threads = 1;

  double attack_epsilon() const { return epsilon.value_or(train.train_epsilon); }
  AttackConfig attack_config(bool fgsm, int eot_samples) const;
  ChecklistConfig checklist_config() const;
  NoiseSetting noise_setting() const;

  /// Applies one key=value pair (file keys). Throws UsageError for unknown keys or values.
  void set(const std::string& key, const std::string& value);
  /// Reads a flat UTF-8 key=value file; '#' starts a comment.
  void load_file(const std::filesystem::path& path);
  /// Resolves derived defaults (training step from epsilon) and validates.
  void finalize();

  /// Every setting that affects results (thread count excluded).
  Json to_json() const;
};

/// The documented config keys.
const std::vector<std::string>& config_keys();

}  // namespace obfcheck::cli
