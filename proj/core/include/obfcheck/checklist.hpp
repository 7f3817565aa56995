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

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "obfcheck/attacks.hpp"
#include "obfcheck/checkpoint.hpp"
#include "obfcheck/classifier.hpp"
#include "obfcheck/data.hpp"

namespace obfcheck {

struct ChecklistConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 1.0 / 255.0;
  int pgd_steps = 10;
  int restarts = 5;
  int eot_samples = 25;
  /// Empty means {eps/2, eps, 2 eps, 4 eps} capped at 1. The PGD step is scaled with
  /// each grid point (step_size * eps_i / epsilon).
  std::vector<double> epsilon_grid;
  std::size_t random_samples = 1000;
  double slack = 0.02;
  double eot_gap_threshold = 0.05;
  std::uint64_t substitute_seed = 1;
  double unbounded_epsilon = 1.0;
  int unbounded_steps = 100;
  double unbounded_step = 0.05;
  int unbounded_restarts = 1;
  std::uint64_t master_seed = 0;
  std::size_t threads = 1;

  std::vector<double> resolved_grid() const;
  /// Throws ArgumentError (grid not strictly increasing, slack < 0, T < 2, ...).
  void validate() const;
  AttackConfig pgd_config() const;
  Json to_json() const;
};

// Decision rules. Every comparison is strict, so slack = 1 can never observe 1, 2 or 5.
bool one_step_beats_iterative(double s_fgsm, double s_pgd, double slack);
bool blackbox_beats_whitebox(double s_bb, double s_wb, double slack);
bool unbounded_incomplete(double success, double slack);
bool random_sampling_finds(double fraction, double slack);
/// Some adjacent pair has s(eps_{i+1}) < s(eps_i) - slack.
bool distortion_nonmonotone(std::span<const double> rates, double slack);
/// gap > max(threshold, slack).
bool eot_gap_flagged(double gap, double threshold, double slack);

struct CharacteristicRecord {
  int id = 0;
  std::string name;
  bool observed = false;
  bool errored = false;
  std::string error;
  Json metrics = Json::object();
  Json thresholds = Json::object();

  Json to_json() const;
};

struct EotRecord {
  double plain_pgd_acc = 0.0;
  double eot_pgd_acc = 0.0;
  double gap = 0.0;
  bool flagged = false;
  bool errored = false;
  std::string error;
  Json thresholds = Json::object();

  Json to_json() const;
};

struct ChecklistReport {
  std::array<CharacteristicRecord, 5> characteristics;
  EotRecord eot;
  Json config = Json::object();
  Json provenance = Json::object();

  /// None of the five characteristics observed and none errored.
  bool passes_checklist() const;
  bool obfuscation_flagged_by_eot() const { return eot.flagged; }

  static constexpr int kSchemaVersion = 1;
  Json to_json() const;
  /// First line: "passes_checklist=<bool> eot_flagged=<bool>", then one line per record.
  std::string summary() const;
};

/// Problems with a serialized report (missing records or fields); empty when valid.
std::vector<std::string> validate_report_json(const Json& report);

/// Trains or builds the deterministic substitute used for the transfer attack.
using SubstituteFactory = std::function<std::shared_ptr<const Classifier>(std::uint64_t seed)>;

struct ChecklistInputs {
  const Classifier& model;
  const Dataset& data;
  SubstituteFactory substitute;
  std::string checkpoint_hash;
  /// Optional results of cfg.pgd_config() (plain) and the same attack with
  /// eot_samples = cfg.eot_samples on `data`; computed when absent.
  const Evaluation* pgd = nullptr;
  const Evaluation* eot_pgd = nullptr;
};

/// Plain white-box PGD shared by characteristics 1, 2, 4 and the EoT criterion.
Evaluation whitebox_pgd(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg);

CharacteristicRecord check_one_step_vs_iterative(const Classifier& model, const Dataset& data,
                                                 const ChecklistConfig& cfg, const Evaluation* pgd = nullptr);
CharacteristicRecord check_blackbox_vs_whitebox(const Classifier& model, const Classifier& substitute,
                                                const Dataset& data, const ChecklistConfig& cfg,
                                                const Evaluation* pgd = nullptr);
CharacteristicRecord check_unbounded(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg);
/// Uniform points in the eps-box around each example where PGD failed, each judged with
/// that example's verdict stream.
CharacteristicRecord check_random_sampling(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg,
                                           const Evaluation* pgd = nullptr);
CharacteristicRecord check_distortion_monotonicity(const Classifier& model, const Dataset& data,
                                                   const ChecklistConfig& cfg);
EotRecord check_eot_criterion(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg,
                              const Evaluation* pgd = nullptr, const Evaluation* eot_pgd = nullptr);

/// Runs all five checks and the EoT criterion. A sub-check that throws is recorded as
/// errored; the report is always complete.
ChecklistReport run_checklist(const ChecklistInputs& in, const ChecklistConfig& cfg);

}  // namespace obfcheck
