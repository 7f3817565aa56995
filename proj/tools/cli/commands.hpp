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

#include <iosfwd>
#include <string>
#include <vector>

#include "obfcheck/checklist.hpp"
#include "obfcheck/checkpoint.hpp"
#include "obfcheck/classifier.hpp"
#include "obfcheck/training.hpp"
#include "run_config.hpp"

namespace obfcheck::cli {

/// A pipeline stage failed; carries the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error("stage '" + stage + "': " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Synthetic data from cfg.synthetic, or the IDX files when idx_images is set.
SplitDataset load_data(const RunConfig& cfg);
/// Head of the test split used by attack and checklist (cfg.eval_examples, 0 = all).
Dataset evaluation_set(const RunConfig& cfg, const Dataset& test);

struct TrainedModel {
  Checkpoint checkpoint;
  TrainLog log;
};

/// build_model(spec, cfg.seed) then train() on `train`; metadata records the training
/// config, seed and dataset.
TrainedModel train_model(const RunConfig& cfg, const ModelSpec& spec, const Dataset& train);

/// The four attack columns.
inline constexpr const char* kAttackColumns[4] = {"fgsm", "fgsm_eot", "pgd", "pgd_eot"};

struct AttackReport {
  double clean_accuracy = 0.0;
  std::vector<Verdict> clean;
  Evaluation results[4];  // in kAttackColumns order

  double robust(int column) const { return results[column].robust_accuracy; }
  Json to_json(const RunConfig& cfg, const Json& provenance) const;
  /// One row per example: label, clean prediction, then success/pred/loss/restart per column.
  std::string per_example_csv(const Dataset& data) const;
};

AttackReport run_attacks(const RunConfig& cfg, const Classifier& model, const Dataset& data);

/// Trains a noise-free model of `spec`'s architecture with the run's training recipe,
/// seeded by the substitute seed.
SubstituteFactory substitute_factory(const RunConfig& cfg, ModelSpec spec, const Dataset& train);

/// run_checklist with the run's settings; `attacks` (if given) supplies the plain and
/// EoT PGD evaluations.
ChecklistReport checklist_for(const RunConfig& cfg, const Classifier& model, const ModelSpec& spec,
                              const Dataset& eval, const Dataset& train, const std::string& checkpoint_hash,
                              const AttackReport* attacks = nullptr);

/// Named model variants for reproduce: "baseline", "w-layer", "w-channel", "w-element",
/// "a-a-layer", "a-a-channel", "a-a-element".
ModelSpec variant_spec(const RunConfig& cfg, const std::string& name);
const std::vector<std::string>& default_variants();

struct TableRow {
  std::string model;
  double acc[5] = {};  // clean, fgsm, fgsm_eot, pgd, pgd_eot
  bool passes_checklist = false;
  bool eot_flagged = false;
};
/// Table-1 shaped CSV; delta columns are signed differences against the "baseline" row
/// (empty when there is no baseline row).
std::string table_csv(const std::vector<TableRow>& rows);

int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_attack(const RunConfig& cfg, std::ostream& out);
int cmd_checklist(const RunConfig& cfg, std::ostream& out);
int cmd_reproduce(const RunConfig& cfg, std::ostream& out);

/// Parses argv and dispatches. Exit codes: 0 success, 1 runtime or data error, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace obfcheck::cli
