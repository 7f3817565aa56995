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

#include "obfcheck/checklist.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "obfcheck/errors.hpp"
#include "obfcheck/parallel.hpp"

namespace obfcheck {

std::vector<double> ChecklistConfig::resolved_grid() const {
  if (!epsilon_grid.empty()) return epsilon_grid;
  std::vector<double> grid;
  for (double f : {0.5, 1.0, 2.0, 4.0}) {
    const double e = std::min(1.0, f * epsilon);
    if (grid.empty() || e > grid.back()) grid.push_back(e);
  }
  return grid;
}

void ChecklistConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ArgumentError("epsilon must be in (0, 1]");
  if (!(step_size > 0.0)) throw ArgumentError("step size must be > 0");
  if (pgd_steps < 1) throw ArgumentError("PGD steps must be >= 1");
  if (restarts < 1) throw ArgumentError("restarts must be >= 1");
  if (eot_samples < 2) throw ArgumentError("the EoT criterion needs eot_samples >= 2");
  if (random_samples < 1) throw ArgumentError("random_samples must be >= 1");
  if (!(slack >= 0.0)) throw ArgumentError("slack must be >= 0");
  if (!(eot_gap_threshold >= 0.0)) throw ArgumentError("eot_gap_threshold must be >= 0");
  if (unbounded_steps < 1 || !(unbounded_step > 0.0) || unbounded_restarts < 1) {
    throw ArgumentError("invalid unbounded attack settings");
  }
  if (!(unbounded_epsilon > 0.0 && unbounded_epsilon <= 1.0)) throw ArgumentError("unbounded epsilon must be in (0, 1]");
  const auto grid = resolved_grid();
  if (grid.size() < 2) throw ArgumentError("epsilon grid needs at least 2 points");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] <= 1.0)) throw ArgumentError("epsilon grid values must be in (0, 1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ArgumentError("epsilon grid must be strictly increasing");
  }
}

AttackConfig ChecklistConfig::pgd_config() const {
  AttackConfig c = AttackConfig::pgd(epsilon, step_size, pgd_steps, restarts, 0, master_seed);
  return c;
}

Json ChecklistConfig::to_json() const {
  return Json{{"epsilon", epsilon},
              {"step_size", step_size},
              {"pgd_steps", pgd_steps},
              {"restarts", restarts},
              {"eot_samples", eot_samples},
              {"epsilon_grid", resolved_grid()},
              {"random_samples", random_samples},
              {"slack", slack},
              {"eot_gap_threshold", eot_gap_threshold},
              {"substitute_seed", substitute_seed},
              {"unbounded_epsilon", unbounded_epsilon},
              {"unbounded_steps", unbounded_steps},
              {"unbounded_step", unbounded_step},
              {"unbounded_restarts", unbounded_restarts},
              {"master_seed", master_seed}};
}

bool one_step_beats_iterative(double s_fgsm, double s_pgd, double slack) { return s_fgsm > s_pgd + slack; }
bool blackbox_beats_whitebox(double s_bb, double s_wb, double slack) { return s_bb > s_wb + slack; }
bool unbounded_incomplete(double success, double slack) { return success < 1.0 - slack; }
bool random_sampling_finds(double fraction, double slack) { return fraction > slack; }

bool distortion_nonmonotone(std::span<const double> rates, double slack) {
  for (std::size_t i = 1; i < rates.size(); ++i) {
    if (rates[i] < rates[i - 1] - slack) return true;
  }
  return false;
}

bool eot_gap_flagged(double gap, double threshold, double slack) { return gap > std::max(threshold, slack); }

Json CharacteristicRecord::to_json() const {
  Json j{{"id", id}, {"name", name}, {"observed", observed}, {"errored", errored}};
  if (errored) j["error"] = error;
  j["metrics"] = metrics;
  j["thresholds"] = thresholds;
  return j;
}

Json EotRecord::to_json() const {
  Json j{{"plain_pgd_acc", plain_pgd_acc},
         {"eot_pgd_acc", eot_pgd_acc},
         {"gap", gap},
         {"flagged", flagged},
         {"errored", errored}};
  if (errored) j["error"] = error;
  j["thresholds"] = thresholds;
  return j;
}

bool ChecklistReport::passes_checklist() const {
  return std::none_of(characteristics.begin(), characteristics.end(),
                      [](const auto& c) { return c.observed || c.errored; });
}

Json ChecklistReport::to_json() const {
  Json j;
  j["schema_version"] = kSchemaVersion;
  for (const auto& c : characteristics) j["characteristic_" + std::to_string(c.id)] = c.to_json();
  j["eot_criterion"] = eot.to_json();
  j["config"] = config;
  j["provenance"] = provenance;
  j["verdict"] = {{"passes_checklist", passes_checklist()}, {"obfuscation_flagged_by_eot", obfuscation_flagged_by_eot()}};
  return j;
}

std::string ChecklistReport::summary() const {
  std::ostringstream out;
  out << "passes_checklist=" << (passes_checklist() ? "true" : "false")
      << " eot_flagged=" << (obfuscation_flagged_by_eot() ? "true" : "false") << '\n';
  for (const auto& c : characteristics) {
    out << "characteristic_" << c.id << " (" << c.name << "): ";
    if (c.errored) {
      out << "ERROR " << c.error << '\n';
      continue;
    }
    out << (c.observed ? "observed" : "not observed") << ' ' << c.metrics.dump() << '\n';
  }
  out << "eot_criterion: plain_pgd_acc=" << eot.plain_pgd_acc << " eot_pgd_acc=" << eot.eot_pgd_acc
      << " gap=" << eot.gap << (eot.flagged ? " flagged" : " not flagged");
  if (eot.errored) out << " ERROR " << eot.error;
  out << '\n';
  return out.str();
}

std::vector<std::string> validate_report_json(const Json& r) {
  std::vector<std::string> problems;
  auto need = [&](const Json& obj, const std::string& key, const std::string& where) -> bool {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(where + ": missing '" + key + "'");
      return false;
    }
    return true;
  };
  if (need(r, "schema_version", "report") && r["schema_version"] != ChecklistReport::kSchemaVersion) {
    problems.push_back("report: unsupported schema_version");
  }
  for (int i = 1; i <= 5; ++i) {
    const std::string key = "characteristic_" + std::to_string(i);
    if (!need(r, key, "report")) continue;
    for (const char* f : {"id", "name", "observed", "errored", "metrics", "thresholds"}) need(r[key], f, key);
  }
  if (need(r, "eot_criterion", "report")) {
    for (const char* f : {"plain_pgd_acc", "eot_pgd_acc", "gap", "flagged", "errored", "thresholds"}) {
      need(r["eot_criterion"], f, "eot_criterion");
    }
  }
  need(r, "config", "report");
  need(r, "provenance", "report");
  if (need(r, "verdict", "report")) {
    need(r["verdict"], "passes_checklist", "verdict");
    need(r["verdict"], "obfuscation_flagged_by_eot", "verdict");
  }
  const std::size_t expected = 10;
  if (r.is_object() && r.size() != expected) problems.push_back("report: unexpected top-level field count");
  return problems;
}

namespace {

CharacteristicRecord make_record(int id, std::string name) {
  CharacteristicRecord r;
  r.id = id;
  r.name = std::move(name);
  return r;
}

}  // namespace

Evaluation whitebox_pgd(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg) {
  return evaluate_attack(model, data, cfg.pgd_config(), cfg.threads);
}

CharacteristicRecord check_one_step_vs_iterative(const Classifier& model, const Dataset& data,
                                                 const ChecklistConfig& cfg, const Evaluation* pgd) {
  auto rec = make_record(1, "one-step attacks beat iterative attacks");
  const Evaluation own = pgd ? Evaluation{} : whitebox_pgd(model, data, cfg);
  const Evaluation& p = pgd ? *pgd : own;
  const Evaluation f =
      evaluate_attack(model, data, AttackConfig::fgsm(cfg.epsilon, cfg.master_seed, cfg.restarts), cfg.threads);
  std::size_t fgsm_only = 0;
  for (std::size_t i = 0; i < data.size(); ++i) fgsm_only += f.outcomes[i].success && !p.outcomes[i].success;
  rec.metrics = {{"fgsm_success", f.success_rate()},
                 {"pgd_success", p.success_rate()},
                 {"fgsm_only_successes", fgsm_only}};
  rec.thresholds = {{"slack", cfg.slack}};
  rec.observed = one_step_beats_iterative(f.success_rate(), p.success_rate(), cfg.slack);
  return rec;
}

CharacteristicRecord check_blackbox_vs_whitebox(const Classifier& model, const Classifier& substitute,
                                                const Dataset& data, const ChecklistConfig& cfg,
                                                const Evaluation* pgd) {
  auto rec = make_record(2, "black-box attacks beat white-box attacks");
  const Evaluation own = pgd ? Evaluation{} : whitebox_pgd(model, data, cfg);
  const Evaluation& p = pgd ? *pgd : own;
  const AttackConfig acfg = cfg.pgd_config();
  std::vector<char> hit(data.size(), 0);
  parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
    const AttackOutcome crafted = attack_with_restarts(substitute, data.example(i), data.labels[i], acfg, i);
    hit[i] = !judge(model, crafted.x_adv, data.labels[i], verdict_rng(cfg.master_seed, i), acfg.verdict_votes).correct;
  });
  std::size_t successes = 0;
  for (char h : hit) successes += h != 0;
  const double s_bb = data.size() ? double(successes) / double(data.size()) : 0.0;
  rec.metrics = {{"transfer_success", s_bb}, {"whitebox_success", p.success_rate()}};
  rec.thresholds = {{"slack", cfg.slack}, {"substitute_seed", cfg.substitute_seed}};
  rec.observed = blackbox_beats_whitebox(s_bb, p.success_rate(), cfg.slack);
  return rec;
}

CharacteristicRecord check_unbounded(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg) {
  auto rec = make_record(3, "unbounded attacks do not reach 100% success");
  const AttackConfig acfg = AttackConfig::pgd(cfg.unbounded_epsilon, cfg.unbounded_step, cfg.unbounded_steps,
                                              cfg.unbounded_restarts, 0, cfg.master_seed);
  const Evaluation e = evaluate_attack(model, data, acfg, cfg.threads);
  rec.metrics = {{"success", e.success_rate()}};
  rec.thresholds = {{"slack", cfg.slack},
                    {"epsilon", cfg.unbounded_epsilon},
                    {"steps", cfg.unbounded_steps},
                    {"step_size", cfg.unbounded_step},
                    {"restarts", cfg.unbounded_restarts}};
  rec.observed = unbounded_incomplete(e.success_rate(), cfg.slack);
  return rec;
}

CharacteristicRecord check_random_sampling(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg,
                                           const Evaluation* pgd) {
  auto rec = make_record(4, "random sampling finds adversarial examples");
  const Evaluation own = pgd ? Evaluation{} : whitebox_pgd(model, data, cfg);
  const Evaluation& p = pgd ? *pgd : own;
  std::vector<std::size_t> failed;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!p.outcomes[i].success) failed.push_back(i);
  }
  rec.thresholds = {{"slack", cfg.slack}, {"samples_per_example", cfg.random_samples}, {"epsilon", cfg.epsilon}};
  if (failed.empty()) {
    rec.metrics = {{"pgd_failed_examples", 0}, {"fraction_found", nullptr}, {"vacuous", true}};
    rec.observed = false;
    return rec;
  }
  std::vector<char> found(failed.size(), 0);
  parallel_for(failed.size(), cfg.threads, [&](std::size_t k) {
    const std::size_t i = failed[k];
    const Tensor x = data.example(i);
    Rng rng(derive_seed(cfg.master_seed, i, 0, Purpose::kRandomSample));
    for (std::size_t n = 0; n < cfg.random_samples; ++n) {
      const Tensor point = random_init(x, cfg.epsilon, rng);
      if (!judge(model, point, data.labels[i], verdict_rng(cfg.master_seed, i)).correct) {
        found[k] = 1;
        break;
      }
    }
  });
  std::size_t hits = 0;
  for (char f : found) hits += f != 0;
  const double fraction = double(hits) / double(failed.size());
  rec.metrics = {{"pgd_failed_examples", failed.size()},
                 {"examples_found", hits},
                 {"fraction_found", fraction},
                 {"vacuous", false}};
  rec.observed = random_sampling_finds(fraction, cfg.slack);
  return rec;
}

CharacteristicRecord check_distortion_monotonicity(const Classifier& model, const Dataset& data,
                                                   const ChecklistConfig& cfg) {
  auto rec = make_record(5, "increasing distortion does not increase success");
  const auto grid = cfg.resolved_grid();
  std::vector<double> rates;
  for (double e : grid) {
    AttackConfig acfg = cfg.pgd_config();
    acfg.epsilon = e;
    acfg.step_size = cfg.step_size * e / cfg.epsilon;
    rates.push_back(evaluate_attack(model, data, acfg, cfg.threads).success_rate());
  }
  rec.metrics = {{"epsilons", grid}, {"success", rates}};
  rec.thresholds = {{"slack", cfg.slack}};
  rec.observed = distortion_nonmonotone(rates, cfg.slack);
  return rec;
}

EotRecord check_eot_criterion(const Classifier& model, const Dataset& data, const ChecklistConfig& cfg,
                              const Evaluation* pgd, const Evaluation* eot_pgd) {
  EotRecord rec;
  const Evaluation own = pgd ? Evaluation{} : whitebox_pgd(model, data, cfg);
  const Evaluation& p = pgd ? *pgd : own;
  AttackConfig acfg = cfg.pgd_config();
  acfg.eot_samples = cfg.eot_samples;
  const Evaluation own_eot = eot_pgd ? Evaluation{} : evaluate_attack(model, data, acfg, cfg.threads);
  const Evaluation& e = eot_pgd ? *eot_pgd : own_eot;
  rec.plain_pgd_acc = p.robust_accuracy;
  rec.eot_pgd_acc = e.robust_accuracy;
  rec.gap = rec.plain_pgd_acc - rec.eot_pgd_acc;
  rec.thresholds = {{"eot_gap_threshold", cfg.eot_gap_threshold}, {"slack", cfg.slack}, {"eot_samples", cfg.eot_samples}};
  rec.flagged = eot_gap_flagged(rec.gap, cfg.eot_gap_threshold, cfg.slack);
  return rec;
}

ChecklistReport run_checklist(const ChecklistInputs& in, const ChecklistConfig& cfg) {
  cfg.validate();
  in.data.validate();
  ChecklistReport report;
  report.config = cfg.to_json();
  report.provenance = {{"master_seed", cfg.master_seed},
                       {"substitute_seed", cfg.substitute_seed},
                       {"checkpoint_hash", in.checkpoint_hash},
                       {"examples", in.data.size()},
                       {"dataset", in.data.source},
                       {"model_stochastic", in.model.stochastic()}};

  const char* names[5] = {"one-step attacks beat iterative attacks", "black-box attacks beat white-box attacks",
                          "unbounded attacks do not reach 100% success", "random sampling finds adversarial examples",
                          "increasing distortion does not increase success"};
  for (int i = 0; i < 5; ++i) report.characteristics[i] = make_record(i + 1, names[i]);

  std::optional<Evaluation> pgd;
  std::string pgd_error;
  try {
    pgd = in.pgd ? *in.pgd : whitebox_pgd(in.model, in.data, cfg);
  } catch (const std::exception& e) {
    pgd_error = std::string("white-box PGD failed: ") + e.what();
  }

  auto guarded = [&](int id, auto&& body) {
    auto& slot = report.characteristics[id - 1];
    try {
      slot = body();
    } catch (const std::exception& e) {
      slot.errored = true;
      slot.observed = false;
      slot.error = e.what();
    }
  };
  auto shared = [&]() -> const Evaluation& {
    if (!pgd) throw std::runtime_error(pgd_error);
    return *pgd;
  };

  guarded(1, [&] { return check_one_step_vs_iterative(in.model, in.data, cfg, &shared()); });
  guarded(2, [&] {
    if (!in.substitute) throw ArgumentError("no substitute model factory supplied");
    const auto sub = in.substitute(cfg.substitute_seed);
    if (!sub) throw StateError("substitute factory returned no model");
    return check_blackbox_vs_whitebox(in.model, *sub, in.data, cfg, &shared());
  });
  guarded(3, [&] { return check_unbounded(in.model, in.data, cfg); });
  guarded(4, [&] { return check_random_sampling(in.model, in.data, cfg, &shared()); });
  guarded(5, [&] { return check_distortion_monotonicity(in.model, in.data, cfg); });
  try {
    report.eot = check_eot_criterion(in.model, in.data, cfg, &shared(), in.eot_pgd);
  } catch (const std::exception& e) {
    report.eot.errored = true;
    report.eot.flagged = false;
    report.eot.error = e.what();
  }
  return report;
}

}  // namespace obfcheck
