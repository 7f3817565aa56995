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

#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "obfcheck/errors.hpp"

namespace obfcheck::cli {

namespace fs = std::filesystem;

SplitDataset load_data(const RunConfig& cfg) {
  if (cfg.idx_images.empty()) return generate_synthetic(cfg.synthetic);
  SplitDataset s;
  s.train = load_idx(cfg.idx_images, cfg.idx_labels);
  s.train.split = Split::kTrain;
  if (!cfg.idx_test_images.empty()) {
    s.test = load_idx(cfg.idx_test_images, cfg.idx_test_labels);
  } else {
    s.test = s.train;
  }
  s.test.split = Split::kTest;
  return s;
}

Dataset evaluation_set(const RunConfig& cfg, const Dataset& test) {
  if (cfg.eval_examples == 0 || cfg.eval_examples >= test.size()) return test;
  return test.head(cfg.eval_examples);
}

TrainedModel train_model(const RunConfig& cfg, const ModelSpec& spec, const Dataset& train) {
  const Model init = build_model(spec, cfg.seed);
  TrainResult r = obfcheck::train(init, train, cfg.train);
  TrainedModel out;
  out.checkpoint.spec = spec;
  out.checkpoint.params = std::move(r.params);
  out.checkpoint.metadata = {{"seed", cfg.seed},
                             {"train", cfg.to_json()["train"]},
                             {"data", cfg.to_json()["data"]},
                             {"dataset", train.source},
                             {"final_epoch", r.log.epochs.empty() ? Json(nullptr) : Json(r.log.epochs.back().epoch)},
                             {"final_clean_acc", r.log.epochs.empty() ? Json(nullptr)
                                                                      : Json(r.log.epochs.back().clean_accuracy)},
                             {"mean_alpha", out.checkpoint.params.mean_alpha()}};
  out.log = std::move(r.log);
  return out;
}

AttackReport run_attacks(const RunConfig& cfg, const Classifier& model, const Dataset& data) {
  AttackReport rep;
  rep.clean = clean_verdicts(model, data, cfg.seed, cfg.threads, cfg.verdict_votes);
  rep.clean_accuracy = accuracy(rep.clean);
  rep.results[0] = evaluate_attack(model, data, cfg.attack_config(true, 0), cfg.threads);
  rep.results[1] = evaluate_attack(model, data, cfg.attack_config(true, cfg.eot), cfg.threads);
  rep.results[2] = evaluate_attack(model, data, cfg.attack_config(false, 0), cfg.threads);
  rep.results[3] = evaluate_attack(model, data, cfg.attack_config(false, cfg.eot), cfg.threads);
  return rep;
}

Json AttackReport::to_json(const RunConfig& cfg, const Json& provenance) const {
  Json j;
  j["schema_version"] = 1;
  j["config"] = cfg.to_json();
  j["provenance"] = provenance;
  j["examples"] = clean.size();
  j["clean_accuracy"] = clean_accuracy;
  Json robust = Json::object();
  Json attacks = Json::object();
  for (int c = 0; c < 4; ++c) {
    robust[kAttackColumns[c]] = results[c].robust_accuracy;
    const bool fgsm = c < 2;
    const AttackConfig a = cfg.attack_config(fgsm, c % 2 == 1 ? cfg.eot : 0);
    attacks[kAttackColumns[c]] = {{"epsilon", a.epsilon},     {"step_size", a.step_size},
                                  {"steps", a.num_steps},     {"restarts", a.restarts},
                                  {"eot_samples", a.eot_samples}, {"random_init", a.random_init}};
  }
  j["robust_accuracy"] = robust;
  j["attacks"] = attacks;
  return j;
}

std::string AttackReport::per_example_csv(const Dataset& data) const {
  std::ostringstream out;
  out.precision(9);
  out << "example,label,clean_pred,clean_correct";
  for (const char* c : kAttackColumns) out << ',' << c << "_success," << c << "_pred," << c << "_loss," << c << "_restart";
  out << '\n';
  for (std::size_t i = 0; i < clean.size(); ++i) {
    out << i << ',' << data.labels[i] << ',' << clean[i].predicted << ',' << int(clean[i].correct);
    for (const auto& r : results) {
      const auto& o = r.outcomes[i];
      out << ',' << int(o.success) << ',' << o.predicted << ',' << o.final_loss << ',' << o.chosen_restart;
    }
    out << '\n';
  }
  return out.str();
}

SubstituteFactory substitute_factory(const RunConfig& cfg, ModelSpec spec, const Dataset& train) {
  spec.pni.placement = PniPlacement::kNone;
  return [cfg, spec, &train](std::uint64_t seed) -> std::shared_ptr<const Classifier> {
    RunConfig sub = cfg;
    sub.seed = seed;
    sub.train.seed = seed;
    TrainedModel t = train_model(sub, spec, train);
    return std::make_shared<NetworkClassifier>(t.checkpoint.model(), NoiseSetting::deterministic());
  };
}

ChecklistReport checklist_for(const RunConfig& cfg, const Classifier& model, const ModelSpec& spec,
                              const Dataset& eval, const Dataset& train, const std::string& checkpoint_hash,
                              const AttackReport* attacks) {
  ChecklistInputs in{model, eval, substitute_factory(cfg, spec, train), checkpoint_hash};
  if (attacks) {
    in.pgd = &attacks->results[2];
    in.eot_pgd = &attacks->results[3];
  }
  return run_checklist(in, cfg.checklist_config());
}

const std::vector<std::string>& default_variants() {
  static const std::vector<std::string> v = {"baseline", "w-layer", "w-channel", "w-element",
                                             "a-a-layer", "a-a-channel", "a-a-element"};
  return v;
}

ModelSpec variant_spec(const RunConfig& cfg, const std::string& name) {
  ModelSpec s = cfg.model;
  if (name == "baseline") {
    s.pni.placement = PniPlacement::kNone;
    return s;
  }
  const auto dash = name.rfind('-');
  if (dash == std::string::npos) throw UsageError("unknown model variant '" + name + "'");
  try {
    s.pni.placement = parse_placement(name.substr(0, dash));
    s.pni.granularity = parse_granularity(name.substr(dash + 1));
  } catch (const ArgumentError&) {
    throw UsageError("unknown model variant '" + name + "'");
  }
  if (s.pni.placement == PniPlacement::kNone) throw UsageError("unknown model variant '" + name + "'");
  return s;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string signed_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.6f", v);
  return buf;
}

}  // namespace

std::string table_csv(const std::vector<TableRow>& rows) {
  static const char* cols[5] = {"clean", "fgsm", "fgsm_eot", "pgd", "pgd_eot"};
  const TableRow* base = nullptr;
  for (const auto& r : rows) {
    if (r.model == "baseline") base = &r;
  }
  std::ostringstream out;
  out << "model";
  for (const char* c : cols) out << ',' << c;
  for (const char* c : cols) out << ",delta_" << c;
  out << ",passes_checklist,eot_flagged\n";
  for (const auto& r : rows) {
    out << r.model;
    for (double a : r.acc) out << ',' << fixed(a);
    for (int c = 0; c < 5; ++c) out << ',' << (base ? signed_fixed(r.acc[c] - base->acc[c]) : "");
    out << ',' << (r.passes_checklist ? "true" : "false") << ',' << (r.eot_flagged ? "true" : "false") << '\n';
  }
  return out.str();
}

namespace {

Json provenance_for(const fs::path& ckpt_path, const std::string& hash, const Dataset& eval) {
  return {{"checkpoint", ckpt_path.filename().string()},
          {"checkpoint_hash", hash},
          {"dataset", eval.source},
          {"examples", eval.size()}};
}

struct LoadedModel {
  Checkpoint ckpt;
  std::string hash;
};

LoadedModel load_for(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(cfg.checkpoint)) throw std::runtime_error("checkpoint not found: " + cfg.checkpoint.string());
  const std::string bytes = read_file(cfg.checkpoint);
  return {parse_checkpoint(bytes), fnv1a_hex(bytes)};
}

/// The checkpoint's training epsilon when no attack epsilon was given.
RunConfig with_checkpoint_defaults(RunConfig cfg, const Checkpoint& ckpt) {
  if (!cfg.epsilon) {
    const auto& t = ckpt.metadata.value("train", Json::object());
    if (t.contains("train_epsilon")) cfg.epsilon = t["train_epsilon"].get<double>();
  }
  cfg.model = ckpt.spec;
  cfg.synthetic.shape = ckpt.spec.input_shape;
  cfg.synthetic.classes = ckpt.spec.classes;
  return cfg;
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const SplitDataset data = load_data(cfg);
  fs::create_directories(cfg.out);
  const TrainedModel t = train_model(cfg, cfg.model, data.train);
  save_checkpoint(t.checkpoint, cfg.out / "model.ckpt");
  write_file_atomic(cfg.out / "trainlog.csv", t.log.to_csv());
  const auto& last = t.log.epochs.empty() ? EpochLog{} : t.log.epochs.back();
  out << "trained " << to_string(cfg.model.arch) << " pni=" << to_string(cfg.model.pni.placement) << " epochs="
      << cfg.train.epochs << " clean_acc=" << last.clean_accuracy << " loss=" << last.loss
      << " mean_alpha=" << last.mean_alpha << '\n'
      << "checkpoint " << (cfg.out / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_attack(const RunConfig& base, std::ostream& out) {
  const LoadedModel m = load_for(base);
  RunConfig cfg = with_checkpoint_defaults(base, m.ckpt);
  const SplitDataset data = load_data(cfg);
  const Dataset eval = evaluation_set(cfg, data.test);
  const NetworkClassifier model(m.ckpt.model(), cfg.noise_setting());
  const AttackReport rep = run_attacks(cfg, model, eval);
  fs::create_directories(cfg.out);
  write_file_atomic(cfg.out / "attack_report.json", rep.to_json(cfg, provenance_for(cfg.checkpoint, m.hash, eval)).dump(2) + "\n");
  write_file_atomic(cfg.out / "attack_examples.csv", rep.per_example_csv(eval));
  out << "clean=" << fixed(rep.clean_accuracy);
  for (int c = 0; c < 4; ++c) out << ' ' << kAttackColumns[c] << '=' << fixed(rep.robust(c));
  out << '\n';
  return 0;
}

int cmd_checklist(const RunConfig& base, std::ostream& out) {
  const LoadedModel m = load_for(base);
  RunConfig cfg = with_checkpoint_defaults(base, m.ckpt);
  const SplitDataset data = load_data(cfg);
  const Dataset eval = evaluation_set(cfg, data.test);
  const NetworkClassifier model(m.ckpt.model(), cfg.noise_setting());
  ChecklistReport rep = checklist_for(cfg, model, m.ckpt.spec, eval, data.train, m.hash);
  rep.provenance["checkpoint"] = cfg.checkpoint.filename().string();
  rep.provenance["run_config"] = cfg.to_json();
  fs::create_directories(cfg.out);
  write_file_atomic(cfg.out / "checklist.json", rep.to_json().dump(2) + "\n");
  write_file_atomic(cfg.out / "summary.txt", rep.summary());
  out << rep.summary();
  return 0;
}

int cmd_reproduce(const RunConfig& cfg, std::ostream& out) {
  const std::vector<std::string> names = cfg.models.empty() ? default_variants() : cfg.models;
  std::vector<std::pair<std::string, ModelSpec>> variants;
  for (const auto& n : names) variants.emplace_back(n, variant_spec(cfg, n));

  auto stage = [](const std::string& name, auto&& body) {
    try {
      return body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };

  fs::create_directories(cfg.out);
  const SplitDataset data = stage("data", [&] { return load_data(cfg); });
  const Dataset eval = evaluation_set(cfg, data.test);
  std::vector<TableRow> rows;
  for (const auto& [name, spec] : variants) {
    const fs::path dir = cfg.out / name;
    fs::create_directories(dir);
    const TrainedModel t = stage("train " + name, [&] { return train_model(cfg, spec, data.train); });
    const std::string bytes = serialize_checkpoint(t.checkpoint);
    const std::string hash = fnv1a_hex(bytes);
    write_file_atomic(dir / "model.ckpt", bytes);
    write_file_atomic(dir / "trainlog.csv", t.log.to_csv());

    const NetworkClassifier model(t.checkpoint.model(), cfg.noise_setting());
    const AttackReport rep = stage("attack " + name, [&] { return run_attacks(cfg, model, eval); });
    write_file_atomic(dir / "attack_report.json",
                      rep.to_json(cfg, provenance_for(dir / "model.ckpt", hash, eval)).dump(2) + "\n");
    write_file_atomic(dir / "attack_examples.csv", rep.per_example_csv(eval));

    ChecklistReport chk =
        stage("checklist " + name, [&] { return checklist_for(cfg, model, spec, eval, data.train, hash, &rep); });
    chk.provenance["checkpoint"] = "model.ckpt";
    write_file_atomic(dir / "checklist.json", chk.to_json().dump(2) + "\n");
    write_file_atomic(dir / "summary.txt", chk.summary());

    TableRow row;
    row.model = name;
    row.acc[0] = rep.clean_accuracy;
    for (int c = 0; c < 4; ++c) row.acc[c + 1] = rep.robust(c);
    row.passes_checklist = chk.passes_checklist();
    row.eot_flagged = chk.obfuscation_flagged_by_eot();
    rows.push_back(row);
    out << name << ": clean=" << fixed(row.acc[0]) << " fgsm=" << fixed(row.acc[1]) << " fgsm_eot=" << fixed(row.acc[2])
        << " pgd=" << fixed(row.acc[3]) << " pgd_eot=" << fixed(row.acc[4])
        << " passes_checklist=" << (row.passes_checklist ? "true" : "false")
        << " eot_flagged=" << (row.eot_flagged ? "true" : "false") << '\n';
    // rewrite after every model so completed rows survive a later failure
    write_file_atomic(cfg.out / "table1.csv", table_csv(rows));
  }
  write_file_atomic(cfg.out / "run_config.json", cfg.to_json().dump(2) + "\n");
  return 0;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"obfcheck: noise-injection defenses, L-inf attacks and the gradient-obfuscation checklist"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  struct Flags {
    std::string config;
    std::map<std::string, std::string> values;  // config key -> value, in key order
    std::vector<std::string> sets;
    bool adversarial = false;
  };
  Flags flags;

  const std::vector<std::string> placements = {"none", "w", "a-a"};
  const std::vector<std::string> granularities = {"layer", "channel", "element", "layerwise", "channelwise",
                                                  "elementwise"};
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "Key = value config file; flags override it");
    auto value = [&](const std::string& flag, const std::string& key, const std::string& help) {
      return sub->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags.values[key] = v; },
                                                   help)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    };
    value("--seed", "seed", "Master seed");
    value("--epsilon", "epsilon", "L-inf radius, e.g. 8/255");
    value("--step", "step", "Attack step size, e.g. 1/255");
    value("--steps", "steps", "PGD steps K");
    value("--restarts", "restarts", "Restarts R");
    value("--eot", "eot", "EoT samples T");
    value("--pni", "pni", "PNI placement")->check(CLI::IsMember(placements));
    value("--granularity", "granularity", "Alpha sharing")->check(CLI::IsMember(granularities));
    value("--alpha-override", "alpha_override", "Scale alpha by S at inference")->check(CLI::NonNegativeNumber);
    value("--out", "out", "Output directory");
    value("--models", "models", "Comma-separated model variants (reproduce)");
    value("--checkpoint", "checkpoint", "Checkpoint to read");
    value("--epochs", "epochs", "Training epochs");
    value("--examples", "eval_examples", "Evaluate on the first N test examples (0 = all)");
    value("--threads", "threads", "Worker threads");
    sub->add_option("--set", flags.sets, "Extra key=value settings (repeatable)");
  };

  auto* train = app.add_subcommand("train", "Train a model and write model.ckpt and trainlog.csv");
  add_common(train);
  train->add_flag("--adversarial", flags.adversarial, "Fast adversarial training (FGSM with random init)");
  auto* attack = app.add_subcommand("attack", "FGSM, PGD and their EoT variants against a checkpoint");
  add_common(attack);
  auto* checklist = app.add_subcommand("checklist", "Run the gradient-obfuscation checklist on a checkpoint");
  add_common(checklist);
  auto* reproduce = app.add_subcommand("reproduce", "Data, training, attacks and checklist for several models");
  add_common(reproduce);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  RunConfig cfg;
  std::string command;
  for (auto* sub : {train, attack, checklist, reproduce}) {
    if (sub->parsed()) command = sub->get_name();
  }
  cfg.command = command;
  if (command == "reproduce") cfg.train.adversarial = true;
  try {
    if (!flags.config.empty()) cfg.load_file(flags.config);
    for (const auto& s : flags.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : flags.values) {
      if (key == "epsilon" && command == "train") {
        cfg.set("train_epsilon", value);
      } else if (key == "epsilon" && command == "reproduce") {
        cfg.set("train_epsilon", value);
        cfg.set("epsilon", value);
      } else {
        cfg.set(key, value);
      }
    }
    if (flags.adversarial) cfg.train.adversarial = true;
    cfg.finalize();
    if (command == "reproduce") {
      for (const auto& n : cfg.models) variant_spec(cfg, n);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (command == "train") return cmd_train(cfg, out);
    if (command == "attack") return cmd_attack(cfg, out);
    if (command == "checklist") return cmd_checklist(cfg, out);
    return cmd_reproduce(cfg, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const StageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace obfcheck::cli
