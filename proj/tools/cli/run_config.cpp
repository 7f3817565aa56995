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

#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "obfcheck/errors.hpp"

namespace obfcheck::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty() || !std::isfinite(v)) {
    throw UsageError("not a number: '" + text + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw UsageError("not a non-negative integer: '" + text + "'");
  }
  return v;
}

int parse_int(const std::string& text) {
  const auto v = parse_uint(text);
  if (v > 1'000'000'000ULL) throw UsageError("value too large: '" + text + "'");
  return int(v);
}

bool parse_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw UsageError("not a boolean: '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

double parse_fraction(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) return parse_number(text);
  const double num = parse_number(text.substr(0, slash));
  const double den = parse_number(text.substr(slash + 1));
  if (den == 0.0) throw UsageError("zero denominator in '" + text + "'");
  return num / den;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "seed", "out", "checkpoint", "classes", "per_class", "shape", "difficulty", "data_seed", "idx_images",
      "idx_labels", "idx_test_images", "idx_test_labels", "eval_examples", "arch", "widths", "pni",
      "granularity", "pni_post_activation", "alpha_init", "epochs", "batch_size", "learning_rate", "schedule",
      "momentum", "warmup_epochs", "epsilon_ramp_epochs", "weight_decay", "train_alpha", "adversarial", "train_epsilon", "train_step", "epsilon", "step",
      "steps", "restarts", "eot", "alpha_override", "verdict_votes", "slack", "eot_gap_threshold",
      "random_samples", "substitute_seed", "epsilon_grid", "models", "threads"};
  return keys;
}

void RunConfig::set(const std::string& raw_key, const std::string& value) {
  std::string key = trim(raw_key);
  std::replace(key.begin(), key.end(), '-', '_');
  try {
    if (key == "seed") seed = parse_uint(value);
    else if (key == "out") out = trim(value);
    else if (key == "checkpoint") checkpoint = trim(value);
    else if (key == "classes") synthetic.classes = parse_uint(value);
    else if (key == "per_class") synthetic.per_class = parse_uint(value);
    else if (key == "shape") {
      Shape s;
      for (const auto& d : split_list(value)) s.push_back(parse_uint(d));
      if (s.size() != 3) throw UsageError("shape needs three extents c,h,w");
      synthetic.shape = s;
    } else if (key == "difficulty") synthetic.difficulty = parse_number(value);
    else if (key == "data_seed") synthetic.seed = parse_uint(value);
    else if (key == "idx_images") idx_images = trim(value);
    else if (key == "idx_labels") idx_labels = trim(value);
    else if (key == "idx_test_images") idx_test_images = trim(value);
    else if (key == "idx_test_labels") idx_test_labels = trim(value);
    else if (key == "eval_examples") eval_examples = parse_uint(value);
    else if (key == "arch") model.arch = parse_architecture(trim(value));
    else if (key == "widths") {
      model.widths.clear();
      for (const auto& d : split_list(value)) model.widths.push_back(parse_uint(d));
    } else if (key == "pni") model.pni.placement = parse_placement(trim(value));
    else if (key == "granularity") model.pni.granularity = parse_granularity(trim(value));
    else if (key == "pni_post_activation") model.pni.post_activation = parse_bool(value);
    else if (key == "alpha_init") model.pni.alpha_init = parse_number(value);
    else if (key == "epochs") train.epochs = parse_int(value);
    else if (key == "batch_size") train.batch_size = parse_uint(value);
    else if (key == "learning_rate") train.learning_rate = parse_number(value);
    else if (key == "schedule") {
      const std::string v = trim(value);
      if (v == "cosine") train.schedule = LrSchedule::kCosine;
      else if (v == "constant") train.schedule = LrSchedule::kConstant;
      else throw UsageError("schedule must be cosine or constant");
    } else if (key == "momentum") train.momentum = parse_number(value);
    else if (key == "warmup_epochs") train.warmup_epochs = parse_int(value);
    else if (key == "epsilon_ramp_epochs") train.epsilon_ramp_epochs = parse_int(value);
    else if (key == "weight_decay") train.weight_decay = parse_number(value);
    else if (key == "train_alpha") train.train_alpha = parse_bool(value);
    else if (key == "adversarial") train.adversarial = parse_bool(value);
    else if (key == "train_epsilon") train.train_epsilon = parse_fraction(value);
    else if (key == "train_step") train_step_override = parse_fraction(value);
    else if (key == "epsilon") epsilon = parse_fraction(value);
    else if (key == "step") step_size = parse_fraction(value);
    else if (key == "steps") steps = parse_int(value);
    else if (key == "restarts") restarts = parse_int(value);
    else if (key == "eot") eot = parse_int(value);
    else if (key == "alpha_override") {
      alpha_override = parse_number(value);
      if (*alpha_override < 0.0) throw UsageError("alpha_override must be >= 0");
    } else if (key == "verdict_votes") verdict_votes = parse_int(value);
    else if (key == "slack") slack = parse_number(value);
    else if (key == "eot_gap_threshold") eot_gap_threshold = parse_number(value);
    else if (key == "random_samples") random_samples = parse_uint(value);
    else if (key == "substitute_seed") substitute_seed = parse_uint(value);
    else if (key == "epsilon_grid") {
      epsilon_grid.clear();
      for (const auto& e : split_list(value)) epsilon_grid.push_back(parse_fraction(e));
    } else if (key == "models") models = split_list(value);
    else if (key == "threads") threads = std::max<std::size_t>(1, parse_uint(value));
    else throw UsageError("unknown config key '" + key + "'");
  } catch (const ArgumentError& e) {
    throw UsageError(key + ": " + e.what());
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::finalize() {
  model.input_shape = synthetic.shape;
  model.classes = synthetic.classes;
  train.seed = seed;
  train.train_step_size = train_step_override.value_or(TrainConfig::default_step_for(train.train_epsilon));
  try {
    if (train.adversarial && !(train.train_epsilon > 0.0)) throw ArgumentError("adversarial training needs train_epsilon > 0");
    train.validate();
    attack_config(false, eot).validate();
    if (command == "checklist" || command == "reproduce") checklist_config().validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
}

AttackConfig RunConfig::attack_config(bool fgsm, int eot_samples) const {
  AttackConfig c = fgsm ? AttackConfig::fgsm(attack_epsilon(), seed, restarts, eot_samples)
                        : AttackConfig::pgd(attack_epsilon(), step_size, steps, restarts, eot_samples, seed);
  c.verdict_votes = verdict_votes;
  return c;
}

ChecklistConfig RunConfig::checklist_config() const {
  ChecklistConfig c;
  c.epsilon = attack_epsilon();
  c.step_size = step_size;
  c.pgd_steps = steps;
  c.restarts = restarts;
  c.eot_samples = eot;
  c.epsilon_grid = epsilon_grid;
  c.random_samples = random_samples;
  c.slack = slack;
  c.eot_gap_threshold = eot_gap_threshold;
  c.substitute_seed = substitute_seed;
  c.master_seed = seed;
  c.threads = threads;
  return c;
}

NoiseSetting RunConfig::noise_setting() const {
  return alpha_override ? NoiseSetting::alpha_override(*alpha_override) : NoiseSetting::stochastic();
}

Json RunConfig::to_json() const {
  Json j;
  j["command"] = command;
  j["seed"] = seed;
  j["data"] = {{"classes", synthetic.classes},
               {"per_class", synthetic.per_class},
               {"shape", synthetic.shape},
               {"difficulty", synthetic.difficulty},
               {"data_seed", synthetic.seed},
               {"idx_images", idx_images.string()},
               {"idx_labels", idx_labels.string()},
               {"idx_test_images", idx_test_images.string()},
               {"idx_test_labels", idx_test_labels.string()},
               {"eval_examples", eval_examples}};
  j["model"] = spec_to_json(model);
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"schedule", train.schedule == LrSchedule::kCosine ? "cosine" : "constant"},
                {"momentum", train.momentum},
                {"warmup_epochs", train.warmup_epochs},
                {"epsilon_ramp_epochs", train.epsilon_ramp_epochs},
                {"weight_decay", train.weight_decay},
                {"train_alpha", train.train_alpha},
                {"adversarial", train.adversarial},
                {"train_epsilon", train.train_epsilon},
                {"train_step", train.train_step_size}};
  j["attack"] = {{"epsilon", attack_epsilon()},
                 {"step", step_size},
                 {"steps", steps},
                 {"restarts", restarts},
                 {"eot", eot},
                 {"alpha_override", alpha_override ? Json(*alpha_override) : Json(nullptr)},
                 {"verdict_votes", verdict_votes}};
  j["checklist"] = checklist_config().to_json();
  j["models"] = models;
  return j;
}

}  // namespace obfcheck::cli
