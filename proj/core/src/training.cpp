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

#include "obfcheck/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "obfcheck/attacks.hpp"

namespace obfcheck {

void TrainConfig::validate() const {
  if (epochs < 0) throw ArgumentError("epochs must be >= 0");
  if (batch_size == 0) throw ArgumentError("batch size must be > 0");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight decay must be >= 0");
  if (warmup_epochs < 0 || epsilon_ramp_epochs < 0) throw ArgumentError("warm-up and ramp epochs must be >= 0");
  if (adversarial) {
    if (!(train_epsilon >= 0.0 && train_epsilon <= 1.0)) throw ArgumentError("train epsilon must be in [0, 1]");
    if (!(train_step_size > 0.0)) throw ArgumentError("train step size must be > 0");
  }
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,clean_acc,loss,mean_alpha\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.clean_accuracy << ',' << e.loss << ',' << e.mean_alpha << '\n';
  }
  return out.str();
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total, std::size_t warmup) {
  if (step < warmup) return cfg.learning_rate * double(step + 1) / double(warmup);
  if (cfg.schedule == LrSchedule::kConstant || total <= warmup) return cfg.learning_rate;
  const double t = double(step - warmup) / double(total - warmup);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

// Single FGSM step from a random start, per the fast adversarial training recipe.
Tensor craft(const Model& model, const ParameterSet& params, const Tensor& x, std::span<const std::size_t> labels,
             const TrainConfig& cfg, double epsilon, Rng rng) {
  const double step_size =
      epsilon == cfg.train_epsilon ? cfg.train_step_size : cfg.train_step_size * epsilon / cfg.train_epsilon;
  const Tensor start = random_init(x, epsilon, rng);
  Tape<float> tape;
  NoiseContext noise(rng, NoiseSetting::stochastic());
  const Var xv = tape.leaf(start, true);
  const auto pass = record_forward(tape, model.graph, params, xv, noise, false);
  const Var loss = tape.softmax_cross_entropy(pass.logits, labels);
  tape.backward(loss);
  const Tensor g = tape.grad_or_zeros(xv);
  Tensor candidate = start;
  const float s = float(step_size);
  for (std::size_t i = 0; i < candidate.size(); ++i) candidate[i] += s * sign(g[i]);
  return project(candidate, x, epsilon);
}

}  // namespace

TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg, const CraftObserver& observer) {
  cfg.validate();
  data.validate();
  if (data.example_shape() != model.graph.spec.input_shape) {
    throw ShapeError("dataset", "examples " + to_string(data.example_shape()) + " do not fit model input " +
                                    to_string(model.graph.spec.input_shape));
  }

  TrainResult result{model.params, {}};
  ParameterSet& params = result.params;
  std::vector<std::vector<float>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.value.size(), 0.0f);

  const std::size_t n = data.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * std::size_t(cfg.epochs);
  const std::size_t warmup = batches * std::size_t(cfg.warmup_epochs);
  const std::size_t ramp = batches * std::size_t(cfg.epsilon_ramp_epochs);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(n, Rng(derive_seed(cfg.seed, std::size_t(epoch), 0, Purpose::kShuffle)));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);
      Tensor x = data.batch(idx);
      if (cfg.adversarial) {
        Tensor crafted =
            craft(model, params, x, labels, cfg,
                  step < ramp ? cfg.train_epsilon * double(step + 1) / double(ramp) : cfg.train_epsilon, Rng(derive_seed(cfg.seed, std::size_t(epoch), b, Purpose::kCraft)));
        if (observer) observer(x, crafted);
        x = std::move(crafted);
      }

      Tape<float> tape;
      Rng update_rng(derive_seed(cfg.seed, std::size_t(epoch), b, Purpose::kUpdate));
      NoiseContext noise(update_rng, NoiseSetting::stochastic());
      const Var xv = tape.leaf(std::move(x));
      ForwardPass pass;
      Var loss;
      try {
        pass = record_forward(tape, model.graph, params, xv, noise, true);
        loss = tape.softmax_cross_entropy(pass.logits, labels);
      } catch (const NumericError& e) {
        throw TrainingError(epoch, b, e.what());
      }
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) throw TrainingError(epoch, b, "loss is not finite");
      tape.backward(loss);
      loss_sum += loss_value;

      const float lr = float(learning_rate_at(cfg, step++, total_steps, warmup));
      const float mom = float(cfg.momentum);
      for (std::size_t p = 0; p < params.size(); ++p) {
        const bool alpha = ParameterSet::is_alpha(params[p].name);
        if (alpha && !cfg.train_alpha) continue;
        const Tensor* g = tape.grad(pass.params[p]);
        if (!g) continue;
        const float wd = params[p].name.ends_with(".weight") ? float(cfg.weight_decay) : 0.0f;
        auto& value = params[p].value;
        auto& vel = velocity[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
          const float grad = (*g)[i] + wd * value[i];
          if (!std::isfinite(grad)) throw TrainingError(epoch, b, "non-finite gradient for " + params[p].name);
          vel[i] = mom * vel[i] + grad;
          value[i] -= lr * vel[i];
        }
      }
      params.clamp_alpha_nonnegative();
    }

    // clean training accuracy with the end-of-epoch parameters
    std::size_t correct = 0;
    Rng eval_rng(derive_seed(cfg.seed, std::size_t(epoch), 0, Purpose::kTrainEval));
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = lo; i < std::min(n, lo + cfg.batch_size); ++i) idx.push_back(i);
      const auto pred = argmax_rows(forward(model.graph, data.batch(idx), params, eval_rng));
      for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == data.labels[idx[k]];
    }
    result.log.epochs.push_back(
        {epoch, double(correct) / double(n), batches ? loss_sum / double(batches) : 0.0, params.mean_alpha()});
  }
  return result;
}

}  // namespace obfcheck
