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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "obfcheck/attacks.hpp"
#include "obfcheck/checkpoint.hpp"
#include "obfcheck/training.hpp"
#include "test_support.hpp"

using namespace obfcheck;

namespace {

Dataset blobs(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> values;
  Dataset d;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      const double center = c == 0 ? 0.3 : 0.7;
      for (int k = 0; k < 2; ++k) values.push_back(float(std::clamp(center + 0.08 * rng.normal(), 0.0, 1.0)));
      d.labels.push_back(c);
    }
  }
  d.inputs = Tensor({2 * per_class, 1, 1, 2}, std::move(values));
  d.class_count = 2;
  return d;
}

double logistic_regression_accuracy(const Dataset& train, const Dataset& test) {
  double w[2] = {0, 0}, b = 0;
  for (int it = 0; it < 2000; ++it) {
    double gw[2] = {0, 0}, gb = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const double z = w[0] * train.inputs[2 * i] + w[1] * train.inputs[2 * i + 1] + b;
      const double r = 1.0 / (1.0 + std::exp(-z)) - double(train.labels[i]);
      gw[0] += r * train.inputs[2 * i];
      gw[1] += r * train.inputs[2 * i + 1];
      gb += r;
    }
    const double n = double(train.size());
    w[0] -= 1.0 * gw[0] / n, w[1] -= 1.0 * gw[1] / n, b -= 1.0 * gb / n;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double z = w[0] * test.inputs[2 * i] + w[1] * test.inputs[2 * i + 1] + b;
    correct += (z > 0) == (test.labels[i] == 1);
  }
  return double(correct) / double(test.size());
}

double network_accuracy(const Model& m, const ParameterSet& params, const Dataset& data) {
  Rng rng(0);
  const auto pred = argmax_rows(forward(m.graph, data.inputs, params, rng));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += pred[i] == data.labels[i];
  return double(correct) / double(data.size());
}

struct Small {
  Model model;
  Dataset data;
};

Small small_problem(PniPlacement pni = PniPlacement::kNone) {
  SyntheticSpec s;
  s.classes = 3;
  s.per_class = 12;
  s.shape = {1, 4, 4};
  ModelSpec spec;
  spec.input_shape = s.shape;
  spec.classes = 3;
  spec.widths = {3};
  spec.pni.placement = pni;
  return {build_model(spec, 2), generate_synthetic(s).train};
}

TrainConfig short_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Train, BlobsAreLearned) {
  const Dataset train_set = blobs(100, 1), test = blobs(100, 2);
  ASSERT_GE(logistic_regression_accuracy(train_set, test), 0.95);

  ModelSpec spec;
  spec.arch = Architecture::kMlp;
  spec.input_shape = {1, 1, 2};
  spec.classes = 2;
  spec.widths = {8};
  const Model m = build_model(spec, 3);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  const auto result = train(m, train_set, cfg);
  EXPECT_GE(network_accuracy(m, result.params, test), 0.95);
  EXPECT_EQ(result.log.epochs.size(), 20u);
  EXPECT_GE(result.log.epochs.back().clean_accuracy, 0.95);
}

TEST(Train, BitwiseDeterministic) {
  const auto p = small_problem(PniPlacement::kWeight);
  TrainConfig cfg = short_config();
  cfg.adversarial = true;
  const auto a = train(p.model, p.data, cfg), b = train(p.model, p.data, cfg);
  EXPECT_EQ(a.params, b.params);
  cfg.seed = 6;
  EXPECT_NE(train(p.model, p.data, cfg).params, a.params);
}

TEST(Train, EpsilonIgnoredWithoutAdversarial) {
  const auto p = small_problem(PniPlacement::kActivation);
  TrainConfig a = short_config(), b = short_config();
  b.train_epsilon = 0.3;
  b.train_step_size = 0.1;
  EXPECT_EQ(train(p.model, p.data, a).params, train(p.model, p.data, b).params);
}

TEST(Train, ZeroEpsilonAdversarialIsStandard) {
  for (auto pni : {PniPlacement::kNone, PniPlacement::kWeight}) {
    const auto p = small_problem(pni);
    TrainConfig standard = short_config(), adv = short_config();
    adv.adversarial = true;
    adv.train_epsilon = 0.0;
    EXPECT_EQ(train(p.model, p.data, standard).params, train(p.model, p.data, adv).params);
  }
}

TEST(Train, CraftedBatchesAreFeasible) {
  const auto p = small_problem(PniPlacement::kWeight);
  TrainConfig cfg = short_config();
  cfg.adversarial = true;
  cfg.train_epsilon = 0.1;
  cfg.train_step_size = 0.125;
  std::size_t batches = 0;
  bool moved = false;
  train(p.model, p.data, cfg, [&](const Tensor& clean, const Tensor& crafted) {
    ++batches;
    EXPECT_LE(fixtures::linf(clean, crafted), 0.1 + 1e-9);
    EXPECT_TRUE(fixtures::in_unit_box(crafted));
    moved = moved || fixtures::linf(clean, crafted) > 0.05;
  });
  EXPECT_EQ(batches, 3u * 4u);  // 27 training examples, batch 8
  EXPECT_TRUE(moved);
}

TEST(Train, EpsilonRampBoundsEarlyBatches) {
  const auto p = small_problem();
  TrainConfig cfg = short_config();
  cfg.adversarial = true;
  cfg.train_epsilon = 0.1;
  cfg.train_step_size = 0.125;
  cfg.epsilon_ramp_epochs = 2;  // 8 ramp steps of 0.0125
  std::size_t step = 0;
  train(p.model, p.data, cfg, [&](const Tensor& clean, const Tensor& crafted) {
    ++step;
    const double radius = std::min(0.1, 0.1 * double(step) / 8.0);
    EXPECT_LE(fixtures::linf(clean, crafted), radius + 1e-6) << "step " << step;
  });
}

TEST(Train, AlphaStaysNonNegative) {
  const auto p = small_problem(PniPlacement::kActivation);
  TrainConfig cfg = short_config();
  cfg.learning_rate = 0.5;
  cfg.adversarial = true;
  const auto r = train(p.model, p.data, cfg);
  for (const auto& t : r.params) {
    if (!ParameterSet::is_alpha(t.name)) continue;
    for (float a : t.value) EXPECT_GE(a, 0.0f);
  }
  for (const auto& e : r.log.epochs) EXPECT_GE(e.mean_alpha, 0.0);
}

TEST(Train, FrozenAlphaIsUntouched) {
  const auto p = small_problem(PniPlacement::kWeight);
  TrainConfig cfg = short_config();
  cfg.train_alpha = false;
  const auto r = train(p.model, p.data, cfg);
  for (std::size_t i = 0; i < r.params.size(); ++i) {
    if (ParameterSet::is_alpha(r.params[i].name)) EXPECT_EQ(r.params[i].value, p.model.params[i].value);
  }
}

TEST(Train, DivergenceReportsEpochAndBatch) {
  const auto p = small_problem();
  TrainConfig cfg = short_config();
  cfg.learning_rate = 1e30;
  cfg.schedule = LrSchedule::kConstant;
  try {
    train(p.model, p.data, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 0);
    EXPECT_GE(e.batch(), 1u);
  }
}

TEST(Train, RejectsBadConfig) {
  const auto p = small_problem();
  TrainConfig cfg = short_config();
  cfg.batch_size = 0;
  EXPECT_THROW(train(p.model, p.data, cfg), ArgumentError);
  cfg = short_config();
  cfg.adversarial = true;
  cfg.train_step_size = 0.0;
  EXPECT_THROW(train(p.model, p.data, cfg), ArgumentError);
}

TEST(Train, StepDefaultsFollowEpsilon) {
  EXPECT_DOUBLE_EQ(TrainConfig::default_step_for(2.0 / 255), 2.5 / 255);
  EXPECT_DOUBLE_EQ(TrainConfig::default_step_for(4.0 / 255), 5.0 / 255);
}

TEST(Train, CosineSchedule) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 0, 110, 10), 0.01);
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 9, 110, 10), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 10, 110, 10), 0.1);
  EXPECT_NEAR(learning_rate_at(cfg, 60, 110, 10), 0.05, 1e-15);
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 0, 100), 0.1);
  EXPECT_NEAR(learning_rate_at(cfg, 50, 100), 0.05, 1e-15);
  EXPECT_NEAR(learning_rate_at(cfg, 100, 100), 0.0, 1e-15);
  cfg.schedule = LrSchedule::kConstant;
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 70, 100), 0.1);
}

TEST(Train, LogCsv) {
  TrainLog log;
  log.epochs.push_back({0, 0.5, 1.25, 0.2});
  EXPECT_EQ(log.to_csv(), "epoch,clean_acc,loss,mean_alpha\n0,0.5,1.25,0.2\n");
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("obfcheck_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  static Checkpoint sample() {
    ModelSpec spec;
    spec.pni.placement = PniPlacement::kActivation;
    spec.pni.granularity = PniGranularity::kChannelwise;
    Checkpoint c{spec, build_model(spec, 8).params, Json::object()};
    c.params[0].value[3] = -0.0f;
    c.metadata["train_epsilon"] = 8.0 / 255;
    return c;
  }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  const Checkpoint c = sample();
  save_checkpoint(c, dir_ / "m.ckpt");
  EXPECT_FALSE(std::filesystem::exists(dir_ / "m.ckpt.tmp"));
  const Checkpoint back = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(back.spec, c.spec);
  ASSERT_EQ(back.params.size(), c.params.size());
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    EXPECT_EQ(back.params[i].name, c.params[i].name);
    EXPECT_TRUE(bitwise_equal(back.params[i].value, c.params[i].value));
  }
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
}

TEST_F(CheckpointTest, TruncationIsAFormatError) {
  const std::string bytes = serialize_checkpoint(sample());
  for (std::size_t len : {std::size_t(0), std::size_t(5), std::size_t(12), std::size_t(40), bytes.size() / 2,
                          bytes.size() - 1}) {
    try {
      parse_checkpoint(std::string_view(bytes).substr(0, len));
      FAIL() << "accepted a " << len << "-byte prefix";
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), len);
    }
  }
  write_file_atomic(dir_ / "cut.ckpt", std::string_view(bytes).substr(0, bytes.size() - 4));
  EXPECT_THROW(load_checkpoint(dir_ / "cut.ckpt"), FormatError);
}

TEST_F(CheckpointTest, BadMagicAndTrailingBytes) {
  std::string bytes = serialize_checkpoint(sample());
  std::string bad = bytes;
  bad[3] = 'X';
  try {
    parse_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  EXPECT_THROW(parse_checkpoint(bytes + "junk"), FormatError);
}

TEST_F(CheckpointTest, ArchitectureMismatchNamesTheField) {
  const Checkpoint c = sample();
  save_checkpoint(c, dir_ / "m.ckpt");
  ModelSpec other = c.spec;
  other.arch = Architecture::kMlp;
  try {
    load_checkpoint(dir_ / "m.ckpt", other);
    FAIL();
  } catch (const MismatchError& e) {
    EXPECT_EQ(e.field(), "architecture");
  }
  other = c.spec;
  other.pni.granularity = PniGranularity::kLayerwise;
  try {
    load_checkpoint(dir_ / "m.ckpt", other);
    FAIL();
  } catch (const MismatchError& e) {
    EXPECT_EQ(e.field(), "pni.granularity");
  }
  EXPECT_NO_THROW(load_checkpoint(dir_ / "m.ckpt", c.spec));
}

TEST_F(CheckpointTest, TrainedModelSurvivesTheRoundTrip) {
  const auto p = small_problem(PniPlacement::kWeight);
  const auto r = train(p.model, p.data, short_config());
  save_checkpoint({p.model.graph.spec, r.params, Json::object()}, dir_ / "t.ckpt");
  const Model m = load_checkpoint(dir_ / "t.ckpt").model();
  Rng a(1), b(1);
  EXPECT_TRUE(bitwise_equal(forward(m.graph, p.data.inputs, m.params, a),
                            forward(p.model.graph, p.data.inputs, r.params, b)));
}

TEST(Checkpoint, Digest) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
