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

#include <filesystem>
#include <fstream>

#include "obfcheck/checkpoint.hpp"
#include "obfcheck/data.hpp"
#include "test_support.hpp"

using namespace obfcheck;
namespace fs = std::filesystem;

namespace {

std::string be32(std::uint32_t v) {
  return {char(v >> 24), char((v >> 16) & 0xff), char((v >> 8) & 0xff), char(v & 0xff)};
}

class IdxTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("obfcheck_idx_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path put(const std::string& name, const std::string& bytes) {
    std::ofstream(dir_ / name, std::ios::binary) << bytes;
    return dir_ / name;
  }
  std::string images_2x2() {
    return be32(0x803) + be32(2) + be32(2) + be32(2) + std::string("\x00\xff\x00\xff\xff\xff\x00\x00", 8);
  }
  std::string labels_2() { return be32(0x801) + be32(2) + std::string("\x01\x00", 2); }
  fs::path dir_;
};

}  // namespace

TEST_F(IdxTest, EndpointScaling) {
  const Dataset d = load_idx(put("i", images_2x2()), put("l", labels_2()));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.example_shape(), Shape({1, 2, 2}));
  EXPECT_EQ(d.inputs, Tensor({2, 1, 2, 2}, {0, 1, 0, 1, 1, 1, 0, 0}));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(d.class_count, 2u);
}

TEST_F(IdxTest, WrongLabelMagic) {
  try {
    load_idx(put("i", images_2x2()), put("l", be32(0x803) + be32(2) + std::string("\x01\x00", 2)));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST_F(IdxTest, TruncationAndCountMismatch) {
  const std::string img = images_2x2();
  EXPECT_THROW(load_idx(put("i", img.substr(0, img.size() - 1)), put("l", labels_2())), FormatError);
  EXPECT_THROW(load_idx(put("i", img.substr(0, 10)), put("l", labels_2())), FormatError);
  EXPECT_THROW(load_idx(put("i", img), put("l", be32(0x801) + be32(3) + std::string("\x01\x00\x01", 3))),
               FormatError);
}

TEST_F(IdxTest, OversizedDimensionsRejectedBeforeReading) {
  const std::string huge = be32(0x803) + be32(0xffffffffu) + be32(0xffffffffu) + be32(0xffffffffu);
  EXPECT_THROW(load_idx(put("i", huge), put("l", labels_2())), FormatError);
}

TEST_F(IdxTest, RoundTripIsByteExact) {
  SyntheticSpec s;
  s.classes = 3;
  s.per_class = 5;
  s.shape = {1, 6, 6};
  Dataset d = generate_synthetic(s).train;
  for (auto& v : d.inputs) v = float(std::round(v * 255.0f) / 255.0);
  write_idx(d, dir_ / "a.idx", dir_ / "a.lbl");
  const Dataset back = load_idx(dir_ / "a.idx", dir_ / "a.lbl");
  EXPECT_EQ(back.labels, d.labels);
  write_idx(back, dir_ / "b.idx", dir_ / "b.lbl");
  EXPECT_EQ(read_file(dir_ / "a.idx"), read_file(dir_ / "b.idx"));
  EXPECT_EQ(read_file(dir_ / "a.lbl"), read_file(dir_ / "b.lbl"));
  EXPECT_LE(max_abs_diff(back.inputs, d.inputs), 1e-7);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec s;
  s.per_class = 20;
  const auto a = generate_synthetic(s), b = generate_synthetic(s);
  EXPECT_TRUE(bitwise_equal(a.train.inputs, b.train.inputs));
  EXPECT_EQ(a.test.labels, b.test.labels);
  s.seed = 8;
  EXPECT_FALSE(bitwise_equal(generate_synthetic(s).train.inputs, a.train.inputs));
}

TEST(Synthetic, StratifiedSplitAndRange) {
  for (std::size_t m : {2, 7, 10, 13}) {
    SyntheticSpec s;
    s.classes = 4;
    s.per_class = m;
    s.shape = {1, 2, 2};
    const auto d = generate_synthetic(s);
    const std::size_t expected_test = std::size_t(std::ceil(0.2 * double(m)));
    std::vector<std::size_t> test_counts(4, 0), train_counts(4, 0);
    for (auto l : d.test.labels) ++test_counts[l];
    for (auto l : d.train.labels) ++train_counts[l];
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_LE(std::abs(double(test_counts[c]) - double(expected_test)), 1.0);
      EXPECT_EQ(test_counts[c] + train_counts[c], m);
    }
    EXPECT_TRUE(fixtures::in_unit_box(d.train.inputs));
    EXPECT_TRUE(fixtures::in_unit_box(d.test.inputs));
    EXPECT_EQ(d.train.split, Split::kTrain);
    EXPECT_EQ(d.test.split, Split::kTest);
  }
}

TEST(Synthetic, RejectsBadArguments) {
  SyntheticSpec s;
  s.classes = 1;
  EXPECT_THROW(generate_synthetic(s), ArgumentError);
  s = SyntheticSpec{};
  s.difficulty = 0.0;
  EXPECT_THROW(generate_synthetic(s), ArgumentError);
  s = SyntheticSpec{};
  s.per_class = 1;
  EXPECT_THROW(generate_synthetic(s), ArgumentError);
}

TEST(Synthetic, TinyDifficultyIsTriviallySeparable) {
  SyntheticSpec s;
  s.difficulty = 1e-6;
  s.per_class = 20;
  const auto d = generate_synthetic(s);
  EXPECT_EQ(fixtures::nearest_mean_accuracy(d.train, d.test), 1.0);
}

TEST(Synthetic, DefaultDatasetPassesTheNearestPrototypeOracle) {
  const auto d = generate_synthetic(SyntheticSpec{});
  EXPECT_EQ(d.train.size(), 1600u);
  EXPECT_EQ(d.test.size(), 400u);
  EXPECT_GE(fixtures::nearest_mean_accuracy(d.train, d.test), 0.90);
}

TEST(Dataset, BatchesAndValidation) {
  SyntheticSpec s;
  s.classes = 2;
  s.per_class = 5;
  s.shape = {2, 2, 2};
  const Dataset d = generate_synthetic(s).train;
  const std::size_t idx[] = {3, 0};
  const Tensor b = d.batch(idx);
  EXPECT_EQ(b.shape(), Shape({2, 2, 2, 2}));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(b[k], d.inputs[3 * 8 + k]);
  EXPECT_EQ(d.head(3).size(), 3u);
  Dataset bad = d;
  bad.inputs[0] = 1.5f;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = d;
  bad.labels[0] = 7;
  EXPECT_THROW(bad.validate(), ArgumentError);
}
