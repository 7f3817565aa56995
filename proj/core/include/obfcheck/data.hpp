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
#include <span>
#include <string>
#include <vector>

#include "obfcheck/tensor.hpp"

namespace obfcheck {

enum class Split { kTrain, kTest, kAll };

/// Labelled images with every pixel in [0, 1]. Immutable once built.
struct Dataset {
  Tensor inputs;  // [n, c, h, w]
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  Split split = Split::kAll;
  std::string source;

  std::size_t size() const noexcept { return labels.size(); }
  /// [c, h, w]
  Shape example_shape() const;
  /// Example i as a batch of one, [1, c, h, w].
  Tensor example(std::size_t i) const;
  /// The listed rows as one batch.
  Tensor batch(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
  /// Throws ArgumentError if an invariant (pixel range, label range, n >= 1) fails.
  void validate() const;
};

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  Shape shape = {1, 16, 16};
  double difficulty = 0.4;
  std::uint64_t seed = 7;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

/// Class prototypes uniform in [0.2, 0.8]^d; samples are clamp(prototype + N(0, (0.25 *
/// difficulty)^2)). The last ceil(0.2 * per_class) samples of each class form the test
/// split. Both splits are interleaved by class (sample j of every class, then j + 1).
/// Throws ArgumentError unless classes >= 2, per_class >= 2, 0 < difficulty <= 1.
SplitDataset generate_synthetic(const SyntheticSpec& spec);

/// Reads an IDX image file (magic 0x00000803, [n, h, w] unsigned bytes) and an IDX label
/// file (magic 0x00000801). Pixels are divided by 255. Throws FormatError with the byte
/// offset on bad magic, truncation, oversized dimensions or count mismatch.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes `data` (single channel) as an IDX pair, pixels quantized by round(v * 255).
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace obfcheck
