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

#include "obfcheck/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include "obfcheck/rng.hpp"

namespace obfcheck {

Shape Dataset::example_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

Tensor Dataset::example(std::size_t i) const {
  const std::size_t stride = inputs.size() / inputs.dim(0);
  Shape shape = inputs.shape();
  shape[0] = 1;
  const float* p = inputs.begin() + i * stride;
  return Tensor(std::move(shape), std::vector<float>(p, p + stride));
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t stride = inputs.size() / inputs.dim(0);
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  std::vector<float> data;
  data.reserve(indices.size() * stride);
  for (auto i : indices) {
    const float* p = inputs.begin() + i * stride;
    data.insert(data.end(), p, p + stride);
  }
  return Tensor(std::move(shape), std::move(data));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.inputs = batch(indices);
  d.labels.reserve(indices.size());
  for (auto i : indices) d.labels.push_back(labels.at(i));
  d.class_count = class_count;
  d.split = split;
  d.source = source;
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

void Dataset::validate() const {
  if (labels.empty()) throw ArgumentError("dataset is empty");
  if (inputs.rank() != 4 || inputs.dim(0) != labels.size()) {
    throw ArgumentError("dataset inputs " + to_string(inputs.shape()) + " do not match " +
                        std::to_string(labels.size()) + " labels");
  }
  for (auto l : labels) {
    if (l >= class_count) throw ArgumentError("label " + std::to_string(l) + " >= class count");
  }
  for (auto v : inputs) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("input value outside [0, 1]");
  }
}

SplitDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ArgumentError("synthetic data needs at least 2 classes");
  if (spec.per_class < 2) throw ArgumentError("synthetic data needs at least 2 samples per class");
  if (!(spec.difficulty > 0.0 && spec.difficulty <= 1.0)) throw ArgumentError("difficulty must be in (0, 1]");
  if (spec.shape.size() != 3 || element_count(spec.shape) == 0) throw ArgumentError("shape must be (c, h, w)");

  const std::size_t d = element_count(spec.shape);
  Rng rng(derive_seed(spec.seed, 0, 0, Purpose::kData));
  std::vector<float> prototypes(spec.classes * d);
  for (auto& p : prototypes) p = float(rng.uniform(0.2, 0.8));

  const double noise = 0.25 * spec.difficulty;
  // samples[c][j] generated class-major so adding classes never perturbs earlier ones
  std::vector<float> samples(spec.classes * spec.per_class * d);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < spec.per_class; ++j) {
      float* out = samples.data() + (c * spec.per_class + j) * d;
      const float* proto = prototypes.data() + c * d;
      for (std::size_t i = 0; i < d; ++i) {
        const double v = double(proto[i]) + noise * rng.normal();
        out[i] = float(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  const std::size_t test_per_class = (spec.per_class + 4) / 5;  // ceil(0.2 m)
  const std::size_t train_per_class = spec.per_class - test_per_class;
  auto assemble = [&](std::size_t first, std::size_t count, Split split) {
    Dataset ds;
    Shape shape = {spec.classes * count, spec.shape[0], spec.shape[1], spec.shape[2]};
    std::vector<float> data;
    data.reserve(spec.classes * count * d);
    for (std::size_t j = first; j < first + count; ++j) {
      for (std::size_t c = 0; c < spec.classes; ++c) {
        const float* src = samples.data() + (c * spec.per_class + j) * d;
        data.insert(data.end(), src, src + d);
        ds.labels.push_back(c);
      }
    }
    ds.inputs = Tensor(std::move(shape), std::move(data));
    ds.class_count = spec.classes;
    ds.split = split;
    ds.source = "synthetic:seed=" + std::to_string(spec.seed);
    return ds;
  };
  return {assemble(0, train_per_class, Split::kTrain), assemble(train_per_class, test_per_class, Split::kTest)};
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError(0, "cannot open " + path.string());
    in_.seekg(0, std::ios::end);
    size_ = std::uint64_t(in_.tellg());
    in_.seekg(0);
  }

  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4, what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
  }

  void read(unsigned char* dst, std::uint64_t n, const char* what) {
    if (size_ - offset_ < n) {
      throw FormatError(size_, path_.filename().string() + ": truncated " + what + " (needs " + std::to_string(n) +
                                   " bytes at offset " + std::to_string(offset_) + ")");
    }
    in_.read(reinterpret_cast<char*>(dst), std::streamsize(n));
    offset_ += n;
  }

  std::uint64_t offset() const { return offset_; }
  std::uint64_t remaining() const { return size_ - offset_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  std::uint64_t size_ = 0;
  std::uint64_t offset_ = 0;
};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxReader img(images);
  if (const auto magic = img.u32("magic"); magic != kImageMagic) {
    throw FormatError(0, images.filename().string() + ": expected image magic 0x00000803, got " + std::to_string(magic));
  }
  const std::uint64_t n = img.u32("image count");
  const std::uint64_t h = img.u32("row count");
  const std::uint64_t w = img.u32("column count");
  if (n == 0 || h == 0 || w == 0) throw FormatError(4, "zero image dimension");
  const std::uint64_t per_image = h * w;  // each factor < 2^32, so no overflow
  if (per_image > std::numeric_limits<std::uint64_t>::max() / n || n * per_image > img.remaining()) {
    throw FormatError(img.offset(), images.filename().string() + ": declared payload " + std::to_string(n) + "x" +
                                        std::to_string(h) + "x" + std::to_string(w) + " exceeds the " +
                                        std::to_string(img.remaining()) + " bytes present");
  }

  IdxReader lab(labels);
  if (const auto magic = lab.u32("magic"); magic != kLabelMagic) {
    throw FormatError(0, labels.filename().string() + ": expected label magic 0x00000801, got " + std::to_string(magic));
  }
  const std::uint64_t nl = lab.u32("label count");
  if (nl != n) {
    throw FormatError(4, "label count " + std::to_string(nl) + " does not match image count " + std::to_string(n));
  }

  std::vector<unsigned char> pixels(n * per_image);
  img.read(pixels.data(), pixels.size(), "pixel data");
  std::vector<unsigned char> raw_labels(n);
  lab.read(raw_labels.data(), n, "label data");

  Dataset ds;
  std::vector<float> data(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) data[i] = float(pixels[i]) / 255.0f;
  ds.inputs = Tensor({n, 1, h, w}, std::move(data));
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  std::size_t max_label = 0;
  for (auto l : ds.labels) max_label = std::max(max_label, l);
  ds.class_count = max_label + 1;
  ds.split = Split::kAll;
  ds.source = "idx:" + images.string();
  return ds;
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (data.inputs.rank() != 4 || data.inputs.dim(1) != 1) throw ArgumentError("IDX export needs [n, 1, h, w] inputs");
  for (auto l : data.labels) {
    if (l > 255) throw ArgumentError("IDX labels must fit in one byte");
  }
  std::ofstream img(images, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw FormatError(0, "cannot open IDX output files for writing");
  put_u32(img, kImageMagic);
  put_u32(img, std::uint32_t(data.inputs.dim(0)));
  put_u32(img, std::uint32_t(data.inputs.dim(2)));
  put_u32(img, std::uint32_t(data.inputs.dim(3)));
  std::vector<unsigned char> bytes(data.inputs.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(data.inputs[i], 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(std::lround(double(v) * 255.0));
  }
  img.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  put_u32(lab, kLabelMagic);
  put_u32(lab, std::uint32_t(data.labels.size()));
  for (auto l : data.labels) lab.put(static_cast<char>(l));
}

}  // namespace obfcheck
