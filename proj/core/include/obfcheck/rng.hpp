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
#include <limits>

namespace obfcheck {

/// SplitMix64 output finalizer (Stafford mix13).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

/// Stream tags for seed derivation. Values are part of the reproducibility contract.
enum class Purpose : std::uint64_t {
  kAttack = 0x61747461636b0001ULL,
  kVerdict = 0x7665726469637401ULL,
  kRandomSample = 0x72616e646f6d0001ULL,
  kInit = 0x696e697400000001ULL,
  kShuffle = 0x73687566666c6501ULL,
  kCraft = 0x6372616674000001ULL,
  kUpdate = 0x7570646174650001ULL,
  kTrainEval = 0x6576616c00000001ULL,
  kData = 0x6461746100000001ULL,
};

/// Order-independent seed for one logical stream:
///   h0 = mix64(master ^ kGoldenGamma)
///   h1 = mix64(h0 ^ mix64(index + 1 * gamma))
///   h2 = mix64(h1 ^ mix64(sub_index + 2 * gamma))
///   h3 = mix64(h2 ^ mix64(tag + 3 * gamma))
/// with gamma = kGoldenGamma and wrapping 64-bit arithmetic.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t sub_index,
                                    Purpose tag) noexcept {
  std::uint64_t h = mix64(master ^ kGoldenGamma);
  h = mix64(h ^ mix64(index + 1 * kGoldenGamma));
  h = mix64(h ^ mix64(sub_index + 2 * kGoldenGamma));
  h = mix64(h ^ mix64(static_cast<std::uint64_t>(tag) + 3 * kGoldenGamma));
  return h;
}

/// Counter-based SplitMix64 stream. The n-th output is mix64(seed + n * gamma), so
/// a stream position is fully described by (seed, counter).
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(seed_ + counter_ * kGoldenGamma);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal draw (ziggurat).
  double normal();

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace obfcheck
