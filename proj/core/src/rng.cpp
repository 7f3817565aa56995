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

#include "obfcheck/rng.hpp"

#include <boost/random/normal_distribution.hpp>

namespace obfcheck {

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Reject the top partial block so every residue is equally likely.
  const std::uint64_t limit = max() - max() % n;
  for (;;) {
    const std::uint64_t r = (*this)();
    if (r < limit) return r % n;
  }
}

double Rng::normal() {
  boost::random::normal_distribution<double> standard(0.0, 1.0);
  return standard(*this);
}

}  // namespace obfcheck
