/* Copyright 2026 The metal Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.

   Seeded randomness with portable draw functions.

   Distribution sampling is hand-rolled on top of mt19937_64 instead of
   <random> distributions, whose outputs are implementation-defined; this
   keeps runs reproducible across standard libraries.

   Substreams are derived by hashing (seed, tag, index...) with splitmix64,
   so independent draws (support vs query of one episode, tasks of one run)
   never share a stream and stay stable when unrelated counts change.
*/
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace metal {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag,
                              std::uint64_t index) {
  return mix_seed(mix_seed(seed, tag), index);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform in [0, 1) with 53 bits of precision.
  double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + unit() * (hi - lo); }

  /// Standard normal via Box-Muller (one value per pair of uniforms).
  double normal() {
    double u1 = unit();
    while (u1 == 0.0) u1 = unit();
    double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace metal
