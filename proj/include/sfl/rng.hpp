// Copyright 2026 The ScalarFedLQR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Portable random streams.
//
// Everything random in the simulator descends from SplitMix64 (Steele, Lea &
// Flood 2014; the 64-bit finalizer popularised by Vigna). It is fully
// specified by three constants, so a server written in any language
// regenerates exactly the bits a client drew. Reference outputs for seed
// 1234567: 6457827717110365317, 3203168211198807973, 9817491932198370423.
//
// Independent streams are keyed rather than split sequentially: the seed of a
// stream is a hash of (run seed, purpose, indices...), so the bits an agent
// consumes in round t never depend on how many draws other agents made or on
// the order worker threads were scheduled.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace sfl {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// SplitMix64 output finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  constexpr explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kGoldenGamma;
    return mix64(state_);
  }
  constexpr std::uint64_t operator()() noexcept { return next(); }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

 private:
  std::uint64_t state_;
};

// What a stream is used for. Values are part of the on-disk reproducibility
// contract; append, never renumber.
enum class StreamPurpose : std::uint64_t {
  kFleet = 1,
  kZoEstimate = 2,
  kDirection = 3,
  kSmoothness = 4,
  kBoundSweep = 5,
  kRun = 6,
  kTest = 99,
};

// hash(parent, i0, i1, ...) folded left with the SplitMix64 finalizer.
constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(parent + kGoldenGamma);
  for (std::uint64_t v : path) h = mix64(h ^ mix64(v + kGoldenGamma));
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, StreamPurpose purpose,
                                    std::initializer_list<std::uint64_t> path = {}) noexcept {
  std::uint64_t h = derive_seed(parent, {static_cast<std::uint64_t>(purpose)});
  for (std::uint64_t v : path) h = mix64(h ^ mix64(v + kGoldenGamma));
  return h;
}

// Uniform and Gaussian variates on top of SplitMix64. The transforms are
// written out here (53-bit mantissa fill, Box-Muller) instead of using
// <random> distributions, whose algorithms differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : gen_(seed) {}

  std::uint64_t next_u64() noexcept { return gen_.next(); }

  // [0, 1)
  double uniform() noexcept {
    return static_cast<double>(gen_.next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // (0, 1] keeps log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  SplitMix64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sfl
