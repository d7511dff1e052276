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

// Scalar uplink codec.
//
// A client projects its d-dimensional gradient estimate g onto a normalized
// Rademacher direction v (entries +-1/sqrt(d)) and ships r = <v, g> with the
// seed that generated v. The server regenerates v from the seed, accumulates
// sum_n r_n v_n and rescales by d / M, so that E[d v v'] g = g.
//
// Direction bits: SplitMix64 seeded with the message seed; entry i takes the
// most significant bit of the (i+1)-th output, 1 -> -1/sqrt(d), 0 -> +1/sqrt(d).

#include <algorithm>
#include <array>
#include <bit>
#include <compare>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "sfl/errors.hpp"
#include "sfl/matrix.hpp"
#include "sfl/rng.hpp"

namespace sfl {

struct Seed {
  std::uint64_t value = 0;
  friend constexpr auto operator<=>(const Seed&, const Seed&) = default;
};

struct ScalarMessage {
  double scalar = 0.0;
  Seed seed;
  std::uint32_t round = 0;
  std::uint32_t agent_id = 0;
};

// Seed schedule xi_{t,n}.
constexpr Seed direction_seed(std::uint64_t run_seed, std::uint64_t round, std::uint64_t agent) {
  return Seed{derive_seed(run_seed, StreamPurpose::kDirection, {round, agent})};
}

inline Vector rademacher_direction(Eigen::Index d, Seed seed) {
  if (d <= 0) throw DimensionError("rademacher_direction: d must be >= 1");
  const double mag = 1.0 / std::sqrt(static_cast<double>(d));
  SplitMix64 gen(seed.value);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = (gen.next() >> 63) ? -mag : mag;
  return v;
}

inline double encode(const Vector& gradient_flat, const Vector& direction) {
  if (gradient_flat.size() != direction.size()) {
    throw DimensionError("encode: gradient has length " + std::to_string(gradient_flat.size()) +
                         ", direction " + std::to_string(direction.size()));
  }
  return direction.dot(gradient_flat);
}

inline double encode(const Matrix& gradient, const Vector& direction) {
  return encode(flatten(gradient), direction);
}

inline Vector decode_accumulate(Vector acc, const ScalarMessage& message, Eigen::Index d) {
  if (acc.size() != d) {
    throw DimensionError("decode_accumulate: accumulator has length " +
                         std::to_string(acc.size()) + ", expected " + std::to_string(d));
  }
  acc += message.scalar * rademacher_direction(d, message.seed);
  return acc;
}

// (d / m) * acc, reshaped row-major to nu x nx.
inline Matrix aggregate(const Vector& acc, Eigen::Index m, Eigen::Index nu, Eigen::Index nx) {
  if (m < 1) throw PreconditionError("aggregate: need at least one message");
  if (acc.size() != nu * nx) throw DimensionError("aggregate: accumulator/shape mismatch");
  const double d = static_cast<double>(acc.size());
  return unflatten((d / static_cast<double>(m)) * acc, nu, nx);
}

// Server side of one round: reset, fold every message in ascending agent_id
// order (independent of arrival order), aggregate.
class ScalarDecoder {
 public:
  explicit ScalarDecoder(Eigen::Index nu, Eigen::Index nx) : nu_(nu), nx_(nx) { reset(); }

  void reset() {
    acc_ = Vector::Zero(nu_ * nx_);
    count_ = 0;
  }

  void fold(std::span<const ScalarMessage> messages) {
    std::vector<ScalarMessage> ordered(messages.begin(), messages.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const ScalarMessage& a, const ScalarMessage& b) {
                       return a.agent_id < b.agent_id;
                     });
    for (const auto& msg : ordered) {
      if (!std::isfinite(msg.scalar)) {
        throw PreconditionError("ScalarDecoder: non-finite scalar from agent " +
                                std::to_string(msg.agent_id));
      }
      acc_ = decode_accumulate(std::move(acc_), msg, nu_ * nx_);
      ++count_;
    }
  }

  const Vector& accumulator() const { return acc_; }
  Eigen::Index count() const { return count_; }

  Matrix aggregate() const { return sfl::aggregate(acc_, count_, nu_, nx_); }

 private:
  Eigen::Index nu_;
  Eigen::Index nx_;
  Vector acc_;
  Eigen::Index count_ = 0;
};

// Mean of d (v v') g over all 2^d sign patterns. Equals g; used as a
// deterministic stand-in for the random direction in tests.
inline Vector exhaustive_projection_average(const Vector& g) {
  const Eigen::Index d = g.size();
  if (d <= 0 || d > 20) throw DimensionError("exhaustive_projection_average: need 1 <= d <= 20");
  const double mag = 1.0 / std::sqrt(static_cast<double>(d));
  const std::uint64_t patterns = std::uint64_t{1} << d;
  Vector sum = Vector::Zero(d);
  Vector v(d);
  for (std::uint64_t bits = 0; bits < patterns; ++bits) {
    for (Eigen::Index i = 0; i < d; ++i) v(i) = ((bits >> i) & 1U) ? -mag : mag;
    sum += (static_cast<double>(d) * v.dot(g)) * v;
  }
  return sum / static_cast<double>(patterns);
}

// Log record layout, little-endian: u32 round | u32 agent_id | u64 seed | f64 scalar.
inline constexpr std::size_t kScalarMessageBytes = 24;

namespace detail {
template <typename T>
void put_le(std::uint8_t* out, T value) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  std::memcpy(out, raw, sizeof(T));
}
template <typename T>
T get_le(const std::uint8_t* in) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}
}  // namespace detail

inline std::array<std::uint8_t, kScalarMessageBytes> serialize(const ScalarMessage& msg) {
  std::array<std::uint8_t, kScalarMessageBytes> out{};
  detail::put_le(out.data(), msg.round);
  detail::put_le(out.data() + 4, msg.agent_id);
  detail::put_le(out.data() + 8, msg.seed.value);
  detail::put_le(out.data() + 16, msg.scalar);
  return out;
}

inline ScalarMessage deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kScalarMessageBytes) {
    throw DimensionError("deserialize: ScalarMessage record must be 24 bytes");
  }
  ScalarMessage msg;
  msg.round = detail::get_le<std::uint32_t>(bytes.data());
  msg.agent_id = detail::get_le<std::uint32_t>(bytes.data() + 4);
  msg.seed.value = detail::get_le<std::uint64_t>(bytes.data() + 8);
  msg.scalar = detail::get_le<double>(bytes.data() + 16);
  return msg;
}

}  // namespace sfl
