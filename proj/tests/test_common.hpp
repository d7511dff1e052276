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

#include <cmath>
#include <cstdint>
#include <limits>

#include "sfl/scalarfedlqr.hpp"

namespace sfl::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

inline Matrix random_spd(Eigen::Index n, Rng& rng) {
  const Matrix g = random_matrix(n, n, rng);
  return g * g.transpose() + Matrix::Identity(n, n);
}

// Random matrix rescaled to the given spectral radius.
inline Matrix random_stable(Eigen::Index n, double radius, Rng& rng) {
  const Matrix a = random_matrix(n, n, rng);
  return a * (radius / std::max(spectral_radius(a), 1e-12));
}

inline LtiSystem scalar_system(double a, double b) {
  return {Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b)};
}

inline CostMatrices scalar_cost(double q, double r) {
  return {Matrix::Constant(1, 1, q), Matrix::Constant(1, 1, r)};
}

inline PolicyGain scalar_gain(double k) { return {Matrix::Constant(1, 1, k)}; }

// Scalar LQR with sigma0 = 1: J(k) = (q + r k^2) / (1 - (a - b k)^2).
inline double scalar_cost_closed_form(double a, double b, double q, double r, double k) {
  const double c = a - b * k;
  return (q + r * k * k) / (1.0 - c * c);
}

// a = 0, b = 1: J = -r + (q + r) / (1 - k^2), so
// J'' = (q + r) (2 (1 - k^2)^-2 + 8 k^2 (1 - k^2)^-3), increasing in |k|.
inline double scalar_fixture_second_derivative(double q, double r, double k) {
  const double s = 1.0 - k * k;
  return (q + r) * (2.0 / (s * s) + 8.0 * k * k / (s * s * s));
}

// Central differences of exact_cost, entry by entry.
inline Matrix finite_difference_gradient(const LtiSystem& sys, const CostMatrices& cost,
                                         const PolicyGain& k, const Matrix& sigma0,
                                         double h = 1e-6) {
  Matrix g(k.k.rows(), k.k.cols());
  for (Eigen::Index i = 0; i < k.k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.k.cols(); ++j) {
      PolicyGain kp = k;
      PolicyGain km = k;
      kp.k(i, j) += h;
      km.k(i, j) -= h;
      g(i, j) = (exact_cost(sys, cost, kp, sigma0) - exact_cost(sys, cost, km, sigma0)) / (2.0 * h);
    }
  }
  return g;
}

// A random 3x3 system with a stabilizing gain near its optimum.
struct StabilizedInstance {
  LtiSystem sys;
  CostMatrices cost;
  PolicyGain k;
};

inline StabilizedInstance random_stabilized_instance(Eigen::Index n, Eigen::Index m, Rng& rng) {
  for (;;) {
    LtiSystem sys{random_matrix(n, n, rng) / std::sqrt(static_cast<double>(n)),
                  random_matrix(n, m, rng)};
    CostMatrices cost{random_spd(n, rng), random_spd(m, rng)};
    const PolicyGain kstar = optimal_gain(sys, cost);
    PolicyGain k{kstar.k + 0.1 * random_matrix(m, n, rng)};
    if (spectral_radius(closed_loop(sys, k)) < 0.95) return {sys, cost, k};
  }
}

// M identical copies of one system, for fixtures outside the nominal plant.
inline Fleet replicate(const LtiSystem& sys, const CostMatrices& cost, int m) {
  Fleet f;
  f.systems.assign(static_cast<std::size_t>(m), sys);
  f.cost = cost;
  f.nominal = sys;
  return f;
}

// Descent-inequality check on the scalar fixture a = 0, b = 1, q = 1, r = 1/2
// run through the protocol with M copies. L is certified: J'' at the largest
// |k| the trajectory visits bounds the curvature on every step segment.
struct FixtureDescentResult {
  int rounds = 0;
  int premise_rounds = 0;
  int violations = 0;
  double certified_l = 0.0;
  double worst_margin = 0.0;
};

inline FixtureDescentResult scalar_fixture_descent(OracleMode oracle, double eta, int rounds,
                                                   std::uint64_t seed, int m = 10) {
  const double q = 1.0, r = 0.5;
  const Fleet fleet = replicate(scalar_system(0.0, 1.0), scalar_cost(q, r), m);
  ExperimentConfig c;
  c.m = m;
  c.t_rounds = rounds;
  c.eta = eta;
  c.k0_scale = 0.5;
  c.initial_state_variance = 1.0;
  c.oracle_mode = oracle;
  c.n_s = 20;
  c.tau = 50;
  c.radius = 0.1;
  c.run_seed = seed;
  c.instability_policy = InstabilityPolicy::kCap;
  const RunTrace trace = run_scalar_fed_lqr(fleet, c);
  double kmax = std::abs(trace.initial_gain.k(0, 0));
  for (const auto& rec : trace.records) kmax = std::max(kmax, std::abs(rec.k_before.k(0, 0)));
  kmax = std::max(kmax, std::abs(trace.final_gain.k(0, 0)));
  FixtureDescentResult out;
  out.rounds = static_cast<int>(trace.records.size());
  if (!(kmax < 1.0)) {
    out.violations = -1;  // left the stabilizing interval: no certificate
    return out;
  }
  out.certified_l = scalar_fixture_second_derivative(q, r, kmax);
  out.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& rec : trace.records) {
    const DescentCheck chk = check_one_step_descent(rec, eta, out.certified_l);
    if (!chk.applicable || !chk.eta_within_bound) continue;
    ++out.premise_rounds;
    out.worst_margin = std::min(out.worst_margin, chk.margin);
    if (!chk.satisfied) ++out.violations;
  }
  return out;
}

// Frozen reference values at the nominal plant with sigma0 = I, from an
// independent truncated-series / value-iteration computation.
inline constexpr double kNominalCostK0 = 32.68814399293652;
inline constexpr double kNominalOptimalCost = 8.033311832829757;
inline constexpr double kNominalGapK0 = 3.069074458102049;
inline constexpr double kNominalSpectralRadius = 1.6384672553546875;

}  // namespace sfl::testing
