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

// Zeroth-order (one-point, sphere-smoothed) policy gradient estimation:
//
//   grad_hat J(K) = (1/n_s) sum_s (d / r^2) J_hat(K + U_s) U_s,   ||U_s||_F = r,
//
// where J_hat is the mean cost of finite-horizon rollouts under K + U_s.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sfl/errors.hpp"
#include "sfl/lqr.hpp"
#include "sfl/matrix.hpp"
#include "sfl/rng.hpp"

namespace sfl {

// Where J_hat comes from. kExactCost swaps simulated rollouts for the exact
// infinite-horizon cost so that the only randomness left is the perturbation.
enum class CostOracle { kRollout, kExactCost };

struct RolloutParams {
  int n_s = 5;                         // perturbations per estimate
  int tau = 15;                        // rollout length
  double smoothing_radius = 0.1;       // r
  int trajectories_per_perturbation = 1;
  double initial_state_variance = 1.0; // x0 ~ N(0, s I)
  double divergence_threshold = 1e8;   // on ||x_t||
  double cost_cap = 1e12;
  CostOracle oracle = CostOracle::kRollout;

  void validate() const {
    if (n_s < 1) throw ConfigError("RolloutParams: n_s must be >= 1");
    if (tau < 1) throw ConfigError("RolloutParams: tau must be >= 1");
    if (!(smoothing_radius > 0.0)) throw ConfigError("RolloutParams: smoothing_radius must be > 0");
    if (trajectories_per_perturbation < 1) {
      throw ConfigError("RolloutParams: trajectories_per_perturbation must be >= 1");
    }
    if (!(initial_state_variance > 0.0)) {
      throw ConfigError("RolloutParams: initial_state_variance must be > 0");
    }
    if (!(cost_cap > 0.0) || !(divergence_threshold > 0.0)) {
      throw ConfigError("RolloutParams: divergence guard must be positive");
    }
  }

  Matrix sigma0(Eigen::Index nx) const {
    return initial_state_variance * Matrix::Identity(nx, nx);
  }
};

struct ZoEstimate {
  Matrix gradient;                     // n_u x n_x
  int samples_used = 0;                // rollouts (or exact evaluations) consumed
  std::vector<double> perturbed_costs; // J_hat_s, s = 1..n_s
};

// Uniform on the Frobenius sphere of the given radius.
inline Matrix sample_perturbation(Eigen::Index nu, Eigen::Index nx, double radius, Rng& rng) {
  if (nu <= 0 || nx <= 0) throw DimensionError("sample_perturbation: empty shape");
  Matrix u(nu, nx);
  double norm = 0.0;
  do {
    for (Eigen::Index i = 0; i < nu; ++i) {
      for (Eigen::Index j = 0; j < nx; ++j) u(i, j) = rng.normal();
    }
    norm = u.norm();
  } while (norm == 0.0);
  return u * (radius / norm);
}

inline double rollout_cost(const LtiSystem& sys, const CostMatrices& cost, const PolicyGain& k,
                           const RolloutParams& params, Rng& rng) {
  const Matrix acl = closed_loop(sys, k);
  const Matrix stage = cost.q + k.k.transpose() * cost.r * k.k;  // x'(Q + K'RK)x
  const double sd = std::sqrt(params.initial_state_variance);
  Vector x(sys.nx());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = sd * rng.normal();

  double total = 0.0;
  for (int t = 0; t < params.tau; ++t) {
    if (!(x.norm() <= params.divergence_threshold)) return params.cost_cap;
    total += x.dot(stage * x);
    if (!(total < params.cost_cap)) return params.cost_cap;
    x = acl * x;
  }
  return total;
}

namespace detail {

inline double perturbed_cost(const LtiSystem& sys, const CostMatrices& cost,
                             const PolicyGain& k_hat, const RolloutParams& params, Rng& rng,
                             int& samples) {
  if (params.oracle == CostOracle::kExactCost) {
    ++samples;
    const double j = exact_cost_or_inf(sys, cost, k_hat, params.sigma0(sys.nx()));
    return std::isfinite(j) && j < params.cost_cap ? j : params.cost_cap;
  }
  double sum = 0.0;
  for (int i = 0; i < params.trajectories_per_perturbation; ++i) {
    sum += rollout_cost(sys, cost, k_hat, params, rng);
    ++samples;
  }
  return sum / params.trajectories_per_perturbation;
}

}  // namespace detail

inline ZoEstimate estimate_gradient(const LtiSystem& sys, const CostMatrices& cost,
                                    const PolicyGain& k, const RolloutParams& params, Rng& rng) {
  params.validate();
  check_compatible(sys, k);
  check_compatible(sys, cost);
  const Eigen::Index nu = sys.nu();
  const Eigen::Index nx = sys.nx();
  const double d = static_cast<double>(nu * nx);
  const double r = params.smoothing_radius;

  ZoEstimate est;
  est.gradient = Matrix::Zero(nu, nx);
  est.perturbed_costs.reserve(params.n_s);
  for (int s = 0; s < params.n_s; ++s) {
    const Matrix u = sample_perturbation(nu, nx, r, rng);
    const PolicyGain k_hat{k.k + u};
    const double j_hat = detail::perturbed_cost(sys, cost, k_hat, params, rng, est.samples_used);
    est.perturbed_costs.push_back(j_hat);
    est.gradient += j_hat * u;
  }
  est.gradient *= d / (r * r) / params.n_s;
  return est;
}

}  // namespace sfl
