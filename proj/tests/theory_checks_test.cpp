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


#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_common.hpp"

namespace sfl {
namespace {

using testing::scalar_cost;
using testing::scalar_system;

TEST(Stepsizes, Formulas) {
  EXPECT_DOUBLE_EQ(max_stepsize(0.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(optimal_stepsize(0.2, 1.0), 0.8 / 1.44);
  EXPECT_DOUBLE_EQ(contraction_factor(0.0, 1.0, 4.0), 0.75);
  EXPECT_NEAR(contraction_factor(1.0 - 1e-9, 1.0, 1.0), 1.0, 1e-15);
}

RoundRecord synthetic_record(double j_before, double j_after, double g, double beta) {
  RoundRecord r;
  r.cost_before = j_before;
  r.cost_avg = j_after;
  r.grad_norm = g;
  r.beta_t = beta;
  return r;
}

TEST(Descent, ZeroStepTrivial) {
  const auto c = check_one_step_descent(synthetic_record(2.0, 2.0, 1.0, 0.5), 0.0, 10.0);
  EXPECT_TRUE(c.applicable);
  EXPECT_TRUE(c.satisfied);
  EXPECT_DOUBLE_EQ(c.rhs, 2.0);
}

TEST(Descent, InapplicableWhenBetaAtLeastOne) {
  const auto c = check_one_step_descent(synthetic_record(2.0, 3.0, 1.0, 1.2), 0.1, 10.0);
  EXPECT_FALSE(c.applicable);
  EXPECT_FALSE(c.satisfied);
}

TEST(Descent, ExactGradientOnScalarFixture) {
  // beta = 0, eta = 1/L with L = sup J'' on the sublevel interval: the
  // predicted decrease is at least eta ||g||^2 / 2.
  const double q = 1.0, r = 0.5, k = 0.4;
  const double l = testing::scalar_fixture_second_derivative(q, r, k);
  const double g = exact_policy_gradient(scalar_system(0, 1), scalar_cost(q, r),
                                         testing::scalar_gain(k), Matrix::Ones(1, 1))(0, 0);
  const double eta = 1.0 / l;
  const double j0 = testing::scalar_cost_closed_form(0, 1, q, r, k);
  const double j1 = testing::scalar_cost_closed_form(0, 1, q, r, k - eta * g);
  const auto c = check_one_step_descent(synthetic_record(j0, j1, std::abs(g), 0.0), eta, l);
  EXPECT_TRUE(c.satisfied);
  EXPECT_LE(j1, j0 - 0.5 * eta * g * g);
  EXPECT_NEAR(j0 - c.rhs, 0.5 * eta * g * g, 1e-14);
}

TEST(Descent, ScalarFixtureRolloutRuns) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto res = testing::scalar_fixture_descent(OracleMode::kRollout, 0.005, 300, seed);
    ASSERT_GE(res.violations, 0) << "left stabilizing interval";
    EXPECT_GT(res.premise_rounds, 0);
    EXPECT_EQ(res.violations, 0) << "worst margin " << res.worst_margin;
  }
}

TEST(Smoothness, ScalarFixtureWithinCertifiedBounds) {
  const double q = 1.0, r = 0.5, k0 = 0.5;
  const Fleet fleet = testing::replicate(scalar_system(0, 1), scalar_cost(q, r), 3);
  Rng rng(5);
  SmoothnessOptions opts;
  opts.sigma0 = Matrix::Ones(1, 1);
  const auto est = estimate_smoothness(fleet, testing::scalar_gain(k0), 200, 0.1, rng, opts);
  // Curvature ranges over [J''(0), J''(k0)] on the sublevel interval |k| <= k0.
  EXPECT_LE(est.l_hat, testing::scalar_fixture_second_derivative(q, r, k0) * (1 + 1e-6));
  EXPECT_GE(est.l_hat, testing::scalar_fixture_second_derivative(q, r, 0.0) * (1 - 1e-6));
  EXPECT_GT(est.mu_hat, 0.0);
  EXPECT_LE(est.mu_hat, est.l_hat);
  EXPECT_NEAR(est.j_star, q, 1e-12);
  EXPECT_NEAR(est.k_star.k(0, 0), 0.0, 1e-6);
}

TEST(Smoothness, NominalFleetReproducible) {
  ExperimentConfig c;
  const Fleet fleet = fleet_for_run(c, 0.0, 0.0, 0);
  SmoothnessOptions opts;
  opts.sigma0 = c.rollout_params().sigma0(3);
  std::vector<SmoothnessEstimate> ests;
  for (std::uint64_t s = 0; s < 2; ++s) {
    Rng rng(derive_seed(s, StreamPurpose::kSmoothness, {}));
    ests.push_back(estimate_smoothness(fleet, initial_gain(fleet, c), 500, 0.05, rng, opts));
  }
  for (const auto& e : ests) {
    EXPECT_TRUE(std::isfinite(e.l_hat) && e.l_hat > 0.0);
    EXPECT_TRUE(std::isfinite(e.mu_hat) && e.mu_hat > 0.0);
  }
  EXPECT_NEAR(ests[1].l_hat, ests[0].l_hat, 0.1 * ests[0].l_hat);
  EXPECT_NEAR(ests[1].mu_hat, ests[0].mu_hat, 0.1 * ests[0].mu_hat);
  // Homogeneous fleet: the minimizer is the Riccati gain.
  const auto nom = nominal_system();
  const double jstar = exact_cost(nom.system, nom.cost, optimal_gain(nom.system, nom.cost), opts.sigma0);
  EXPECT_NEAR(ests[0].j_star, jstar, 1e-12 * jstar);
}

TEST(Smoothness, RejectsUnstableReference) {
  const Fleet fleet = testing::replicate(scalar_system(0, 1), scalar_cost(1, 1), 2);
  Rng rng(1);
  EXPECT_THROW(estimate_smoothness(fleet, testing::scalar_gain(1.5), 10, 0.1, rng), PreconditionError);
}

TEST(BoundSweep, HomogeneousShape) {
  const std::vector<int> ds{4};
  const std::vector<int> ms{16};
  SweepOptions opts;
  opts.include_heterogeneous = false;
  const auto rep = projection_bound_sweep(ds, ms, 0.1, 100, 1, opts);
  ASSERT_EQ(rep.cells.size(), 1u);
  const auto& c = rep.cells[0];
  EXPECT_EQ(c.sigma, 0.0);
  EXPECT_EQ(c.b, 0.0);
  const double lg = 3.0 * std::log(2.0 * 4.0 / 0.1) / 16.0;
  EXPECT_NEAR(c.shape, (std::sqrt(lg) + lg) * c.g_norm, 1e-14);
  EXPECT_GT(c.quantile, 0.0);
  EXPECT_TRUE(std::isfinite(c.quantile));
  EXPECT_GE(c.quantile, c.median);
}

TEST(BoundSweep, HeterogeneousCellsCarrySpread) {
  const std::vector<int> ds{9};
  const std::vector<int> ms{8, 64};
  const auto rep = projection_bound_sweep(ds, ms, 0.05, 100, 2);
  ASSERT_EQ(rep.cells.size(), 4u);
  for (const auto& c : rep.cells) {
    if (c.heterogeneous) {
      EXPECT_NEAR(c.sigma, 0.5, 1e-12);
    }
    EXPECT_NEAR(c.g_norm, 1.0, 1e-12);
  }
  EXPECT_EQ(rep.slopes.size(), 2u);
}

RunTrace synthetic_trace(const std::vector<double>& grad_norms, double zo_norm) {
  RunTrace t;
  t.config.m = 10;
  t.initial_gain = PolicyGain{Matrix::Zero(3, 3)};
  for (std::size_t i = 0; i < grad_norms.size(); ++i) {
    RoundRecord r;
    r.round = static_cast<int>(i);
    r.grad_norm = grad_norms[i];
    r.zo_norm = zo_norm;
    r.beta_t = 0.1;
    t.records.push_back(r);
  }
  return t;
}

TEST(StabilityCondition, HomogeneousReducesToShape) {
  const RunTrace t = synthetic_trace({1.0, 2.0, 4.0}, 1.0);
  const auto rep = check_stability_condition(t, 0.0, 0.05, 1.0, 10.0);
  const double lg = 8.0 * std::log(2.0 * 9.0 * 3.0 / 0.05) / 10.0;
  EXPECT_NEAR(rep.zeta[0], std::sqrt(lg) + lg, 1e-12);
  EXPECT_NEAR(rep.required_beta, std::sqrt(lg) + lg, 1e-12);
}

TEST(StabilityCondition, UnsatisfiableAndDegenerate) {
  const RunTrace t = synthetic_trace({1.0, 2.0}, 0.0);
  const auto big = check_stability_condition(t, 5.0, 0.05, 0.0, 10.0);
  EXPECT_FALSE(big.satisfiable);
  const auto ok = check_stability_condition(t, 0.5, 0.05, 0.0, 10.0);
  EXPECT_TRUE(ok.satisfiable);
  EXPECT_DOUBLE_EQ(ok.required_beta, 0.5);
  EXPECT_DOUBLE_EQ(ok.eta_max, max_stepsize(0.5, 10.0));
  const auto deg = check_stability_condition(synthetic_trace({1.0, 0.0}, 0.0), 0.1, 0.05, 1.0, 10.0);
  EXPECT_TRUE(deg.degenerate);
  EXPECT_FALSE(deg.satisfiable);
}

TEST(StabilityCondition, ReferenceRunIsConservative) {
  // Rollout run at the reference settings: the uniform beta implied by the
  // measured ZO error and the fitted projection constant dominates every
  // realised beta_t.
  ExperimentConfig c;
  c.t_rounds = 300;
  const Fleet fleet = fleet_for_run(c, 0.5, 0.5, 0);
  const RunTrace t = run_scalar_fed_lqr(fleet, c);
  const std::vector<int> ds{9};
  const std::vector<int> ms{10};
  const auto sweep = projection_bound_sweep(ds, ms, 0.05, 400, 3);
  double eps = 0.0;
  for (const auto& r : t.records) eps = std::max(eps, r.e_zo_norm);
  const auto rep = check_stability_condition(t, eps, 0.05, sweep.c_hat, 1.0);
  EXPECT_TRUE(rep.conservative) << rep.realized_max_beta << " vs " << rep.required_beta;
}

TEST(LinearRate, VacuousNearBetaOne) {
  SmoothnessEstimate est;
  est.l_hat = 1.0;
  est.mu_hat = 0.5;
  const RunTrace t = synthetic_trace({1.0}, 1.0);
  EXPECT_TRUE(check_linear_rate(t, est, 1.0).vacuous);
  EXPECT_FALSE(check_linear_rate(t, est, 0.2).vacuous);
}

TEST(LinearRate, ContractionCountAndFloor) {
  SmoothnessEstimate est;
  est.l_hat = 1.0;
  est.mu_hat = 0.5;
  est.j_star = 1.0;
  RunTrace t;
  double gap = 1.0;
  for (int i = 0; i < 30; ++i) {
    RoundRecord r;
    r.round = i;
    r.cost_before = 1.0 + gap;
    gap *= (i == 20 ? 1.0 : 0.5);
    r.cost_avg = 1.0 + gap;
    t.records.push_back(r);
  }
  t.records.back().cost_avg = 1.0;  // at the floor
  const auto rep = check_linear_rate(t, est, 0.0, 10);
  EXPECT_DOUBLE_EQ(rep.rho_hat, 0.5);
  EXPECT_EQ(rep.rounds_excluded, 1);
  EXPECT_EQ(rep.rounds_checked, 19);
  EXPECT_EQ(rep.rounds_satisfied, 18);  // round 20 does not contract
  EXPECT_LT(rep.empirical_rate, 0.6);
}

}  // namespace
}  // namespace sfl
