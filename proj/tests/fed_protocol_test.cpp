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

#include <sstream>

#include "test_common.hpp"

namespace sfl {
namespace {

ExperimentConfig small_config(int m, int rounds) {
  ExperimentConfig c;
  c.m = m;
  c.t_rounds = rounds;
  c.mc_runs = 1;
  return c;
}

Fleet nominal_fleet(int m, double eps, std::uint64_t seed = 1) {
  const auto nom = nominal_system();
  Rng rng(seed);
  return generate_fleet(m, eps, eps, nom.system, nom.cost, default_masks(3, 3), nom.k0, rng);
}

std::string csv_of(const RunTrace& t) {
  std::ostringstream os;
  write_trace_csv(t, os);
  return os.str();
}

TEST(UplinkBits, Accounting) {
  EXPECT_EQ(uplink_bits(Algorithm::kScalar, 10, 9, BitPolicy::kScalarsOnly), 320u);
  EXPECT_EQ(uplink_bits(Algorithm::kBaseline, 10, 9, BitPolicy::kScalarsOnly), 2880u);
  EXPECT_EQ(uplink_bits(Algorithm::kScalar, 10, 9, BitPolicy::kScalarsPlusSeeds), 640u);
  EXPECT_EQ(uplink_bits(Algorithm::kBaseline, 10, 9, BitPolicy::kScalarsPlusSeeds), 2880u);
}

TEST(Protocol, ZeroStepsizeIsNoOp) {
  const Fleet f = nominal_fleet(4, 0.5);
  ExperimentConfig c = small_config(4, 5);
  c.eta = 0.0;
  for (Algorithm a : {Algorithm::kScalar, Algorithm::kBaseline}) {
    const RunTrace t = run_federated(f, c, a);
    EXPECT_EQ(t.final_gain.k, t.initial_gain.k);
    for (const auto& r : t.records) EXPECT_EQ(r.cost_avg, t.initial_cost_avg);
  }
}

TEST(Protocol, ExhaustiveSingleAgentIsGradientDescent) {
  const Fleet f = nominal_fleet(1, 0.0);
  ExperimentConfig c = small_config(1, 20);
  c.oracle_mode = OracleMode::kExact;
  c.direction_mode = DirectionMode::kExhaustive;
  c.eta = 0.05;
  const RunTrace t = run_scalar_fed_lqr(f, c);
  const Matrix s0 = c.initial_state_variance * Matrix::Identity(3, 3);
  Matrix k = 1.62 * Matrix::Identity(3, 3);
  for (int i = 0; i < 20; ++i) {
    k -= c.eta * exact_policy_gradient(f.systems[0], f.cost, PolicyGain{k}, s0);
  }
  EXPECT_LE((t.final_gain.k - k).norm(), 1e-12 * k.norm());
}

TEST(Protocol, HomogeneousExactBaselineIsCentralizedDescent) {
  const Fleet f = nominal_fleet(5, 0.0);
  ExperimentConfig c = small_config(5, 30);
  c.oracle_mode = OracleMode::kExact;
  const RunTrace t = run_fedlqr_baseline(f, c);
  const Matrix s0 = c.initial_state_variance * Matrix::Identity(3, 3);
  Matrix k = 1.62 * Matrix::Identity(3, 3);
  for (int i = 0; i < 30; ++i) {
    k -= c.eta * exact_policy_gradient(f.nominal, f.cost, PolicyGain{k}, s0);
  }
  EXPECT_LE((t.final_gain.k - k).norm(), 1e-12 * k.norm());
  for (const auto& r : t.records) {
    EXPECT_EQ(r.e_tot_norm, 0.0);
    EXPECT_EQ(r.sigma_t, 0.0);
    EXPECT_EQ(r.b_t, 0.0);
  }
}

TEST(Protocol, TelemetryInvariants) {
  const Fleet f = nominal_fleet(10, 0.5);
  const ExperimentConfig c = small_config(10, 40);
  for (Algorithm a : {Algorithm::kScalar, Algorithm::kBaseline}) {
    const RunTrace t = run_federated(f, c, a);
    ASSERT_EQ(t.records.size(), 40u);
    std::uint64_t bits = 0;
    for (const auto& r : t.records) {
      EXPECT_LE(r.e_tot_norm, r.e_proj_norm + r.e_zo_norm + 1e-9);
      EXPECT_NEAR(r.beta_t, r.e_tot_norm / r.grad_norm, 1e-12 * (1.0 + r.beta_t));
      bits += r.uplink_bits_round;
      EXPECT_EQ(r.bits_cum, bits);
      if (a == Algorithm::kBaseline) {
        EXPECT_EQ(r.e_proj_norm, 0.0);
        EXPECT_TRUE(r.messages.empty());
      } else {
        EXPECT_EQ(r.messages.size(), 10u);
      }
    }
    EXPECT_EQ(t.cumulative_bits, bits);
  }
}

TEST(Protocol, MessagesReproduceAggregate) {
  const Fleet f = nominal_fleet(10, 0.5);
  const RunTrace t = run_scalar_fed_lqr(f, small_config(10, 3));
  for (const auto& r : t.records) {
    Vector acc = Vector::Zero(9);
    for (const auto& msg : r.messages) {
      EXPECT_EQ(msg.seed, direction_seed(t.config.run_seed, r.round, msg.agent_id));
      acc = decode_accumulate(acc, msg, 9);
    }
    EXPECT_TRUE(aggregate(acc, 10, 3, 3).isApprox(r.aggregated_direction, 1e-15));
  }
}

TEST(Protocol, IdenticalAcrossWorkerCounts) {
  const Fleet f = nominal_fleet(10, 0.5);
  ExperimentConfig c = small_config(10, 25);
  const std::string one = csv_of(run_scalar_fed_lqr(f, c));
  c.workers = 4;
  EXPECT_EQ(csv_of(run_scalar_fed_lqr(f, c)), one);
}

TEST(Protocol, Preconditions) {
  const Fleet f = nominal_fleet(3, 0.0);
  ExperimentConfig c = small_config(3, 2);
  c.k0_scale = 0.0;  // A0 is open-loop unstable
  EXPECT_THROW(run_scalar_fed_lqr(f, c), PreconditionError);
  EXPECT_THROW(run_scalar_fed_lqr(f, small_config(4, 2)), ConfigError);
  ExperimentConfig bad = small_config(3, 2);
  bad.eta = -1.0;
  EXPECT_THROW(run_scalar_fed_lqr(f, bad), ConfigError);
}

TEST(Protocol, InstabilityPolicies) {
  const Fleet f = nominal_fleet(3, 0.0);
  ExperimentConfig c = small_config(3, 10);
  c.eta = 50.0;
  c.instability_policy = InstabilityPolicy::kHalt;
  const RunTrace halted = run_scalar_fed_lqr(f, c);
  EXPECT_TRUE(halted.halted);
  EXPECT_LT(halted.records.size(), 10u);
  EXPECT_FALSE(halted.records.back().all_stable);
  c.instability_policy = InstabilityPolicy::kCap;
  const RunTrace capped = run_scalar_fed_lqr(f, c);
  EXPECT_FALSE(capped.halted);
  EXPECT_EQ(capped.records.size(), 10u);
  c.oracle_mode = OracleMode::kExact;
  EXPECT_TRUE(run_scalar_fed_lqr(f, c).halted);
}

TEST(TraceCsv, RoundTrip) {
  const RunTrace t = run_scalar_fed_lqr(nominal_fleet(4, 0.5), small_config(4, 6));
  std::istringstream is(csv_of(t));
  const auto back = read_trace_csv(is);
  ASSERT_EQ(back.size(), t.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].cost_avg, t.records[i].cost_avg);
    EXPECT_EQ(back[i].ref_gap, t.records[i].ref_gap);
    EXPECT_EQ(back[i].beta_t, t.records[i].beta_t);
    EXPECT_EQ(back[i].bits_cum, t.records[i].bits_cum);
  }
  std::istringstream bad("round,x\n");
  EXPECT_THROW(read_trace_csv(bad), ConfigError);
}

TEST(ReferenceGap, Values) {
  const auto nom = nominal_system();
  for (double s : {1.0, 1e-3}) {
    const Matrix s0 = s * Matrix::Identity(3, 3);
    const PolicyGain kstar = optimal_gain(nom.system, nom.cost);
    const double jref = exact_cost(nom.system, nom.cost, kstar, s0);
    EXPECT_NEAR(normalized_reference_gap(kstar, nom.system, nom.cost, jref, s0), 0.0, 1e-12);
    EXPECT_NEAR(normalized_reference_gap(nom.k0, nom.system, nom.cost, jref, s0),
                testing::kNominalGapK0, 1e-10);
    EXPECT_TRUE(std::isinf(normalized_reference_gap(PolicyGain{Matrix::Zero(3, 3)}, nom.system,
                                                    nom.cost, jref, s0)));
  }
}

}  // namespace
}  // namespace sfl
