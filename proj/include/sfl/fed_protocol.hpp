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

// Server-side optimization loops.
//
// ScalarFedLQR, one round t:
//   clients (parallel)  g_n = local gradient estimate at K_t
//                       v_n = rademacher_direction(d, xi_{t,n}),  r_n = <v_n, g_n>
//                       upload (r_n, xi_{t,n})
//   server              acc = sum_n r_n v_n            (ascending agent id)
//                       g_bar = (d / M) acc,   K_{t+1} = K_t - eta g_bar
//
// FedLQR baseline: clients upload g_n in full, g_bar = (1/M) sum_n g_n.
//
// Both loops record, as measurement only, the exact average gradient
// g_t = grad J_avg(K_t) and the split  g_bar - g_t = (g_bar - g_tilde) + (g_tilde - g_t)
// into projection and zeroth-order error.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfl/config.hpp"
#include "sfl/errors.hpp"
#include "sfl/fleet.hpp"
#include "sfl/lqr.hpp"
#include "sfl/matrix.hpp"
#include "sfl/parallel.hpp"
#include "sfl/projection_codec.hpp"
#include "sfl/rng.hpp"
#include "sfl/zo_gradient.hpp"

namespace sfl {

enum class Algorithm { kScalar, kBaseline };

inline const char* to_string(Algorithm a) { return a == Algorithm::kScalar ? "scalar" : "baseline"; }

inline std::uint64_t uplink_bits(Algorithm algorithm, std::uint64_t m, std::uint64_t d,
                                 BitPolicy policy) {
  constexpr std::uint64_t kBitsPerScalar = 32;
  constexpr std::uint64_t kBitsPerSeed = 32;
  if (algorithm == Algorithm::kBaseline) return m * d * kBitsPerScalar;
  return m * kBitsPerScalar + (policy == BitPolicy::kScalarsPlusSeeds ? m * kBitsPerSeed : 0);
}

struct RoundRecord {
  int round = 0;
  PolicyGain k_before;
  std::vector<ScalarMessage> messages;  // empty for the baseline
  Matrix aggregated_direction;          // g_bar
  Matrix true_gradient;                 // g_t
  Matrix mean_zo_gradient;              // g_tilde
  double e_proj_norm = 0.0;
  double e_zo_norm = 0.0;
  double e_tot_norm = 0.0;
  double beta_t = 0.0;                  // e_tot / ||g_t||
  double grad_norm = 0.0;               // ||g_t||
  double zo_norm = 0.0;                 // ||g_tilde||
  double sigma_t = 0.0;                 // heterogeneity of the local estimates
  double b_t = 0.0;
  double cost_before = 0.0;             // J_avg(K_t)
  double cost_avg = 0.0;                // J_avg(K_{t+1})
  double ref_gap = 0.0;                 // nominal reference gap of K_{t+1}
  std::uint64_t uplink_bits_round = 0;
  std::uint64_t bits_cum = 0;
  bool all_stable = true;               // K_{t+1} stabilizes every agent
};

struct RunTrace {
  ExperimentConfig config;
  Algorithm algorithm = Algorithm::kScalar;
  std::vector<RoundRecord> records;
  PolicyGain initial_gain;
  PolicyGain final_gain;
  std::uint64_t cumulative_bits = 0;
  double initial_cost_avg = 0.0;
  double initial_ref_gap = 0.0;
  double reference_cost = 0.0;  // J_1(K_1*)
  bool halted = false;
  double wall_time_seconds = 0.0;
};

inline PolicyGain initial_gain(const Fleet& fleet, const ExperimentConfig& config) {
  return PolicyGain{config.k0_scale * Matrix::Identity(fleet.nu(), fleet.nx())};
}

// J_avg(K); +inf when K fails to stabilize any agent.
inline double average_cost(const Fleet& fleet, const PolicyGain& k, const Matrix& sigma0) {
  double sum = 0.0;
  for (const auto& sys : fleet.systems) {
    const double j = exact_cost_or_inf(sys, fleet.cost, k, sigma0);
    if (!std::isfinite(j)) return std::numeric_limits<double>::infinity();
    sum += j;
  }
  return sum / static_cast<double>(fleet.size());
}

inline Matrix average_gradient(const Fleet& fleet, const PolicyGain& k, const Matrix& sigma0) {
  Matrix sum = Matrix::Zero(fleet.nu(), fleet.nx());
  for (const auto& sys : fleet.systems) sum += exact_policy_gradient(sys, fleet.cost, k, sigma0);
  return sum / static_cast<double>(fleet.size());
}

inline bool stabilizes_all(const Fleet& fleet, const PolicyGain& k) {
  if (!k.k.allFinite()) return false;
  for (const auto& sys : fleet.systems) {
    if (!is_schur_stable(sys, k)) return false;
  }
  return true;
}

// (J_1(K) - J_1(K_1*)) / J_1(K_1*); +inf if K destabilizes the nominal system.
inline double normalized_reference_gap(const PolicyGain& k, const LtiSystem& nominal,
                                       const CostMatrices& cost, double reference_cost,
                                       const Matrix& sigma0) {
  const double j = exact_cost_or_inf(nominal, cost, k, sigma0);
  if (!std::isfinite(j)) return std::numeric_limits<double>::infinity();
  return (j - reference_cost) / reference_cost;
}

inline RunTrace run_federated(const Fleet& fleet, const ExperimentConfig& config,
                              Algorithm algorithm) {
  const auto wall_start = std::chrono::steady_clock::now();
  config.validate();
  if (fleet.size() == 0) throw PreconditionError("run_federated: empty fleet");
  if (static_cast<std::size_t>(config.m) != fleet.size()) {
    throw ConfigError("run_federated: config.m = " + std::to_string(config.m) +
                      " but the fleet has " + std::to_string(fleet.size()) + " agents");
  }
  const Eigen::Index nu = fleet.nu();
  const Eigen::Index nx = fleet.nx();
  const Eigen::Index d = nu * nx;
  const std::size_t m = fleet.size();
  const Matrix sigma0 = config.initial_state_variance * Matrix::Identity(nx, nx);
  const RolloutParams params = config.rollout_params();

  RunTrace trace;
  trace.config = config;
  trace.algorithm = algorithm;
  trace.initial_gain = initial_gain(fleet, config);
  if (!stabilizes_all(fleet, trace.initial_gain)) {
    throw PreconditionError("run_federated: K0 does not stabilize every agent");
  }
  const PolicyGain k_star = optimal_gain(fleet.nominal, fleet.cost);
  trace.reference_cost = exact_cost(fleet.nominal, fleet.cost, k_star, sigma0);
  trace.initial_cost_avg = average_cost(fleet, trace.initial_gain, sigma0);
  trace.initial_ref_gap = normalized_reference_gap(trace.initial_gain, fleet.nominal, fleet.cost,
                                                   trace.reference_cost, sigma0);

  const std::uint64_t bits_round =
      uplink_bits(algorithm, m, static_cast<std::uint64_t>(d), config.bit_policy);
  const bool scalar = algorithm == Algorithm::kScalar;
  const bool exact_oracle = config.oracle_mode == OracleMode::kExact;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  PolicyGain k = trace.initial_gain;
  double cost_now = trace.initial_cost_avg;
  std::vector<Matrix> local(m);
  std::vector<Matrix> exact_local(m);
  std::vector<ScalarMessage> messages(m);
  std::vector<char> stable_next(m);
  std::vector<double> cost_next(m);
  trace.records.reserve(static_cast<std::size_t>(config.t_rounds));

  for (int t = 0; t < config.t_rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.k_before = k;
    rec.cost_before = cost_now;
    const bool k_stable = std::isfinite(cost_now);
    if (exact_oracle && !k_stable) {
      throw PreconditionError("run_federated: exact oracle needs a stabilizing iterate");
    }

    // Client phase.
    parallel_for(m, config.workers, [&](std::size_t n) {
      const LtiSystem& sys = fleet.systems[n];
      exact_local[n] = k_stable ? exact_policy_gradient(sys, fleet.cost, k, sigma0)
                                : Matrix::Constant(nu, nx, nan);
      if (exact_oracle) {
        local[n] = exact_local[n];
      } else {
        Rng rng(derive_seed(config.run_seed, StreamPurpose::kZoEstimate,
                            {static_cast<std::uint64_t>(t), n}));
        local[n] = estimate_gradient(sys, fleet.cost, k, params, rng).gradient;
      }
      if (scalar && config.direction_mode == DirectionMode::kRandom) {
        const Seed seed = direction_seed(config.run_seed, static_cast<std::uint64_t>(t), n);
        messages[n] = ScalarMessage{encode(local[n], rademacher_direction(d, seed)), seed,
                                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(n)};
      }
    });

    // Server phase.
    Matrix g_tilde = Matrix::Zero(nu, nx);
    Matrix g_true = Matrix::Zero(nu, nx);
    for (std::size_t n = 0; n < m; ++n) {
      g_tilde += local[n];
      g_true += exact_local[n];
    }
    g_tilde /= static_cast<double>(m);
    g_true /= static_cast<double>(m);

    Matrix g_bar;
    if (!scalar) {
      g_bar = g_tilde;
    } else if (config.direction_mode == DirectionMode::kRandom) {
      ScalarDecoder decoder(nu, nx);
      decoder.fold(messages);
      g_bar = decoder.aggregate();
      rec.messages = messages;
    } else {
      Vector sum = Vector::Zero(d);
      for (std::size_t n = 0; n < m; ++n) sum += exhaustive_projection_average(flatten(local[n]));
      g_bar = unflatten(sum / static_cast<double>(m), nu, nx);
    }

    rec.aggregated_direction = g_bar;
    rec.true_gradient = g_true;
    rec.mean_zo_gradient = g_tilde;
    rec.e_proj_norm = (g_bar - g_tilde).norm();
    rec.e_zo_norm = (g_tilde - g_true).norm();
    rec.e_tot_norm = (g_bar - g_true).norm();
    rec.grad_norm = g_true.norm();
    rec.zo_norm = g_tilde.norm();
    rec.beta_t = rec.grad_norm > 0.0 ? rec.e_tot_norm / rec.grad_norm : nan;
    const HeterogeneityStats hs = heterogeneity_stats(local);
    rec.sigma_t = hs.sigma;
    rec.b_t = hs.b;

    k = PolicyGain{k.k - config.eta * g_bar};

    parallel_for(m, config.workers, [&](std::size_t n) {
      const LtiSystem& sys = fleet.systems[n];
      stable_next[n] = k.k.allFinite() && is_schur_stable(sys, k);
      cost_next[n] = stable_next[n] ? exact_cost(sys, fleet.cost, k, sigma0)
                                    : std::numeric_limits<double>::infinity();
    });
    rec.all_stable = true;
    double cost_sum = 0.0;
    for (std::size_t n = 0; n < m; ++n) {
      rec.all_stable = rec.all_stable && stable_next[n];
      cost_sum += cost_next[n];
    }
    cost_now = rec.all_stable ? cost_sum / static_cast<double>(m)
                              : std::numeric_limits<double>::infinity();
    rec.cost_avg = cost_now;
    rec.ref_gap = normalized_reference_gap(k, fleet.nominal, fleet.cost, trace.reference_cost, sigma0);
    rec.uplink_bits_round = bits_round;
    trace.cumulative_bits += bits_round;
    rec.bits_cum = trace.cumulative_bits;
    const bool stop = !rec.all_stable && (config.instability_policy == InstabilityPolicy::kHalt ||
                                          exact_oracle);
    trace.records.push_back(std::move(rec));
    if (stop) {
      trace.halted = true;
      break;
    }
  }
  trace.final_gain = k;
  trace.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return trace;
}

inline RunTrace run_scalar_fed_lqr(const Fleet& fleet, const ExperimentConfig& config) {
  return run_federated(fleet, config, Algorithm::kScalar);
}

inline RunTrace run_fedlqr_baseline(const Fleet& fleet, const ExperimentConfig& config) {
  return run_federated(fleet, config, Algorithm::kBaseline);
}

inline std::string format_number(double v) { return detail::format_double(v); }

inline constexpr const char* kTraceCsvHeader =
    "round,cost_avg,ref_gap,e_proj,e_zo,e_tot,beta_t,grad_norm,bits_cum,all_stable";

// One row per round; cost_avg, ref_gap and bits_cum describe the state after
// the round's update, the error columns the update itself.
inline void write_trace_csv(const RunTrace& trace, std::ostream& os) {
  os << kTraceCsvHeader << '\n';
  for (const auto& r : trace.records) {
    os << r.round << ',' << format_number(r.cost_avg) << ',' << format_number(r.ref_gap) << ','
       << format_number(r.e_proj_norm) << ',' << format_number(r.e_zo_norm) << ','
       << format_number(r.e_tot_norm) << ',' << format_number(r.beta_t) << ','
       << format_number(r.grad_norm) << ',' << r.bits_cum << ',' << (r.all_stable ? 1 : 0)
       << '\n';
  }
}

// Inverse of write_trace_csv for the columns it stores; other RoundRecord
// fields stay default.
inline std::vector<RoundRecord> read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::trim(line) != kTraceCsvHeader) {
    throw ConfigError("trace csv: unexpected header");
  }
  std::vector<RoundRecord> records;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(detail::trim(cell));
    if (f.size() != 10) throw ConfigError("trace csv line " + std::to_string(line_no) + ": expected 10 fields");
    RoundRecord r;
    try {
      r.round = std::stoi(f[0]);
      r.cost_avg = std::stod(f[1]);
      r.ref_gap = std::stod(f[2]);
      r.e_proj_norm = std::stod(f[3]);
      r.e_zo_norm = std::stod(f[4]);
      r.e_tot_norm = std::stod(f[5]);
      r.beta_t = std::stod(f[6]);
      r.grad_norm = std::stod(f[7]);
      r.bits_cum = std::stoull(f[8]);
      r.all_stable = f[9] == "1";
    } catch (const std::logic_error&) {
      throw ConfigError("trace csv line " + std::to_string(line_no) + ": malformed number");
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline nlohmann::json trace_summary_json(const RunTrace& trace) {
  double max_beta = 0.0;
  for (const auto& r : trace.records) {
    if (std::isfinite(r.beta_t)) max_beta = std::max(max_beta, r.beta_t);
  }
  const double final_gap = trace.records.empty() ? trace.initial_ref_gap : trace.records.back().ref_gap;
  const double final_cost =
      trace.records.empty() ? trace.initial_cost_avg : trace.records.back().cost_avg;
  auto finite_or_null = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  return {{"config", to_json(trace.config)},
          {"algorithm", to_string(trace.algorithm)},
          {"rounds_completed", trace.records.size()},
          {"halted", trace.halted},
          {"initial_ref_gap", finite_or_null(trace.initial_ref_gap)},
          {"final_ref_gap", finite_or_null(final_gap)},
          {"initial_cost_avg", finite_or_null(trace.initial_cost_avg)},
          {"final_cost_avg", finite_or_null(final_cost)},
          {"reference_cost", trace.reference_cost},
          {"cumulative_bits", trace.cumulative_bits},
          {"max_beta_t", max_beta},
          {"final_gain", matrix_to_json(trace.final_gain.k)},
          {"wall_time_seconds", trace.wall_time_seconds}};
}

}  // namespace sfl
