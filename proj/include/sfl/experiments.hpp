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

// Monte Carlo experiment harness: repeated (fleet draw, run) pairs, metric
// aggregation on the round and bit axes, plot-data emission.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "sfl/config.hpp"
#include "sfl/errors.hpp"
#include "sfl/fed_protocol.hpp"
#include "sfl/fleet.hpp"
#include "sfl/parallel.hpp"
#include "sfl/rng.hpp"

namespace sfl {

// 100 * max(0, 1 - gap); an infinite (destabilized) gap recovers nothing.
inline double recovery_percentage(double gap) {
  if (!std::isfinite(gap)) return 0.0;
  return 100.0 * std::clamp(1.0 - gap, 0.0, 1.0);
}

// Per completed-round aggregates over Monte Carlo runs. Index 0 is the
// initial gain (0 rounds, 0 bits).
struct MetricSeries {
  Algorithm algorithm = Algorithm::kScalar;
  double eps1 = 0.0;
  double eps2 = 0.0;
  int runs = 0;
  std::vector<int> round;
  std::vector<std::uint64_t> bits_cum;
  std::vector<double> gap_mean;
  std::vector<double> gap_stderr;
  std::vector<double> recovery_mean;
  std::vector<double> recovery_stderr;

  std::size_t size() const { return round.size(); }
};

namespace detail {

inline std::pair<double, double> mean_stderr(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / n;
  if (xs.size() < 2 || !std::isfinite(mean)) return {mean, xs.size() < 2 ? 0.0 : std::numeric_limits<double>::quiet_NaN()};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace detail

// Runs that halted on instability contribute an infinite gap (zero
// recovery) for every round after the halt.
inline MetricSeries build_series(std::span<const RunTrace* const> traces) {
  if (traces.empty()) throw PreconditionError("build_series: no traces");
  MetricSeries s;
  s.algorithm = traces[0]->algorithm;
  s.eps1 = traces[0]->config.eps1;
  s.eps2 = traces[0]->config.eps2;
  s.runs = static_cast<int>(traces.size());
  const int t_rounds = traces[0]->config.t_rounds;
  const std::uint64_t per_round =
      uplink_bits(s.algorithm, static_cast<std::uint64_t>(traces[0]->config.m),
                  static_cast<std::uint64_t>(traces[0]->initial_gain.k.size()),
                  traces[0]->config.bit_policy);
  std::vector<double> gaps(traces.size());
  std::vector<double> recs(traces.size());
  for (int r = 0; r <= t_rounds; ++r) {
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const RunTrace& tr = *traces[i];
      double gap;
      if (r == 0) gap = tr.initial_ref_gap;
      else if (static_cast<std::size_t>(r) <= tr.records.size()) gap = tr.records[r - 1].ref_gap;
      else gap = std::numeric_limits<double>::infinity();
      gaps[i] = gap;
      recs[i] = recovery_percentage(gap);
    }
    const auto [gm, gs] = detail::mean_stderr(gaps);
    const auto [rm, rs] = detail::mean_stderr(recs);
    s.round.push_back(r);
    s.bits_cum.push_back(per_round * static_cast<std::uint64_t>(r));
    s.gap_mean.push_back(gm);
    s.gap_stderr.push_back(gs);
    s.recovery_mean.push_back(rm);
    s.recovery_stderr.push_back(rs);
  }
  return s;
}

struct BudgetPoint {
  int round = 0;
  std::uint64_t bits_cum = 0;
  double gap_mean = 0.0;
  double recovery_mean = 0.0;
  double recovery_stderr = 0.0;
};

// Last round whose cumulative uplink fits in the budget.
inline BudgetPoint budget_point(const MetricSeries& s, double budget_bits) {
  if (s.size() == 0) throw PreconditionError("budget_point: empty series");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<double>(s.bits_cum[i]) <= budget_bits) idx = i;
  }
  return {s.round[idx], s.bits_cum[idx], s.gap_mean[idx], s.recovery_mean[idx],
          s.recovery_stderr[idx]};
}

struct LabeledTrace {
  Algorithm algorithm;
  double eps;
  int run_index;
  RunTrace trace;
};

struct ExperimentResult {
  std::vector<MetricSeries> series;
  std::vector<LabeledTrace> traces;
};

inline HeterogeneityMasks masks_for(const ExperimentConfig& config, Eigen::Index nx,
                                    Eigen::Index nu) {
  HeterogeneityMasks masks = default_masks(nx, nu);
  const auto load = [](const std::vector<double>& values, Eigen::Index rows, Eigen::Index cols,
                       const char* name) {
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
      throw ConfigError(std::string(name) + " needs " + std::to_string(rows * cols) + " values");
    }
    return unflatten(Eigen::Map<const Vector>(values.data(), rows * cols), rows, cols);
  };
  if (!config.mask_z1.empty()) masks.z1 = load(config.mask_z1, nx, nx, "mask_z1");
  if (!config.mask_z2.empty()) masks.z2 = load(config.mask_z2, nx, nu, "mask_z2");
  return masks;
}

inline Fleet fleet_for_run(const ExperimentConfig& config, double eps1, double eps2, int run_index) {
  const NominalSetup nominal = nominal_system();
  const PolicyGain k0{config.k0_scale * Matrix::Identity(nominal.system.nu(), nominal.system.nx())};
  Rng rng(derive_seed(config.run_seed, StreamPurpose::kFleet,
                      {static_cast<std::uint64_t>(config.fix_fleet ? 0 : run_index)}));
  return generate_fleet(config.m, eps1, eps2, nominal.system, nominal.cost,
                        masks_for(config, nominal.system.nx(), nominal.system.nu()), k0, rng);
}

inline std::vector<Algorithm> selected_algorithms(AlgorithmSelection sel) {
  switch (sel) {
    case AlgorithmSelection::kScalar: return {Algorithm::kScalar};
    case AlgorithmSelection::kBaseline: return {Algorithm::kBaseline};
    case AlgorithmSelection::kBoth: return {Algorithm::kScalar, Algorithm::kBaseline};
  }
  return {};
}

// mc_runs independent runs per (algorithm, eps) cell. Run i of every cell
// shares its fleet seed and protocol seed, so algorithms are compared on
// identical fleets. Runs execute concurrently with config.workers threads;
// results are assembled by run index.
inline ExperimentResult run_grid(const ExperimentConfig& config,
                                 std::span<const std::pair<double, double>> eps_cells) {
  config.validate();
  const auto algorithms = selected_algorithms(config.algorithm);
  struct Job {
    Algorithm algorithm;
    std::size_t cell;
    int run;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < eps_cells.size(); ++c) {
    for (Algorithm a : algorithms) {
      for (int i = 0; i < config.mc_runs; ++i) jobs.push_back({a, c, i});
    }
  }
  std::vector<RunTrace> traces(jobs.size());
  parallel_for(jobs.size(), config.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    ExperimentConfig run_cfg = config;
    run_cfg.eps1 = eps_cells[job.cell].first;
    run_cfg.eps2 = eps_cells[job.cell].second;
    run_cfg.run_seed = derive_seed(config.run_seed, StreamPurpose::kRun,
                                   {static_cast<std::uint64_t>(job.run)});
    run_cfg.workers = 1;
    const Fleet fleet = fleet_for_run(config, run_cfg.eps1, run_cfg.eps2, job.run);
    traces[j] = run_federated(fleet, run_cfg, job.algorithm);
  });

  ExperimentResult result;
  std::size_t j = 0;
  for (std::size_t c = 0; c < eps_cells.size(); ++c) {
    for (std::size_t a = 0; a < algorithms.size(); ++a) {
      std::vector<const RunTrace*> cell;
      for (int i = 0; i < config.mc_runs; ++i, ++j) cell.push_back(&traces[j]);
      MetricSeries s = build_series(cell);
      s.eps1 = eps_cells[c].first;
      s.eps2 = eps_cells[c].second;
      result.series.push_back(std::move(s));
    }
  }
  j = 0;
  for (std::size_t c = 0; c < eps_cells.size(); ++c) {
    for (Algorithm a : algorithms) {
      for (int i = 0; i < config.mc_runs; ++i, ++j) {
        result.traces.push_back({a, eps_cells[c].first, i, std::move(traces[j])});
      }
    }
  }
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  const std::pair<double, double> cell{config.eps1, config.eps2};
  return run_grid(config, std::span(&cell, 1));
}

inline ExperimentResult run_sweep(const ExperimentConfig& config) {
  std::vector<std::pair<double, double>> cells;
  for (double e : config.eps_grid) cells.emplace_back(e, e);
  return run_grid(config, cells);
}

enum class PlotKind { kGapVsRound, kRecoveryVsBits, kBudgetBar };

inline const char* plot_file_name(PlotKind kind) {
  switch (kind) {
    case PlotKind::kGapVsRound: return "gap_vs_round.csv";
    case PlotKind::kRecoveryVsBits: return "recovery_vs_bits.csv";
    case PlotKind::kBudgetBar: return "budget_bar.csv";
  }
  return "plot.csv";
}

// gap_vs_round:     round,algorithm,eps,gap_mean,gap_stderr
// recovery_vs_bits: bits_cum,algorithm,eps,recovery_mean,recovery_stderr  (ascending bits_cum)
// budget_bar:       algorithm,eps,budget_bits,round,bits_cum,recovery_mean,recovery_stderr
// "eps" is eps1; the sweeps set eps1 = eps2.
inline void emit_plot_data(std::span<const MetricSeries> series, PlotKind kind, std::ostream& os,
                           double budget_bits = 6e5) {
  if (series.empty()) throw PreconditionError("emit_plot_data: no series");
  for (const auto& s : series) {
    if (s.size() == 0) throw PreconditionError("emit_plot_data: empty series");
  }
  const auto num = [](double v) { return format_number(v); };
  switch (kind) {
    case PlotKind::kGapVsRound:
      os << "round,algorithm,eps,gap_mean,gap_stderr\n";
      for (const auto& s : series) {
        for (std::size_t i = 0; i < s.size(); ++i) {
          os << s.round[i] << ',' << to_string(s.algorithm) << ',' << num(s.eps1) << ','
             << num(s.gap_mean[i]) << ',' << num(s.gap_stderr[i]) << '\n';
        }
      }
      break;
    case PlotKind::kRecoveryVsBits: {
      struct Row {
        std::uint64_t bits;
        std::string algorithm;
        double eps;
        double mean;
        double stderr_;
      };
      std::vector<Row> rows;
      for (const auto& s : series) {
        for (std::size_t i = 0; i < s.size(); ++i) {
          rows.push_back({s.bits_cum[i], to_string(s.algorithm), s.eps1, s.recovery_mean[i],
                          s.recovery_stderr[i]});
        }
      }
      std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return std::tie(a.bits, a.algorithm, a.eps) < std::tie(b.bits, b.algorithm, b.eps);
      });
      os << "bits_cum,algorithm,eps,recovery_mean,recovery_stderr\n";
      for (const auto& r : rows) {
        os << r.bits << ',' << r.algorithm << ',' << num(r.eps) << ',' << num(r.mean) << ','
           << num(r.stderr_) << '\n';
      }
      break;
    }
    case PlotKind::kBudgetBar:
      os << "algorithm,eps,budget_bits,round,bits_cum,recovery_mean,recovery_stderr\n";
      for (const auto& s : series) {
        const BudgetPoint p = budget_point(s, budget_bits);
        os << to_string(s.algorithm) << ',' << num(s.eps1) << ',' << num(budget_bits) << ','
           << p.round << ',' << p.bits_cum << ',' << num(p.recovery_mean) << ','
           << num(p.recovery_stderr) << '\n';
      }
      break;
  }
}

}  // namespace sfl
