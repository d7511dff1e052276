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

// Numerical checks of the convergence theory on concrete runs:
//
//   error split        g_bar - g = (g_bar - g_tilde) + (g_tilde - g)
//   one-step descent   J(K+) <= J(K) - eta [(1 - b) - (L eta / 2)(1 + b)^2] ||g||^2,
//                      valid when ||e_tot|| <= b ||g||, b < 1
//   projection error   ||e_proj|| <= C sqrt((d-1) log(2d/delta) / M) (||g_tilde|| + sigma)
//                                  + C ((d-1) log(2d/delta) / M) (||g_tilde|| + B)
//   stability          eps + zeta_t <= beta ||g_t||   (zeta_t: the bound above with
//                      log(2dT/delta), uniform over T rounds)
//   linear rate        gap_t <= (1 - mu (1-beta)^2 / (L (1+beta)^2))^t gap_0
//                      at eta* = (1 - beta) / (L (1 + beta)^2)
//
// The absolute constant C is never given numerically; the sweep fits an
// effective c_hat and the stability check uses it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "sfl/errors.hpp"
#include "sfl/fed_protocol.hpp"
#include "sfl/fleet.hpp"
#include "sfl/lqr.hpp"
#include "sfl/matrix.hpp"
#include "sfl/parallel.hpp"
#include "sfl/projection_codec.hpp"
#include "sfl/rng.hpp"

namespace sfl {

inline double max_stepsize(double beta, double l_hat) {
  return 2.0 * (1.0 - beta) / (l_hat * (1.0 + beta) * (1.0 + beta));
}

// eta* = eta_max / 2.
inline double optimal_stepsize(double beta, double l_hat) { return 0.5 * max_stepsize(beta, l_hat); }

inline double contraction_factor(double beta, double mu_hat, double l_hat) {
  return 1.0 - mu_hat * (1.0 - beta) * (1.0 - beta) / (l_hat * (1.0 + beta) * (1.0 + beta));
}

// ---------------------------------------------------------------------------
// Exact average-cost descent (reference optimum).

struct DescentPath {
  std::vector<PolicyGain> points;
  PolicyGain minimizer;
  double min_cost = 0.0;
  int steps = 0;
};

// Gradient descent on J_avg with Armijo backtracking and step growth.
inline DescentPath minimize_average_cost(const Fleet& fleet, const PolicyGain& start,
                                         const Matrix& sigma0, int max_steps = 10000,
                                         double grad_tol = 1e-13) {
  DescentPath path;
  PolicyGain k = start;
  double j = average_cost(fleet, k, sigma0);
  if (!std::isfinite(j)) throw PreconditionError("minimize_average_cost: start is not stabilizing");
  path.points.push_back(k);
  Matrix g = average_gradient(fleet, k, sigma0);
  const double g0 = g.norm();
  double step = 1.0 / std::max(g0, 1e-300);
  for (int it = 0; it < max_steps; ++it) {
    const double gn2 = g.squaredNorm();
    if (std::sqrt(gn2) <= grad_tol * (1.0 + g0)) break;
    step *= 2.0;
    bool accepted = false;
    for (int bt = 0; bt < 200; ++bt) {
      const PolicyGain trial{k.k - step * g};
      const double jt = average_cost(fleet, trial, sigma0);
      if (std::isfinite(jt) && jt <= j - 0.5 * step * gn2) {
        k = trial;
        j = jt;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflow: at numerical floor
    path.points.push_back(k);
    g = average_gradient(fleet, k, sigma0);
    ++path.steps;
  }
  path.minimizer = k;
  path.min_cost = j;
  return path;
}

// ---------------------------------------------------------------------------
// Smoothness / PL estimation.

struct SmoothnessEstimate {
  double l_hat = 0.0;
  double mu_hat = 0.0;
  int sample_points = 0;
  double sublevel_c = 0.0;
  double j_star = 0.0;
  PolicyGain k_star;
};

struct SmoothnessOptions {
  Matrix sigma0;                // empty: identity
  double hessian_step = 1e-5;   // central-difference step on the gradient
  int max_attempts_per_sample = 200;
  int descent_steps = 10000;
  double gap_floor = 1e-9;      // relative; PL ratios below it are skipped
};

inline double hessian_norm(const Fleet& fleet, const PolicyGain& k, const Matrix& sigma0,
                           double h) {
  const Eigen::Index nu = k.k.rows();
  const Eigen::Index nx = k.k.cols();
  const Eigen::Index d = nu * nx;
  Matrix hess(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Vector e = Vector::Zero(d);
    e(i) = h;
    const Matrix de = unflatten(e, nu, nx);
    const Vector gp = flatten(average_gradient(fleet, PolicyGain{k.k + de}, sigma0));
    const Vector gm = flatten(average_gradient(fleet, PolicyGain{k.k - de}, sigma0));
    hess.col(i) = (gp - gm) / (2.0 * h);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(hess), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// L_hat: largest Hessian spectral norm (finite differences of the exact
// gradient) or secant ratio ||grad(K) - grad(K')|| / ||K - K'|| over the
// samples. mu_hat: smallest ||grad J||^2 / (2 (J - J*)). Samples are drawn
// around the descent path from k_ref and rejected outside {J_avg <= J_avg(k_ref)}.
inline SmoothnessEstimate estimate_smoothness(const Fleet& fleet, const PolicyGain& k_ref,
                                              int n_samples, double radius, Rng& rng,
                                              SmoothnessOptions opts = {}) {
  if (n_samples < 1) throw PreconditionError("estimate_smoothness: n_samples must be >= 1");
  if (opts.sigma0.size() == 0) opts.sigma0 = Matrix::Identity(fleet.nx(), fleet.nx());
  const Matrix& sigma0 = opts.sigma0;
  if (!stabilizes_all(fleet, k_ref)) {
    throw PreconditionError("estimate_smoothness: k_ref must stabilize every agent");
  }
  SmoothnessEstimate est;
  est.sublevel_c = average_cost(fleet, k_ref, sigma0);
  const DescentPath path = minimize_average_cost(fleet, k_ref, sigma0, opts.descent_steps);
  est.j_star = path.min_cost;
  est.k_star = path.minimizer;

  std::vector<PolicyGain> samples;
  samples.push_back(k_ref);
  const Eigen::Index nu = k_ref.k.rows();
  const Eigen::Index nx = k_ref.k.cols();
  int attempts = 0;
  const int max_attempts = opts.max_attempts_per_sample * n_samples;
  while (static_cast<int>(samples.size()) < n_samples && attempts < max_attempts) {
    ++attempts;
    const auto idx = static_cast<std::size_t>(rng.uniform() * static_cast<double>(path.points.size()));
    const PolicyGain& base = path.points[std::min(idx, path.points.size() - 1)];
    Matrix dir(nu, nx);
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
    const double n = dir.norm();
    if (n == 0.0) continue;
    const PolicyGain k{base.k + dir * (radius * rng.uniform() / n)};
    const double j = average_cost(fleet, k, sigma0);
    if (std::isfinite(j) && j <= est.sublevel_c) samples.push_back(k);
  }
  if (samples.empty()) throw SamplingError("estimate_smoothness: no stabilizing samples found");
  est.sample_points = static_cast<int>(samples.size());

  std::vector<double> hess(samples.size());
  std::vector<Matrix> grads(samples.size());
  std::vector<double> costs(samples.size());
  parallel_for(samples.size(), 0, [&](std::size_t i) {
    hess[i] = hessian_norm(fleet, samples[i], sigma0, opts.hessian_step);
    grads[i] = average_gradient(fleet, samples[i], sigma0);
    costs[i] = average_cost(fleet, samples[i], sigma0);
  });
  est.l_hat = *std::max_element(hess.begin(), hess.end());
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double dk = (samples[i + 1].k - samples[i].k).norm();
    if (dk > 0.0) est.l_hat = std::max(est.l_hat, (grads[i + 1] - grads[i]).norm() / dk);
  }
  est.mu_hat = std::numeric_limits<double>::infinity();
  const double floor = opts.gap_floor * (1.0 + std::abs(est.j_star));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double gap = costs[i] - est.j_star;
    if (gap <= floor) continue;
    est.mu_hat = std::min(est.mu_hat, grads[i].squaredNorm() / (2.0 * gap));
  }
  if (!std::isfinite(est.mu_hat)) {
    throw SamplingError("estimate_smoothness: every sample sits at the optimum");
  }
  return est;
}

// ---------------------------------------------------------------------------
// One-step descent inequality.

struct DescentCheck {
  bool applicable = false;  // beta_t < 1 and finite costs
  double beta_t = 0.0;
  double lhs = 0.0;         // J_avg(K_{t+1})
  double rhs = 0.0;         // J_avg(K_t) - eta [(1-b) - (L eta/2)(1+b)^2] ||g||^2
  double margin = 0.0;      // rhs - lhs
  double eta_max = 0.0;
  bool eta_within_bound = false;
  bool satisfied = false;
};

inline DescentCheck check_one_step_descent(const RoundRecord& record, double eta, double l_hat,
                                           double rel_tol = 1e-12) {
  DescentCheck c;
  c.beta_t = record.beta_t;
  c.lhs = record.cost_avg;
  if (!(record.beta_t < 1.0) || !std::isfinite(record.cost_before) ||
      !std::isfinite(record.cost_avg)) {
    return c;
  }
  c.applicable = true;
  const double b = record.beta_t;
  const double g2 = record.grad_norm * record.grad_norm;
  c.rhs = record.cost_before - eta * ((1.0 - b) - 0.5 * l_hat * eta * (1.0 + b) * (1.0 + b)) * g2;
  c.margin = c.rhs - c.lhs;
  c.eta_max = max_stepsize(b, l_hat);
  c.eta_within_bound = eta > 0.0 ? eta < c.eta_max : true;
  c.satisfied = c.lhs <= c.rhs + rel_tol * (1.0 + std::abs(record.cost_before));
  return c;
}

struct DescentScan {
  int rounds = 0;
  int premises_hold = 0;       // applicable and eta within bound
  int satisfied_given_premises = 0;
  int non_increasing = 0;      // J(K_{t+1}) <= J(K_t)
  double fraction_satisfied() const {
    return premises_hold == 0 ? 1.0 : static_cast<double>(satisfied_given_premises) / premises_hold;
  }
  double fraction_non_increasing() const {
    return rounds == 0 ? 1.0 : static_cast<double>(non_increasing) / rounds;
  }
};

inline DescentScan scan_descent(const RunTrace& trace, double l_hat) {
  DescentScan s;
  for (const auto& r : trace.records) {
    ++s.rounds;
    if (r.cost_avg <= r.cost_before) ++s.non_increasing;
    const DescentCheck c = check_one_step_descent(r, trace.config.eta, l_hat);
    if (c.applicable && c.eta_within_bound) {
      ++s.premises_hold;
      if (c.satisfied) ++s.satisfied_given_premises;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Projection-error concentration sweep.

inline double projection_bound_shape(double d, double m, double delta, double g_norm,
                                     double sigma, double b, double horizon = 1.0) {
  const double lg = (d - 1.0) * std::log(2.0 * d * horizon / delta) / m;
  return std::sqrt(lg) * (g_norm + sigma) + lg * (g_norm + b);
}

struct BoundCell {
  int d = 0;
  int m = 0;
  bool heterogeneous = false;
  double sigma = 0.0;
  double b = 0.0;
  double g_norm = 0.0;
  double median = 0.0;
  double quantile = 0.0;  // empirical (1 - delta) quantile of ||e_proj||
  double shape = 0.0;
  double c_hat = 0.0;     // quantile / shape
  int trials = 0;
};

struct BoundSlope {
  int d = 0;
  bool heterogeneous = false;
  double median_slope = 0.0;
  double quantile_slope = 0.0;
};

struct BoundCheckReport {
  double delta = 0.0;
  std::vector<BoundCell> cells;
  std::vector<BoundSlope> slopes;
  double c_hat = 0.0;  // max over cells: conservative constant for zeta_t
};

struct SweepOptions {
  bool include_heterogeneous = true;
  double hetero_sigma = 0.5;  // relative to ||g_tilde|| = 1
  int workers = 0;
};

inline double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace detail {

inline double empirical_quantile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const double pos = p * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline Vector unit_vector(int d, Rng& rng) {
  Vector g(d);
  for (int i = 0; i < d; ++i) g(i) = rng.normal();
  return g / g.norm();
}

}  // namespace detail

// For every (d, m): fixed unit-norm g_tilde; homogeneous cells give every
// agent g_tilde, heterogeneous cells add centered deviations rescaled to
// mean-square sigma. Each trial draws fresh Rademacher directions.
inline BoundCheckReport projection_bound_sweep(std::span<const int> d_list,
                                               std::span<const int> m_list, double delta,
                                               int trials, std::uint64_t seed,
                                               const SweepOptions& opts = {}) {
  if (trials < 1) throw PreconditionError("projection_bound_sweep: trials must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw PreconditionError("projection_bound_sweep: delta in (0,1)");
  BoundCheckReport report;
  report.delta = delta;
  std::vector<BoundCell> cells;
  for (int hetero = 0; hetero <= (opts.include_heterogeneous ? 1 : 0); ++hetero) {
    for (int d : d_list) {
      for (int m : m_list) {
        BoundCell c;
        c.d = d;
        c.m = m;
        c.heterogeneous = hetero == 1;
        c.trials = trials;
        cells.push_back(c);
      }
    }
  }
  parallel_for(cells.size(), opts.workers, [&](std::size_t ci) {
    BoundCell& c = cells[ci];
    Rng rng(derive_seed(seed, StreamPurpose::kBoundSweep,
                        {static_cast<std::uint64_t>(c.d), static_cast<std::uint64_t>(c.m),
                         static_cast<std::uint64_t>(c.heterogeneous)}));
    const Vector g = detail::unit_vector(c.d, rng);
    std::vector<Vector> locals(static_cast<std::size_t>(c.m), g);
    if (c.heterogeneous) {
      Vector mean = Vector::Zero(c.d);
      for (auto& v : locals) {
        v = Vector(c.d);
        for (int i = 0; i < c.d; ++i) v(i) = rng.normal();
        mean += v;
      }
      mean /= c.m;
      double ss = 0.0;
      for (auto& v : locals) {
        v -= mean;
        ss += v.squaredNorm();
      }
      const double scale = c.m > 1 && ss > 0.0 ? opts.hetero_sigma / std::sqrt(ss / c.m) : 0.0;
      for (auto& v : locals) v = g + scale * v;
    }
    std::vector<Matrix> as_mats;
    as_mats.reserve(locals.size());
    for (const auto& v : locals) as_mats.emplace_back(v);
    const HeterogeneityStats hs = heterogeneity_stats(as_mats);
    Vector g_tilde = Vector::Zero(c.d);
    for (const auto& v : locals) g_tilde += v;
    g_tilde /= c.m;
    c.sigma = hs.sigma;
    c.b = hs.b;
    c.g_norm = g_tilde.norm();

    std::vector<double> errs(static_cast<std::size_t>(trials));
    for (int t = 0; t < trials; ++t) {
      Vector acc = Vector::Zero(c.d);
      for (int n = 0; n < c.m; ++n) {
        const Seed s{derive_seed(seed, StreamPurpose::kBoundSweep,
                                 {static_cast<std::uint64_t>(ci), static_cast<std::uint64_t>(t),
                                  static_cast<std::uint64_t>(n)})};
        const Vector v = rademacher_direction(c.d, s);
        acc += v.dot(locals[static_cast<std::size_t>(n)]) * v;
      }
      const Vector g_bar = (static_cast<double>(c.d) / c.m) * acc;
      errs[static_cast<std::size_t>(t)] = (g_bar - g_tilde).norm();
    }
    c.median = detail::empirical_quantile(errs, 0.5);
    c.quantile = detail::empirical_quantile(errs, 1.0 - delta);
    c.shape = projection_bound_shape(c.d, c.m, delta, c.g_norm, c.sigma, c.b);
    c.c_hat = c.shape > 0.0 ? c.quantile / c.shape : 0.0;
  });
  report.cells = cells;
  for (const auto& c : cells) report.c_hat = std::max(report.c_hat, c.c_hat);

  for (int hetero = 0; hetero <= (opts.include_heterogeneous ? 1 : 0); ++hetero) {
    for (int d : d_list) {
      std::vector<double> lx, lmed, lq;
      for (const auto& c : cells) {
        if (c.d != d || c.heterogeneous != (hetero == 1)) continue;
        lx.push_back(std::log(static_cast<double>(c.m)));
        lmed.push_back(std::log(c.median));
        lq.push_back(std::log(c.quantile));
      }
      if (lx.size() < 2) continue;
      report.slopes.push_back({d, hetero == 1, least_squares_slope(lx, lmed), least_squares_slope(lx, lq)});
    }
  }
  return report;
}

inline nlohmann::json to_json(const BoundCheckReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"d", c.d}, {"m", c.m}, {"heterogeneous", c.heterogeneous},
                     {"sigma", c.sigma}, {"b", c.b}, {"g_norm", c.g_norm},
                     {"median", c.median}, {"quantile", c.quantile}, {"shape", c.shape},
                     {"c_hat", c.c_hat}, {"trials", c.trials}});
  }
  nlohmann::json slopes = nlohmann::json::array();
  for (const auto& s : r.slopes) {
    slopes.push_back({{"d", s.d}, {"heterogeneous", s.heterogeneous},
                      {"median_slope", s.median_slope}, {"quantile_slope", s.quantile_slope}});
  }
  return {{"delta", r.delta}, {"c_hat", r.c_hat}, {"cells", cells}, {"slopes", slopes}};
}

// ---------------------------------------------------------------------------
// Stability condition eps + zeta_t <= beta ||g_t||.

struct StabilityReport {
  std::vector<double> zeta;       // per round
  double required_beta = 0.0;     // smallest uniform beta meeting the condition
  bool satisfiable = false;       // required_beta < 1
  bool degenerate = false;        // some ||g_t|| == 0
  double eta_max = 0.0;           // stepsize bound at required_beta (0 if unsatisfiable)
  bool eta_ok = false;            // configured eta below eta_max
  double realized_max_beta = 0.0; // max_t ||e_tot|| / ||g_t||
  bool conservative = false;      // realized_max_beta < required_beta
};

inline StabilityReport check_stability_condition(const RunTrace& trace, double epsilon,
                                                 double delta, double c_hat, double l_hat) {
  StabilityReport rep;
  const double d = static_cast<double>(trace.initial_gain.k.size());
  const double m = static_cast<double>(trace.config.m);
  const double horizon = static_cast<double>(std::max<std::size_t>(trace.records.size(), 1));
  for (const auto& r : trace.records) {
    const double zeta = c_hat * projection_bound_shape(d, m, delta, r.zo_norm, r.sigma_t, r.b_t, horizon);
    rep.zeta.push_back(zeta);
    if (!(r.grad_norm > 0.0)) {
      rep.degenerate = true;
      continue;
    }
    rep.required_beta = std::max(rep.required_beta, (epsilon + zeta) / r.grad_norm);
    if (std::isfinite(r.beta_t)) rep.realized_max_beta = std::max(rep.realized_max_beta, r.beta_t);
  }
  rep.satisfiable = !rep.degenerate && rep.required_beta < 1.0;
  if (rep.satisfiable) {
    rep.eta_max = max_stepsize(rep.required_beta, l_hat);
    rep.eta_ok = trace.config.eta < rep.eta_max;
  }
  rep.conservative = rep.realized_max_beta < rep.required_beta;
  return rep;
}

// ---------------------------------------------------------------------------
// Linear-rate envelope.

struct RateReport {
  double rho_hat = 1.0;
  bool vacuous = false;     // rho_hat >= 1 (or beta >= 1)
  int rounds_checked = 0;
  int rounds_satisfied = 0;
  int rounds_excluded = 0;  // gap at or below the numerical floor
  double empirical_rate = 0.0;  // exp(slope of log gap vs t)
  double fraction() const {
    return rounds_checked == 0 ? 0.0 : static_cast<double>(rounds_satisfied) / rounds_checked;
  }
};

inline RateReport check_linear_rate(const RunTrace& trace, const SmoothnessEstimate& est,
                                    double beta, int skip_rounds = 10, double floor_rel = 1e-9) {
  RateReport rep;
  rep.rho_hat = beta < 1.0 ? contraction_factor(beta, est.mu_hat, est.l_hat) : 1.0;
  rep.vacuous = !(beta < 1.0) || rep.rho_hat >= 1.0 - 1e-15;
  const double floor = floor_rel * (1.0 + std::abs(est.j_star));
  std::vector<double> ts, lg;
  for (const auto& r : trace.records) {
    const double gap_now = r.cost_before - est.j_star;
    const double gap_next = r.cost_avg - est.j_star;
    if (gap_now > floor) {
      ts.push_back(r.round);
      lg.push_back(std::log(gap_now));
    }
    if (r.round < skip_rounds) continue;
    if (!(gap_now > floor) || !(gap_next > floor)) {
      ++rep.rounds_excluded;
      continue;
    }
    ++rep.rounds_checked;
    if (gap_next <= rep.rho_hat * gap_now) ++rep.rounds_satisfied;
  }
  rep.empirical_rate = ts.size() >= 2 ? std::exp(least_squares_slope(ts, lg)) : 0.0;
  return rep;
}

}  // namespace sfl
