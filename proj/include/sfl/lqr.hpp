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

// Exact LQR machinery: Schur stability, discrete Lyapunov and Riccati
// solvers, exact infinite-horizon costs and analytic policy gradients.
//
// The cost of a static gain u = -K x on x_{t+1} = A x_t + B u_t is
//
//   J(K) = E sum_t x_t' Q x_t + u_t' R u_t = trace(P_K Sigma0),
//   P_K  = (A - BK)' P_K (A - BK) + Q + K' R K,
//
// with x_0 zero-mean and covariance Sigma0. Its gradient is
//
//   grad J(K) = 2 ((R + B' P_K B) K - B' P_K A) Sigma_K,
//   Sigma_K   = Sigma0 + (A - BK) Sigma_K (A - BK)'.
//
// Everything here is a pure function of its arguments.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <string>

#include "sfl/errors.hpp"
#include "sfl/matrix.hpp"

namespace sfl {

struct LtiSystem {
  Matrix a;  // n_x x n_x
  Matrix b;  // n_x x n_u

  Eigen::Index nx() const { return a.rows(); }
  Eigen::Index nu() const { return b.cols(); }

  void validate() const {
    require_square(a, "LtiSystem::a");
    if (b.rows() != a.rows() || b.cols() == 0) {
      throw DimensionError("LtiSystem: b must be " + std::to_string(a.rows()) +
                           " x n_u, got " + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()));
    }
    if (!a.allFinite() || !b.allFinite()) throw DimensionError("LtiSystem: non-finite entries");
  }
};

struct CostMatrices {
  Matrix q;  // n_x x n_x, symmetric PSD
  Matrix r;  // n_u x n_u, symmetric PD

  void validate() const {
    require_square(q, "CostMatrices::q");
    require_square(r, "CostMatrices::r");
    if (!is_symmetric(q) || !is_symmetric(r)) {
      throw PreconditionError("CostMatrices: q and r must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> qe(q, Eigen::EigenvaluesOnly);
    if (qe.eigenvalues().minCoeff() < -1e-12 * (1.0 + q.norm())) {
      throw PreconditionError("CostMatrices: q must be positive semidefinite");
    }
    if (Eigen::LLT<Matrix>(r).info() != Eigen::Success) {
      throw PreconditionError("CostMatrices: r must be positive definite");
    }
  }
};

// Static state feedback u = -K x. Flattened dimension d = n_u * n_x.
struct PolicyGain {
  Matrix k;  // n_u x n_x

  Eigen::Index dim() const { return k.size(); }
};

inline void check_compatible(const LtiSystem& sys, const PolicyGain& k) {
  if (k.k.rows() != sys.nu() || k.k.cols() != sys.nx()) {
    throw DimensionError("policy gain is " + std::to_string(k.k.rows()) + "x" +
                         std::to_string(k.k.cols()) + ", system needs " +
                         std::to_string(sys.nu()) + "x" + std::to_string(sys.nx()));
  }
}

inline void check_compatible(const LtiSystem& sys, const CostMatrices& cost) {
  if (cost.q.rows() != sys.nx() || cost.q.cols() != sys.nx() ||
      cost.r.rows() != sys.nu() || cost.r.cols() != sys.nu()) {
    throw DimensionError("cost matrices do not match system dimensions");
  }
}

inline Matrix closed_loop(const LtiSystem& sys, const PolicyGain& k) {
  check_compatible(sys, k);
  return sys.a - sys.b * k.k;
}

inline double spectral_radius(const Matrix& m) {
  require_square(m, "spectral_radius");
  if (!m.allFinite()) throw DimensionError("spectral_radius: non-finite entries");
  if (m.rows() == 1) return std::abs(m(0, 0));
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline constexpr double kDefaultStabilityMargin = 1e-9;

inline bool is_schur_stable(const LtiSystem& sys, const PolicyGain& k,
                            double margin = kDefaultStabilityMargin) {
  const Matrix acl = closed_loop(sys, k);
  if (!acl.allFinite()) return false;
  return spectral_radius(acl) < 1.0 - margin;
}

namespace detail {

inline Matrix dlyap_kronecker(const Matrix& a, const Matrix& w) {
  const Eigen::Index n = a.rows();
  const Eigen::Index n2 = n * n;
  // Column-major vec: vec(A' P A) = (A' kron A') vec(P).
  Matrix lhs = Matrix::Identity(n2, n2);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index l = 0; l < n; ++l) {
        for (Eigen::Index k = 0; k < n; ++k) {
          lhs(c * n + r, l * n + k) -= a(l, c) * a(k, r);
        }
      }
    }
  }
  Eigen::PartialPivLU<Matrix> lu(lhs);
  const Eigen::Map<const Vector> rhs(w.data(), n2);
  Vector sol = lu.solve(rhs);
  Matrix p = Eigen::Map<Matrix>(sol.data(), n, n);
  // One round of iterative refinement on the residual equation.
  Matrix resid = w + a.transpose() * p * a - p;
  Vector corr = lu.solve(Eigen::Map<const Vector>(resid.data(), n2));
  p += Eigen::Map<Matrix>(corr.data(), n, n);
  return p;
}

// Smith doubling: P = sum_k (A')^k W A^k, squaring the horizon each pass.
inline Matrix dlyap_doubling(const Matrix& a, const Matrix& w, int max_iter = 200) {
  Matrix p = w;
  Matrix ak = a;
  for (int it = 0; it < max_iter; ++it) {
    Matrix inc = ak.transpose() * p * ak;
    p += inc;
    ak = ak * ak;
    if (inc.norm() <= 1e-17 * (1.0 + p.norm()) || ak.norm() == 0.0) return p;
  }
  throw ConvergenceError("solve_dlyap: doubling iteration did not converge");
}

}  // namespace detail

// Solves P = a_cl' P a_cl + w for stable a_cl. Kronecker solve up to n = 8,
// Smith doubling above that. Result is symmetrized.
inline Matrix solve_dlyap(const Matrix& a_cl, const Matrix& w) {
  require_square(a_cl, "solve_dlyap(a_cl)");
  require_square(w, "solve_dlyap(w)");
  if (w.rows() != a_cl.rows()) throw DimensionError("solve_dlyap: a_cl and w sizes differ");
  if (!is_symmetric(w)) throw PreconditionError("solve_dlyap: w must be symmetric");
  const double rho = spectral_radius(a_cl);
  if (!(rho < 1.0)) {
    throw InstabilityError("solve_dlyap: closed loop has spectral radius " + std::to_string(rho));
  }
  Matrix p = a_cl.rows() <= 8 ? detail::dlyap_kronecker(a_cl, w)
                              : detail::dlyap_doubling(a_cl, w);
  return symmetrized(p);
}

inline double dlyap_residual(const Matrix& a_cl, const Matrix& w, const Matrix& p) {
  return (p - a_cl.transpose() * p * a_cl - w).norm();
}

inline Matrix identity_covariance(const LtiSystem& sys) {
  return Matrix::Identity(sys.nx(), sys.nx());
}

// P_K for a stabilizing K.
inline Matrix cost_to_go(const LtiSystem& sys, const CostMatrices& cost, const PolicyGain& k) {
  check_compatible(sys, cost);
  if (!is_schur_stable(sys, k)) throw InstabilityError("policy does not stabilize the system");
  const Matrix acl = closed_loop(sys, k);
  return solve_dlyap(acl, symmetrized(cost.q + k.k.transpose() * cost.r * k.k));
}

inline double exact_cost(const LtiSystem& sys, const CostMatrices& cost, const PolicyGain& k,
                         const Matrix& sigma0) {
  const Matrix p = cost_to_go(sys, cost, k);
  return (p * sigma0).trace();
}

// +inf instead of an exception for destabilizing gains.
inline double exact_cost_or_inf(const LtiSystem& sys, const CostMatrices& cost,
                                const PolicyGain& k, const Matrix& sigma0) {
  if (!k.k.allFinite() || !is_schur_stable(sys, k)) {
    return std::numeric_limits<double>::infinity();
  }
  return exact_cost(sys, cost, k, sigma0);
}

// Steady-state covariance Sigma_K of the closed loop started from sigma0.
inline Matrix state_covariance(const LtiSystem& sys, const PolicyGain& k, const Matrix& sigma0) {
  if (!is_schur_stable(sys, k)) throw InstabilityError("policy does not stabilize the system");
  const Matrix acl = closed_loop(sys, k);
  return solve_dlyap(acl.transpose(), symmetrized(sigma0));
}

inline Matrix exact_policy_gradient(const LtiSystem& sys, const CostMatrices& cost,
                                    const PolicyGain& k, const Matrix& sigma0) {
  const Matrix p = cost_to_go(sys, cost, k);
  const Matrix sigma_k = state_covariance(sys, k, sigma0);
  const Matrix e = (cost.r + sys.b.transpose() * p * sys.b) * k.k - sys.b.transpose() * p * sys.a;
  return 2.0 * e * sigma_k;
}

struct DareOptions {
  int max_iterations = 10000;
  double tolerance = 1e-12;
};

inline Matrix riccati_map(const LtiSystem& sys, const CostMatrices& cost, const Matrix& p) {
  const Matrix btpa = sys.b.transpose() * p * sys.a;
  const Matrix s = cost.r + sys.b.transpose() * p * sys.b;
  return cost.q + sys.a.transpose() * p * sys.a - btpa.transpose() * s.ldlt().solve(btpa);
}

inline double dare_residual(const LtiSystem& sys, const CostMatrices& cost, const Matrix& p) {
  return (p - riccati_map(sys, cost, p)).norm();
}

inline Matrix gain_from_riccati(const LtiSystem& sys, const CostMatrices& cost, const Matrix& p) {
  const Matrix s = cost.r + sys.b.transpose() * p * sys.b;
  return s.ldlt().solve(sys.b.transpose() * p * sys.a);
}

// Structured doubling iteration (Chu, Fan & Lin) for the stabilizing DARE
// solution, followed by Newton-Kleinman polishing when the doubling result
// misses the residual target.
inline Matrix solve_dare(const LtiSystem& sys, const CostMatrices& cost,
                         const DareOptions& opts = {}) {
  sys.validate();
  cost.validate();
  check_compatible(sys, cost);
  const Eigen::Index n = sys.nx();
  const Matrix eye = Matrix::Identity(n, n);

  Matrix ak = sys.a;
  Matrix gk = sys.b * cost.r.llt().solve(sys.b.transpose());
  Matrix hk = cost.q;
  bool converged = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    Eigen::PartialPivLU<Matrix> w(eye + gk * hk);
    const Matrix w_inv_a = w.solve(ak);
    const Matrix h_next = hk + ak.transpose() * hk * w_inv_a;
    const Matrix g_next = gk + ak * w.solve(gk) * ak.transpose();
    const Matrix a_next = ak * w_inv_a;
    if (!h_next.allFinite() || !g_next.allFinite() || !a_next.allFinite()) {
      throw ConvergenceError("solve_dare: doubling iteration diverged (not stabilizable?)");
    }
    const double step = (h_next - hk).norm();
    hk = symmetrized(h_next);
    gk = symmetrized(g_next);
    ak = a_next;
    if (step <= opts.tolerance * (1.0 + hk.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("solve_dare: no convergence after " +
                           std::to_string(opts.max_iterations) + " iterations");
  }

  // Newton-Kleinman steps, kept while they reduce the residual.
  Matrix p = hk;
  double res = dare_residual(sys, cost, p);
  for (int polish = 0; polish < 8 && res > 0.0; ++polish) {
    const PolicyGain k{gain_from_riccati(sys, cost, p)};
    const Matrix acl = sys.a - sys.b * k.k;
    if (!(spectral_radius(acl) < 1.0)) break;
    const Matrix next = solve_dlyap(acl, symmetrized(cost.q + k.k.transpose() * cost.r * k.k));
    const double next_res = dare_residual(sys, cost, next);
    if (!(next_res < res)) break;
    p = next;
    res = next_res;
  }
  if (!p.allFinite() || !(dare_residual(sys, cost, p) <= 1e-9 * (1.0 + p.norm()))) {
    throw ConvergenceError("solve_dare: residual target not met");
  }
  const Matrix acl = sys.a - sys.b * gain_from_riccati(sys, cost, p);
  if (!(spectral_radius(acl) < 1.0)) {
    throw ConvergenceError("solve_dare: no stabilizing solution (not stabilizable?)");
  }
  return p;
}

inline PolicyGain optimal_gain(const LtiSystem& sys, const CostMatrices& cost,
                               const DareOptions& opts = {}) {
  const Matrix p = solve_dare(sys, cost, opts);
  return PolicyGain{gain_from_riccati(sys, cost, p)};
}

}  // namespace sfl
