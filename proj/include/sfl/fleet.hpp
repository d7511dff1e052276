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

// Heterogeneous agent populations built from a nominal model by structured
// perturbation: A_n = A0 + g1_n Z1, B_n = B0 + g2_n Z2 with g_n ~ U(0, eps).
// Agent 0 is the nominal system itself.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfl/errors.hpp"
#include "sfl/lqr.hpp"
#include "sfl/matrix.hpp"
#include "sfl/rng.hpp"

namespace sfl {

struct HeterogeneityMasks {
  Matrix z1;  // n_x x n_x
  Matrix z2;  // n_x x n_u
};

// All-ones masks scaled to unit spectral norm.
inline HeterogeneityMasks default_masks(Eigen::Index nx, Eigen::Index nu) {
  return {Matrix::Constant(nx, nx, 1.0 / std::sqrt(static_cast<double>(nx * nx))),
          Matrix::Constant(nx, nu, 1.0 / std::sqrt(static_cast<double>(nx * nu)))};
}

struct Fleet {
  std::vector<LtiSystem> systems;
  CostMatrices cost;
  LtiSystem nominal;
  double eps1 = 0.0;
  double eps2 = 0.0;

  std::size_t size() const { return systems.size(); }
  Eigen::Index nx() const { return nominal.nx(); }
  Eigen::Index nu() const { return nominal.nu(); }
  Eigen::Index dim() const { return nx() * nu(); }
};

struct NominalSetup {
  LtiSystem system;
  CostMatrices cost;
  PolicyGain k0;
};

inline NominalSetup nominal_system() {
  Matrix a0(3, 3);
  a0 << 1.20, 0.50, 0.40,
        0.01, 0.75, 0.30,
        0.10, 0.02, 1.50;
  return {LtiSystem{a0, Matrix::Identity(3, 3)},
          CostMatrices{2.0 * Matrix::Identity(3, 3), 0.5 * Matrix::Identity(3, 3)},
          PolicyGain{1.62 * Matrix::Identity(3, 3)}};
}

struct FleetOptions {
  int max_retries = 1000;  // per agent
  double stability_margin = kDefaultStabilityMargin;
};

inline Fleet generate_fleet(int m, double eps1, double eps2, const LtiSystem& nominal,
                            const CostMatrices& cost, const HeterogeneityMasks& masks,
                            const PolicyGain& k0, Rng& rng, const FleetOptions& opts = {}) {
  if (m < 1) throw PreconditionError("generate_fleet: m must be >= 1");
  if (eps1 < 0.0 || eps2 < 0.0) throw PreconditionError("generate_fleet: eps must be >= 0");
  nominal.validate();
  cost.validate();
  check_compatible(nominal, cost);
  if (masks.z1.rows() != nominal.nx() || masks.z1.cols() != nominal.nx() ||
      masks.z2.rows() != nominal.nx() || masks.z2.cols() != nominal.nu()) {
    throw DimensionError("generate_fleet: mask shapes do not match the nominal system");
  }
  if (!is_schur_stable(nominal, k0, opts.stability_margin)) {
    throw PreconditionError("generate_fleet: K0 does not stabilize the nominal system");
  }

  Fleet fleet;
  fleet.cost = cost;
  fleet.nominal = nominal;
  fleet.eps1 = eps1;
  fleet.eps2 = eps2;
  fleet.systems.reserve(m);
  fleet.systems.push_back(nominal);
  for (int n = 1; n < m; ++n) {
    bool accepted = false;
    for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
      const double g1 = rng.uniform(0.0, eps1);
      const double g2 = rng.uniform(0.0, eps2);
      LtiSystem sys{nominal.a + g1 * masks.z1, nominal.b + g2 * masks.z2};
      if (is_schur_stable(sys, k0, opts.stability_margin)) {
        fleet.systems.push_back(std::move(sys));
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw SamplingError("generate_fleet: heterogeneity too large, agent " + std::to_string(n) +
                          " not stabilized by K0 after " + std::to_string(opts.max_retries) +
                          " retries");
    }
  }
  return fleet;
}

struct HeterogeneityStats {
  double sigma = 0.0;  // sqrt(mean ||g_n - mean||^2)
  double b = 0.0;      // max ||g_n - mean||
};

// Deviations are formed as (1/M) sum_j (g_n - g_j) so identical inputs give
// exactly zero.
inline HeterogeneityStats heterogeneity_stats(std::span<const Matrix> gradients) {
  if (gradients.empty()) throw PreconditionError("heterogeneity_stats: empty gradient list");
  for (const auto& g : gradients) {
    if (g.rows() != gradients[0].rows() || g.cols() != gradients[0].cols()) {
      throw DimensionError("heterogeneity_stats: gradients differ in shape");
    }
  }
  const double m = static_cast<double>(gradients.size());
  HeterogeneityStats out;
  double sq = 0.0;
  Matrix dev(gradients[0].rows(), gradients[0].cols());
  for (const auto& gn : gradients) {
    dev.setZero();
    for (const auto& gj : gradients) dev += gn - gj;
    const double norm = dev.norm() / m;
    sq += norm * norm;
    out.b = std::max(out.b, norm);
  }
  out.sigma = std::sqrt(sq / m);
  return out;
}

// JSON: matrices as {"rows", "cols", "data"} with data row-major.
inline nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  const Vector flat = flatten(m);
  data.assign(flat.data(), flat.data() + flat.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw DimensionError("matrix_from_json: data length does not match dims");
  }
  return unflatten(Eigen::Map<const Vector>(data.data(), rows * cols), rows, cols);
}

inline nlohmann::json fleet_to_json(const Fleet& fleet) {
  nlohmann::json systems = nlohmann::json::array();
  for (const auto& s : fleet.systems) {
    systems.push_back({{"a", matrix_to_json(s.a)}, {"b", matrix_to_json(s.b)}});
  }
  return {{"m", fleet.systems.size()},
          {"eps1", fleet.eps1},
          {"eps2", fleet.eps2},
          {"cost", {{"q", matrix_to_json(fleet.cost.q)}, {"r", matrix_to_json(fleet.cost.r)}}},
          {"nominal", {{"a", matrix_to_json(fleet.nominal.a)}, {"b", matrix_to_json(fleet.nominal.b)}}},
          {"systems", systems}};
}

inline Fleet fleet_from_json(const nlohmann::json& j) {
  Fleet fleet;
  fleet.eps1 = j.at("eps1").get<double>();
  fleet.eps2 = j.at("eps2").get<double>();
  fleet.cost = {matrix_from_json(j.at("cost").at("q")), matrix_from_json(j.at("cost").at("r"))};
  fleet.nominal = {matrix_from_json(j.at("nominal").at("a")),
                   matrix_from_json(j.at("nominal").at("b"))};
  for (const auto& s : j.at("systems")) {
    fleet.systems.push_back({matrix_from_json(s.at("a")), matrix_from_json(s.at("b"))});
    fleet.systems.back().validate();
  }
  if (fleet.systems.empty()) throw DimensionError("fleet_from_json: no systems");
  fleet.nominal.validate();
  fleet.cost.validate();
  return fleet;
}

}  // namespace sfl
