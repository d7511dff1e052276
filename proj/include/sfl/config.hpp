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

// Experiment configuration: a flat "key = value" text format, one entry per
// line, '#' starts a comment. Every key below is optional; defaults are the
// reference protocol (M = 10 agents, T = 2000 rounds, eta = 0.01, five
// perturbations of radius 0.1 with 15-step rollouts, 10 Monte Carlo runs).

#include <cstdint>
#include <charconv>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sfl/errors.hpp"
#include "sfl/zo_gradient.hpp"

namespace sfl {

enum class AlgorithmSelection { kScalar, kBaseline, kBoth };
enum class OracleMode { kRollout, kExact };
enum class BitPolicy { kScalarsOnly, kScalarsPlusSeeds };
enum class InstabilityPolicy { kHalt, kCap };
// kExhaustive replaces each random direction by the average over all 2^d
// sign patterns (test hook; makes the scalar update equal the plain mean).
enum class DirectionMode { kRandom, kExhaustive };

struct ExperimentConfig {
  int m = 10;
  int t_rounds = 2000;
  double eta = 0.01;
  int n_s = 5;
  int tau = 15;
  double radius = 0.1;
  int trajectories_per_perturbation = 1;
  double eps1 = 0.0;
  double eps2 = 0.0;
  std::vector<double> eps_grid{0.0, 0.5};  // sweep: eps1 = eps2 = value
  int mc_runs = 10;
  std::uint64_t run_seed = 20260101;
  AlgorithmSelection algorithm = AlgorithmSelection::kBoth;
  OracleMode oracle_mode = OracleMode::kRollout;
  BitPolicy bit_policy = BitPolicy::kScalarsOnly;
  InstabilityPolicy instability_policy = InstabilityPolicy::kHalt;
  DirectionMode direction_mode = DirectionMode::kRandom;
  double initial_state_variance = 1e-3;  // x0 ~ N(0, s I); exact costs use Sigma0 = s I
  double k0_scale = 1.62;                // K0 = k0_scale * I
  double cost_cap = 1e12;
  double divergence_threshold = 1e8;
  bool fix_fleet = false;
  int workers = 1;
  double budget_bits = 6e5;
  // Heterogeneity masks, row-major (n_x*n_x and n_x*n_u values). Empty
  // selects the all-ones masks scaled to unit spectral norm.
  std::vector<double> mask_z1;
  std::vector<double> mask_z2;

  RolloutParams rollout_params() const {
    RolloutParams p;
    p.n_s = n_s;
    p.tau = tau;
    p.smoothing_radius = radius;
    p.trajectories_per_perturbation = trajectories_per_perturbation;
    p.initial_state_variance = initial_state_variance;
    p.divergence_threshold = divergence_threshold;
    p.cost_cap = cost_cap;
    p.oracle = CostOracle::kRollout;
    return p;
  }

  void validate() const {
    if (m < 1) throw ConfigError("m must be >= 1");
    if (t_rounds < 0) throw ConfigError("t_rounds must be >= 0");
    if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
    if (eps1 < 0.0 || eps2 < 0.0) throw ConfigError("eps1/eps2 must be >= 0");
    for (double e : eps_grid) {
      if (e < 0.0) throw ConfigError("eps_grid entries must be >= 0");
    }
    if (mc_runs < 1) throw ConfigError("mc_runs must be >= 1");
    if (workers < 0) throw ConfigError("workers must be >= 0");
    if (!(budget_bits >= 0.0)) throw ConfigError("budget_bits must be >= 0");
    rollout_params().validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config: bad numeric value for '" + key + "': '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: bad boolean for '" + key + "': '" + value + "'");
}

template <typename E>
E parse_enum(const std::string& key, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, e] : table) {
    if (value == name) return e;
  }
  throw ConfigError("config: unknown value '" + value + "' for '" + key + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline const char* to_string(AlgorithmSelection a) {
  switch (a) {
    case AlgorithmSelection::kScalar: return "scalar";
    case AlgorithmSelection::kBaseline: return "baseline";
    case AlgorithmSelection::kBoth: return "both";
  }
  return "?";
}
inline const char* to_string(OracleMode o) { return o == OracleMode::kRollout ? "rollout" : "exact"; }
inline const char* to_string(BitPolicy b) {
  return b == BitPolicy::kScalarsOnly ? "scalars_only" : "scalars_plus_seeds";
}
inline const char* to_string(InstabilityPolicy p) {
  return p == InstabilityPolicy::kHalt ? "halt" : "cap";
}
inline const char* to_string(DirectionMode d) {
  return d == DirectionMode::kRandom ? "random" : "exhaustive";
}

// Applies one key/value pair; unknown keys are an error.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "m") c.m = parse_number<int>(key, value);
  else if (key == "t_rounds") c.t_rounds = parse_number<int>(key, value);
  else if (key == "eta") c.eta = parse_number<double>(key, value);
  else if (key == "n_s") c.n_s = parse_number<int>(key, value);
  else if (key == "tau") c.tau = parse_number<int>(key, value);
  else if (key == "radius") c.radius = parse_number<double>(key, value);
  else if (key == "trajectories_per_perturbation")
    c.trajectories_per_perturbation = parse_number<int>(key, value);
  else if (key == "eps1") c.eps1 = parse_number<double>(key, value);
  else if (key == "eps2") c.eps2 = parse_number<double>(key, value);
  else if (key == "eps") c.eps1 = c.eps2 = parse_number<double>(key, value);
  else if (key == "eps_grid") {
    c.eps_grid.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) c.eps_grid.push_back(parse_number<double>(key, detail::trim(item)));
    if (c.eps_grid.empty()) throw ConfigError("config: eps_grid is empty");
  }
  else if (key == "mask_z1" || key == "mask_z2") {
    std::vector<double>& target = key == "mask_z1" ? c.mask_z1 : c.mask_z2;
    target.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!detail::trim(item).empty()) target.push_back(parse_number<double>(key, detail::trim(item)));
    }
  }
  else if (key == "mc_runs") c.mc_runs = parse_number<int>(key, value);
  else if (key == "run_seed") c.run_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "algorithm")
    c.algorithm = detail::parse_enum<AlgorithmSelection>(
        key, value, {{"scalar", AlgorithmSelection::kScalar},
                     {"baseline", AlgorithmSelection::kBaseline},
                     {"both", AlgorithmSelection::kBoth}});
  else if (key == "oracle_mode")
    c.oracle_mode = detail::parse_enum<OracleMode>(
        key, value, {{"rollout", OracleMode::kRollout}, {"exact", OracleMode::kExact}});
  else if (key == "bit_policy")
    c.bit_policy = detail::parse_enum<BitPolicy>(
        key, value, {{"scalars_only", BitPolicy::kScalarsOnly},
                     {"scalars_plus_seeds", BitPolicy::kScalarsPlusSeeds}});
  else if (key == "instability_policy")
    c.instability_policy = detail::parse_enum<InstabilityPolicy>(
        key, value, {{"halt", InstabilityPolicy::kHalt}, {"cap", InstabilityPolicy::kCap}});
  else if (key == "direction_mode")
    c.direction_mode = detail::parse_enum<DirectionMode>(
        key, value, {{"random", DirectionMode::kRandom}, {"exhaustive", DirectionMode::kExhaustive}});
  else if (key == "initial_state_variance") c.initial_state_variance = parse_number<double>(key, value);
  else if (key == "k0_scale") c.k0_scale = parse_number<double>(key, value);
  else if (key == "cost_cap") c.cost_cap = parse_number<double>(key, value);
  else if (key == "divergence_threshold") c.divergence_threshold = parse_number<double>(key, value);
  else if (key == "fix_fleet") c.fix_fleet = detail::parse_bool(key, value);
  else if (key == "workers") c.workers = parse_number<int>(key, value);
  else if (key == "budget_bits") c.budget_bits = parse_number<double>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

// "key=value" or "key = value".
inline void apply_assignment(ExperimentConfig& c, std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("config: expected 'key = value', got '" + std::string(line) + "'");
  }
  const std::string key = detail::trim(line.substr(0, eq));
  const std::string value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError("config: empty key");
  apply_setting(c, key, value);
}

inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}) {
  std::size_t start = 0;
  int line_no = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!detail::trim(line).empty()) {
      try {
        apply_assignment(base, line);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = end + 1;
  }
  base.validate();
  return base;
}

inline std::string to_config_text(const ExperimentConfig& c) {
  using detail::format_double;
  std::ostringstream os;
  const auto join = [](const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + format_double(xs[i]);
    return out;
  };
  const std::string grid = join(c.eps_grid);
  os << "m = " << c.m << '\n'
     << "t_rounds = " << c.t_rounds << '\n'
     << "eta = " << format_double(c.eta) << '\n'
     << "n_s = " << c.n_s << '\n'
     << "tau = " << c.tau << '\n'
     << "radius = " << format_double(c.radius) << '\n'
     << "trajectories_per_perturbation = " << c.trajectories_per_perturbation << '\n'
     << "eps1 = " << format_double(c.eps1) << '\n'
     << "eps2 = " << format_double(c.eps2) << '\n'
     << "eps_grid = " << grid << '\n'
     << "mc_runs = " << c.mc_runs << '\n'
     << "run_seed = " << c.run_seed << '\n'
     << "algorithm = " << to_string(c.algorithm) << '\n'
     << "oracle_mode = " << to_string(c.oracle_mode) << '\n'
     << "bit_policy = " << to_string(c.bit_policy) << '\n'
     << "instability_policy = " << to_string(c.instability_policy) << '\n'
     << "direction_mode = " << to_string(c.direction_mode) << '\n'
     << "initial_state_variance = " << format_double(c.initial_state_variance) << '\n'
     << "k0_scale = " << format_double(c.k0_scale) << '\n'
     << "cost_cap = " << format_double(c.cost_cap) << '\n'
     << "divergence_threshold = " << format_double(c.divergence_threshold) << '\n'
     << "fix_fleet = " << (c.fix_fleet ? "true" : "false") << '\n'
     << "workers = " << c.workers << '\n'
     << "budget_bits = " << format_double(c.budget_bits) << '\n'
     << "mask_z1 = " << join(c.mask_z1) << '\n'
     << "mask_z2 = " << join(c.mask_z2) << '\n';
  return os.str();
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"m", c.m},
          {"t_rounds", c.t_rounds},
          {"eta", c.eta},
          {"n_s", c.n_s},
          {"tau", c.tau},
          {"radius", c.radius},
          {"trajectories_per_perturbation", c.trajectories_per_perturbation},
          {"eps1", c.eps1},
          {"eps2", c.eps2},
          {"eps_grid", c.eps_grid},
          {"mc_runs", c.mc_runs},
          {"run_seed", c.run_seed},
          {"algorithm", to_string(c.algorithm)},
          {"oracle_mode", to_string(c.oracle_mode)},
          {"bit_policy", to_string(c.bit_policy)},
          {"instability_policy", to_string(c.instability_policy)},
          {"direction_mode", to_string(c.direction_mode)},
          {"initial_state_variance", c.initial_state_variance},
          {"k0_scale", c.k0_scale},
          {"cost_cap", c.cost_cap},
          {"divergence_threshold", c.divergence_threshold},
          {"fix_fleet", c.fix_fleet},
          {"workers", c.workers},
          {"budget_bits", c.budget_bits},
          {"mask_z1", c.mask_z1},
          {"mask_z2", c.mask_z2}};
}

}  // namespace sfl
