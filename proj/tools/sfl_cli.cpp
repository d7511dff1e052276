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


// sfl: command-line driver for ScalarFedLQR experiments.
//
//   sfl simulate  [--config F] [--set k=v]...   one (eps1, eps2) cell
//   sfl sweep     [--config F] [--set k=v]...   every eps in eps_grid
//   sfl plotdata  [--from DIR]                  rebuild plot CSVs from stored traces
//   sfl validate  [--config F] [--quick]        theory checks, nonzero exit on failure
//   sfl selftest                                codec and solver self checks
//
// Output goes to --out, else $SFL_OUTPUT_DIR, else ./sfl_output.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfl/scalarfedlqr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  int workers = -1;
};

fs::path resolve_output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SFL_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return "sfl_output";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw sfl::ConfigError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw sfl::ConfigError("cannot write " + p.string());
  out << text;
}

sfl::ExperimentConfig load_config(const CommonArgs& args) {
  sfl::ExperimentConfig cfg;
  if (!args.config_file.empty()) cfg = sfl::parse_config(read_file(args.config_file));
  for (const auto& s : args.sets) sfl::apply_assignment(cfg, s);
  if (args.workers >= 0) cfg.workers = args.workers;
  cfg.validate();
  return cfg;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string trace_file_name(const sfl::LabeledTrace& t) {
  char run[16];
  std::snprintf(run, sizeof(run), "%03d", t.run_index);
  return std::string("traces/") + sfl::to_string(t.algorithm) + "_eps" +
         sfl::format_number(t.trace.config.eps1) + "_" + sfl::format_number(t.trace.config.eps2) +
         "_run" + run + ".csv";
}

void write_plots(const fs::path& dir, const std::vector<sfl::MetricSeries>& series, double budget) {
  for (auto kind : {sfl::PlotKind::kGapVsRound, sfl::PlotKind::kRecoveryVsBits,
                    sfl::PlotKind::kBudgetBar}) {
    std::ostringstream os;
    sfl::emit_plot_data(series, kind, os, budget);
    write_file(dir / sfl::plot_file_name(kind), os.str());
  }
}

json series_summary(const sfl::MetricSeries& s, double budget) {
  const auto bp = sfl::budget_point(s, budget);
  const std::size_t last = s.size() - 1;
  return {{"algorithm", sfl::to_string(s.algorithm)},
          {"eps1", s.eps1},
          {"eps2", s.eps2},
          {"runs", s.runs},
          {"final_round", s.round[last]},
          {"final_gap_mean", finite_or_null(s.gap_mean[last])},
          {"final_gap_stderr", finite_or_null(s.gap_stderr[last])},
          {"final_recovery_mean", s.recovery_mean[last]},
          {"budget_bits", budget},
          {"budget_round", bp.round},
          {"budget_bits_used", bp.bits_cum},
          {"budget_recovery_mean", bp.recovery_mean},
          {"budget_recovery_stderr", finite_or_null(bp.recovery_stderr)}};
}

void write_outputs(const fs::path& dir, const std::string& command,
                   const sfl::ExperimentConfig& cfg, const sfl::ExperimentResult& result) {
  fs::create_directories(dir / "traces");
  json manifest = {{"command", command},
                   {"config", sfl::to_json(cfg)},
                   {"config_text", sfl::to_config_text(cfg)},
                   {"trace_header", sfl::kTraceCsvHeader}};
  json traces = json::array();
  json runs = json::array();
  for (const auto& t : result.traces) {
    const std::string file = trace_file_name(t);
    std::ostringstream os;
    sfl::write_trace_csv(t.trace, os);
    write_file(dir / file, os.str());
    traces.push_back({{"algorithm", sfl::to_string(t.algorithm)},
                      {"eps1", t.trace.config.eps1},
                      {"eps2", t.trace.config.eps2},
                      {"run_index", t.run_index},
                      {"run_seed", t.trace.config.run_seed},
                      {"file", file},
                      {"rounds_completed", t.trace.records.size()},
                      {"halted", t.trace.halted},
                      {"initial_ref_gap", finite_or_null(t.trace.initial_ref_gap)},
                      {"initial_cost_avg", finite_or_null(t.trace.initial_cost_avg)},
                      {"reference_cost", t.trace.reference_cost}});
    json run = sfl::trace_summary_json(t.trace);
    run.erase("config");
    run["file"] = file;
    run["run_index"] = t.run_index;
    runs.push_back(std::move(run));
  }
  manifest["traces"] = std::move(traces);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  json series = json::array();
  for (const auto& s : result.series) series.push_back(series_summary(s, cfg.budget_bits));
  write_file(dir / "summary.json",
             json{{"command", command}, {"series", series}, {"runs", runs}}.dump(2) + "\n");
  write_file(dir / "config.txt", sfl::to_config_text(cfg));
  write_plots(dir, result.series, cfg.budget_bits);
}

void print_series(const std::vector<sfl::MetricSeries>& series, double budget) {
  std::printf("%-9s %6s %6s %12s %12s %14s\n", "algorithm", "eps1", "eps2", "final_gap",
              "final_rec%", "rec%@budget");
  for (const auto& s : series) {
    const auto bp = sfl::budget_point(s, budget);
    std::printf("%-9s %6.3g %6.3g %12.5g %12.2f %14.2f\n", sfl::to_string(s.algorithm), s.eps1,
                s.eps2, s.gap_mean.back(), s.recovery_mean.back(), bp.recovery_mean);
  }
}

int cmd_run(const CommonArgs& args, bool sweep) {
  const sfl::ExperimentConfig cfg = load_config(args);
  const fs::path dir = resolve_output_dir(args.out_dir);
  const auto result = sweep ? sfl::run_sweep(cfg) : sfl::run_experiment(cfg);
  write_outputs(dir, sweep ? "sweep" : "simulate", cfg, result);
  print_series(result.series, cfg.budget_bits);
  std::printf("wrote %zu traces to %s\n", result.traces.size(), dir.string().c_str());
  return 0;
}

int cmd_plotdata(const std::string& from, const std::string& out, double budget_flag) {
  const fs::path src = resolve_output_dir(from);
  const fs::path dst = out.empty() ? src : fs::path(out);
  const json manifest = json::parse(read_file(src / "manifest.json"));
  const sfl::ExperimentConfig cfg =
      sfl::parse_config(manifest.at("config_text").get<std::string>());
  const sfl::NominalSetup nominal = sfl::nominal_system();
  const sfl::PolicyGain k0{cfg.k0_scale *
                           sfl::Matrix::Identity(nominal.system.nu(), nominal.system.nx())};

  std::vector<sfl::RunTrace> traces;
  std::vector<std::tuple<std::string, double, double>> keys;
  for (const auto& entry : manifest.at("traces")) {
    sfl::RunTrace tr;
    tr.config = cfg;
    tr.config.eps1 = entry.at("eps1").get<double>();
    tr.config.eps2 = entry.at("eps2").get<double>();
    const std::string alg = entry.at("algorithm").get<std::string>();
    tr.algorithm = alg == "scalar" ? sfl::Algorithm::kScalar : sfl::Algorithm::kBaseline;
    tr.initial_gain = k0;
    const auto& g0 = entry.at("initial_ref_gap");
    tr.initial_ref_gap = g0.is_null() ? std::numeric_limits<double>::infinity() : g0.get<double>();
    std::ifstream in(src / entry.at("file").get<std::string>());
    if (!in) throw sfl::ConfigError("missing trace " + entry.at("file").get<std::string>());
    tr.records = sfl::read_trace_csv(in);
    tr.halted = entry.at("halted").get<bool>();
    keys.emplace_back(alg, tr.config.eps1, tr.config.eps2);
    traces.push_back(std::move(tr));
  }
  // Group in order of first appearance, matching the layout written by simulate/sweep.
  std::vector<std::tuple<std::string, double, double>> order;
  std::map<std::tuple<std::string, double, double>, std::vector<const sfl::RunTrace*>> groups;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!groups.contains(keys[i])) order.push_back(keys[i]);
    groups[keys[i]].push_back(&traces[i]);
  }
  std::vector<sfl::MetricSeries> series;
  for (const auto& key : order) series.push_back(sfl::build_series(groups[key]));
  const double budget = budget_flag > 0.0 ? budget_flag : cfg.budget_bits;
  fs::create_directories(dst);
  write_plots(dst, series, budget);
  print_series(series, budget);
  return 0;
}

struct CheckLine {
  std::string name;
  bool pass;
  std::string detail;
};

int report(const std::vector<CheckLine>& lines, const fs::path* json_out, json extra = {}) {
  bool ok = true;
  json arr = json::array();
  for (const auto& l : lines) {
    std::printf("[%s] %s: %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.detail.c_str());
    ok = ok && l.pass;
    arr.push_back({{"name", l.name}, {"pass", l.pass}, {"detail", l.detail}});
  }
  if (json_out != nullptr) {
    extra["checks"] = arr;
    extra["pass"] = ok;
    write_file(*json_out, extra.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

int cmd_validate(const CommonArgs& args, bool quick) {
  sfl::ExperimentConfig cfg = load_config(args);
  const fs::path dir = resolve_output_dir(args.out_dir);
  fs::create_directories(dir);
  std::vector<CheckLine> lines;
  json extra;

  // Concentration of the projection error.
  {
    const std::vector<int> ds{9};
    const std::vector<int> ms{8, 32, 128, 512, 2048};
    sfl::SweepOptions so;
    so.workers = cfg.workers;
    const auto rep = sfl::projection_bound_sweep(ds, ms, 0.05, quick ? 100 : 200, cfg.run_seed, so);
    double slope = 0.0;
    for (const auto& s : rep.slopes) {
      if (!s.heterogeneous) slope = s.median_slope;
    }
    lines.push_back({"projection_concentration", slope >= -0.60 && slope <= -0.40,
                     fmt("median slope %.4f, c_hat %.4f", slope, rep.c_hat)});
    extra["projection_sweep"] = sfl::to_json(rep);
  }

  // Descent and stability with the exact oracle at the configured settings.
  sfl::ExperimentConfig ex = cfg;
  ex.oracle_mode = sfl::OracleMode::kExact;
  if (quick) {
    ex.t_rounds = std::min(ex.t_rounds, 300);
    ex.mc_runs = std::min(ex.mc_runs, 3);
  }
  {
    const auto res = sfl::run_sweep(ex);
    int unstable = 0;
    int rounds = 0;
    int non_inc = 0;
    for (const auto& t : res.traces) {
      if (t.trace.halted) ++unstable;
      for (const auto& r : t.trace.records) {
        ++rounds;
        if (!r.all_stable) ++unstable;
        if (r.cost_avg <= r.cost_before) ++non_inc;
      }
    }
    const double frac = rounds > 0 ? static_cast<double>(non_inc) / rounds : 0.0;
    lines.push_back({"exact_oracle_stability", unstable == 0,
                     fmt("%.0f unstable iterates over %.0f rounds", unstable, rounds)});
    lines.push_back({"exact_oracle_descent", frac >= 0.99,
                     fmt("J_avg non-increasing on %.4f of rounds", frac)});
  }

  // Linear rate on a homogeneous fleet at eta*(beta = 0.2).
  {
    sfl::ExperimentConfig h = ex;
    h.eps1 = h.eps2 = 0.0;
    h.t_rounds = quick ? 150 : 300;
    const sfl::Fleet fleet = sfl::fleet_for_run(h, 0.0, 0.0, 0);
    const sfl::Matrix sigma0 = h.rollout_params().sigma0(fleet.nx());
    sfl::Rng rng(sfl::derive_seed(h.run_seed, sfl::StreamPurpose::kSmoothness, {}));
    sfl::SmoothnessOptions opts;
    opts.sigma0 = sigma0;
    const auto est = sfl::estimate_smoothness(fleet, sfl::initial_gain(fleet, h), quick ? 60 : 200,
                                              0.05, rng, opts);
    const double beta = 0.2;
    h.eta = sfl::optimal_stepsize(beta, est.l_hat);
    int checked = 0;
    int satisfied = 0;
    double rho = 1.0;
    json stab = json::array();
    const int seeds = quick ? 3 : 10;
    for (int s = 0; s < seeds; ++s) {
      h.run_seed = sfl::derive_seed(cfg.run_seed, sfl::StreamPurpose::kRun,
                                    {static_cast<std::uint64_t>(s)});
      const auto tr = sfl::run_scalar_fed_lqr(fleet, h);
      const auto rr = sfl::check_linear_rate(tr, est, beta);
      rho = rr.rho_hat;
      checked += rr.rounds_checked;
      satisfied += rr.rounds_satisfied;
      const auto sr = sfl::check_stability_condition(tr, 0.0, 0.05, 1.0, est.l_hat);
      stab.push_back({{"required_beta", sr.required_beta},
                      {"satisfiable", sr.satisfiable},
                      {"realized_max_beta", sr.realized_max_beta},
                      {"conservative", sr.conservative}});
    }
    const double frac = checked > 0 ? static_cast<double>(satisfied) / checked : 0.0;
    lines.push_back({"linear_rate", frac >= 0.95 && rho < 1.0,
                     fmt("contraction within rho_hat %.8f on %.4f of rounds", rho, frac)});
    extra["smoothness"] = {{"l_hat", est.l_hat}, {"mu_hat", est.mu_hat},
                           {"j_star", est.j_star}, {"samples", est.sample_points},
                           {"eta_star", h.eta}};
    extra["stability_condition"] = stab;
  }
  const fs::path out = dir / "validate.json";
  return report(lines, &out, extra);
}

int cmd_selftest() {
  std::vector<CheckLine> lines;
  // Exhaustive Rademacher average recovers g.
  {
    double worst = 0.0;
    for (int d = 1; d <= 12; ++d) {
      sfl::Vector g(d);
      for (int i = 0; i < d; ++i) g(i) = std::sin(1.0 + i) * (i + 1);
      worst = std::max(worst, (sfl::exhaustive_projection_average(g) - g).norm() / g.norm());
    }
    lines.push_back({"codec_enumeration", worst <= 1e-12, fmt("max relative error %.3g", worst)});
  }
  // ||d v v^T - I||_2 = d - 1.
  {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      const int d = 1 + static_cast<int>(s % 16);
      const sfl::Vector v = sfl::rademacher_direction(d, sfl::Seed{sfl::mix64(s)});
      const sfl::Matrix op = d * v * v.transpose() - sfl::Matrix::Identity(d, d);
      worst = std::max(worst, std::abs(sfl::spectral_norm(op) - (d - 1)));
    }
    lines.push_back({"codec_operator_norm", worst <= 1e-9, fmt("max deviation %.3g", worst)});
  }
  // Solver residuals on random stable instances.
  {
    sfl::Rng rng(sfl::derive_seed(7, sfl::StreamPurpose::kTest, {1}));
    double lyap = 0.0;
    double dare = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int n = 1 + i % 8;
      const int m = 1 + i % 3;
      sfl::Matrix a(n, n);
      for (int k = 0; k < a.size(); ++k) a(k) = rng.normal();
      const sfl::Matrix as = a * (0.9 / std::max(sfl::spectral_radius(a), 1e-12));
      const sfl::Matrix q = sfl::Matrix::Identity(n, n);
      const sfl::Matrix p = sfl::solve_dlyap(as, q);
      lyap = std::max(lyap, sfl::dlyap_residual(as, q, p) / (1.0 + p.norm()));
      sfl::Matrix b(n, m);
      for (int k = 0; k < b.size(); ++k) b(k) = rng.normal();
      const sfl::LtiSystem sys{a, b};
      const sfl::CostMatrices cost{q, sfl::Matrix::Identity(m, m)};
      const sfl::Matrix pd = sfl::solve_dare(sys, cost);
      dare = std::max(dare, sfl::dare_residual(sys, cost, pd) / (1.0 + pd.norm()));
    }
    lines.push_back({"dlyap_residual", lyap <= 1e-10, fmt("max relative residual %.3g", lyap)});
    lines.push_back({"dare_residual", dare <= 1e-9, fmt("max relative residual %.3g", dare)});
    const sfl::LtiSystem one{sfl::Matrix::Ones(1, 1), sfl::Matrix::Ones(1, 1)};
    const sfl::CostMatrices unit{sfl::Matrix::Ones(1, 1), sfl::Matrix::Ones(1, 1)};
    const double err = std::abs(sfl::solve_dare(one, unit)(0, 0) - (1.0 + std::sqrt(5.0)) / 2.0);
    lines.push_back({"dare_golden_ratio", err <= 1e-12, fmt("error %.3g", err)});
  }
  return report(lines, nullptr);
}

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("-c,--config", args.config_file, "config file (key = value lines)");
  sub->add_option("-s,--set", args.sets, "override, key=value (repeatable)");
  sub->add_option("-o,--out", args.out_dir, "output directory (default $SFL_OUTPUT_DIR)");
  sub->add_option("-w,--workers", args.workers, "worker threads, 0 = hardware concurrency");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ScalarFedLQR experiment driver"};
  app.require_subcommand(1);

  CommonArgs sim_args, sweep_args, val_args;
  auto* sim = app.add_subcommand("simulate", "run one (eps1, eps2) cell");
  add_common(sim, sim_args);
  auto* sweep = app.add_subcommand("sweep", "run every eps in eps_grid");
  add_common(sweep, sweep_args);

  std::string from, plot_out;
  double budget = 0.0;
  auto* plot = app.add_subcommand("plotdata", "re-emit plot CSVs from stored traces");
  plot->add_option("--from", from, "directory written by simulate/sweep (default $SFL_OUTPUT_DIR)");
  plot->add_option("-o,--out", plot_out, "destination directory (default: --from)");
  plot->add_option("--budget", budget, "bit budget for budget_bar.csv");

  bool quick = false;
  auto* val = app.add_subcommand("validate", "run the theory checks");
  add_common(val, val_args);
  val->add_flag("--quick", quick, "fewer rounds and seeds");

  auto* self = app.add_subcommand("selftest", "codec and solver self checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) return cmd_run(sim_args, false);
    if (sweep->parsed()) return cmd_run(sweep_args, true);
    if (plot->parsed()) return cmd_plotdata(from, plot_out, budget);
    if (val->parsed()) return cmd_validate(val_args, quick);
    if (self->parsed()) return cmd_selftest();
  } catch (const sfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
