#pragma once

// Command-line front end. run_cli is the whole program; tools/riskopf_cli.cpp
// only forwards argv so the same code path is testable in-process.
//
// Exit codes: 0 success, 1 user error (bad flags, unreadable or invalid
// files), 2 solve failure (a result file is still written for sweeps).

#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "riskopf/cvar.hpp"
#include "riskopf/errors.hpp"
#include "riskopf/evaluate.hpp"
#include "riskopf/grid_model.hpp"
#include "riskopf/io.hpp"
#include "riskopf/opf.hpp"
#include "riskopf/qp_solver.hpp"
#include "riskopf/scenario.hpp"

#ifndef RISKOPF_VERSION
#define RISKOPF_VERSION "0.0.0"
#endif

namespace riskopf::cli {

inline constexpr const char* kToolVersion = RISKOPF_VERSION;
/// Overrides the default KKT and feasibility tolerances when set.
inline constexpr const char* kToleranceEnv = "RISKOPF_TOLERANCE";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitSolve = 2;

/// Dispatch as stored in a dispatch CSV.
struct DispatchFile {
  Metadata metadata;
  std::vector<int> bus_ids;
  Eigen::VectorXd p_g, p_w, theta, lmp;
};

inline std::string mode_name(ProgramKind kind, bool curtail) {
  switch (kind) {
    case ProgramKind::cvar_penalty: return "cvar";
    case ProgramKind::cvar_budget: return "cvar-budget";
    case ProgramKind::no_risk: return curtail ? "no-risk-curtail" : "no-risk";
  }
  return "unknown";
}

inline std::string dispatch_csv(const DispatchSolution& sol, const GridCase& grid, Metadata meta) {
  meta.emplace_back("status", to_string(sol.status));
  meta.emplace_back("gen_cost", format_double(sol.gen_cost));
  meta.emplace_back("cvar_term", format_double(sol.cvar_term));
  meta.emplace_back("eta", format_double(sol.eta));
  meta.emplace_back("objective", format_double(sol.objective));
  meta.emplace_back("iterations", std::to_string(sol.iterations));
  meta.emplace_back("kkt_residual", format_double(sol.kkt_residual));
  CsvWriter w(meta, {"bus", "p_g_mw", "p_w_mw", "theta_rad", "lmp_usd_per_mwh", "wind_price"});
  const Eigen::VectorXd prices = grid.wind_price_vector();
  for (std::size_t i = 0; i < grid.bus_count(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    w.row({static_cast<double>(grid.buses[i].id), sol.p_g[k], sol.p_w[k], sol.theta[k], sol.lmp[k], prices[k]});
  }
  return w.str();
}

inline std::string flows_csv(const DispatchSolution& sol, const GridCase& grid, const Metadata& meta) {
  CsvWriter w(meta, {"line", "from", "to", "flow_mw", "limit_mw", "loading"});
  for (std::size_t l = 0; l < grid.lines.size(); ++l) {
    const auto& line = grid.lines[l];
    const double f = sol.flows[static_cast<Eigen::Index>(l)];
    w.row({static_cast<double>(l + 1), static_cast<double>(line.from_bus), static_cast<double>(line.to_bus), f,
           line.flow_limit, std::isfinite(line.flow_limit) ? std::abs(f) / line.flow_limit : 0.0});
  }
  return w.str();
}

inline DispatchFile read_dispatch(const std::string& path, const GridCase& grid) {
  const auto t = read_csv(path);
  const auto rows = static_cast<Eigen::Index>(t.rows.size());
  if (rows != static_cast<Eigen::Index>(grid.bus_count()))
    throw ParseError(path + ": dispatch has " + std::to_string(rows) + " bus rows, case has " +
                     std::to_string(grid.bus_count()));
  DispatchFile d;
  d.metadata = t.metadata;
  const std::size_t c_bus = t.column("bus"), c_pg = t.column("p_g_mw"), c_pw = t.column("p_w_mw"),
                    c_th = t.column("theta_rad"), c_lmp = t.column("lmp_usd_per_mwh");
  d.p_g.resize(rows);
  d.p_w.resize(rows);
  d.theta.resize(rows);
  d.lmp.resize(rows);
  std::vector<bool> seen(grid.bus_count(), false);
  for (const auto& r : t.rows) {
    const auto b = grid.bus_index(static_cast<int>(r[c_bus]));
    if (seen[b]) throw ParseError(path + ": bus " + std::to_string(grid.buses[b].id) + " listed twice");
    seen[b] = true;
    const auto k = static_cast<Eigen::Index>(b);
    d.p_g[k] = r[c_pg];
    d.p_w[k] = r[c_pw];
    d.theta[k] = r[c_th];
    d.lmp[k] = r[c_lmp];
  }
  for (const auto& b : grid.buses) d.bus_ids.push_back(b.id);
  return d;
}

namespace detail {

inline SolverSettings solver_settings(std::optional<double> tol, std::optional<int> max_iter) {
  SolverSettings s;
  if (const char* env = std::getenv(kToleranceEnv); env != nullptr && *env != '\0') {
    const double v = parse_double(env, kToleranceEnv);
    s.kkt_tolerance = v;
    s.feasibility_tolerance = v;
  }
  if (tol) {
    s.kkt_tolerance = *tol;
    s.feasibility_tolerance = *tol;
  }
  if (max_iter) s.max_iterations = *max_iter;
  if (!(s.kkt_tolerance > 0.0) || s.max_iterations < 1)
    throw ValidationError("solver tolerance must be > 0 and max iterations >= 1");
  return s;
}

inline Metadata base_metadata(const GridCase& grid) {
  return {{"tool_version", kToolVersion}, {"case_hash", case_hash(grid)}};
}

inline std::vector<double> parse_grid(const std::string& text, const char* name) {
  std::vector<double> out;
  for (const auto& cell : riskopf::detail::split(text))
    out.push_back(parse_double(riskopf::detail::trim(cell), std::string("--") + name));
  if (out.empty()) throw ValidationError(std::string("--") + name + " is empty");
  return out;
}

inline std::string grid_text(const std::vector<double>& g) {
  std::string s;
  for (std::size_t i = 0; i < g.size(); ++i) s += (i ? ";" : "") + format_double(g[i]);
  return s;
}

inline void require_hash(const DispatchFile& d, const GridCase& grid, const std::string& path) {
  for (const auto& [k, v] : d.metadata)
    if (k == "case_hash" && v != case_hash(grid))
      throw ValidationError(path + " was produced for a different case (hash " + v + ")");
}

}  // namespace detail

/// Runs the CLI. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Risk-aware DC optimal power flow with a CVaR wind-shortfall penalty"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::optional<double> tol;
  std::optional<int> max_iter;
  auto add_solver_flags = [&](CLI::App* sub) {
    sub->add_option("--tol", tol, "KKT and feasibility tolerance (default 1e-8, env " + std::string(kToleranceEnv) + ")");
    sub->add_option("--max-iter", max_iter, "interior-point iteration limit (default 200)");
  };

  // solve
  std::string case_path, scen_path, out_path, flows_path;
  double beta = 0.95;
  std::optional<double> mu, budget;
  bool no_risk = false, curtail = false;
  auto* solve = app.add_subcommand("solve", "solve one dispatch and write dispatch + LMPs");
  solve->add_option("--case", case_path, "case JSON")->required();
  solve->add_option("--scenarios", scen_path, "training scenario CSV");
  solve->add_option("--beta", beta, "CVaR probability level")->capture_default_str();
  solve->add_option("--mu", mu, "risk-aversion weight");
  solve->add_option("--p2-budget", budget, "solve the budget-constrained form with this CVaR cap ($)");
  solve->add_flag("--no-risk", no_risk, "deterministic baseline with wind fixed at the forecast");
  solve->add_flag("--curtail", curtail, "with --no-risk: allow 0 <= p_w <= forecast");
  solve->add_option("--out", out_path, "dispatch CSV to write");
  solve->add_option("--flows-out", flows_path, "line-flow CSV to write");
  add_solver_flags(solve);

  // gen-scenarios
  std::string hist_path, cov_path;
  long long n_s = 1000;
  unsigned long long seed = 0;
  auto* gen = app.add_subcommand("gen-scenarios", "sample truncated Gaussian wind scenarios");
  gen->add_option("--case", case_path, "case JSON")->required();
  auto* o_hist = gen->add_option("--history", hist_path, "wind history CSV (MW, one column per farm bus)");
  auto* o_cov = gen->add_option("--cov", cov_path, "covariance CSV over the farm buses (MW^2)");
  o_hist->excludes(o_cov);
  gen->add_option("--n", n_s, "number of scenarios")->capture_default_str();
  gen->add_option("--seed", seed, "64-bit RNG seed")->required();
  gen->add_option("--out", out_path, "scenario CSV to write")->required();

  // sweep-mu
  std::string eval_path, grid_str;
  std::optional<double> mu_min, mu_max;
  std::size_t points = 10;
  unsigned workers = 0;
  auto* smu = app.add_subcommand("sweep-mu", "one solve per risk weight");
  smu->add_option("--case", case_path, "case JSON")->required();
  smu->add_option("--scenarios", scen_path, "training scenario CSV")->required();
  smu->add_option("--eval-scenarios", eval_path, "held-out scenario CSV for mean/variance columns");
  smu->add_option("--beta", beta, "CVaR probability level")->capture_default_str();
  auto* o_grid = smu->add_option("--mu-grid", grid_str, "comma-separated increasing mu values");
  smu->add_option("--mu-min", mu_min, "log grid lower end (default 0.01)")->excludes(o_grid);
  smu->add_option("--mu-max", mu_max, "log grid upper end (default 100)")->excludes(o_grid);
  smu->add_option("--points", points, "log grid size")->capture_default_str()->excludes(o_grid);
  smu->add_option("--workers", workers, "parallel solves (0 = hardware threads)");
  smu->add_option("--out", out_path, "sweep CSV to write")->required();
  add_solver_flags(smu);

  // sweep-load
  auto* sld = app.add_subcommand("sweep-load", "one solve per load overload ratio");
  sld->add_option("--case", case_path, "case JSON")->required();
  sld->add_option("--scenarios", scen_path, "training scenario CSV")->required();
  sld->add_option("--beta", beta, "CVaR probability level")->capture_default_str();
  sld->add_option("--mu", mu, "risk-aversion weight")->required();
  sld->add_option("--gamma-grid", grid_str, "comma-separated increasing overload ratios")->required();
  sld->add_option("--workers", workers, "parallel solves (0 = hardware threads)");
  sld->add_option("--out", out_path, "sweep CSV to write")->required();
  add_solver_flags(sld);

  // eval
  std::string sol_path, cdf_path;
  auto* ev = app.add_subcommand("eval", "realized total cost of a dispatch over held-out scenarios");
  ev->add_option("--case", case_path, "case JSON")->required();
  ev->add_option("--solution", sol_path, "dispatch CSV from solve")->required();
  ev->add_option("--scenarios", scen_path, "evaluation scenario CSV")->required();
  ev->add_option("--out", out_path, "per-scenario cost CSV to write")->required();
  ev->add_option("--cdf-out", cdf_path, "empirical CDF CSV to write");

  // validate
  auto* val = app.add_subcommand("validate", "check input files without solving");
  val->add_option("--case", case_path, "case JSON")->required();
  val->add_option("--scenarios", scen_path, "scenario CSV");
  val->add_option("--history", hist_path, "wind history CSV");
  val->add_option("--cov", cov_path, "covariance CSV");
  val->add_option("--solution", sol_path, "dispatch CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    const GridCase grid = load_case(case_path);

    if (*solve) {
      const SolverSettings settings = detail::solver_settings(tol, max_iter);
      Metadata meta = detail::base_metadata(grid);
      ConvexProgram program;
      if (no_risk) {
        if (budget || mu) throw ValidationError("--no-risk takes neither --mu nor --p2-budget");
        program = assemble_norisk(grid, curtail);
        meta.emplace_back("mode", mode_name(program.kind, curtail));
      } else {
        if (curtail) throw ValidationError("--curtail only applies with --no-risk");
        if (scen_path.empty()) throw ValidationError("--scenarios is required unless --no-risk is given");
        const ScenarioSet scen = read_scenarios(scen_path, grid);
        OpfConfig cfg;
        cfg.beta = RiskLevel(beta);
        if (budget) {
          if (mu) throw ValidationError("--p2-budget and --mu are mutually exclusive");
          cfg.budget = *budget;
          program = assemble_p2(grid, scen, cfg);
        } else {
          if (!mu) throw ValidationError("--mu is required for the CVaR dispatch");
          cfg.mu = *mu;
          program = assemble_ap1(grid, scen, cfg);
        }
        meta.emplace_back("mode", mode_name(program.kind, false));
        meta.emplace_back("beta", format_double(beta));
        if (budget) meta.emplace_back("budget", format_double(*budget));
        else meta.emplace_back("mu", format_double(*mu));
        meta.emplace_back("n_s", std::to_string(scen.size()));
        meta.emplace_back("scenario_seed", std::to_string(scen.seed));
      }
      const DispatchSolution sol = solve_dispatch(program, grid, settings);
      out << "status: " << to_string(sol.status) << '\n';
      if (!sol.solved()) {
        err << "solve failed: " << to_string(sol.status) << " after " << sol.iterations << " iterations\n";
        return kExitSolve;
      }
      out << "gen_cost: " << format_double(sol.gen_cost) << '\n'
          << "cvar_term: " << format_double(sol.cvar_term) << '\n'
          << "mu: " << format_double(sol.mu) << '\n'
          << "objective: " << format_double(sol.objective) << '\n'
          << "total_generation_mw: " << format_double(sol.p_g.sum()) << '\n'
          << "total_wind_mw: " << format_double(sol.p_w.sum()) << '\n'
          << "total_load_mw: " << format_double(grid.load_vector().sum()) << '\n'
          << "iterations: " << sol.iterations << '\n'
          << "kkt_residual: " << format_double(sol.kkt_residual) << '\n';
      if (!out_path.empty()) write_text(out_path, dispatch_csv(sol, grid, meta));
      if (!flows_path.empty()) write_text(flows_path, flows_csv(sol, grid, detail::base_metadata(grid)));
      return kExitOk;
    }

    if (*gen) {
      if (hist_path.empty() == cov_path.empty()) throw ValidationError("give exactly one of --history or --cov");
      Eigen::MatrixXd cov;
      Metadata meta = detail::base_metadata(grid);
      if (!hist_path.empty()) {
        cov = estimate_covariance(read_history(hist_path), grid);
        meta.emplace_back("covariance_source", "history");
      } else {
        cov = read_covariance(cov_path, grid);
        meta.emplace_back("covariance_source", "cov");
      }
      const ScenarioSet s = sample_scenarios(grid.forecast_vector(), cov, static_cast<Eigen::Index>(n_s), seed);
      write_scenarios(out_path, s, grid, meta);
      out << "wrote " << s.size() << " scenarios (seed " << seed << ") to " << out_path << '\n';
      return kExitOk;
    }

    if (*smu || *sld) {
      SweepOptions opts;
      opts.solver = detail::solver_settings(tol, max_iter);
      opts.workers = workers;
      const ScenarioSet scen = read_scenarios(scen_path, grid);
      const RiskLevel level(beta);
      Metadata meta = detail::base_metadata(grid);
      meta.emplace_back("beta", format_double(beta));
      meta.emplace_back("n_s", std::to_string(scen.size()));
      meta.emplace_back("scenario_seed", std::to_string(scen.seed));
      SweepResult res;
      std::optional<ScenarioSet> eval;
      if (*smu) {
        std::vector<double> g = grid_str.empty() ? log_grid(mu_min.value_or(0.01), mu_max.value_or(100.0), points)
                                                 : detail::parse_grid(grid_str, "mu-grid");
        if (!eval_path.empty()) {
          eval = read_scenarios(eval_path, grid);
          meta.emplace_back("eval_seed", std::to_string(eval->seed));
          meta.emplace_back("eval_n_s", std::to_string(eval->size()));
        }
        meta.emplace_back("mu_grid", detail::grid_text(g));
        res = sweep_mu(grid, scen, eval ? &*eval : nullptr, g, level, opts);
      } else {
        const std::vector<double> g = detail::parse_grid(grid_str, "gamma-grid");
        meta.emplace_back("mu", format_double(*mu));
        meta.emplace_back("gamma_grid", detail::grid_text(g));
        res = sweep_overload(grid, scen, g, level, *mu, opts);
      }

      std::vector<std::string> header{res.parameter, "solved", "gen_cost", "cvar_term", "objective", "iterations",
                                      "kkt_residual", "max_line_loading"};
      if (eval) {
        header.emplace_back("eval_mean");
        header.emplace_back("eval_variance");
      }
      for (const auto& b : grid.buses) header.push_back("lmp_" + std::to_string(b.id));
      CsvWriter w(meta, header);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      bool all_ok = true;
      for (std::size_t i = 0; i < res.points.size(); ++i) {
        const auto& p = res.points[i];
        const auto& s = p.solution;
        all_ok = all_ok && p.ok();
        double loading = nan;
        if (p.ok()) {
          const GridCase scaled = res.parameter == "gamma" ? scale_loads(grid, p.value) : grid;
          loading = 0.0;
          for (std::size_t l = 0; l < scaled.lines.size(); ++l)
            if (std::isfinite(scaled.lines[l].flow_limit))
              loading = std::max(loading, std::abs(s.flows[static_cast<Eigen::Index>(l)]) / scaled.lines[l].flow_limit);
        }
        std::vector<double> row{p.value,
                                p.ok() ? 1.0 : 0.0,
                                p.ok() ? s.gen_cost : nan,
                                p.ok() ? s.cvar_term : nan,
                                p.ok() ? s.objective : nan,
                                static_cast<double>(s.iterations),
                                s.kkt_residual,
                                loading};
        if (eval) {
          row.push_back(p.evaluation ? p.evaluation->mean : nan);
          row.push_back(p.evaluation ? p.evaluation->variance : nan);
        }
        for (std::size_t b = 0; b < grid.bus_count(); ++b)
          row.push_back(p.ok() ? s.lmp[static_cast<Eigen::Index>(b)] : nan);
        w.row(row);
        out << res.parameter << ' ' << format_double(p.value) << ": "
            << (p.ok() ? "solved, objective " + format_double(s.objective) : p.error) << '\n';
      }
      w.save(out_path);
      return all_ok ? kExitOk : kExitSolve;
    }

    if (*ev) {
      const DispatchFile d = read_dispatch(sol_path, grid);
      detail::require_hash(d, grid, sol_path);
      const ScenarioSet scen = read_scenarios(scen_path, grid);
      DispatchSolution sol;
      sol.p_g = d.p_g;
      sol.p_w = d.p_w;
      sol.gen_cost = generation_cost(grid, d.p_g);
      const auto samples = evaluate_policy(sol, scen, grid);
      const CostSummary sum = summarize(samples);
      Metadata meta = detail::base_metadata(grid);
      for (const auto& [k, v] : d.metadata)
        if (k == "mode" || k == "mu" || k == "beta" || k == "budget" || k == "scenario_seed")
          meta.emplace_back("solution_" + k, v);
      meta.emplace_back("eval_seed", std::to_string(scen.seed));
      meta.emplace_back("n_s", std::to_string(scen.size()));
      meta.emplace_back("gen_cost", format_double(sol.gen_cost));
      meta.emplace_back("mean", format_double(sum.mean));
      meta.emplace_back("variance", format_double(sum.variance));
      CsvWriter w(meta, {"scenario", "transaction_cost", "total_cost"});
      for (std::size_t s = 0; s < samples.size(); ++s)
        w.row({static_cast<double>(s + 1), samples[s].transaction, samples[s].total});
      w.save(out_path);
      if (!cdf_path.empty()) {
        CsvWriter c(meta, {"total_cost", "probability"});
        for (const auto& p : sum.cdf_points) c.row({p.cost, p.probability});
        c.save(cdf_path);
      }
      out << "gen_cost: " << format_double(sol.gen_cost) << '\n'
          << "mean_total_cost: " << format_double(sum.mean) << '\n'
          << "variance_total_cost: " << format_double(sum.variance) << '\n'
          << "samples: " << samples.size() << '\n';
      return kExitOk;
    }

    if (*val) {
      out << "case " << case_path << ": ok (" << grid.bus_count() << " buses, " << grid.lines.size() << " lines, "
          << grid.generators.size() << " generators, " << grid.wind_farms.size() << " wind farms, hash "
          << case_hash(grid) << ")\n";
      if (!scen_path.empty()) {
        const ScenarioSet s = read_scenarios(scen_path, grid);
        riskopf::detail::check_scenarios(grid, s);
        out << "scenarios " << scen_path << ": ok (" << s.size() << " rows)\n";
      }
      if (!hist_path.empty()) {
        const Eigen::MatrixXd cov = estimate_covariance(read_history(hist_path), grid);
        out << "history " << hist_path << ": ok (covariance trace " << format_double(cov.trace()) << ")\n";
      }
      if (!cov_path.empty()) {
        const Eigen::MatrixXd cov = read_covariance(cov_path, grid);
        (void)sample_scenarios(grid.forecast_vector(), cov, 1, 0);
        out << "covariance " << cov_path << ": ok\n";
      }
      if (!sol_path.empty()) {
        const DispatchFile d = read_dispatch(sol_path, grid);
        detail::require_hash(d, grid, sol_path);
        out << "solution " << sol_path << ": ok\n";
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUser;
  }
  return kExitUser;
}

}  // namespace riskopf::cli
