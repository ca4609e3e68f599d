#pragma once

// Out-of-sample evaluation of dispatch policies and parameter sweeps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "riskopf/cvar.hpp"
#include "riskopf/errors.hpp"
#include "riskopf/grid_model.hpp"
#include "riskopf/opf.hpp"
#include "riskopf/qp_solver.hpp"
#include "riskopf/scenario.hpp"

namespace riskopf {

/// Realized cost of a fixed dispatch under one wind realization.
struct CostSample {
  double total = 0.0;        // gen_cost + transaction
  double transaction = 0.0;  // sum_m c_W [p_w - w]^+
};

struct CdfPoint {
  double cost = 0.0;
  double probability = 0.0;

  bool operator==(const CdfPoint&) const = default;
};

struct CostSummary {
  double mean = 0.0;
  double variance = 0.0;  // unbiased; 0 for a single sample
  std::vector<CdfPoint> cdf_points;
};

/// Cost of `solution` under every row of `eval_scenarios`.
inline std::vector<CostSample> evaluate_policy(const DispatchSolution& solution, const ScenarioSet& eval_scenarios,
                                               const GridCase& grid) {
  const auto m = static_cast<Eigen::Index>(grid.bus_count());
  detail::require_dims(solution.p_w.size() == m, "evaluate_policy: dispatch has " + std::to_string(solution.p_w.size()) +
                                                     " wind entries, case has " + std::to_string(m) + " buses");
  detail::require_dims(eval_scenarios.samples.cols() == m, "evaluate_policy: scenario set has " +
                                                               std::to_string(eval_scenarios.samples.cols()) +
                                                               " bus columns, case has " + std::to_string(m));
  const auto costs = scenario_transaction_costs(solution.p_w, eval_scenarios.samples, grid.wind_price_vector());
  std::vector<CostSample> out;
  out.reserve(costs.size());
  for (double t : costs) out.push_back({solution.gen_cost + t, t});
  return out;
}

/// Mean, unbiased variance and empirical CDF (one step per distinct value).
inline CostSummary summarize(std::span<const double> totals) {
  if (totals.empty()) throw ValidationError("summarize: no samples");
  std::vector<double> sorted(totals.begin(), totals.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());

  CostSummary s;
  // Summing in sorted order makes the result independent of input order.
  for (double v : sorted) s.mean += v;
  s.mean /= n;
  if (sorted.size() > 1) {
    for (double v : sorted) s.variance += (v - s.mean) * (v - s.mean);
    s.variance /= n - 1.0;
  }
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    s.cdf_points.push_back({sorted[i], static_cast<double>(i + 1) / n});
  }
  return s;
}

inline CostSummary summarize(std::span<const CostSample> samples) {
  std::vector<double> totals;
  totals.reserve(samples.size());
  for (const auto& c : samples) totals.push_back(c.total);
  return summarize(std::span<const double>(totals));
}

struct SweepPoint {
  double value = 0.0;  // mu or gamma
  DispatchSolution solution;
  std::optional<CostSummary> evaluation;
  std::string error;  // set when the point could not be built or solved

  bool ok() const { return error.empty() && solution.solved(); }
};

struct SweepResult {
  std::string parameter;  // "mu" or "gamma"
  std::vector<SweepPoint> points;
};

struct SweepOptions {
  SolverSettings solver;
  unsigned workers = 0;  // 0: hardware concurrency
};

namespace detail {

inline void require_increasing(std::span<const double> grid, const char* name) {
  if (grid.empty()) throw ValidationError(std::string(name) + " grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i]) || grid[i] < 0.0)
      throw ValidationError(std::string(name) + " grid values must be finite and >= 0");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ValidationError(std::string(name) + " grid must be strictly increasing");
  }
}

/// Runs job(i) for every grid index on a bounded pool; results keep grid order.
template <typename Job>
std::vector<SweepPoint> run_points(std::size_t count, unsigned workers, Job job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<SweepPoint> out(count);
  auto guarded = [&job](std::size_t i) {
    SweepPoint p;
    try {
      p = job(i);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
    return p;
  };
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = guarded(i);
    return out;
  }
  for (std::size_t start = 0; start < count; start += workers) {
    std::vector<std::future<SweepPoint>> batch;
    const std::size_t stop = std::min(count, start + workers);
    for (std::size_t i = start; i < stop; ++i) batch.push_back(std::async(std::launch::async, guarded, i));
    for (std::size_t i = start; i < stop; ++i) out[i] = batch[i - start].get();
  }
  return out;
}

inline void finish_point(SweepPoint& p) {
  if (p.error.empty() && !p.solution.solved()) p.error = std::string("solver status: ") + to_string(p.solution.status);
}

}  // namespace detail

/// One CVaR-penalized solve per mu on the same training scenarios; each solved
/// point is also evaluated on `eval_scenarios` when given.
inline SweepResult sweep_mu(const GridCase& grid, const ScenarioSet& scenarios, const ScenarioSet* eval_scenarios,
                            std::span<const double> mu_grid, RiskLevel beta, const SweepOptions& options = {}) {
  detail::require_increasing(mu_grid, "mu");
  SweepResult r;
  r.parameter = "mu";
  r.points = detail::run_points(mu_grid.size(), options.workers, [&](std::size_t i) {
    SweepPoint p;
    p.value = mu_grid[i];
    OpfConfig cfg;
    cfg.beta = beta;
    cfg.mu = mu_grid[i];
    p.solution = solve_ap1(grid, scenarios, cfg, options.solver);
    if (p.solution.solved() && eval_scenarios != nullptr)
      p.evaluation = summarize(evaluate_policy(p.solution, *eval_scenarios, grid));
    detail::finish_point(p);
    return p;
  });
  return r;
}

/// One CVaR-penalized solve per overload ratio gamma (loads scaled by 1 + gamma).
inline SweepResult sweep_overload(const GridCase& grid, const ScenarioSet& scenarios, std::span<const double> gamma_grid,
                                  RiskLevel beta, double mu, const SweepOptions& options = {}) {
  detail::require_increasing(gamma_grid, "gamma");
  SweepResult r;
  r.parameter = "gamma";
  r.points = detail::run_points(gamma_grid.size(), options.workers, [&](std::size_t i) {
    SweepPoint p;
    p.value = gamma_grid[i];
    OpfConfig cfg;
    cfg.beta = beta;
    cfg.mu = mu;
    p.solution = solve_ap1(scale_loads(grid, gamma_grid[i]), scenarios, cfg, options.solver);
    detail::finish_point(p);
    return p;
  });
  return r;
}

/// Logarithmically spaced grid from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2) throw ValidationError("log_grid: need 0 < lo < hi and at least 2 points");
  std::vector<double> g(points);
  const double step = std::log(hi / lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) g[i] = lo * std::exp(step * static_cast<double>(i));
  g.front() = lo;
  g.back() = hi;
  return g;
}

}  // namespace riskopf
