#pragma once

// CVaR-regularized DC optimal power flow as standard-form quadratic programs.
//
// All program variables are per-unit on the case's base_mva; objective terms
// stay in $. Layout of the decision vector:
//
//   [ p_g (M) | p_w (M) | theta (M-1, reference bus eliminated) | eta | v (N_s x W) | u (N_s) ]
//
// v holds one entry per (scenario, wind farm) rather than per (scenario, bus):
// buses without a wind farm have p_w fixed at zero and a zero price, so their
// shortfall bound is never active.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "riskopf/cvar.hpp"
#include "riskopf/errors.hpp"
#include "riskopf/grid_model.hpp"
#include "riskopf/qp_solver.hpp"
#include "riskopf/scenario.hpp"

namespace riskopf {

struct OpfConfig {
  RiskLevel beta{0.95};
  double mu = 1.0;
  std::optional<double> budget;  // $; only read by assemble_p2

  void check() const {
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ValidationError("risk weight mu must be finite and >= 0");
    if (budget && !(*budget >= 0.0)) throw ValidationError("CVaR budget must be >= 0");
  }
};

struct VariableBlock {
  Eigen::Index offset = 0;
  Eigen::Index count = 0;

  Eigen::Index end() const { return offset + count; }
};

struct VariableLayout {
  VariableBlock p_g, p_w, theta, eta, v, u;
  Eigen::Index bus_count = 0;
  Eigen::Index reference = 0;
  Eigen::Index scenario_count = 0;
  Eigen::Index wind_count = 0;

  Eigen::Index size() const { return u.end(); }

  /// Column of theta for a bus, or -1 for the eliminated reference bus.
  Eigen::Index theta_column(Eigen::Index bus) const {
    if (bus == reference) return -1;
    return theta.offset + (bus < reference ? bus : bus - 1);
  }
  Eigen::Index v_column(Eigen::Index scenario, Eigen::Index farm) const {
    return v.offset + scenario * wind_count + farm;
  }
};

inline VariableLayout make_layout(Eigen::Index buses, Eigen::Index reference, Eigen::Index scenarios, Eigen::Index farms,
                                  bool wind_is_variable, bool with_risk) {
  VariableLayout l;
  l.bus_count = buses;
  l.reference = reference;
  l.scenario_count = with_risk ? scenarios : 0;
  l.wind_count = with_risk ? farms : 0;
  l.p_g = {0, buses};
  l.p_w = {l.p_g.end(), wind_is_variable ? buses : 0};
  l.theta = {l.p_w.end(), buses - 1};
  l.eta = {l.theta.end(), with_risk ? 1 : 0};
  l.v = {l.eta.end(), l.scenario_count * l.wind_count};
  l.u = {l.v.end(), l.scenario_count};
  return l;
}

enum class ProgramKind { cvar_penalty, cvar_budget, no_risk };

struct ConvexProgram {
  QuadraticProgram qp;
  VariableLayout layout;
  ProgramKind kind = ProgramKind::cvar_penalty;
  Eigen::Index balance_row = 0;  // first of the M nodal-balance rows in A_eq
  double base_mva = 100.0;
  double mu = 0.0;
  double beta = 0.95;
  double tail_weight = 0.0;     // 1 / (N_s (1 - beta))
  Eigen::VectorXd fixed_wind;   // MW; used when p_w is not a decision variable
};

namespace detail {

class ProgramBuilder {
public:
  explicit ProgramBuilder(Eigen::Index n) : n_(n), q_(Eigen::VectorXd::Zero(n)) {}

  Eigen::Index add_eq(std::initializer_list<std::pair<Eigen::Index, double>> terms, double rhs) {
    return add_row(eq_, b_eq_, terms, rhs);
  }
  Eigen::Index add_eq(const std::vector<std::pair<Eigen::Index, double>>& terms, double rhs) {
    return add_row(eq_, b_eq_, terms, rhs);
  }
  Eigen::Index add_in(std::initializer_list<std::pair<Eigen::Index, double>> terms, double rhs) {
    return add_row(in_, b_in_, terms, rhs);
  }
  Eigen::Index add_in(const std::vector<std::pair<Eigen::Index, double>>& terms, double rhs) {
    return add_row(in_, b_in_, terms, rhs);
  }
  void add_quadratic(Eigen::Index i, double value) { quad_.emplace_back(i, i, value); }
  void set_linear(Eigen::Index i, double value) { q_[i] = value; }

  QuadraticProgram build() const {
    QuadraticProgram qp;
    qp.Q.resize(n_, n_);
    qp.Q.setFromTriplets(quad_.begin(), quad_.end());
    qp.q = q_;
    qp.A_eq.resize(static_cast<Eigen::Index>(b_eq_.size()), n_);
    qp.A_eq.setFromTriplets(eq_.begin(), eq_.end());
    qp.b_eq = Eigen::Map<const Eigen::VectorXd>(b_eq_.data(), static_cast<Eigen::Index>(b_eq_.size()));
    qp.A_in.resize(static_cast<Eigen::Index>(b_in_.size()), n_);
    qp.A_in.setFromTriplets(in_.begin(), in_.end());
    qp.b_in = Eigen::Map<const Eigen::VectorXd>(b_in_.data(), static_cast<Eigen::Index>(b_in_.size()));
    return qp;
  }

private:
  template <typename Terms>
  static Eigen::Index add_row(std::vector<Eigen::Triplet<double>>& t, std::vector<double>& rhs, const Terms& terms,
                              double value) {
    const auto row = static_cast<Eigen::Index>(rhs.size());
    for (const auto& [col, coef] : terms)
      if (coef != 0.0) t.emplace_back(row, col, coef);
    rhs.push_back(value);
    return row;
  }

  Eigen::Index n_;
  Eigen::VectorXd q_;
  std::vector<Eigen::Triplet<double>> quad_, eq_, in_;
  std::vector<double> b_eq_, b_in_;
};

/// Generation cost, nodal balance, line limits, generator bounds, and (when
/// p_w is a variable) p_w >= 0 with optional capacity caps. `injection` is the
/// fixed wind injection in MW subtracted from the load when p_w is not a variable.
inline void add_network(ProgramBuilder& b, const GridCase& grid, const FlowMatrices& fm, const VariableLayout& l,
                        const Eigen::VectorXd& injection, Eigen::Index& balance_row) {
  const double base = grid.base_mva;
  const Eigen::Index m = l.bus_count;
  const Eigen::VectorXd load = grid.load_vector();

  for (Eigen::Index i = 0; i < m; ++i) {
    const Generator* g = grid.generator_at(static_cast<std::size_t>(i));
    const Eigen::Index col = l.p_g.offset + i;
    if (!g) {
      b.add_eq({{col, 1.0}}, 0.0);
      continue;
    }
    b.add_quadratic(col, 2.0 * g->cost_quad * base * base);
    b.set_linear(col, g->cost_lin * base);
    if (g->p_max - g->p_min <= 1e-12 * std::max(1.0, g->p_max)) {
      b.add_eq({{col, 1.0}}, g->p_min / base);
    } else {
      b.add_in({{col, 1.0}}, g->p_max / base);
      b.add_in({{col, -1.0}}, -g->p_min / base);
    }
  }

  if (l.p_w.count > 0) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const WindFarm* f = grid.wind_farm_at(static_cast<std::size_t>(i));
      const Eigen::Index col = l.p_w.offset + i;
      if (!f) {
        b.add_eq({{col, 1.0}}, 0.0);
        continue;
      }
      b.add_in({{col, -1.0}}, 0.0);
      if (f->capacity) b.add_in({{col, 1.0}}, *f->capacity / base);
    }
  }

  // p_g + p_w - B theta = p_D, one row per bus; the reference column of B is dropped.
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows(static_cast<std::size_t>(m));
  for (int k = 0; k < fm.admittance.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(fm.admittance, k); it; ++it) {
      const Eigen::Index col = l.theta_column(it.col());
      if (col >= 0) rows[static_cast<std::size_t>(it.row())].emplace_back(col, -it.value());
    }
  for (Eigen::Index i = 0; i < m; ++i) {
    auto& r = rows[static_cast<std::size_t>(i)];
    r.emplace_back(l.p_g.offset + i, 1.0);
    if (l.p_w.count > 0) r.emplace_back(l.p_w.offset + i, 1.0);
    const Eigen::Index row = b.add_eq(r, (load[i] - injection[i]) / base);
    if (i == 0) balance_row = row;
  }

  // -f_max <= H theta <= f_max; infinite limits add no rows.
  std::vector<std::vector<std::pair<Eigen::Index, double>>> flow_rows(grid.lines.size());
  for (int k = 0; k < fm.flow.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(fm.flow, k); it; ++it) {
      const Eigen::Index col = l.theta_column(it.col());
      if (col >= 0) flow_rows[static_cast<std::size_t>(it.row())].emplace_back(col, it.value());
    }
  for (std::size_t n = 0; n < grid.lines.size(); ++n) {
    const double limit = grid.lines[n].flow_limit;
    if (!std::isfinite(limit)) continue;
    auto neg = flow_rows[n];
    for (auto& t : neg) t.second = -t.second;
    b.add_in(flow_rows[n], limit / base);
    b.add_in(neg, limit / base);
  }
}

/// Shortfall epigraph: v_s >= p_w - w_s, eta + u_s >= c_W' v_s, v, u >= 0.
/// Also bounds v, u and eta by quantities no optimal point can exceed, which
/// keeps the feasible set bounded when mu = 0 leaves these variables free.
inline void add_cvar_block(ProgramBuilder& b, const GridCase& grid, const ScenarioSet& scenarios,
                           const VariableLayout& l) {
  const double base = grid.base_mva;
  const auto wind = grid.wind_bus_indices();
  const double v_cap = grid.load_vector().sum() / base + 1.0;
  double price_sum = 0.0;
  for (const auto& f : grid.wind_farms) price_sum += f.purchase_price * base;
  const double loss_cap = price_sum * v_cap + 1.0;
  const Eigen::Index eta = l.eta.offset;

  b.add_in({{eta, -1.0}}, 0.0);
  b.add_in({{eta, 1.0}}, loss_cap);
  for (Eigen::Index s = 0; s < l.scenario_count; ++s) {
    std::vector<std::pair<Eigen::Index, double>> epi;
    epi.reserve(static_cast<std::size_t>(l.wind_count + 2));
    for (Eigen::Index k = 0; k < l.wind_count; ++k) {
      const auto bus = static_cast<Eigen::Index>(wind[static_cast<std::size_t>(k)]);
      const Eigen::Index v = l.v_column(s, k);
      b.add_in({{l.p_w.offset + bus, 1.0}, {v, -1.0}}, scenarios.samples(s, bus) / base);
      b.add_in({{v, -1.0}}, 0.0);
      b.add_in({{v, 1.0}}, v_cap);
      epi.emplace_back(v, grid.wind_farms[static_cast<std::size_t>(k)].purchase_price * base);
    }
    const Eigen::Index u = l.u.offset + s;
    epi.emplace_back(eta, -1.0);
    epi.emplace_back(u, -1.0);
    b.add_in(epi, 0.0);
    b.add_in({{u, -1.0}}, 0.0);
    b.add_in({{u, 1.0}}, loss_cap);
  }
}

inline void check_scenarios(const GridCase& grid, const ScenarioSet& scenarios) {
  require_dims(scenarios.samples.cols() == static_cast<Eigen::Index>(grid.bus_count()),
               "scenario set has " + std::to_string(scenarios.samples.cols()) + " bus columns, case has " +
                   std::to_string(grid.bus_count()));
  if (scenarios.samples.rows() < 1) throw ValidationError("scenario set is empty");
  if (!scenarios.samples.allFinite() || (scenarios.samples.array() < 0.0).any())
    throw ValidationError("scenario set entries must be finite and >= 0");
}

inline ConvexProgram assemble_risk_program(const GridCase& grid, const ScenarioSet& scenarios, const OpfConfig& config,
                                           ProgramKind kind) {
  config.check();
  const FlowMatrices fm = build_flow_matrices(grid);
  check_scenarios(grid, scenarios);
  const auto m = static_cast<Eigen::Index>(grid.bus_count());
  const auto layout = make_layout(m, static_cast<Eigen::Index>(grid.reference_index()), scenarios.size(),
                                  static_cast<Eigen::Index>(grid.wind_farms.size()), true, true);

  ConvexProgram prog;
  prog.layout = layout;
  prog.kind = kind;
  prog.base_mva = grid.base_mva;
  prog.beta = config.beta.value();
  prog.tail_weight = 1.0 / (static_cast<double>(layout.scenario_count) * config.beta.tail_mass());

  ProgramBuilder b(layout.size());
  add_network(b, grid, fm, layout, Eigen::VectorXd::Zero(m), prog.balance_row);
  add_cvar_block(b, grid, scenarios, layout);
  if (kind == ProgramKind::cvar_penalty) {
    prog.mu = config.mu;
    b.set_linear(layout.eta.offset, config.mu);
    for (Eigen::Index s = 0; s < layout.scenario_count; ++s) b.set_linear(layout.u.offset + s, config.mu * prog.tail_weight);
  } else {
    std::vector<std::pair<Eigen::Index, double>> row{{layout.eta.offset, 1.0}};
    for (Eigen::Index s = 0; s < layout.scenario_count; ++s) row.emplace_back(layout.u.offset + s, prog.tail_weight);
    b.add_in(row, *config.budget);
  }
  prog.qp = b.build();
  return prog;
}

}  // namespace detail

/// Sample-average CVaR-penalized dispatch in epigraph form:
/// minimize sum_m C_m(p_g) + mu (eta + sum_s u_s / (N_s (1 - beta))).
inline ConvexProgram assemble_ap1(const GridCase& grid, const ScenarioSet& scenarios, const OpfConfig& config) {
  return detail::assemble_risk_program(grid, scenarios, config, ProgramKind::cvar_penalty);
}

/// Generation cost only, with the sample CVaR of the transaction cost capped at config.budget.
inline ConvexProgram assemble_p2(const GridCase& grid, const ScenarioSet& scenarios, const OpfConfig& config) {
  if (!config.budget) throw ValidationError("assemble_p2: a CVaR budget is required");
  return detail::assemble_risk_program(grid, scenarios, config, ProgramKind::cvar_budget);
}

/// Deterministic DC-OPF with the wind injection fixed at the forecast. With
/// allow_curtailment the injection becomes a variable in [0, forecast] instead.
inline ConvexProgram assemble_norisk(const GridCase& grid, bool allow_curtailment = false) {
  const FlowMatrices fm = build_flow_matrices(grid);
  const auto m = static_cast<Eigen::Index>(grid.bus_count());
  const auto layout =
      make_layout(m, static_cast<Eigen::Index>(grid.reference_index()), 0, 0, allow_curtailment, false);
  ConvexProgram prog;
  prog.layout = layout;
  prog.kind = ProgramKind::no_risk;
  prog.base_mva = grid.base_mva;
  detail::ProgramBuilder b(layout.size());
  const Eigen::VectorXd forecast = grid.forecast_vector();
  if (allow_curtailment) {
    detail::add_network(b, grid, fm, layout, Eigen::VectorXd::Zero(m), prog.balance_row);
    for (const auto idx : grid.wind_bus_indices())
      b.add_in({{layout.p_w.offset + static_cast<Eigen::Index>(idx), 1.0}}, forecast[static_cast<Eigen::Index>(idx)] / grid.base_mva);
  } else {
    detail::add_network(b, grid, fm, layout, forecast, prog.balance_row);
    prog.fixed_wind = forecast;
  }
  prog.qp = b.build();
  return prog;
}

/// Nodal-balance duals as $/MWh: the marginal cost of one more MW of load at each bus.
inline Eigen::VectorXd extract_lmp(const SolveReport& report, const ConvexProgram& program) {
  const Eigen::Index m = program.layout.bus_count;
  if (!report.solved() || report.eq_duals.size() < program.balance_row + m)
    throw ValidationError("extract_lmp: no nodal-balance duals (solve status " + std::string(to_string(report.status)) + ")");
  return -report.eq_duals.segment(program.balance_row, m) / program.base_mva;
}

struct DispatchSolution {
  Eigen::VectorXd p_g;    // MW
  Eigen::VectorXd p_w;    // MW
  Eigen::VectorXd theta;  // rad, reference bus at 0
  Eigen::VectorXd flows;  // MW per line
  double eta = 0.0;       // $
  double gen_cost = 0.0;  // $
  double cvar_term = 0.0;  // $, eta + sum u / (N_s (1 - beta))
  double mu = 0.0;
  double objective = 0.0;  // gen_cost + mu * cvar_term
  Eigen::VectorXd lmp;     // $/MWh, empty unless solved
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  SolveStatus status = SolveStatus::numerical_error;

  bool solved() const { return status == SolveStatus::solved; }
};

inline double generation_cost(const GridCase& grid, const Eigen::VectorXd& p_g_mw) {
  double total = 0.0;
  for (const auto& g : grid.generators) {
    const double p = p_g_mw[static_cast<Eigen::Index>(grid.bus_index(g.bus))];
    total += g.cost_quad * p * p + g.cost_lin * p;
  }
  return total;
}

/// Maps a solver report back to named quantities in MW / $.
inline DispatchSolution decode_solution(const SolveReport& report, const ConvexProgram& program, const GridCase& grid) {
  const auto& l = program.layout;
  const double base = program.base_mva;
  DispatchSolution sol;
  sol.status = report.status;
  sol.iterations = report.iterations;
  sol.kkt_residual = std::max({report.primal_residual, report.dual_residual, report.complementarity_gap});
  sol.mu = program.mu;
  if (report.primal.size() != l.size()) return sol;
  const Eigen::VectorXd& x = report.primal;

  sol.p_g = base * x.segment(l.p_g.offset, l.p_g.count);
  sol.p_w = l.p_w.count > 0 ? Eigen::VectorXd(base * x.segment(l.p_w.offset, l.p_w.count))
                            : (program.fixed_wind.size() > 0 ? program.fixed_wind : Eigen::VectorXd::Zero(l.bus_count));
  // Entries without a generator or wind farm are pinned to zero by equality rows.
  for (Eigen::Index i = 0; i < l.bus_count; ++i) {
    if (grid.generator_at(static_cast<std::size_t>(i)) == nullptr) sol.p_g[i] = 0.0;
    if (l.p_w.count > 0 && grid.wind_farm_at(static_cast<std::size_t>(i)) == nullptr) sol.p_w[i] = 0.0;
  }
  sol.theta = Eigen::VectorXd::Zero(l.bus_count);
  for (Eigen::Index i = 0; i < l.bus_count; ++i)
    if (const auto c = l.theta_column(i); c >= 0) sol.theta[i] = x[c];
  sol.flows = line_flows(build_flow_matrices(grid), sol.theta);
  sol.gen_cost = generation_cost(grid, sol.p_g);
  if (l.eta.count > 0) {
    sol.eta = x[l.eta.offset];
    sol.cvar_term = sol.eta + program.tail_weight * x.segment(l.u.offset, l.u.count).sum();
  }
  sol.objective = sol.gen_cost + sol.mu * sol.cvar_term;
  if (report.solved()) sol.lmp = extract_lmp(report, program);
  return sol;
}

inline DispatchSolution solve_dispatch(const ConvexProgram& program, const GridCase& grid,
                                       const SolverSettings& settings = {}) {
  return decode_solution(solve_qp(program.qp, settings), program, grid);
}

inline DispatchSolution solve_ap1(const GridCase& grid, const ScenarioSet& scenarios, const OpfConfig& config,
                                  const SolverSettings& settings = {}) {
  return solve_dispatch(assemble_ap1(grid, scenarios, config), grid, settings);
}

}  // namespace riskopf
