#include <random>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "riskopf/cvar.hpp"
#include "riskopf/opf.hpp"

namespace riskopf {
namespace {

ScenarioSet bundled_scenarios(const GridCase& grid, Eigen::Index n, std::uint64_t seed) {
  return sample_scenarios(grid.forecast_vector(), fixture::bundled_covariance(grid), n, seed);
}

double sample_cvar(const DispatchSolution& s, const GridCase& grid, const ScenarioSet& scen, double beta) {
  return var_cvar_oracle(scenario_transaction_costs(s.p_w, scen.samples, grid.wind_price_vector()), RiskLevel(beta)).cvar;
}

// Checks bounds, balance and line limits in MW against the case data.
void expect_feasible(const DispatchSolution& s, const GridCase& grid, double tol_mw = 1e-4) {
  ASSERT_TRUE(s.solved());
  const auto fm = build_flow_matrices(grid);
  const Eigen::VectorXd injection = s.p_g + s.p_w - grid.load_vector();
  const Eigen::VectorXd from_flows = Eigen::MatrixXd(fm.incidence).transpose() * s.flows;
  EXPECT_LE((injection - from_flows).lpNorm<Eigen::Infinity>(), tol_mw);
  for (std::size_t i = 0; i < grid.bus_count(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (const auto* g = grid.generator_at(i)) {
      EXPECT_GE(s.p_g[k], g->p_min - tol_mw);
      EXPECT_LE(s.p_g[k], g->p_max + tol_mw);
    } else {
      EXPECT_EQ(s.p_g[k], 0.0);
    }
    EXPECT_GE(s.p_w[k], -tol_mw);
    if (grid.wind_farm_at(i) == nullptr) {
      EXPECT_EQ(s.p_w[k], 0.0);
    }
  }
  for (std::size_t l = 0; l < grid.lines.size(); ++l)
    EXPECT_LE(std::abs(s.flows[static_cast<Eigen::Index>(l)]), grid.lines[l].flow_limit + tol_mw);
  EXPECT_EQ(s.theta[static_cast<Eigen::Index>(grid.reference_index())], 0.0);
}

TEST(Layout, ThirtyBusThousandScenarios) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 1000, 1);
  const auto prog = assemble_ap1(grid, scen, OpfConfig{});
  const auto& l = prog.layout;
  EXPECT_EQ(l.u.count, 1000);
  EXPECT_EQ(l.v.count, 1000 * 7);
  EXPECT_EQ(l.theta.count, 29);
  EXPECT_EQ(l.size(), 2 * 30 + 29 + 1 + 1000 * 7 + 1000);
  EXPECT_EQ(prog.qp.q.size(), l.size());
  // Blocks tile the vector in order without gaps.
  EXPECT_EQ(l.p_g.offset, 0);
  EXPECT_EQ(l.p_w.offset, l.p_g.end());
  EXPECT_EQ(l.theta.offset, l.p_w.end());
  EXPECT_EQ(l.eta.offset, l.theta.end());
  EXPECT_EQ(l.v.offset, l.eta.end());
  EXPECT_EQ(l.u.offset, l.v.end());
}

TEST(Assemble, RejectsBadConfig) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 10, 1);
  OpfConfig c;
  c.mu = -1.0;
  EXPECT_THROW(assemble_ap1(grid, scen, c), ValidationError);
  EXPECT_THROW(assemble_p2(grid, scen, OpfConfig{}), ValidationError);
  ScenarioSet narrow = scen;
  narrow.samples = scen.samples.leftCols(29);
  EXPECT_THROW(assemble_ap1(grid, narrow, OpfConfig{}), DimensionError);
}

TEST(Assemble, ZeroWeightKeepsBlockWithoutCost) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 20, 1);
  OpfConfig c;
  c.mu = 0.0;
  const auto prog = assemble_ap1(grid, scen, c);
  EXPECT_EQ(prog.layout.u.count, 20);
  EXPECT_EQ(prog.qp.q.segment(prog.layout.eta.offset, prog.layout.size() - prog.layout.eta.offset).cwiseAbs().sum(), 0.0);
}

TEST(Assemble, ForecastScenarioAdmitsZeroRiskPoint) {
  // Embed the no-risk dispatch (p_w = forecast) with eta = u = v = 0 into AP1
  // built from a single scenario equal to the forecast: every row holds.
  const auto grid = fixture::bundled_case();
  const auto nr = solve_dispatch(assemble_norisk(grid), grid);
  ASSERT_TRUE(nr.solved());
  ScenarioSet one;
  one.samples = grid.forecast_vector().transpose();
  one.forecast = grid.forecast_vector();
  OpfConfig c;
  c.mu = 1.0;
  const auto prog = assemble_ap1(grid, one, c);
  const auto& l = prog.layout;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(l.size());
  x.segment(l.p_g.offset, 30) = nr.p_g / grid.base_mva;
  x.segment(l.p_w.offset, 30) = nr.p_w / grid.base_mva;
  for (Eigen::Index i = 0; i < 30; ++i)
    if (const auto col = l.theta_column(i); col >= 0) x[col] = nr.theta[i];
  const auto r = kkt_residuals(prog.qp, x, Eigen::VectorXd::Zero(prog.qp.b_eq.size()), Eigen::VectorXd::Zero(prog.qp.b_in.size()));
  EXPECT_LE(r.primal, 1e-8);
  EXPECT_NEAR(prog.qp.objective(x), nr.gen_cost, 1e-8);
  // And the optimum can only be cheaper.
  const auto best = solve_dispatch(prog, grid);
  ASSERT_TRUE(best.solved());
  EXPECT_LE(best.objective, nr.gen_cost + 1e-6);
}

TEST(NoRisk, ConventionalCoversLoadMinusForecast) {
  const auto grid = fixture::bundled_case();
  const auto s = solve_dispatch(assemble_norisk(grid), grid);
  expect_feasible(s, grid);
  EXPECT_NEAR(s.p_g.sum(), 189.2 - 47.3, 1e-6);
  EXPECT_DOUBLE_EQ(s.p_w[static_cast<Eigen::Index>(grid.bus_index(26))], 8.46);
  EXPECT_EQ(s.cvar_term, 0.0);
  EXPECT_NEAR(s.objective, s.gen_cost, 1e-12);
}

TEST(NoRisk, ZeroForecastIsEconomicDispatch) {
  auto grid = fixture::bundled_case();
  for (auto& f : grid.wind_farms) f.forecast = 0.0;
  const auto s = solve_dispatch(assemble_norisk(grid), grid);
  expect_feasible(s, grid);
  EXPECT_NEAR(s.p_g.sum(), 189.2, 1e-6);
}

TEST(NoRisk, CurtailmentVariantNeverCostsMore) {
  const auto grid = fixture::bundled_case();
  const auto fixed = solve_dispatch(assemble_norisk(grid), grid);
  const auto curt = solve_dispatch(assemble_norisk(grid, true), grid);
  ASSERT_TRUE(fixed.solved() && curt.solved());
  EXPECT_LE(curt.gen_cost, fixed.gen_cost + 1e-6);
  EXPECT_LE((curt.p_w - grid.forecast_vector()).maxCoeff(), 1e-6);
}

TEST(Ap1, EpigraphIsTightOnBundledCase) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 200, 4);
  for (double mu : {0.5, 1.0, 3.0}) {
    OpfConfig c;
    c.mu = mu;
    const auto s = solve_ap1(grid, scen, c);
    expect_feasible(s, grid);
    EXPECT_NEAR(s.cvar_term, sample_cvar(s, grid, scen, 0.95), 1e-6) << "mu " << mu;
    EXPECT_NEAR(s.objective, s.gen_cost + mu * s.cvar_term, 1e-9 * (1 + std::abs(s.objective)));
  }
}

TEST(Ap1, TradeOffIsMonotone) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 4; ++trial) {
    const auto grid = fixture::random_grid(rng);
    const auto scen = fixture::random_scenarios(grid, 40, rng);
    double prev_cvar = std::numeric_limits<double>::infinity(), prev_gen = -1.0;
    for (double mu : {0.1, 0.3, 1.0, 3.0, 10.0}) {
      OpfConfig c;
      c.mu = mu;
      const auto s = solve_ap1(grid, scen, c);
      if (!s.solved()) GTEST_SKIP() << "random grid infeasible";
      EXPECT_LE(s.cvar_term, prev_cvar + 1e-6 * (1 + std::abs(prev_cvar)));
      EXPECT_GE(s.gen_cost, prev_gen - 1e-6 * (1 + std::abs(prev_gen)));
      prev_cvar = s.cvar_term;
      prev_gen = s.gen_cost;
    }
  }
}

TEST(P2, LooseBudgetMatchesZeroWeight) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 100, 5);
  OpfConfig c0;
  c0.mu = 0.0;
  const auto ap1 = solve_ap1(grid, scen, c0);
  OpfConfig cb;
  cb.budget = 1e7;
  const auto p2 = solve_dispatch(assemble_p2(grid, scen, cb), grid);
  ASSERT_TRUE(ap1.solved() && p2.solved());
  EXPECT_NEAR(p2.gen_cost, ap1.gen_cost, 1e-5 * (1 + ap1.gen_cost));
  EXPECT_EQ(p2.mu, 0.0);
}

// A zero budget leaves no strictly feasible point; a tiny one keeps an interior.
TEST(P2, VanishingBudgetRemovesEveryShortfall) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 100, 6);
  OpfConfig c;
  c.budget = 1e-6;
  const auto s = solve_dispatch(assemble_p2(grid, scen, c), grid);
  expect_feasible(s, grid);
  const auto costs = scenario_transaction_costs(s.p_w, scen.samples, grid.wind_price_vector());
  // The largest loss is at most N (1 - beta) times the CVaR.
  for (double t : costs) EXPECT_LE(t, 5.0 * 1e-6 + 1e-9);
  const Eigen::VectorXd lowest = scen.samples.colwise().minCoeff().transpose();
  EXPECT_LE((s.p_w - lowest).maxCoeff(), 1e-5);
}

TEST(P2, LagrangianCorrespondence) {
  const auto grid = fixture::bundled_case();
  const auto scen = bundled_scenarios(grid, 100, 7);
  for (double mu : {1.0, 2.0}) {
    OpfConfig c;
    c.mu = mu;
    const auto ap1 = solve_ap1(grid, scen, c);
    ASSERT_TRUE(ap1.solved());
    OpfConfig cb;
    cb.budget = ap1.cvar_term;
    const auto p2 = solve_dispatch(assemble_p2(grid, scen, cb), grid);
    ASSERT_TRUE(p2.solved());
    EXPECT_LE(p2.gen_cost, ap1.gen_cost + 1e-5 * (1 + ap1.gen_cost)) << "mu " << mu;
    EXPECT_LE(sample_cvar(p2, grid, scen, 0.95), ap1.cvar_term + 1e-5);
  }
}

TEST(Lmp, SingleBusIsMarginalCost) {
  const double c = 0.02, d = 3.0, load = 120.0;
  const auto grid = fixture::single_bus(c, d, load);
  const auto s = solve_dispatch(assemble_norisk(grid), grid);
  ASSERT_TRUE(s.solved());
  EXPECT_NEAR(s.p_g[0], load, 1e-6);
  EXPECT_NEAR(s.lmp[0], 2 * c * load + d, 1e-6);
}

TEST(Lmp, UncongestedBundledCaseIsFlat) {
  auto grid = fixture::bundled_case();
  for (auto& l : grid.lines) l.flow_limit = fixture::kInf;
  const auto s = solve_dispatch(assemble_norisk(grid), grid);
  ASSERT_TRUE(s.solved());
  EXPECT_LE(s.lmp.maxCoeff() - s.lmp.minCoeff(), 1e-6);
}

TEST(Lmp, CongestedTriangleMatchesFiniteDifferences) {
  const auto grid = fixture::three_bus(60.0);
  const auto base = solve_dispatch(assemble_norisk(grid), grid);
  expect_feasible(base, grid);
  EXPECT_NEAR(std::abs(base.flows[2]), 60.0, 1e-4);  // 1-3 line binds
  EXPECT_GT(base.lmp.maxCoeff() - base.lmp.minCoeff(), 1.0);
  const double h = 0.1;
  for (std::size_t b = 0; b < 3; ++b) {
    auto bumped = grid;
    bumped.buses[b].base_load += h;
    const auto s = solve_dispatch(assemble_norisk(bumped), bumped);
    ASSERT_TRUE(s.solved());
    const double fd = (s.objective - base.objective) / h;
    EXPECT_NEAR(base.lmp[static_cast<Eigen::Index>(b)], fd, 0.02 * std::abs(fd)) << "bus " << b + 1;
  }
}

TEST(Lmp, ThreeBusFlowsMatchInjections) {
  auto grid = fixture::three_bus(60.0);
  grid.wind_farms = {{2, 3.0, 10.0, {}}};
  std::mt19937_64 rng(3);
  const auto scen = fixture::random_scenarios(grid, 30, rng);
  const auto s = solve_ap1(grid, scen, OpfConfig{});
  expect_feasible(s, grid, 1e-5);
}

TEST(Dispatch, ExtractLmpNeedsSolvedReport) {
  const auto grid = fixture::two_bus();
  const auto prog = assemble_norisk(grid);
  SolveReport failed;
  failed.status = SolveStatus::max_iterations;
  EXPECT_THROW(extract_lmp(failed, prog), ValidationError);
}

TEST(Dispatch, InfeasibleForecastIsReported) {
  auto grid = fixture::two_bus();
  grid.lines[0].flow_limit = 10.0;  // cannot carry the 50 MW load
  const auto s = solve_dispatch(assemble_norisk(grid), grid);
  EXPECT_EQ(s.status, SolveStatus::primal_infeasible);
  EXPECT_EQ(s.lmp.size(), 0);
}

}  // namespace
}  // namespace riskopf
