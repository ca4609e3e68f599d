#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the interior-point solver or the closed-form CVaR code.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "riskopf/qp_solver.hpp"

namespace riskopf::oracle {

struct AdmmResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Dense ADMM (operator splitting on l <= Cx <= u) with adaptive penalty,
/// run to tight residuals. Equality rows get a 1e3x larger penalty. The
/// penalty is adapted at most 20 times; unbounded adaptation cycles on LPs.
inline AdmmResult admm_qp(const QuadraticProgram& qp, double tol = 1e-11, int max_iter = 400000) {
  const Eigen::MatrixXd P = Eigen::MatrixXd(qp.Q);
  const Eigen::Index n = qp.q.size();
  const Eigen::Index me = qp.b_eq.size();
  const Eigen::Index mi = qp.b_in.size();
  const Eigen::Index m = me + mi;
  Eigen::MatrixXd C(m, n);
  if (me > 0) C.topRows(me) = Eigen::MatrixXd(qp.A_eq);
  if (mi > 0) C.bottomRows(mi) = Eigen::MatrixXd(qp.A_in);
  Eigen::VectorXd lo(m), hi(m);
  if (me > 0) {
    lo.head(me) = qp.b_eq;
    hi.head(me) = qp.b_eq;
  }
  if (mi > 0) {
    lo.tail(mi).setConstant(-std::numeric_limits<double>::infinity());
    hi.tail(mi) = qp.b_in;
  }

  const double sigma = 1e-8;
  const double alpha = 1.6;
  double rho = 0.1;
  auto rho_vec = [&] {
    Eigen::VectorXd r = Eigen::VectorXd::Constant(m, rho);
    if (me > 0) r.head(me) *= 1e3;
    return r;
  };
  Eigen::VectorXd r = rho_vec();
  Eigen::LLT<Eigen::MatrixXd> llt;
  auto refactor = [&] {
    Eigen::MatrixXd K = P + sigma * Eigen::MatrixXd::Identity(n, n) + C.transpose() * r.asDiagonal() * C;
    llt.compute(K);
  };
  refactor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), z = Eigen::VectorXd::Zero(m), y = Eigen::VectorXd::Zero(m);
  AdmmResult out;
  int updates = 0;
  for (int k = 1; k <= max_iter; ++k) {
    const Eigen::VectorXd rhs = sigma * x - qp.q + C.transpose() * (r.cwiseProduct(z) - y);
    const Eigen::VectorXd xt = llt.solve(rhs);
    const Eigen::VectorXd zt = C * xt;
    const Eigen::VectorXd x_new = alpha * xt + (1 - alpha) * x;
    const Eigen::VectorXd z_relax = alpha * zt + (1 - alpha) * z;
    const Eigen::VectorXd z_new = (z_relax + y.cwiseQuotient(r)).cwiseMax(lo).cwiseMin(hi);
    y += r.cwiseProduct(z_relax - z_new);
    x = x_new;
    z = z_new;

    if (k % 25 == 0) {
      const Eigen::VectorXd cx = C * x;
      const Eigen::VectorXd px = P * x;
      const Eigen::VectorXd cty = C.transpose() * y;
      const double rp = (cx - z).lpNorm<Eigen::Infinity>();
      const double rd = (px + qp.q + cty).lpNorm<Eigen::Infinity>();
      const double sp = std::max({cx.lpNorm<Eigen::Infinity>(), z.lpNorm<Eigen::Infinity>(), 1.0});
      const double sd = std::max({px.lpNorm<Eigen::Infinity>(), cty.lpNorm<Eigen::Infinity>(),
                                  qp.q.lpNorm<Eigen::Infinity>(), 1.0});
      out.iterations = k;
      out.primal_residual = rp;
      out.dual_residual = rd;
      if (rp <= tol * sp && rd <= tol * sd) {
        out.converged = true;
        break;
      }
      if (k % 100 == 0 && updates < 20) {
        const double ratio = std::sqrt((rp / sp) / std::max(rd / sd, 1e-300));
        if (ratio > 5.0 || ratio < 0.2) {
          rho = std::clamp(rho * ratio, 1e-6, 1e6);
          r = rho_vec();
          refactor();
          ++updates;
        }
      }
    }
  }
  out.x = x;
  out.objective = qp.objective(x);
  return out;
}

/// Random convex QP with a strictly feasible point and a box on every variable.
inline QuadraticProgram random_qp(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<Eigen::Index> rank_pick(0, n);
  auto rand_mat = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
  };
  auto rand_vec = [&](Eigen::Index k) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = u(rng);
    return v;
  };

  const Eigen::Index rank = rank_pick(rng);
  const Eigen::MatrixXd factor = rand_mat(rank, n);
  const Eigen::MatrixXd Q = factor.transpose() * factor;
  const Eigen::Index me = std::uniform_int_distribution<Eigen::Index>(0, n / 3)(rng);
  const Eigen::Index mg = std::uniform_int_distribution<Eigen::Index>(0, n)(rng);
  const Eigen::VectorXd x0 = rand_vec(n);

  QuadraticProgram qp;
  qp.Q = Q.sparseView();
  qp.q = 5.0 * rand_vec(n);
  const Eigen::MatrixXd Aeq = rand_mat(me, n);
  qp.A_eq = Aeq.sparseView();
  qp.b_eq = Aeq * x0;
  Eigen::MatrixXd Ain(mg + 2 * n, n);
  Ain.topRows(mg) = rand_mat(mg, n);
  Ain.middleRows(mg, n) = Eigen::MatrixXd::Identity(n, n);
  Ain.bottomRows(n) = -Eigen::MatrixXd::Identity(n, n);
  qp.A_in = Ain.sparseView();
  qp.b_in.resize(Ain.rows());
  std::uniform_real_distribution<double> margin(0.05, 1.0);
  for (Eigen::Index i = 0; i < mg; ++i) qp.b_in[i] = Ain.row(i).dot(x0) + margin(rng);
  qp.b_in.segment(mg, 2 * n).setConstant(3.0);
  return qp;
}

}  // namespace riskopf::oracle
