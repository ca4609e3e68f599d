#pragma once

// Primal-dual interior-point solver for convex quadratic programs
//
//   minimize    1/2 x'Qx + q'x + constant
//   subject to  A_eq x  = b_eq
//               A_in x <= b_in
//
// Mehrotra predictor-corrector on the Ruiz-equilibrated problem. Each Newton
// system is reduced to the quasi-definite matrix
//
//   [ Q + G'WG + dp I    A_eq' ]
//   [ A_eq              -dd I  ]        (G = A_in, W = diag(z / s))
//
// and factored with a sparse LDL' (AMD ordering); iterative refinement
// against the unregularized operator removes the dp/dd bias.
//
// Dual sign convention: Qx + q + A_eq' y + A_in' z = 0 with z >= 0, so the
// optimal value moves by -y_i per unit increase of b_eq[i].

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "riskopf/errors.hpp"

namespace riskopf {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct QuadraticProgram {
  SparseMatrix Q;
  Eigen::VectorXd q;
  double constant = 0.0;
  SparseMatrix A_eq;
  Eigen::VectorXd b_eq;
  SparseMatrix A_in;
  Eigen::VectorXd b_in;

  Eigen::Index variable_count() const { return q.size(); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(Q * x) + q.dot(x) + constant; }
};

struct SolverSettings {
  double kkt_tolerance = 1e-8;
  int max_iterations = 200;
  double feasibility_tolerance = 1e-8;
};

enum class SolveStatus { solved, primal_infeasible, dual_infeasible, max_iterations, numerical_error };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::solved: return "solved";
    case SolveStatus::primal_infeasible: return "infeasible";
    case SolveStatus::dual_infeasible: return "unbounded";
    case SolveStatus::max_iterations: return "max-iter";
    case SolveStatus::numerical_error: return "numerical-error";
  }
  return "unknown";
}

struct SolveReport {
  Eigen::VectorXd primal;
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd ineq_duals;
  double objective = std::numeric_limits<double>::quiet_NaN();
  // ||A_eq x - b_eq||_inf / (1 + ||b_eq||_inf), combined with max(A_in x - b_in)^+.
  double primal_residual = std::numeric_limits<double>::infinity();
  // ||Qx + q + A_eq'y + A_in'z||_inf / (1 + ||q||_inf)
  double dual_residual = std::numeric_limits<double>::infinity();
  // |z'(b_in - A_in x)| / (1 + |objective|)
  double complementarity_gap = std::numeric_limits<double>::infinity();
  int iterations = 0;
  SolveStatus status = SolveStatus::numerical_error;

  bool solved() const { return status == SolveStatus::solved; }
};

/// KKT residuals of (x, y, z) against `qp`, using the SolveReport definitions.
struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
  double objective = 0.0;
};

inline KktResiduals kkt_residuals(const QuadraticProgram& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& z) {
  KktResiduals r;
  r.objective = qp.objective(x);
  double eq = 0.0;
  if (qp.b_eq.size() > 0) eq = (qp.A_eq * x - qp.b_eq).lpNorm<Eigen::Infinity>() / (1.0 + qp.b_eq.lpNorm<Eigen::Infinity>());
  double in = 0.0;
  Eigen::VectorXd slack;
  if (qp.b_in.size() > 0) {
    slack = qp.b_in - qp.A_in * x;
    in = std::max(0.0, -slack.minCoeff());
  }
  r.primal = std::max(eq, in);
  Eigen::VectorXd stat = qp.Q * x + qp.q;
  if (y.size() > 0) stat += qp.A_eq.transpose() * y;
  if (z.size() > 0) stat += qp.A_in.transpose() * z;
  r.dual = stat.lpNorm<Eigen::Infinity>() / (1.0 + qp.q.lpNorm<Eigen::Infinity>());
  r.gap = z.size() > 0 ? std::abs(z.dot(slack)) / (1.0 + std::abs(r.objective)) : 0.0;
  return r;
}

namespace detail {

inline void check_program(const QuadraticProgram& qp) {
  const auto n = qp.q.size();
  require_dims(qp.Q.rows() == n && qp.Q.cols() == n, "solve_qp: Q must be n x n");
  require_dims(qp.A_eq.cols() == n && qp.A_eq.rows() == qp.b_eq.size(), "solve_qp: A_eq / b_eq shape mismatch");
  require_dims(qp.A_in.cols() == n && qp.A_in.rows() == qp.b_in.size(), "solve_qp: A_in / b_in shape mismatch");
  if (!qp.q.allFinite() || !qp.b_eq.allFinite() || !qp.b_in.allFinite())
    throw ValidationError("solve_qp: non-finite vector data");

  const SparseMatrix asym = qp.Q - SparseMatrix(qp.Q.transpose());
  double qmax = 0.0;
  for (int k = 0; k < qp.Q.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(qp.Q, k); it; ++it) qmax = std::max(qmax, std::abs(it.value()));
  double amax = 0.0;
  for (int k = 0; k < asym.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(asym, k); it; ++it) amax = std::max(amax, std::abs(it.value()));
  if (amax > 1e-12 * std::max(1.0, qmax)) throw ValidationError("solve_qp: Q is not symmetric");
  if (qmax == 0.0) return;

  bool diagonal = true;
  for (int k = 0; k < qp.Q.outerSize() && diagonal; ++k)
    for (SparseMatrix::InnerIterator it(qp.Q, k); it; ++it)
      if (it.row() != it.col() && it.value() != 0.0) {
        diagonal = false;
        break;
      }
  const double tol = 1e-10 * qmax;
  if (diagonal) {
    if (Eigen::VectorXd(qp.Q.diagonal()).minCoeff() < -tol) throw ValidationError("solve_qp: Q is not positive semidefinite");
  } else if (n <= 500) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(qp.Q), Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -tol) throw ValidationError("solve_qp: Q is not positive semidefinite");
  } else {
    SparseMatrix shifted = qp.Q;
    for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += 1e-8 * qmax;
    Eigen::SimplicialLLT<SparseMatrix> llt(shifted);
    if (llt.info() != Eigen::Success) throw ValidationError("solve_qp: Q is not positive semidefinite");
  }
}

struct Equilibration {
  Eigen::VectorXd col;     // x = col .* x_scaled
  Eigen::VectorXd row_eq;  // scaled rows = row .* rows
  Eigen::VectorXd row_in;
  double cost = 1.0;
};

inline void column_row_norms(const SparseMatrix& m, Eigen::VectorXd& col, Eigen::VectorXd* row) {
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      const double a = std::abs(it.value());
      col[it.col()] = std::max(col[it.col()], a);
      if (row) (*row)[it.row()] = std::max((*row)[it.row()], a);
    }
}

inline Eigen::VectorXd inv_sqrt_clamped(const Eigen::VectorXd& norms) {
  Eigen::VectorXd d(norms.size());
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    d[i] = norms[i] > 0.0 ? std::clamp(1.0 / std::sqrt(norms[i]), 1e-4, 1e4) : 1.0;
  return d;
}

/// Ruiz equilibration of [Q A_eq' A_in'; A_eq; A_in] followed by cost scaling. Modifies qp in place.
inline Equilibration equilibrate(QuadraticProgram& qp, int passes = 15) {
  const auto n = qp.q.size();
  Equilibration e{Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(qp.b_eq.size()), Eigen::VectorXd::Ones(qp.b_in.size()),
                  1.0};
  for (int pass = 0; pass < passes; ++pass) {
    Eigen::VectorXd cn = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd rn_eq = Eigen::VectorXd::Zero(qp.b_eq.size());
    Eigen::VectorXd rn_in = Eigen::VectorXd::Zero(qp.b_in.size());
    column_row_norms(qp.Q, cn, nullptr);
    column_row_norms(qp.A_eq, cn, &rn_eq);
    column_row_norms(qp.A_in, cn, &rn_in);
    const Eigen::VectorXd d = inv_sqrt_clamped(cn);
    const Eigen::VectorXd d_eq = inv_sqrt_clamped(rn_eq);
    const Eigen::VectorXd d_in = inv_sqrt_clamped(rn_in);
    qp.Q = d.asDiagonal() * qp.Q * d.asDiagonal();
    qp.q = d.cwiseProduct(qp.q);
    qp.A_eq = d_eq.asDiagonal() * qp.A_eq * d.asDiagonal();
    qp.b_eq = d_eq.cwiseProduct(qp.b_eq);
    qp.A_in = d_in.asDiagonal() * qp.A_in * d.asDiagonal();
    qp.b_in = d_in.cwiseProduct(qp.b_in);
    e.col = e.col.cwiseProduct(d);
    e.row_eq = e.row_eq.cwiseProduct(d_eq);
    e.row_in = e.row_in.cwiseProduct(d_in);
  }
  Eigen::VectorXd qn = Eigen::VectorXd::Zero(n);
  column_row_norms(qp.Q, qn, nullptr);
  const double mean_q = n > 0 ? qn.mean() : 0.0;
  const double scale = std::max(mean_q, n > 0 ? qp.q.lpNorm<Eigen::Infinity>() : 0.0);
  e.cost = scale > 0.0 ? std::clamp(1.0 / scale, 1e-4, 1e4) : 1.0;
  qp.Q *= e.cost;
  qp.q *= e.cost;
  qp.constant *= e.cost;
  return e;
}

/// Factorization of the reduced Newton system with iterative refinement.
class ReducedKkt {
public:
  ReducedKkt(const QuadraticProgram& qp, double reg)
      : qp_(qp), base_reg_(reg), reg_(reg), n_(qp.q.size()), me_(qp.b_eq.size()) {}

  /// Factors with the current regularization, escalating it on a zero pivot.
  bool factor(const Eigen::VectorXd& w) {
    for (double reg = base_reg_; reg <= 1e-4; reg *= 100.0) {
      reg_ = reg;
      if (factor_once(w)) return true;
    }
    return false;
  }

  /// Solves [H A'; A 0][dx; dy] = [rx; ry] with H = Q + G'WG.
  void solve(const Eigen::VectorXd& rx, const Eigen::VectorXd& ry, Eigen::VectorXd& dx, Eigen::VectorXd& dy) const {
    Eigen::VectorXd rhs(n_ + me_);
    rhs << rx, ry;
    Eigen::VectorXd sol = ldlt_.solve(rhs);
    const double rhs_norm = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    for (int pass = 0; pass < 8; ++pass) {
      const Eigen::VectorXd res = rhs - apply(sol);
      if (res.lpNorm<Eigen::Infinity>() <= 1e-14 * rhs_norm) break;
      sol += ldlt_.solve(res);
    }
    dx = sol.head(n_);
    dy = sol.tail(me_);
  }

private:
  bool factor_once(const Eigen::VectorXd& w) {
    w_ = w;
    SparseMatrix h = qp_.Q;
    if (w.size() > 0) h += SparseMatrix(qp_.A_in.transpose() * w.asDiagonal() * qp_.A_in);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(h.nonZeros() + qp_.A_eq.nonZeros() + n_ + me_));
    for (int k = 0; k < h.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(h, k); it; ++it)
        if (it.row() > it.col()) t.emplace_back(it.row(), it.col(), it.value());
    Eigen::VectorXd diag = h.diagonal();
    for (Eigen::Index i = 0; i < n_; ++i) t.emplace_back(i, i, diag[i] + reg_);
    for (int k = 0; k < qp_.A_eq.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(qp_.A_eq, k); it; ++it) t.emplace_back(n_ + it.row(), it.col(), it.value());
    for (Eigen::Index i = 0; i < me_; ++i) t.emplace_back(n_ + i, n_ + i, -reg_);
    SparseMatrix k(n_ + me_, n_ + me_);
    k.setFromTriplets(t.begin(), t.end());
    ldlt_.compute(k);
    return ldlt_.info() == Eigen::Success;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    const Eigen::VectorXd vx = v.head(n_);
    const Eigen::VectorXd vy = v.tail(me_);
    Eigen::VectorXd out(n_ + me_);
    Eigen::VectorXd top = qp_.Q * vx;
    if (w_.size() > 0) top += qp_.A_in.transpose() * w_.cwiseProduct(qp_.A_in * vx);
    if (me_ > 0) top += qp_.A_eq.transpose() * vy;
    out.head(n_) = top;
    if (me_ > 0) out.tail(me_) = qp_.A_eq * vx;
    return out;
  }

  const QuadraticProgram& qp_;
  double base_reg_;
  double reg_;
  Eigen::Index n_;
  Eigen::Index me_;
  Eigen::VectorXd w_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  return alpha;
}

}  // namespace detail

inline SolveReport solve_qp(const QuadraticProgram& program, const SolverSettings& settings = {}) {
  if (!(settings.kkt_tolerance > 0.0) || !(settings.feasibility_tolerance > 0.0) || settings.max_iterations < 1)
    throw ValidationError("solve_qp: tolerances must be positive and max_iterations >= 1");
  detail::check_program(program);

  QuadraticProgram sp = program;
  const detail::Equilibration eq = detail::equilibrate(sp);
  const Eigen::Index n = sp.q.size();
  const Eigen::Index me = sp.b_eq.size();
  const Eigen::Index mi = sp.b_in.size();
  const SparseMatrix& G = sp.A_in;
  const Eigen::VectorXd& h = sp.b_in;

  auto unscale = [&](const Eigen::VectorXd& xs, const Eigen::VectorXd& ys, const Eigen::VectorXd& zs, SolveReport& rep) {
    rep.primal = eq.col.cwiseProduct(xs);
    rep.eq_duals = eq.row_eq.cwiseProduct(ys) / eq.cost;
    rep.ineq_duals = eq.row_in.cwiseProduct(zs) / eq.cost;
    const KktResiduals r = kkt_residuals(program, rep.primal, rep.eq_duals, rep.ineq_duals);
    rep.objective = r.objective;
    rep.primal_residual = r.primal;
    rep.dual_residual = r.dual;
    rep.complementarity_gap = r.gap;
  };
  auto converged = [&](const SolveReport& r) {
    return r.primal_residual <= settings.feasibility_tolerance && r.dual_residual <= settings.kkt_tolerance &&
           r.complementarity_gap <= settings.kkt_tolerance;
  };
  auto merit = [](const SolveReport& r) {
    return std::max({r.primal_residual, r.dual_residual, r.complementarity_gap});
  };

  detail::ReducedKkt kkt(sp, 1e-9);
  Eigen::VectorXd x(n), y(me), z(mi), s(mi);

  // Starting point: least-squares solve with W = I, then shift s and z into the interior.
  if (!kkt.factor(Eigen::VectorXd::Ones(mi))) {
    SolveReport bad;
    bad.status = SolveStatus::numerical_error;
    return bad;
  }
  {
    Eigen::VectorXd rx = -sp.q;
    if (mi > 0) rx += G.transpose() * h;
    kkt.solve(rx, sp.b_eq, x, y);
    if (mi > 0) {
      s = h - G * x;
      z = -s;
      s.array() += std::max(-1.5 * s.minCoeff(), 0.0);
      z.array() += std::max(-1.5 * z.minCoeff(), 0.0);
      if (s.dot(z) <= 0.0) {
        s.array() += 1.0;
        z.array() += 1.0;
      }
      const double sz = s.dot(z);
      const double shift_s = 0.5 * sz / z.sum();
      const double shift_z = 0.5 * sz / s.sum();
      s.array() += shift_s;
      z.array() += shift_z;
    }
  }

  SolveReport best;
  best.status = SolveStatus::max_iterations;
  double best_merit = std::numeric_limits<double>::infinity();
  const double cert_tol = 1e-9;

  for (int iter = 0; iter <= settings.max_iterations; ++iter) {
    SolveReport current;
    unscale(x, y, z, current);
    current.iterations = iter;
    if (converged(current)) {
      current.status = SolveStatus::solved;
      return current;
    }
    if (std::isfinite(merit(current)) && merit(current) < best_merit) {
      best_merit = merit(current);
      best = current;
      best.status = SolveStatus::max_iterations;
    }
    best.iterations = iter;
    if (iter == settings.max_iterations) break;

    // Farkas certificate for primal infeasibility: A'y + G'z ~ 0, b'y + h'z < 0.
    // Any feasible point would need |x|_1 >= |b'y + h'z| / |A'y + G'z|.
    {
      const double scale = std::max(me > 0 ? y.lpNorm<Eigen::Infinity>() : 0.0, mi > 0 ? z.lpNorm<Eigen::Infinity>() : 0.0);
      if (scale > 1e3) {
        Eigen::VectorXd at = Eigen::VectorXd::Zero(n);
        if (me > 0) at += sp.A_eq.transpose() * y;
        if (mi > 0) at += G.transpose() * z;
        const double support = ((me > 0 ? sp.b_eq.dot(y) : 0.0) + (mi > 0 ? h.dot(z) : 0.0)) / scale;
        if (support < -cert_tol && at.lpNorm<Eigen::Infinity>() / scale <= 1e-6 * -support) {
          best.status = SolveStatus::primal_infeasible;
          best.iterations = iter;
          return best;
        }
      }
    }

    const Eigen::VectorXd r_d = sp.Q * x + sp.q + (me > 0 ? Eigen::VectorXd(sp.A_eq.transpose() * y) : Eigen::VectorXd::Zero(n)) +
                                (mi > 0 ? Eigen::VectorXd(G.transpose() * z) : Eigen::VectorXd::Zero(n));
    const Eigen::VectorXd r_p = me > 0 ? Eigen::VectorXd(sp.A_eq * x - sp.b_eq) : Eigen::VectorXd(0);
    const Eigen::VectorXd r_g = mi > 0 ? Eigen::VectorXd(G * x + s - h) : Eigen::VectorXd(0);
    const double mu = mi > 0 ? s.dot(z) / static_cast<double>(mi) : 0.0;
    const Eigen::VectorXd w = mi > 0 ? Eigen::VectorXd(z.cwiseQuotient(s)) : Eigen::VectorXd(0);

    if (!kkt.factor(w)) {
      best.status = SolveStatus::numerical_error;
      return best;
    }

    Eigen::VectorXd dx, dy, dz(mi), ds(mi);
    auto newton = [&](const Eigen::VectorXd& r_c) {
      const Eigen::VectorXd rc_over_s = mi > 0 ? Eigen::VectorXd(r_c.cwiseQuotient(s)) : Eigen::VectorXd(0);
      Eigen::VectorXd rx = -r_d;
      if (mi > 0) rx -= G.transpose() * (w.cwiseProduct(r_g) - rc_over_s);
      kkt.solve(rx, -r_p, dx, dy);
      if (mi > 0) {
        const Eigen::VectorXd gdx = G * dx;
        dz = w.cwiseProduct(gdx + r_g) - rc_over_s;
        ds = -r_g - gdx;
      }
    };

    double alpha = 1.0;
    if (mi > 0) {
      newton(s.cwiseProduct(z));
      const double a_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
      const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(mi);
      // Centering target, floored at a fraction of the gap the stopping test needs.
      const double mu_floor =
          0.1 * settings.kkt_tolerance * (eq.cost + std::abs(sp.objective(x))) / static_cast<double>(mi);
      const double target = std::max(std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3) * mu, std::min(mu_floor, mu));
      Eigen::VectorXd r_c = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(mi, target);
      newton(r_c);
      double a_full = std::min(detail::max_step(s, ds), detail::max_step(z, dz));

      // Gondzio centrality correctors: push outlying complementarity products
      // of a longer trial step back into [0.1, 10] * target.
      for (int k = 0; k < 3 && a_full < 1.0; ++k) {
        const double a_trial = std::min(1.0, a_full + 0.2);
        const Eigen::VectorXd v = (s + a_trial * ds).cwiseProduct(z + a_trial * dz);
        Eigen::VectorXd t(mi);
        for (Eigen::Index i = 0; i < mi; ++i) {
          if (v[i] < 0.1 * target) t[i] = 0.1 * target - v[i];
          else if (v[i] > 10.0 * target) t[i] = std::max(10.0 * target - v[i], -10.0 * target);
          else t[i] = 0.0;
        }
        const Eigen::VectorXd keep_dx = dx, keep_dy = dy, keep_dz = dz, keep_ds = ds;
        newton(r_c - t);
        const double a_new = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
        if (a_new >= 1.01 * a_full && dx.allFinite()) {
          a_full = a_new;
          r_c -= t;
        } else {
          dx = keep_dx;
          dy = keep_dy;
          dz = keep_dz;
          ds = keep_ds;
          break;
        }
      }
      alpha = std::min(1.0, 0.99 * a_full);
    } else {
      newton(Eigen::VectorXd(0));
    }
    if (!dx.allFinite() || !dy.allFinite() || (mi > 0 && (!dz.allFinite() || !ds.allFinite()))) {
      best.status = SolveStatus::numerical_error;
      return best;
    }

    // Unboundedness: the primal direction is a feasible descent ray with no curvature.
    {
      const double nx = dx.lpNorm<Eigen::Infinity>();
      if (nx > 0.0) {
        const Eigen::VectorXd d = dx / nx;
        const double descent = sp.q.dot(d);
        const bool flat = (sp.Q * d).lpNorm<Eigen::Infinity>() <= cert_tol;
        const bool eq_ok = me == 0 || (sp.A_eq * d).lpNorm<Eigen::Infinity>() <= cert_tol;
        const bool in_ok = mi == 0 || (G * d).maxCoeff() <= cert_tol;
        if (descent < -cert_tol && flat && eq_ok && in_ok && x.lpNorm<Eigen::Infinity>() > 1e3) {
          best.status = SolveStatus::dual_infeasible;
          best.iterations = iter;
          return best;
        }
      }
    }

    x += alpha * dx;
    y += alpha * dy;
    if (mi > 0) {
      z += alpha * dz;
      s += alpha * ds;
    }
  }
  return best;
}

}  // namespace riskopf
