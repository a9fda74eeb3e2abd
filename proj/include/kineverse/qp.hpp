#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "kineverse/errors.hpp"

namespace kineverse {

/// One linear constraint row lb <= a.x <= ub. A positive slack_weight makes
/// the row soft: the solver may violate it, paying slack_weight * s^2 for a
/// violation of s. Equality tasks are rows with lb == ub.
struct QRow {
  Eigen::VectorXd a;
  double lb;
  double ub;
  double slack_weight = 0.0;
};

/// minimize 1/2 x'Wx - g'x over box bounds and constraint rows. W is
/// diagonal with nonnegative entries. Empty lo/hi mean unbounded variables.
struct QProblem {
  Eigen::VectorXd w;
  Eigen::VectorXd g;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  std::vector<QRow> rows;

  Eigen::Index size() const { return w.size(); }
};

namespace detail {

constexpr double kQpSigma = 1e-6;
constexpr double kQpAlpha = 1.6;
constexpr double kQpTol = 1e-6;
constexpr double kQpCertTol = 1e-7;
constexpr int kQpMaxIter = 4000;

inline double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

inline double scale_limit(double v) {
  if (!(v > 0.0) || !std::isfinite(v)) return 1.0;
  return std::clamp(v, 1e-4, 1e4);
}

/// Worst KKT violation of a primal-dual pair on the original data:
/// constraint violation, stationarity residual, and complementary slackness.
struct KktScore {
  double primal;
  double dual;
  double comp;
  double worst() const { return std::max({primal, dual, comp}); }
};

inline KktScore kkt_score(const Eigen::MatrixXd& p_diag_a, const Eigen::VectorXd& q,
                          const Eigen::MatrixXd& a, const Eigen::VectorXd& l,
                          const Eigen::VectorXd& u, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& y) {
  const Eigen::VectorXd ax = a * x;
  KktScore s{0.0, 0.0, 0.0};
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    s.primal = std::max({s.primal, l[i] - ax[i], ax[i] - u[i]});
    if (y[i] > 0.0 && std::isfinite(u[i])) s.comp = std::max(s.comp, y[i] * (u[i] - ax[i]));
    if (y[i] < 0.0 && std::isfinite(l[i])) s.comp = std::max(s.comp, -y[i] * (ax[i] - l[i]));
  }
  s.primal = std::max(s.primal, 0.0);
  s.comp = std::fabs(s.comp);
  s.dual = inf_norm(p_diag_a * x + q + a.transpose() * y);
  return s;
}

}  // namespace detail

/// Operator-splitting (ADMM) dense QP solver with Ruiz equilibration,
/// adaptive step size, and an active-set polish. Succeeds with KKT residuals
/// within 1e-6, raises InfeasibleError on a primal infeasibility certificate
/// and IterationLimitError after 4000 iterations. Deterministic.
inline Eigen::VectorXd solve_qp(const QProblem& prob) {
  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::Index n = prob.size();
  if (n == 0) return Eigen::VectorXd();
  if (prob.g.size() != n) throw Error("solve_qp: objective sizes disagree");
  if (prob.w.minCoeff() < 0.0) throw Error("solve_qp: negative objective weight");
  if (prob.lo.size() != 0 && prob.lo.size() != n)
    throw Error("solve_qp: lower bound size mismatch");
  if (prob.hi.size() != 0 && prob.hi.size() != n)
    throw Error("solve_qp: upper bound size mismatch");

  Eigen::VectorXd lo = prob.lo.size() ? prob.lo : Eigen::VectorXd::Constant(n, -inf);
  Eigen::VectorXd hi = prob.hi.size() ? prob.hi : Eigen::VectorXd::Constant(n, inf);
  for (Eigen::Index i = 0; i < n; ++i)
    if (lo[i] > hi[i]) throw Error("solve_qp: box bounds out of order");

  Eigen::Index n_soft = 0;
  for (const QRow& r : prob.rows) {
    if (r.a.size() != n) throw Error("solve_qp: row size mismatch");
    if (r.lb > r.ub) throw Error("solve_qp: row bounds out of order");
    if (r.slack_weight > 0.0) ++n_soft;
  }

  // expand soft rows into slack variables: a.x + s in [lb, ub], cost w*s^2
  const Eigen::Index nv = n + n_soft;
  const Eigen::Index m = nv + static_cast<Eigen::Index>(prob.rows.size());
  Eigen::VectorXd p_diag = Eigen::VectorXd::Zero(nv);
  p_diag.head(n) = prob.w;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(nv);
  q.head(n) = -prob.g;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, nv);
  Eigen::VectorXd l = Eigen::VectorXd::Constant(m, -inf);
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, inf);
  a.topLeftCorner(nv, nv).setIdentity();
  l.head(n) = lo;
  u.head(n) = hi;
  Eigen::Index slack = n;
  for (std::size_t j = 0; j < prob.rows.size(); ++j) {
    const QRow& r = prob.rows[j];
    const Eigen::Index row = nv + static_cast<Eigen::Index>(j);
    a.row(row).head(n) = r.a.transpose();
    if (r.slack_weight > 0.0) {
      p_diag[slack] = 2.0 * r.slack_weight;
      a(row, slack) = 1.0;
      ++slack;
    }
    l[row] = r.lb;
    u[row] = r.ub;
  }

  // keep the original data for true residuals and polish
  const Eigen::MatrixXd p0 = p_diag.asDiagonal();
  const Eigen::VectorXd q0 = q;
  const Eigen::MatrixXd a0 = a;
  const Eigen::VectorXd l0 = l, u0 = u;

  // Ruiz equilibration with cost normalization
  Eigen::VectorXd d = Eigen::VectorXd::Ones(nv);
  Eigen::VectorXd e = Eigen::VectorXd::Ones(m);
  double c_scale = 1.0;
  Eigen::MatrixXd p = p0;
  for (int round = 0; round < 10; ++round) {
    Eigen::VectorXd dd(nv), de(m);
    for (Eigen::Index j = 0; j < nv; ++j) {
      const double col = std::max(detail::inf_norm(p.col(j)), detail::inf_norm(a.col(j)));
      dd[j] = detail::scale_limit(1.0 / std::sqrt(col));
    }
    for (Eigen::Index i = 0; i < m; ++i)
      de[i] = detail::scale_limit(1.0 / std::sqrt(detail::inf_norm(a.row(i).transpose())));
    p = dd.asDiagonal() * p * dd.asDiagonal();
    q = dd.cwiseProduct(q);
    a = de.asDiagonal() * a * dd.asDiagonal();
    d = d.cwiseProduct(dd);
    e = e.cwiseProduct(de);
    double mean_col = 0.0;
    for (Eigen::Index j = 0; j < nv; ++j) mean_col += detail::inf_norm(p.col(j));
    mean_col /= static_cast<double>(nv);
    const double gamma = detail::scale_limit(1.0 / std::max(mean_col, detail::inf_norm(q)));
    p *= gamma;
    q *= gamma;
    c_scale *= gamma;
  }
  l = e.cwiseProduct(l);
  u = e.cwiseProduct(u);

  // per-row step sizes, stiffer on equality rows
  double rho_bar = 0.1;
  const auto rho_vec = [&]() {
    Eigen::VectorXd r(m);
    for (Eigen::Index i = 0; i < m; ++i) r[i] = l[i] == u[i] ? 1e3 * rho_bar : rho_bar;
    return r;
  };
  Eigen::VectorXd rho = rho_vec();
  Eigen::LLT<Eigen::MatrixXd> llt;
  const auto refactor = [&]() {
    Eigen::MatrixXd kkt = p;
    kkt.diagonal().array() += detail::kQpSigma;
    kkt.noalias() += a.transpose() * rho.asDiagonal() * a;
    llt.compute(kkt);
  };
  refactor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(nv);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m).cwiseMax(l).cwiseMin(u);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);

  const auto unscaled_x = [&]() { return Eigen::VectorXd(d.cwiseProduct(x)); };
  const auto unscaled_y = [&]() { return Eigen::VectorXd(e.cwiseProduct(y) / c_scale); };

  bool converged = false;
  for (int iter = 0; iter < detail::kQpMaxIter; ++iter) {
    const Eigen::VectorXd rhs =
        detail::kQpSigma * x - q + a.transpose() * (rho.cwiseProduct(z) - y);
    const Eigen::VectorXd xt = llt.solve(rhs);
    const Eigen::VectorXd zt = a * xt;
    x = detail::kQpAlpha * xt + (1.0 - detail::kQpAlpha) * x;
    const Eigen::VectorXd zr = detail::kQpAlpha * zt + (1.0 - detail::kQpAlpha) * z;
    const Eigen::VectorXd z_next =
        (zr + y.cwiseQuotient(rho)).cwiseMax(l).cwiseMin(u);
    const Eigen::VectorXd dy = rho.cwiseProduct(zr - z_next);
    y += dy;
    const Eigen::VectorXd dx_true = d.cwiseProduct(x) - d.cwiseProduct(xt);
    z = z_next;

    // true-scale residuals
    const Eigen::VectorXd xu = unscaled_x();
    const Eigen::VectorXd yu = unscaled_y();
    const Eigen::VectorXd zu = z.cwiseQuotient(e);
    const Eigen::VectorXd ax = a0 * xu;
    const double rp = detail::inf_norm(ax - zu);
    const double rd = detail::inf_norm(p0 * xu + q0 + a0.transpose() * yu);
    const double ep =
        detail::kQpTol * 0.01 * (1.0 + std::max(detail::inf_norm(ax), detail::inf_norm(zu)));
    const double ed = detail::kQpTol * 0.01 *
                      (1.0 + std::max({detail::inf_norm(p0 * xu), detail::inf_norm(q0),
                                       detail::inf_norm(a0.transpose() * yu)}));
    if (rp <= ep && rd <= ed) {
      converged = true;
      break;
    }

    // primal infeasibility certificate from the dual update direction
    const Eigen::VectorXd dyu = e.cwiseProduct(dy) / c_scale;
    const double dy_norm = detail::inf_norm(dyu);
    if (dy_norm > 1e-14) {
      bool cert = detail::inf_norm(a0.transpose() * dyu) <= detail::kQpCertTol * dy_norm;
      double support = 0.0;
      for (Eigen::Index i = 0; cert && i < m; ++i) {
        if (dyu[i] > 0.0) {
          if (!std::isfinite(u0[i])) cert = false;
          else support += u0[i] * dyu[i];
        } else if (dyu[i] < 0.0) {
          if (!std::isfinite(l0[i])) cert = false;
          else support += l0[i] * dyu[i];
        }
      }
      if (cert && support <= -detail::kQpCertTol * dy_norm)
        throw InfeasibleError("solve_qp: constraints are mutually exclusive");
    }

    // dual infeasibility certificate: an unbounded descent ray
    const double dx_norm = detail::inf_norm(dx_true);
    if (dx_norm > 1e-14) {
      bool ray = detail::inf_norm(p0 * dx_true) <= detail::kQpCertTol * dx_norm &&
                 q0.dot(dx_true) <= -detail::kQpCertTol * dx_norm;
      const Eigen::VectorXd adx = a0 * dx_true;
      for (Eigen::Index i = 0; ray && i < m; ++i) {
        if (std::isfinite(u0[i]) && adx[i] > detail::kQpCertTol * dx_norm) ray = false;
        if (std::isfinite(l0[i]) && adx[i] < -detail::kQpCertTol * dx_norm) ray = false;
      }
      if (ray) throw Error("solve_qp: objective is unbounded below");
    }

    if (iter > 0 && iter % 50 == 0) {
      const Eigen::VectorXd axs = a * x;
      const double rps = detail::inf_norm(axs - z) /
                         (1e-12 + std::max(detail::inf_norm(axs), detail::inf_norm(z)));
      const double rds =
          detail::inf_norm(p * x + q + a.transpose() * y) /
          (1e-12 + std::max({detail::inf_norm(p * x), detail::inf_norm(q),
                             detail::inf_norm(a.transpose() * y)}));
      const double ratio = std::sqrt(rps / std::max(rds, 1e-12));
      if (ratio > 5.0 || ratio < 0.2) {
        rho_bar = std::clamp(rho_bar * ratio, 1e-6, 1e6);
        rho = rho_vec();
        refactor();
      }
    }
  }

  // active-set polish on the original data; the dual signs pick the set, but
  // near-zero duals are noise, so a conservative equalities-only set gets a
  // try as well and the true KKT score arbitrates
  Eigen::VectorXd best_x = unscaled_x();
  Eigen::VectorXd best_y = unscaled_y();
  detail::KktScore best = detail::kkt_score(p0, q0, a0, l0, u0, best_x, best_y);
  const Eigen::VectorXd admm_y = best_y;
  for (const double y_thr : {1e-10, inf}) {
    std::vector<Eigen::Index> act;
    std::vector<double> target;
    for (Eigen::Index i = 0; i < m; ++i) {
      if ((admm_y[i] < -y_thr || l0[i] == u0[i]) && std::isfinite(l0[i])) {
        act.push_back(i);
        target.push_back(l0[i]);
      } else if (admm_y[i] > y_thr && std::isfinite(u0[i])) {
        act.push_back(i);
        target.push_back(u0[i]);
      }
    }
    const Eigen::Index k = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd kkt0 = Eigen::MatrixXd::Zero(nv + k, nv + k);
    kkt0.topLeftCorner(nv, nv) = p0;
    Eigen::VectorXd rhs(nv + k);
    rhs.head(nv) = -q0;
    for (Eigen::Index j = 0; j < k; ++j) {
      kkt0.block(nv + j, 0, 1, nv) = a0.row(act[static_cast<std::size_t>(j)]);
      kkt0.block(0, nv + j, nv, 1) = a0.row(act[static_cast<std::size_t>(j)]).transpose();
      rhs[nv + j] = target[static_cast<std::size_t>(j)];
    }
    Eigen::MatrixXd kkt_reg = kkt0;
    kkt_reg.topLeftCorner(nv, nv).diagonal().array() += 1e-9;
    kkt_reg.bottomRightCorner(k, k).diagonal().array() -= 1e-9;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt_reg);
    if (lu.isInvertible()) {
      Eigen::VectorXd sol = lu.solve(rhs);
      for (int refine = 0; refine < 2; ++refine) sol += lu.solve(rhs - kkt0 * sol);
      Eigen::VectorXd px = sol.head(nv);
      Eigen::VectorXd py = Eigen::VectorXd::Zero(m);
      for (Eigen::Index j = 0; j < k; ++j) py[act[static_cast<std::size_t>(j)]] = sol[nv + j];
      const detail::KktScore polished = detail::kkt_score(p0, q0, a0, l0, u0, px, py);
      if (polished.worst() <= best.worst()) {
        best_x = std::move(px);
        best_y = std::move(py);
        best = polished;
      }
    }
  }

  const double scale = 1.0 + std::max({detail::inf_norm(a0 * best_x), detail::inf_norm(q0),
                                       detail::inf_norm(p0 * best_x)});
  if (!converged && best.worst() > detail::kQpTol * scale)
    throw IterationLimitError("solve_qp: no convergence within 4000 iterations");

  // clamp roundoff on the box so callers can trust the bounds exactly
  Eigen::VectorXd out = best_x.head(n);
  return out.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace kineverse
