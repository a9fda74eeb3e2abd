#pragma once

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "kineverse/compiled.hpp"
#include "kineverse/model.hpp"

namespace kineverse {

/// Symbolic observation function for a set of observed frames: h stacks the
/// non-constant entries of each frame's 4x4 transform in row-major order,
/// frames in the order given. state_vars is the sorted union of the
/// variables appearing in h; both h and its Jacobian are compiled once.
struct ObservationModel {
  std::vector<Variable> state_vars;
  std::vector<ScalarExpr> h;
  std::vector<Path> frame_paths;
  std::vector<MatrixExpr> frames;

  /// (path text, row, col) of every observed entry -> its index in h.
  std::map<std::tuple<std::string, int, int>, std::size_t> entry_index;

  /// frame index and matrix cell for each h entry, aligned with h.
  struct EntryCoord {
    std::size_t frame;
    int row;
    int col;
  };
  std::vector<EntryCoord> entry_coords;

  CompiledExpr h_fn;
  CompiledExpr H_fn;

  Eigen::Index state_size() const { return static_cast<Eigen::Index>(state_vars.size()); }
  Eigen::Index obs_size() const { return static_cast<Eigen::Index>(h.size()); }

  Assignment assignment(const Eigen::VectorXd& q) const {
    if (q.size() != state_size()) throw Error("observation model: state size mismatch");
    Assignment a;
    for (std::size_t i = 0; i < state_vars.size(); ++i) a.set(state_vars[i], q[Eigen::Index(i)]);
    return a;
  }

  Eigen::VectorXd value(const Eigen::VectorXd& q) const {
    if (q.size() != state_size()) throw Error("observation model: state size mismatch");
    Eigen::VectorXd out(obs_size());
    h_fn.run(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())),
             std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
    return out;
  }

  Eigen::MatrixXd jacobian_at(const Eigen::VectorXd& q) const {
    if (q.size() != state_size()) throw Error("observation model: state size mismatch");
    std::vector<double> flat(static_cast<std::size_t>(obs_size() * state_size()));
    H_fn.run(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), flat);
    Eigen::MatrixXd out(obs_size(), state_size());
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (Eigen::Index c = 0; c < out.cols(); ++c)
        out(r, c) = flat[static_cast<std::size_t>(r * out.cols() + c)];
    return out;
  }
};

inline ObservationModel build_observation_model(const ArticulationModel& model,
                                                const std::vector<Path>& frame_paths) {
  ObservationModel om;
  om.frame_paths = frame_paths;
  std::set<Variable> vars;
  std::vector<ExtExpr> symbolic;
  for (std::size_t fi = 0; fi < frame_paths.size(); ++fi) {
    MatrixExpr t = model.transform(frame_paths[fi]);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const ExtExpr& e = t.entries()[static_cast<std::size_t>(r * 4 + c)];
        const std::set<Variable> ev = e.expr().variables();
        if (ev.empty()) continue;
        om.entry_index[{frame_paths[fi].text(), r, c}] = symbolic.size();
        om.entry_coords.push_back({fi, r, c});
        symbolic.push_back(e);
        vars.insert(ev.begin(), ev.end());
      }
    }
    om.frames.push_back(std::move(t));
  }
  if (symbolic.empty())
    throw NoSymbolicEntriesError("observed frames are constant, nothing to estimate");

  om.state_vars.assign(vars.begin(), vars.end());
  om.h.reserve(symbolic.size());
  for (const ExtExpr& e : symbolic) om.h.push_back(e.expr());

  std::vector<ScalarExpr> jac;
  jac.reserve(symbolic.size() * om.state_vars.size());
  for (const ExtExpr& e : symbolic)
    for (const Variable& v : om.state_vars) jac.push_back(e.gradient_entry(v.derivative()));

  om.h_fn = CompiledExpr(om.h, om.state_vars);
  om.H_fn = CompiledExpr(jac, om.state_vars);
  return om;
}

/// Gaussian belief over the state variables with per-variable box bounds.
struct EkfState {
  Eigen::VectorXd q;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  Eigen::VectorXd clamped(const Eigen::VectorXd& v) const { return v.cwiseMax(lb).cwiseMin(ub); }
};

/// Center-of-range initialization. Bounds come from position constraints
/// whose expression is the bare variable; variables without one default to
/// (-pi, pi). The initial covariance is diag(((ub - lb) / 2)^2).
inline EkfState init_state(const ArticulationModel& model, const ObservationModel& om) {
  const Eigen::Index n = om.state_size();
  EkfState s;
  s.lb = Eigen::VectorXd::Constant(n, -M_PI);
  s.ub = Eigen::VectorXd::Constant(n, M_PI);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Variable& v = om.state_vars[static_cast<std::size_t>(i)];
    bool found = false;
    for (const auto& [name, c] : constraints_for(model, {v})) {
      if (!(c.expr == ScalarExpr(v))) continue;
      if (!c.lb.variables().empty() || !c.ub.variables().empty())
        throw NonConstantBoundError("state-dependent position bound on " + v.text() +
                                    " in constraint \"" + name + "\"");
      const double lo = c.lb.evaluate({});
      const double hi = c.ub.evaluate({});
      if (!found) {
        s.lb[i] = lo;
        s.ub[i] = hi;
        found = true;
      } else {
        s.lb[i] = std::max(s.lb[i], lo);
        s.ub[i] = std::min(s.ub[i], hi);
      }
    }
  }
  s.q = 0.5 * (s.lb + s.ub);
  s.sigma = (0.5 * (s.ub - s.lb)).cwiseAbs2().asDiagonal();
  return s;
}

/// Aggressive pull toward the first observation: a few steps of projected
/// gradient descent on 1/2 |h(q) - z0|^2 with backtracking Armijo line
/// search. The covariance is left untouched.
inline EkfState bootstrap(EkfState s, const Eigen::VectorXd& z0, const ObservationModel& om,
                          int steps = 10) {
  if (z0.size() != om.obs_size()) throw Error("bootstrap: observation size mismatch");
  const auto cost = [&](const Eigen::VectorXd& q) {
    return 0.5 * (om.value(q) - z0).squaredNorm();
  };
  for (int step = 0; step < steps; ++step) {
    const Eigen::VectorXd r = om.value(s.q) - z0;
    const Eigen::VectorXd grad = om.jacobian_at(s.q).transpose() * r;
    const double fq = 0.5 * r.squaredNorm();
    const double gn2 = grad.squaredNorm();
    if (gn2 < 1e-30) break;
    bool moved = false;
    double t = 1.0;
    for (int back = 0; back < 40; ++back) {
      const Eigen::VectorXd cand = s.clamped(s.q - t * grad);
      if (cand == s.q) break;
      if (cost(cand) <= fq - 1e-4 * t * gn2) {
        s.q = cand;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  return s;
}

/// Constant-velocity prediction with no process noise: q += dt * qd.
inline EkfState predict(EkfState s, const Eigen::VectorXd& qd_cmd, double dt) {
  if (qd_cmd.size() != s.q.size()) throw Error("predict: velocity size mismatch");
  if (!(dt > 0.0)) throw Error("predict: dt must be positive");
  s.q = s.clamped(s.q + dt * qd_cmd);
  return s;
}

/// Standard EKF measurement update with bound clamping and covariance
/// symmetrization. Raises SingularResidualCovarianceError when the residual
/// covariance S is numerically singular (condition number above 1e12).
inline EkfState update(EkfState s, const Eigen::VectorXd& z, const ObservationModel& om,
                       const Eigen::MatrixXd& r_cov) {
  const Eigen::Index m = om.obs_size();
  if (z.size() != m) throw Error("update: observation size mismatch");
  if (r_cov.rows() != m || r_cov.cols() != m) throw Error("update: covariance size mismatch");

  const Eigen::MatrixXd h_jac = om.jacobian_at(s.q);
  Eigen::MatrixXd s_cov = h_jac * s.sigma * h_jac.transpose() + r_cov;
  s_cov = 0.5 * (s_cov + s_cov.transpose());

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s_cov);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw SingularResidualCovarianceError("residual covariance is numerically singular");

  const Eigen::LLT<Eigen::MatrixXd> llt(s_cov);
  if (llt.info() != Eigen::Success)
    throw SingularResidualCovarianceError("residual covariance is numerically singular");
  const Eigen::MatrixXd gain =
      s.sigma * h_jac.transpose() * llt.solve(Eigen::MatrixXd::Identity(m, m));

  s.q = s.clamped(s.q + gain * (z - om.value(s.q)));
  // Joseph form of (I - KH) Sigma: algebraically identical for this gain but
  // positive semidefinite by construction, where the short form loses
  // definiteness to cancellation once the gain gets large.
  const Eigen::MatrixXd ikh =
      Eigen::MatrixXd::Identity(s.q.size(), s.q.size()) - gain * h_jac;
  s.sigma = ikh * s.sigma * ikh.transpose() + gain * r_cov * gain.transpose();
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  return s;
}

/// Sampled observation covariance: each observed frame's nominal pose is
/// perturbed by per-axis translation noise N(0, sigma_t^2) and a rotation by
/// angle N(0, sigma_r^2) about a uniformly random axis, applied about the
/// frame's own origin. R is the sample covariance of the stacked symbolic
/// entries plus 1e-9 I.
inline Eigen::MatrixXd estimate_R(const ObservationModel& om, const Eigen::VectorXd& q_nominal,
                                  double sigma_t, double sigma_r, int n_samples,
                                  std::mt19937& rng) {
  if (n_samples < 2) throw Error("estimate_R: need at least two samples");
  const Assignment at = om.assignment(q_nominal);
  std::vector<Eigen::Matrix4d> nominal;
  nominal.reserve(om.frames.size());
  for (const MatrixExpr& f : om.frames) nominal.push_back(f.evaluate(at));

  std::normal_distribution<double> n01(0.0, 1.0);
  const Eigen::Index m = om.obs_size();
  Eigen::MatrixXd samples(n_samples, m);
  std::vector<Eigen::Matrix4d> pert(nominal.size());
  for (int s = 0; s < n_samples; ++s) {
    for (std::size_t f = 0; f < nominal.size(); ++f) {
      const Eigen::Vector3d tn =
          sigma_t * Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
      Eigen::Vector3d axis(n01(rng), n01(rng), n01(rng));
      if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitX();
      axis.normalize();
      const double angle = sigma_r * n01(rng);
      pert[f] = nominal[f];
      pert[f].block<3, 3>(0, 0) =
          Eigen::AngleAxisd(angle, axis).toRotationMatrix() * nominal[f].block<3, 3>(0, 0);
      pert[f].block<3, 1>(0, 3) += tn;
    }
    for (Eigen::Index k = 0; k < m; ++k) {
      const ObservationModel::EntryCoord& ec = om.entry_coords[static_cast<std::size_t>(k)];
      samples(s, k) = pert[ec.frame](ec.row, ec.col);
    }
  }

  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - mean;
  Eigen::MatrixXd r_cov = centered.transpose() * centered / double(n_samples - 1);
  r_cov.diagonal().array() += 1e-9;
  return r_cov;
}

}  // namespace kineverse
