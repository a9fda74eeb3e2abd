#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "kineverse/geometry.hpp"
#include "kineverse/qp.hpp"

namespace kineverse {

/// Everything a controller step needs: the model, which variables the robot
/// commands, which belong to the manipulated object, and the integrator
/// parameters used by rollout.
struct RolloutScene {
  ArticulationModel model;
  std::vector<Variable> robot_vars;
  std::vector<Variable> object_vars;
  double dt = 0.02;
  int step_limit = 500;
};

struct ControllerConfig {
  double k_p = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double align_threshold = 0.8;
  double contact_threshold = 0.005;
  double avoid_margin = 0.02;
  double task_weight = 1e4;
  double reg = 1e-2;
};

enum class PushMode { kNone, kApproach, kPush };

/// One controller output. qd_robot / qd_object align with the scene's
/// variable vectors. contact_distance and ppn (contact-normal velocity of the
/// object's contact point) are NaN/0 when the controller ran no contact
/// query.
struct StepCommand {
  Eigen::VectorXd qd_robot;
  Eigen::VectorXd qd_object;
  double contact_distance = std::numeric_limits<double>::quiet_NaN();
  double ppn = 0.0;
  int iterations = 0;
  double scale = 1.0;
  PushMode push_mode = PushMode::kNone;
};

namespace detail {

inline void check_scene(const RolloutScene& scene) {
  if (!(scene.dt > 0.0)) throw Error("scene: dt must be positive");
  if (scene.step_limit < 1) throw Error("scene: step limit must be at least 1");
  const std::set<Variable> robot(scene.robot_vars.begin(), scene.robot_vars.end());
  for (const Variable& v : scene.object_vars)
    if (robot.count(v))
      throw Error("scene: variable " + v.text() + " is both robot and object");
}

}  // namespace detail

/// Per-variable velocity interval at state q for an explicit integrator with
/// step dt: the intersection of velocity constraints on v' (bounds evaluated
/// at q, so state-dependent bounds like a lock gate apply) and position
/// constraints on v mapped through the step, (lb - q_v)/dt <= v' <=
/// (ub - q_v)/dt. Constraints whose expression is not literally v or v' are
/// left to the caller. Raises EmptyIntervalError when an interval vanishes.
inline std::vector<std::pair<double, double>> velocity_bounds(const ArticulationModel& model,
                                                              const std::vector<Variable>& vars,
                                                              const Assignment& q, double dt) {
  if (!(dt > 0.0)) throw Error("velocity_bounds: dt must be positive");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, double>> out;
  out.reserve(vars.size());
  for (const Variable& v : vars) {
    const ScalarExpr pos(v);
    const ScalarExpr vel(v.derivative());
    double lo = -inf, hi = inf;
    for (const auto& [name, c] : constraints_for(model, {v, v.derivative()})) {
      if (c.expr == vel) {
        lo = std::max(lo, c.lb.evaluate(q));
        hi = std::min(hi, c.ub.evaluate(q));
      } else if (c.expr == pos) {
        const double qv = q.at(v);
        lo = std::max(lo, (c.lb.evaluate(q) - qv) / dt);
        hi = std::min(hi, (c.ub.evaluate(q) - qv) / dt);
      }
    }
    if (lo > hi)
      throw EmptyIntervalError("velocity bounds for " + v.text() + " are empty: [" +
                               std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out.emplace_back(lo, hi);
  }
  return out;
}

struct PoseError {
  Eigen::Vector3d translation;
  Eigen::Vector3d rotation;
};

namespace detail {

inline void check_rigid(const Eigen::Matrix4d& t, const char* which) {
  const Eigen::Matrix3d r = t.block<3, 3>(0, 0);
  const Eigen::Matrix3d defect = r.transpose() * r - Eigen::Matrix3d::Identity();
  const Eigen::RowVector4d bottom = t.row(3) - Eigen::RowVector4d(0, 0, 0, 1);
  if (defect.cwiseAbs().maxCoeff() > 1e-6 || bottom.cwiseAbs().maxCoeff() > 1e-6 ||
      r.determinant() < 0.0)
    throw NonRigidInputError(std::string("pose_error: ") + which +
                             " is not a rigid transform");
}

}  // namespace detail

/// World translation difference b - a and the axis-angle vector of the
/// relative rotation R_a^T R_b (angle in [0, pi]). Zero iff the transforms
/// are equal.
inline PoseError pose_error(const Eigen::Matrix4d& a, const Eigen::Matrix4d& b) {
  detail::check_rigid(a, "first argument");
  detail::check_rigid(b, "second argument");
  const Eigen::Matrix3d rel = a.block<3, 3>(0, 0).transpose() * b.block<3, 3>(0, 0);
  const Eigen::AngleAxisd aa(rel);
  return {b.block<3, 1>(0, 3) - a.block<3, 1>(0, 3), aa.angle() * aa.axis()};
}

/// A first-order kinematic coupling: commanding `decision` moves `coupled`
/// at rate gain(q), e.g. wheel velocities driving the base pose variables.
struct CouplingTerm {
  Variable coupled;
  Variable decision;
  ScalarExpr gain;
};

/// Couplings read off the model: any stored expression that is a bare
/// variable u with extended-gradient entries gives du/dv' for each decision
/// variable v. Scans scalar entries and transform entries alike; duplicate
/// (u, v) pairs keep the first gain found.
inline std::vector<CouplingTerm> velocity_couplings(const ArticulationModel& model,
                                                    const std::vector<Variable>& decision_vars) {
  const std::set<Variable> decisions(decision_vars.begin(), decision_vars.end());
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<CouplingTerm> out;
  const auto scan = [&](const ExtExpr& e) {
    if (!e.has_special()) return;
    const std::set<Variable> base = e.expr().variables();
    if (base.size() != 1) return;
    const Variable u = *base.begin();
    if (!(e.expr() == ScalarExpr(u)) || decisions.count(u)) return;
    for (const Variable& v : decision_vars) {
      const ScalarExpr g = e.gradient_entry(v.derivative());
      if (g.is_constant(0.0)) continue;
      if (!seen.emplace(u.text(), v.text()).second) continue;
      out.push_back({u, v, g});
    }
  };
  for (const auto& [path, value] : model.exprs()) {
    if (const auto* e = std::get_if<ExtExpr>(&value)) scan(*e);
    if (const auto* m = std::get_if<MatrixExpr>(&value))
      for (const ExtExpr& e : m->entries()) scan(e);
  }
  return out;
}

/// Integrate coupled variables: q[u] += scale * sum_v gain(at) * qd_v.
/// `at` is the state the gains are evaluated at (normally the pre-step q).
inline void apply_couplings(Assignment& q, const std::vector<CouplingTerm>& couplings,
                            const std::vector<Variable>& decision_vars,
                            const Eigen::VectorXd& qd, double scale, const Assignment& at) {
  if (qd.size() != static_cast<Eigen::Index>(decision_vars.size()))
    throw Error("apply_couplings: command size mismatch");
  std::map<Variable, double> delta;
  for (const CouplingTerm& c : couplings) {
    const auto it = std::find(decision_vars.begin(), decision_vars.end(), c.decision);
    if (it == decision_vars.end()) continue;
    const Eigen::Index j = it - decision_vars.begin();
    delta[c.coupled] += c.gain.evaluate(at) * qd[j];
  }
  for (const auto& [u, d] : delta) q.set(u, q.at(u) + scale * d);
}

namespace detail {

/// Position-limit interval for v: intersection of constraints whose
/// expression is literally v, bounds evaluated at q.
inline std::pair<double, double> position_bounds(const ArticulationModel& model,
                                                 const Variable& v, const Assignment& q) {
  const double inf = std::numeric_limits<double>::infinity();
  const ScalarExpr pos(v);
  double lo = -inf, hi = inf;
  for (const auto& [name, c] : constraints_for(model, {v}))
    if (c.expr == pos) {
      lo = std::max(lo, c.lb.evaluate(q));
      hi = std::min(hi, c.ub.evaluate(q));
    }
  return {lo, hi};
}

/// Largest s in [0, 1] with s * qd inside every interval.
inline double velocity_scale(const Eigen::VectorXd& qd,
                             const std::vector<std::pair<double, double>>& bounds) {
  double s = 1.0;
  for (Eigen::Index i = 0; i < qd.size(); ++i) {
    const auto& [lo, hi] = bounds[static_cast<std::size_t>(i)];
    if (qd[i] > hi) s = std::min(s, hi / qd[i]);
    if (qd[i] < lo) s = std::min(s, lo / qd[i]);
  }
  return std::clamp(s, 0.0, 1.0);
}

/// The skew part of dR * R^T as a rotation-rate vector.
inline Eigen::Vector3d spin_vector(const Eigen::Matrix3d& dr, const Eigen::Matrix3d& r) {
  const Eigen::Matrix3d s = dr * r.transpose();
  return 0.5 * Eigen::Vector3d(s(2, 1) - s(1, 2), s(0, 2) - s(2, 0), s(1, 0) - s(0, 1));
}

/// Rows of a 4x4 transform expression in the order the IK task uses them:
/// translation first, then the rotation block row-major.
inline std::vector<ExtExpr> pose_task_rows(const MatrixExpr& t) {
  std::vector<ExtExpr> rows;
  rows.reserve(12);
  for (int i = 0; i < 3; ++i) rows.push_back(t(i, 3));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rows.push_back(t(i, j));
  return rows;
}

}  // namespace detail

/// One step of the grasped-object controller. QP1 picks the object velocity:
/// the proportional pull k_p * (goal - q_obj) projected onto the object's
/// velocity bounds. The object state is integrated one step ahead and QP2
/// solves the robot IK toward the advanced grasp frame by Gauss-Newton,
/// each iteration a QP over a robot position increment with soft 6-D
/// pose-task rows and hard position limits, until the pose error is within
/// (1e-3 m, 1e-2 rad) or 50 iterations. The resulting increment over dt is
/// scaled by the largest factor in [0, 1] that satisfies the robot's
/// velocity bounds; the object command is scaled identically so a rigid
/// grasp stays consistent. Raises IkStalledError when five consecutive
/// iterations fail to shrink the pose error by 1e-8.
inline StepCommand grasped_step(const RolloutScene& scene, const Path& ee_path,
                                const Path& grasp_path, const Assignment& q_goal_object,
                                const Assignment& q, const ControllerConfig& cfg = {}) {
  detail::check_scene(scene);
  const ArticulationModel& model = scene.model;
  const Eigen::Index n_obj = static_cast<Eigen::Index>(scene.object_vars.size());
  const Eigen::Index n_rob = static_cast<Eigen::Index>(scene.robot_vars.size());

  // QP1: desired object velocity
  QProblem qp1;
  qp1.w = Eigen::VectorXd::Ones(n_obj);
  qp1.g.resize(n_obj);
  qp1.lo.resize(n_obj);
  qp1.hi.resize(n_obj);
  for (Eigen::Index i = 0; i < n_obj; ++i) {
    const Variable& v = scene.object_vars[static_cast<std::size_t>(i)];
    qp1.g[i] = cfg.k_p * (q_goal_object.at(v) - q.at(v));
  }
  const auto obj_bounds = velocity_bounds(model, scene.object_vars, q, scene.dt);
  for (Eigen::Index i = 0; i < n_obj; ++i) {
    qp1.lo[i] = obj_bounds[static_cast<std::size_t>(i)].first;
    qp1.hi[i] = obj_bounds[static_cast<std::size_t>(i)].second;
  }
  const Eigen::VectorXd qd_obj = n_obj > 0 ? solve_qp(qp1) : Eigen::VectorXd();

  // advance the object, freeze the grasp frame there
  Assignment trial = q;
  for (Eigen::Index i = 0; i < n_obj; ++i) {
    const Variable& v = scene.object_vars[static_cast<std::size_t>(i)];
    trial.set(v, q.at(v) + scene.dt * qd_obj[i]);
  }
  const Eigen::Matrix4d t_goal = model.transform(grasp_path).evaluate(trial);

  // QP2: Gauss-Newton IK on the robot variables
  const MatrixExpr& ee = model.transform(ee_path);
  const std::vector<ExtExpr> task_rows = detail::pose_task_rows(ee);
  const MatrixExpr jac = jacobian(task_rows, scene.robot_vars);
  const std::vector<CouplingTerm> couplings = velocity_couplings(model, scene.robot_vars);

  Eigen::VectorXd dq_total = Eigen::VectorXd::Zero(n_rob);
  double best = std::numeric_limits<double>::infinity();
  int since_progress = 0;
  int iters = 0;
  for (; iters < 50; ++iters) {
    const Eigen::Matrix4d t_ee = ee.evaluate(trial);
    const PoseError err = pose_error(t_ee, t_goal);
    if (err.translation.norm() <= 1e-3 && err.rotation.norm() <= 1e-2) break;

    const double total = std::sqrt(err.translation.squaredNorm() + err.rotation.squaredNorm());
    if (best - total < 1e-8) {
      if (++since_progress >= 5)
        throw IkStalledError("grasped_step: IK stalled at pose error " + std::to_string(total));
    } else {
      since_progress = 0;
    }
    best = std::min(best, total);

    const Eigen::MatrixXd j = jac.evaluate(trial);
    const Eigen::Matrix3d r_ee = t_ee.block<3, 3>(0, 0);
    Eigen::MatrixXd task(6, n_rob);
    task.topRows(3) = j.topRows(3);
    for (Eigen::Index c = 0; c < n_rob; ++c) {
      Eigen::Matrix3d dr;
      for (int k = 0; k < 9; ++k) dr(k / 3, k % 3) = j(3 + k, c);
      task.block<3, 1>(3, c) = detail::spin_vector(dr, r_ee);
    }
    const Eigen::Matrix3d rel = t_goal.block<3, 3>(0, 0) * r_ee.transpose();
    const Eigen::AngleAxisd aa(rel);
    Eigen::VectorXd rhs(6);
    rhs.head(3) = t_goal.block<3, 1>(0, 3) - t_ee.block<3, 1>(0, 3);
    rhs.tail(3) = aa.angle() * aa.axis();

    // trust region: the linearization only holds for modest steps, and a far
    // or unreachable goal would otherwise request a wild first increment
    double shrink = 1.0;
    if (rhs.head(3).norm() > 0.2) shrink = 0.2 / rhs.head(3).norm();
    if (rhs.tail(3).norm() > 0.5) shrink = std::min(shrink, 0.5 / rhs.tail(3).norm());
    rhs *= shrink;

    QProblem qp2;
    qp2.w = Eigen::VectorXd::Constant(n_rob, cfg.reg);
    qp2.g = Eigen::VectorXd::Zero(n_rob);
    qp2.lo.resize(n_rob);
    qp2.hi.resize(n_rob);
    for (Eigen::Index i = 0; i < n_rob; ++i) {
      const Variable& v = scene.robot_vars[static_cast<std::size_t>(i)];
      const auto [plo, phi] = detail::position_bounds(model, v, trial);
      qp2.lo[i] = plo - trial.at(v);
      qp2.hi[i] = phi - trial.at(v);
    }
    for (int r = 0; r < 6; ++r)
      qp2.rows.push_back({task.row(r).transpose(), rhs[r], rhs[r], cfg.task_weight});
    const Eigen::VectorXd dq = solve_qp(qp2);

    const Assignment before = trial;
    for (Eigen::Index i = 0; i < n_rob; ++i) {
      const Variable& v = scene.robot_vars[static_cast<std::size_t>(i)];
      trial.set(v, trial.at(v) + dq[i]);
    }
    apply_couplings(trial, couplings, scene.robot_vars, dq, 1.0, before);
    dq_total += dq;
  }

  StepCommand cmd;
  cmd.iterations = iters;
  const Eigen::VectorXd qd_des = dq_total / scene.dt;
  cmd.scale = detail::velocity_scale(qd_des, velocity_bounds(model, scene.robot_vars, q, scene.dt));
  cmd.qd_robot = cmd.scale * qd_des;
  cmd.qd_object = cmd.scale * qd_obj;
  return cmd;
}

namespace detail {

/// World point expressed in the local frame of the transform at `path`.
inline Eigen::Vector3d to_local(const ArticulationModel& model, const Path& path,
                                const Assignment& q, const Eigen::Vector3d& world) {
  const Eigen::Matrix4d t = model.transform(path).evaluate(q);
  return t.block<3, 3>(0, 0).transpose() * (world - t.block<3, 1>(0, 3));
}

/// Numeric point Jacobian d(world point)/d(vars') at q for a body-local
/// point on the frame at `path`.
inline Eigen::MatrixXd point_jacobian(const ArticulationModel& model, const Path& path,
                                      const Eigen::Vector3d& local, const Assignment& q,
                                      const std::vector<Variable>& vars) {
  return jacobian(contact_expr(model, path, local), vars).evaluate(q);
}

}  // namespace detail

/// One step of the pushing controller for a robot shape against an object
/// shape. The desired world motion d of the object's contact point comes
/// from the proportional pull on the object variables mapped through the
/// point Jacobian. While separated or misaligned (distance above the contact
/// threshold, or cos of the angle between -n and d below the alignment
/// threshold) the robot approaches: its contact point is driven along
/// lambda1 * normalize(p - r) + lambda2 * t_hat, where t_hat is the unit
/// tangent opposing the tangential part of d, under a hard no-penetration
/// row. In contact the QP decides robot and object velocities together:
/// soft rows close the residual gap and match contact velocities, a hard row
/// keeps the object's contact point from moving into the robot (push, never
/// pull), the objective pulls the object toward its goal, and hard clearance
/// rows keep every other shape that moves with the object at the avoidance
/// margin. Velocity bounds apply throughout.
inline StepCommand push_step(const RolloutScene& scene, const std::string& robot_shape,
                             const std::string& object_shape, const Assignment& q_goal_object,
                             const Assignment& q, const ControllerConfig& cfg = {}) {
  detail::check_scene(scene);
  const ArticulationModel& model = scene.model;
  const ShapeAttachment& robot_att = model.shape(robot_shape);
  const ShapeAttachment& object_att = model.shape(object_shape);
  const Eigen::Index n_rob = static_cast<Eigen::Index>(scene.robot_vars.size());
  const Eigen::Index n_obj = static_cast<Eigen::Index>(scene.object_vars.size());

  const ContactQueryResult cp = closest_points(object_att, robot_att, q, model);

  StepCommand cmd;
  cmd.qd_robot = Eigen::VectorXd::Zero(n_rob);
  cmd.qd_object = Eigen::VectorXd::Zero(n_obj);
  cmd.contact_distance = cp.distance;

  Eigen::VectorXd qd_prop(n_obj);
  for (Eigen::Index i = 0; i < n_obj; ++i) {
    const Variable& v = scene.object_vars[static_cast<std::size_t>(i)];
    qd_prop[i] = cfg.k_p * (q_goal_object.at(v) - q.at(v));
  }

  const Eigen::MatrixXd j_p = detail::point_jacobian(
      model, object_att.path, detail::to_local(model, object_att.path, q, cp.p), q,
      scene.object_vars);
  const Eigen::Vector3d d = j_p * qd_prop;
  if (d.norm() <= 1e-6) return cmd;

  const Eigen::MatrixXd j_r = detail::point_jacobian(
      model, robot_att.path, detail::to_local(model, robot_att.path, q, cp.r), q,
      scene.robot_vars);

  const double align = (-cp.n).dot(d.normalized());
  const bool approach = cp.distance > cfg.contact_threshold || align < cfg.align_threshold;
  cmd.push_mode = approach ? PushMode::kApproach : PushMode::kPush;

  // clearance rows against every other shape the object's motion carries
  struct Clearance {
    Eigen::VectorXd a_robot;
    Eigen::VectorXd a_object;
    Eigen::Vector3d n;
    double dist;
  };
  std::vector<Clearance> clearances;
  const std::set<Path> moved =
      parts_moved_by(model, model.transform(object_att.path).variables());
  for (const auto& [key, att] : model.shapes()) {
    if (key == robot_shape || key == object_shape) continue;
    bool moves = false;
    for (const Path& m : moved)
      if (m.covers(att.path)) {
        moves = true;
        break;
      }
    if (!moves) continue;
    const ContactQueryResult c = closest_points(att, robot_att, q, model);
    const Eigen::MatrixXd jr = detail::point_jacobian(
        model, robot_att.path, detail::to_local(model, robot_att.path, q, c.r), q,
        scene.robot_vars);
    const Eigen::MatrixXd jp = detail::point_jacobian(
        model, att.path, detail::to_local(model, att.path, q, c.p), q, scene.object_vars);
    clearances.push_back({jr.transpose() * c.n, jp.transpose() * c.n, c.n, c.distance});
  }

  const auto robot_bounds = velocity_bounds(model, scene.robot_vars, q, scene.dt);
  const double inf = std::numeric_limits<double>::infinity();

  if (approach) {
    const Eigen::Vector3d gap = cp.p - cp.r;
    const Eigen::Vector3d toward = gap.norm() > 1e-12 ? gap.normalized() : -cp.n;
    const Eigen::Vector3d tangent = d - d.dot(cp.n) * cp.n;
    Eigen::Vector3d t_hat = Eigen::Vector3d::Zero();
    if (tangent.norm() > 1e-9) {
      t_hat = -tangent.normalized();
    } else if (d.dot(cp.n) > 0.0) {
      // the object wants to move into the robot: slide around it along a
      // fixed perpendicular until the normal rotates off d
      const Eigen::Vector3d seed = std::fabs(cp.n.x()) < 0.9 ? Eigen::Vector3d::UnitX()
                                                             : Eigen::Vector3d::UnitY();
      t_hat = cp.n.cross(seed).normalized();
    }
    Eigen::Vector3d v = cfg.lambda1 * toward + cfg.lambda2 * t_hat;
    // saturate closing speeds at what each gap absorbs in one step, so the
    // task never fights the hard rows below; interacting caps (a wedge of
    // obstacles) settle over a few passes
    for (int pass = 0; pass < 4; ++pass) {
      const double closing = v.dot(-cp.n);
      const double cap = cp.distance / scene.dt;
      if (closing > cap) v += (closing - cap) * cp.n;
      for (const Clearance& c : clearances) {
        const double into = v.dot(-c.n);
        const double room = (c.dist - cfg.avoid_margin) / scene.dt;
        if (into > room) v += (into - room) * c.n;
      }
    }

    QProblem qp;
    qp.w = Eigen::VectorXd::Constant(n_rob, cfg.reg);
    qp.g = Eigen::VectorXd::Zero(n_rob);
    qp.lo.resize(n_rob);
    qp.hi.resize(n_rob);
    for (Eigen::Index i = 0; i < n_rob; ++i) {
      qp.lo[i] = robot_bounds[static_cast<std::size_t>(i)].first;
      qp.hi[i] = robot_bounds[static_cast<std::size_t>(i)].second;
    }
    for (int r = 0; r < 3; ++r)
      qp.rows.push_back({j_r.row(r).transpose(), v[r], v[r], cfg.task_weight});
    qp.rows.push_back(
        {scene.dt * (j_r.transpose() * cp.n), -cp.distance, inf, 0.0});
    for (const Clearance& c : clearances)
      qp.rows.push_back({scene.dt * c.a_robot, cfg.avoid_margin - c.dist, inf, 0.0});

    cmd.qd_robot = solve_qp(qp);
    return cmd;
  }

  // contact mode: joint problem over (robot, object) velocities
  const Eigen::Index n = n_rob + n_obj;
  QProblem qp;
  qp.w.resize(n);
  qp.g = Eigen::VectorXd::Zero(n);
  qp.lo.resize(n);
  qp.hi.resize(n);
  qp.w.head(n_rob).setConstant(cfg.reg);
  qp.w.tail(n_obj).setOnes();
  qp.g.tail(n_obj) = qd_prop;
  const auto object_bounds = velocity_bounds(model, scene.object_vars, q, scene.dt);
  for (Eigen::Index i = 0; i < n_rob; ++i) {
    qp.lo[i] = robot_bounds[static_cast<std::size_t>(i)].first;
    qp.hi[i] = robot_bounds[static_cast<std::size_t>(i)].second;
  }
  for (Eigen::Index i = 0; i < n_obj; ++i) {
    qp.lo[n_rob + i] = object_bounds[static_cast<std::size_t>(i)].first;
    qp.hi[n_rob + i] = object_bounds[static_cast<std::size_t>(i)].second;
  }

  // soft: robot contact point tracks the object's, closing any residual gap
  const Eigen::Vector3d gap_rate = (cp.p - cp.r) / scene.dt;
  for (int r = 0; r < 3; ++r) {
    Eigen::VectorXd a(n);
    a.head(n_rob) = j_r.row(r).transpose();
    a.tail(n_obj) = -j_p.row(r).transpose();
    qp.rows.push_back({a, gap_rate[r], gap_rate[r], cfg.task_weight});
  }
  // hard: the contact point can be pushed away from the robot, never pulled
  {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
    a.tail(n_obj) = j_p.transpose() * cp.n;
    qp.rows.push_back({a, -inf, 0.0, 0.0});
  }
  for (const Clearance& c : clearances) {
    Eigen::VectorXd a(n);
    a.head(n_rob) = scene.dt * c.a_robot;
    a.tail(n_obj) = -scene.dt * c.a_object;
    qp.rows.push_back({a, cfg.avoid_margin - c.dist, inf, 0.0});
  }

  const Eigen::VectorXd x = solve_qp(qp);
  cmd.qd_robot = x.head(n_rob);
  cmd.qd_object = x.tail(n_obj);
  cmd.ppn = cp.n.dot(j_p * cmd.qd_object);
  return cmd;
}

struct TraceRow {
  int step;
  double time_s;
  Assignment q;
  double contact_distance;
  double ppn;
  double iter_ms;
  std::string status;
};

/// Kinematic rollout: each step runs the controller at the current state,
/// integrates robot and object variables explicitly (plus any coupled
/// variables such as a wheel-driven base pose), and records a trace row.
/// Terminates with status GoalReached when goal_reached(q) holds, StepLimit
/// when the step budget runs out, and the controller's error text when a
/// step throws.
inline std::vector<TraceRow> rollout(const RolloutScene& scene,
                                     const std::function<StepCommand(const Assignment&)>& step,
                                     Assignment q,
                                     const std::function<bool(const Assignment&)>& goal_reached) {
  detail::check_scene(scene);
  const std::vector<CouplingTerm> couplings = velocity_couplings(scene.model, scene.robot_vars);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<TraceRow> rows;
  for (int i = 0; i < scene.step_limit; ++i) {
    if (goal_reached(q)) {
      rows.push_back({i, i * scene.dt, q, nan, 0.0, 0.0, "GoalReached"});
      return rows;
    }
    const auto t0 = std::chrono::steady_clock::now();
    StepCommand cmd;
    try {
      cmd = step(q);
    } catch (const Error& e) {
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      rows.push_back({i, i * scene.dt, q, nan, 0.0, ms, std::string("error: ") + e.what()});
      return rows;
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (cmd.qd_robot.size() == 0)
      cmd.qd_robot = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scene.robot_vars.size()));
    if (cmd.qd_object.size() == 0)
      cmd.qd_object = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scene.object_vars.size()));
    if (cmd.qd_robot.size() != static_cast<Eigen::Index>(scene.robot_vars.size()) ||
        cmd.qd_object.size() != static_cast<Eigen::Index>(scene.object_vars.size()))
      throw Error("rollout: controller command size mismatch");

    const Assignment before = q;
    for (std::size_t k = 0; k < scene.robot_vars.size(); ++k) {
      const Variable& v = scene.robot_vars[k];
      q.set(v, q.at(v) + scene.dt * cmd.qd_robot[static_cast<Eigen::Index>(k)]);
    }
    apply_couplings(q, couplings, scene.robot_vars, cmd.qd_robot, scene.dt, before);
    for (std::size_t k = 0; k < scene.object_vars.size(); ++k) {
      const Variable& v = scene.object_vars[k];
      q.set(v, q.at(v) + scene.dt * cmd.qd_object[static_cast<Eigen::Index>(k)]);
    }
    rows.push_back({i, (i + 1) * scene.dt, q, cmd.contact_distance, cmd.ppn, ms, "ok"});
  }
  if (goal_reached(q)) {
    rows.push_back({scene.step_limit, scene.step_limit * scene.dt, q, nan, 0.0, 0.0,
                    "GoalReached"});
    return rows;
  }
  rows.back().status = "StepLimit";
  return rows;
}

/// CSV dump of a trace: step, time, one column per variable of the first
/// row's assignment, then the contact diagnostics and status.
inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows) {
  if (rows.empty()) return;
  const auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
  };
  os << "step,time_s";
  for (const auto& [v, value] : rows.front().q) os << "," << v.text();
  os << ",contact_distance,ppn,iter_ms,status\n";
  for (const TraceRow& r : rows) {
    os << r.step << "," << num(r.time_s);
    for (const auto& [v, value] : r.q) os << "," << num(value);
    os << "," << num(r.contact_distance) << "," << num(r.ppn) << "," << num(r.iter_ms) << ","
       << r.status << "\n";
  }
}

}  // namespace kineverse
