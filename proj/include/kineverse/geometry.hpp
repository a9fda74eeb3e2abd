#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>

#include "kineverse/model.hpp"

namespace kineverse {

/// Closest-point query between two attached shapes. p lies on the first
/// shape, r on the second, n is the unit normal pointing from p toward r,
/// and distance is signed (negative = penetration). For separated pairs
/// r = p + distance * n.
struct ContactQueryResult {
  Eigen::Vector3d p;
  Eigen::Vector3d r;
  Eigen::Vector3d n;
  double distance;
};

namespace detail {

struct PosedSphere {
  Eigen::Vector3d c;
  double rad;
};

inline ContactQueryResult sphere_sphere(const PosedSphere& a, const PosedSphere& b,
                                        const Eigen::Vector3d& fallback_n) {
  const Eigen::Vector3d d = b.c - a.c;
  const double len = d.norm();
  const Eigen::Vector3d n = len > 1e-12 ? Eigen::Vector3d(d / len) : fallback_n;
  return {a.c + a.rad * n, b.c - b.rad * n, n, len - a.rad - b.rad};
}

/// Closest surface point of the origin-centered box `he` to the local point
/// `c`, its outward normal there, and the signed center-to-surface distance
/// (negative when c is inside). Interior points project to the nearest face,
/// ties broken toward the lower axis and the positive side.
inline void box_surface(const Eigen::Vector3d& he, const Eigen::Vector3d& c,
                        Eigen::Vector3d& on_box, Eigen::Vector3d& outward,
                        double& signed_dist) {
  const Eigen::Vector3d clamped = c.cwiseMax(-he).cwiseMin(he);
  const double outside = (c - clamped).norm();
  if (outside > 1e-12) {
    on_box = clamped;
    outward = (c - clamped) / outside;
    signed_dist = outside;
    return;
  }
  int axis = 0;
  for (int i = 1; i < 3; ++i)
    if (he[i] - std::fabs(c[i]) < he[axis] - std::fabs(c[axis])) axis = i;
  const double side = c[axis] < 0.0 ? -1.0 : 1.0;
  on_box = c;
  on_box[axis] = side * he[axis];
  outward = side * Eigen::Vector3d::Unit(axis);
  signed_dist = -(he[axis] - std::fabs(c[axis]));
}

inline ContactQueryResult sphere_box(const PosedSphere& a, const Eigen::Matrix4d& box_pose,
                                     const Eigen::Vector3d& he) {
  const Eigen::Matrix3d rot = box_pose.block<3, 3>(0, 0);
  const Eigen::Vector3d local = rot.transpose() * (a.c - box_pose.block<3, 1>(0, 3));
  Eigen::Vector3d on_box, outward;
  double center_dist;
  box_surface(he, local, on_box, outward, center_dist);
  const Eigen::Vector3d bq = rot * on_box + box_pose.block<3, 1>(0, 3);
  const Eigen::Vector3d u = rot * outward;
  return {a.c - a.rad * u, bq, -u, center_dist - a.rad};
}

inline ContactQueryResult sphere_capsule(const PosedSphere& a, const Eigen::Matrix4d& cap_pose,
                                         double rad, double half_length,
                                         const Eigen::Vector3d& fallback_n) {
  const Eigen::Matrix3d rot = cap_pose.block<3, 3>(0, 0);
  const Eigen::Vector3d local = rot.transpose() * (a.c - cap_pose.block<3, 1>(0, 3));
  const double z = std::clamp(local.z(), -half_length, half_length);
  const Eigen::Vector3d axis_point =
      rot * Eigen::Vector3d(0, 0, z) + cap_pose.block<3, 1>(0, 3);
  return sphere_sphere(a, {axis_point, rad}, fallback_n);
}

inline constexpr int kCapsuleProbes = 9;

inline ContactQueryResult capsule_box(const Eigen::Matrix4d& cap_pose, double rad,
                                      double half_length, const Eigen::Matrix4d& box_pose,
                                      const Eigen::Vector3d& he) {
  ContactQueryResult best{};
  best.distance = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kCapsuleProbes; ++i) {
    const double t = -half_length + 2.0 * half_length * i / (kCapsuleProbes - 1);
    const Eigen::Vector3d probe =
        cap_pose.block<3, 3>(0, 0) * Eigen::Vector3d(0, 0, t) + cap_pose.block<3, 1>(0, 3);
    const ContactQueryResult c = sphere_box({probe, rad}, box_pose, he);
    if (c.distance < best.distance) best = c;
  }
  return best;
}

inline ContactQueryResult swap_result(const ContactQueryResult& c) {
  return {c.r, c.p, -c.n, c.distance};
}

}  // namespace detail

/// World pose of an attachment at the assignment: owning frame FK times the
/// constant local pose.
inline Eigen::Matrix4d shape_pose(const ShapeAttachment& att, const Assignment& q,
                                  const ArticulationModel& model) {
  return model.transform(att.path).evaluate(q) * att.local_pose;
}

/// Closest points between two attached shapes at one configuration.
/// Supported: sphere against anything, capsule against box. When the normal
/// is degenerate (concentric spheres) it falls back to +x of the first
/// shape's frame.
inline ContactQueryResult closest_points(const ShapeAttachment& a, const ShapeAttachment& b,
                                         const Assignment& q, const ArticulationModel& model) {
  const Eigen::Matrix4d ta = shape_pose(a, q, model);
  const Eigen::Matrix4d tb = shape_pose(b, q, model);
  const Eigen::Vector3d fallback = ta.block<3, 1>(0, 0);

  const auto sphere_at = [](const Eigen::Matrix4d& t, const SphereShape& s) {
    return detail::PosedSphere{t.block<3, 1>(0, 3), s.radius};
  };

  if (const auto* sa = std::get_if<SphereShape>(&a.shape)) {
    if (const auto* sb = std::get_if<SphereShape>(&b.shape))
      return detail::sphere_sphere(sphere_at(ta, *sa), sphere_at(tb, *sb), fallback);
    if (const auto* bb = std::get_if<BoxShape>(&b.shape))
      return detail::sphere_box(sphere_at(ta, *sa), tb, bb->half_extents);
    const auto& cb = std::get<CapsuleShape>(b.shape);
    return detail::sphere_capsule(sphere_at(ta, *sa), tb, cb.radius, cb.half_length, fallback);
  }

  if (const auto* ca = std::get_if<CapsuleShape>(&a.shape)) {
    if (const auto* bb = std::get_if<BoxShape>(&b.shape))
      return detail::capsule_box(ta, ca->radius, ca->half_length, tb, bb->half_extents);
    if (const auto* sb = std::get_if<SphereShape>(&b.shape))
      return detail::swap_result(detail::sphere_capsule(sphere_at(tb, *sb), ta, ca->radius,
                                                        ca->half_length, -fallback));
    throw UnsupportedPairError("closest_points: capsule-capsule is not supported");
  }

  const auto& ba = std::get<BoxShape>(a.shape);
  if (const auto* sb = std::get_if<SphereShape>(&b.shape))
    return detail::swap_result(detail::sphere_box(sphere_at(tb, *sb), ta, ba.half_extents));
  if (const auto* cb = std::get_if<CapsuleShape>(&b.shape))
    return detail::swap_result(
        detail::capsule_box(tb, cb->radius, cb->half_length, ta, ba.half_extents));
  throw UnsupportedPairError("closest_points: box-box is not supported");
}

/// Symbolic world position of a body-local point: the 3x1 expression
/// T(q) * local_point. Its Jacobian carries the frame's extended gradient
/// entries, so wheel couplings and similar specials survive.
inline MatrixExpr contact_expr(const ArticulationModel& model, const Path& path,
                               const Eigen::Vector3d& local_point) {
  return transform_point(model.transform(path), local_point);
}

}  // namespace kineverse
