#pragma once

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <optional>
#include <sstream>

#include "kineverse/ops.hpp"

namespace kineverse {
namespace detail {

using boost::property_tree::ptree;

inline std::vector<double> parse_reals(const std::string& text, size_t n,
                                       const std::string& what) {
  std::istringstream in(text);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof() || out.size() != n)
    throw ParseError(what + ": expected " + std::to_string(n) + " numbers, got \"" + text +
                     "\"");
  return out;
}

inline void check_identifier(const std::string& name, const std::string& what) {
  if (name.empty()) throw ParseError(what + ": empty name");
  for (const char c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
      throw ParseError(what + " \"" + name + "\": must match [A-Za-z0-9_]+");
}

inline std::string required_attr(const ptree& element, const std::string& attr,
                                 const std::string& what) {
  if (auto v = element.get_optional<std::string>("<xmlattr>." + attr)) return *v;
  throw ParseError(what + ": missing attribute \"" + attr + "\"");
}

inline double real_attr_or(const ptree& element, const std::string& attr, double fallback) {
  if (auto v = element.get_optional<std::string>("<xmlattr>." + attr))
    return parse_reals(*v, 1, attr)[0];
  return fallback;
}

/// <origin xyz rpy> of an element, as a constant transform AST.
inline Json origin_to_json(const ptree& element) {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero(), rpy = Eigen::Vector3d::Zero();
  if (auto origin = element.get_child_optional("origin")) {
    if (auto s = origin->get_optional<std::string>("<xmlattr>.xyz")) {
      const auto v = parse_reals(*s, 3, "origin xyz");
      xyz = {v[0], v[1], v[2]};
    }
    if (auto s = origin->get_optional<std::string>("<xmlattr>.rpy")) {
      const auto v = parse_reals(*s, 3, "origin rpy");
      rpy = {v[0], v[1], v[2]};
    }
  }
  const MatrixExpr t = translation(xyz.x(), xyz.y(), xyz.z()) *
                       rotation_rpy(rpy.x(), rpy.y(), rpy.z());
  return to_json(t);
}

struct UrdfJoint {
  std::string name, type, parent, child;
  Json origin;
  std::optional<Eigen::Vector3d> axis;
  std::optional<std::pair<double, double>> limits;
  std::optional<double> vel_limit;
  std::optional<std::string> mimic_joint;
  double mimic_multiplier = 1.0;
  double mimic_offset = 0.0;
};

inline Json shape_from_geometry(const ptree& geometry, const std::string& link) {
  if (auto box = geometry.get_child_optional("box")) {
    const auto s = parse_reals(required_attr(*box, "size", "box of link " + link), 3, "box size");
    return Json{{"box", {{"half_extents", {s[0] / 2, s[1] / 2, s[2] / 2}}}}};
  }
  if (auto sphere = geometry.get_child_optional("sphere")) {
    const double r =
        parse_reals(required_attr(*sphere, "radius", "sphere of link " + link), 1, "radius")[0];
    return Json{{"sphere", {{"r", r}}}};
  }
  if (auto cyl = geometry.get_child_optional("cylinder")) {
    const double r =
        parse_reals(required_attr(*cyl, "radius", "cylinder of link " + link), 1, "radius")[0];
    const double len =
        parse_reals(required_attr(*cyl, "length", "cylinder of link " + link), 1, "length")[0];
    return Json{{"capsule", {{"r", r}, {"half_length", len / 2}}}};
  }
  if (geometry.get_child_optional("mesh"))
    throw UnsupportedGeometryError("mesh geometry on link " + link + " is not supported");
  throw ParseError("link " + link + ": geometry must be box, sphere or cylinder");
}

}  // namespace detail

/// Parse a URDF document into an applied operation history: bodies first,
/// then joint connections ordered so parents and mimic targets come before
/// their dependents, then collision shapes (collision elements preferred,
/// visual elements as fallback).
inline OperationHistory parse_urdf(const std::string& xml) {
  namespace pt = boost::property_tree;
  pt::ptree doc;
  try {
    std::istringstream in(xml);
    pt::read_xml(in, doc);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("malformed XML: ") + e.what());
  }
  const auto robot = doc.get_child_optional("robot");
  if (!robot) throw ParseError("URDF needs a toplevel <robot> element");

  std::vector<std::string> links;
  std::set<std::string> link_set;
  std::vector<std::pair<std::string, Json>> shapes;  // (link, attach_shape args)
  std::vector<detail::UrdfJoint> joints;

  for (const auto& [key, element] : *robot) {
    if (key == "link") {
      const std::string name = detail::required_attr(element, "name", "link");
      detail::check_identifier(name, "link");
      if (!link_set.insert(name).second) throw ParseError("duplicate link name: " + name);
      links.push_back(name);

      auto collect = [&](const std::string& kind) {
        size_t found = 0;
        for (const auto& [ckey, celement] : element) {
          if (ckey != kind) continue;
          const auto geometry = celement.get_child_optional("geometry");
          if (!geometry) throw ParseError("link " + name + ": " + kind + " needs <geometry>");
          Json args{{"attach_to", name},
                    {"shape", detail::shape_from_geometry(*geometry, name)},
                    {"pose", detail::origin_to_json(celement)}};
          shapes.emplace_back(name, std::move(args));
          ++found;
        }
        return found;
      };
      if (collect("collision") == 0) collect("visual");
    } else if (key == "joint") {
      detail::UrdfJoint j;
      j.name = detail::required_attr(element, "name", "joint");
      detail::check_identifier(j.name, "joint");
      j.type = detail::required_attr(element, "type", "joint " + j.name);
      if (j.type == "planar" || j.type == "floating")
        throw UnsupportedJointError("joint " + j.name + ": type \"" + j.type +
                                    "\" is not supported");
      if (j.type != "fixed" && j.type != "revolute" && j.type != "continuous" &&
          j.type != "prismatic")
        throw ParseError("joint " + j.name + ": unknown type \"" + j.type + "\"");

      const auto parent = element.get_child_optional("parent");
      const auto child = element.get_child_optional("child");
      if (!parent || !child)
        throw ParseError("joint " + j.name + ": needs <parent> and <child>");
      j.parent = detail::required_attr(*parent, "link", "joint " + j.name + " parent");
      j.child = detail::required_attr(*child, "link", "joint " + j.name + " child");
      j.origin = detail::origin_to_json(element);

      if (auto axis = element.get_child_optional("axis")) {
        const auto v = detail::parse_reals(
            detail::required_attr(*axis, "xyz", "joint " + j.name + " axis"), 3, "axis xyz");
        j.axis = Eigen::Vector3d(v[0], v[1], v[2]);
      }
      if (auto limit = element.get_child_optional("limit")) {
        const auto lower = limit->get_optional<std::string>("<xmlattr>.lower");
        const auto upper = limit->get_optional<std::string>("<xmlattr>.upper");
        if (lower || upper) {
          if (!lower || !upper)
            throw ParseError("joint " + j.name + ": limit needs both lower and upper");
          j.limits = {detail::parse_reals(*lower, 1, "lower")[0],
                      detail::parse_reals(*upper, 1, "upper")[0]};
        }
        if (auto vel = limit->get_optional<std::string>("<xmlattr>.velocity"))
          j.vel_limit = detail::parse_reals(*vel, 1, "velocity")[0];
      }
      if (auto mimic = element.get_child_optional("mimic")) {
        j.mimic_joint = detail::required_attr(*mimic, "joint", "joint " + j.name + " mimic");
        j.mimic_multiplier = detail::real_attr_or(*mimic, "multiplier", 1.0);
        j.mimic_offset = detail::real_attr_or(*mimic, "offset", 0.0);
      }
      joints.push_back(std::move(j));
    }
  }

  if (links.empty()) throw ParseError("URDF declares no links");

  // tree checks: every link has at most one parent joint, joints reference
  // declared links, exactly one root
  std::map<std::string, size_t> parent_joint_of;  // child link -> joint index
  std::map<std::string, size_t> joint_by_name;
  for (size_t i = 0; i < joints.size(); ++i) {
    const auto& j = joints[i];
    if (!joint_by_name.emplace(j.name, i).second)
      throw ParseError("duplicate joint name: " + j.name);
    if (!link_set.count(j.parent))
      throw ParseError("joint " + j.name + ": unknown parent link " + j.parent);
    if (!link_set.count(j.child))
      throw ParseError("joint " + j.name + ": unknown child link " + j.child);
    if (j.parent == j.child) throw CycleError("joint " + j.name + " connects a link to itself");
    if (!parent_joint_of.emplace(j.child, i).second)
      throw CycleError("kinematic loop: link " + j.child + " has two parent joints");
  }
  std::vector<std::string> roots;
  for (const auto& l : links)
    if (!parent_joint_of.count(l)) roots.push_back(l);
  if (roots.empty()) throw CycleError("kinematic loop: no root link");
  if (roots.size() > 1) {
    std::string msg = "multiple root links:";
    for (const auto& r : roots) msg += " " + r;
    throw ParseError(msg);
  }

  // reachability from the root validates the tree before mimic ordering
  {
    std::set<std::string> visited{roots[0]};
    std::vector<std::string> queue{roots[0]};
    while (!queue.empty()) {
      const std::string at = std::move(queue.back());
      queue.pop_back();
      for (const auto& j : joints)
        if (j.parent == at && !visited.count(j.child)) {
          visited.insert(j.child);
          queue.push_back(j.child);
        }
    }
    if (visited.size() != links.size())
      throw CycleError("kinematic loop: some links are unreachable from the root");
  }

  // resolve mimic chains to (base variable, multiplier, offset)
  struct Mimic {
    std::string base_var;
    double multiplier, offset;
  };
  std::map<size_t, Mimic> mimic_of;
  for (size_t i = 0; i < joints.size(); ++i) {
    if (!joints[i].mimic_joint) continue;
    if (joints[i].type == "fixed")
      throw ParseError("joint " + joints[i].name + ": fixed joints cannot mimic");
    // walk the chain, folding v = m*v_target + o affine maps into one
    double mult = 1.0, off = 0.0;
    size_t at = i;
    std::set<size_t> seen{i};
    while (joints[at].mimic_joint) {
      off = off + mult * joints[at].mimic_offset;
      mult = mult * joints[at].mimic_multiplier;
      const auto target = joint_by_name.find(*joints[at].mimic_joint);
      if (target == joint_by_name.end())
        throw ParseError("joint " + joints[at].name + ": mimic of unknown joint " +
                         *joints[at].mimic_joint);
      at = target->second;
      if (!seen.insert(at).second)
        throw MimicCycleError("mimic cycle through joint " + joints[at].name);
      if (joints[at].type == "fixed")
        throw ParseError("joint " + joints[at].name + ": mimic target is a fixed joint");
    }
    mimic_of.emplace(i, Mimic{joints[at].name, mult, off});
  }

  // order joints so tree parents and mimic targets are applied first
  std::vector<size_t> order;
  {
    const size_t n = joints.size();
    std::vector<std::vector<size_t>> dependents(n);
    std::vector<size_t> indegree(n, 0);
    for (size_t i = 0; i < n; ++i) {
      auto add_edge = [&](size_t from) {
        dependents[from].push_back(i);
        ++indegree[i];
      };
      const auto up = parent_joint_of.find(joints[i].parent);
      if (up != parent_joint_of.end()) add_edge(up->second);
      if (joints[i].mimic_joint) add_edge(joint_by_name.at(*joints[i].mimic_joint));
    }
    std::set<size_t> ready;
    for (size_t i = 0; i < n; ++i)
      if (indegree[i] == 0) ready.insert(i);
    while (!ready.empty()) {
      const size_t i = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(i);
      for (const size_t dep : dependents[i])
        if (--indegree[dep] == 0) ready.insert(dep);
    }
    if (order.size() != n) throw MimicCycleError("mimic dependencies form a cycle");
  }

  OperationHistory history;
  for (const auto& link : links)
    history.apply_operation("create " + link, Operation{"create_body", {{"name", link}}});

  for (const size_t i : order) {
    const auto& j = joints[i];
    Json args{{"kind", j.type}, {"parent", j.parent}, {"child", j.child}, {"origin", j.origin}};
    if (j.axis) args["axis"] = {j.axis->x(), j.axis->y(), j.axis->z()};
    if (const auto m = mimic_of.find(i); m != mimic_of.end()) {
      args["mimic_of"] = m->second.base_var;
      args["multiplier"] = m->second.multiplier;
      args["offset"] = m->second.offset;
    } else if (j.type != "fixed") {
      args["var"] = j.name;
      if (j.limits) args["limits"] = {j.limits->first, j.limits->second};
      if (j.vel_limit) args["vel_limit"] = *j.vel_limit;
    }
    history.apply_operation("connect " + j.parent + " " + j.child,
                            Operation{"connect_joint", std::move(args)});
  }

  std::map<std::string, size_t> shape_counter;
  for (auto& [link, args] : shapes) {
    const size_t i = shape_counter[link]++;
    history.apply_operation("shape " + link + " " + std::to_string(i),
                            Operation{"attach_shape", std::move(args)});
  }
  return history;
}

}  // namespace kineverse
