#pragma once

#include <functional>
#include <optional>

#include "kineverse/model.hpp"

namespace kineverse {

/// A tagged, replayable model edit: a registered kind name plus its JSON
/// arguments. Paths are strings, numbers are JSON numbers, expressions and
/// matrices use the expression AST encoding. Operations must be
/// deterministic: the same model state and arguments always produce the same
/// deltas.
struct Operation {
  std::string kind;
  Json args = Json::object();

  bool operator==(const Operation& o) const { return kind == o.kind && args == o.args; }
};

/// Everything one operation adds to (or overwrites in) a model. Constraint
/// names and shape keys are local to the operation; the history qualifies
/// them with the operation's tag ("tag/name") so replacing the operation
/// cleanly retires them.
struct OpDelta {
  std::map<Path, ModelValue> exprs;
  std::map<std::string, Constraint> constraints;
  std::map<std::string, ShapeAttachment> shapes;
};

/// The outputs an operation commits to producing, computable from its
/// arguments alone. Application checks the actual delta against this.
struct DeclaredOutputs {
  std::set<Path> paths;
  std::set<std::string> constraint_names;
  std::set<std::string> shape_keys;
};

struct OperationKind {
  std::function<DeclaredOutputs(const Json&)> declare;
  std::function<OpDelta(const ArticulationModel&, const Json&)> apply;
};

namespace detail {

inline const Json& op_arg(const Json& args, const std::string& key) {
  if (!args.is_object() || !args.contains(key))
    throw FormatError("operation argument \"" + key + "\" is missing");
  return args.at(key);
}

inline std::string arg_string(const Json& args, const std::string& key) {
  const Json& j = op_arg(args, key);
  if (!j.is_string()) throw FormatError("operation argument \"" + key + "\" must be a string");
  return j.get<std::string>();
}

inline Path arg_path(const Json& args, const std::string& key) {
  return Path(arg_string(args, key));
}

inline double arg_real(const Json& args, const std::string& key) {
  const Json& j = op_arg(args, key);
  if (!j.is_number()) throw FormatError("operation argument \"" + key + "\" must be a number");
  return j.get<double>();
}

inline double arg_real_or(const Json& args, const std::string& key, double fallback) {
  if (!args.is_object() || !args.contains(key)) return fallback;
  return arg_real(args, key);
}

inline Eigen::Vector3d arg_vec3(const Json& args, const std::string& key) {
  const Json& j = op_arg(args, key);
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() ||
      !j[2].is_number())
    throw FormatError("operation argument \"" + key + "\" must be a numeric 3-array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

/// Joint axis: defaults to +x, normalized, near-zero rejected.
inline Eigen::Vector3d arg_axis(const Json& args) {
  if (!args.is_object() || !args.contains("axis")) return Eigen::Vector3d::UnitX();
  const Eigen::Vector3d v = arg_vec3(args, "axis");
  const double n = v.norm();
  if (n <= 1e-9) throw FormatError("operation argument \"axis\" has (near) zero norm");
  return v / n;
}

/// Number or expression AST.
inline ScalarExpr arg_expr(const Json& args, const std::string& key) {
  const Json& j = op_arg(args, key);
  if (j.is_number()) return ScalarExpr(j.get<double>());
  return scalar_from_json(j, "$." + key);
}

inline MatrixExpr arg_matrix_or_identity(const Json& args, const std::string& key) {
  if (!args.is_object() || !args.contains(key)) return MatrixExpr::identity(4);
  return matrix_from_json(args.at(key), "$." + key);
}

}  // namespace detail

namespace builtin_ops {

// create_body(name, parent_pose?: matrix AST or path string)
inline DeclaredOutputs create_body_declare(const Json& args) {
  return {{detail::arg_path(args, "name")}, {}, {}};
}

inline OpDelta create_body_apply(const ArticulationModel& model, const Json& args) {
  const Path name = detail::arg_path(args, "name");
  if (model.has_expr(name)) throw Error("body path already exists: " + name.text());
  MatrixExpr pose = MatrixExpr::identity(4);
  if (args.contains("parent_pose")) {
    const Json& pp = args.at("parent_pose");
    if (pp.is_string())
      pose = model.transform(Path(pp.get<std::string>()));
    else
      pose = matrix_from_json(pp, "$.parent_pose");
  }
  OpDelta d;
  d.exprs.emplace(name, std::move(pose));
  return d;
}

// connect_joint(kind: fixed|revolute|continuous|prismatic|mimic, parent,
// child, origin?: matrix AST, axis?: [x,y,z], var, limits?: [lo,hi],
// vel_limit?, mimic_of?, multiplier?, offset?)
//
// Moving kinds with mimic_of drive their transform with
// multiplier*mimic_of + offset instead of an own variable and store no
// constraints; the driving joint's constraints already bound the motion.
// Kind "mimic" is shorthand for a mimicking revolute joint.
inline bool joint_makes_constraints(const Json& args) {
  const std::string kind = detail::arg_string(args, "kind");
  return kind != "fixed" && kind != "mimic" && !args.contains("mimic_of");
}

inline DeclaredOutputs connect_joint_declare(const Json& args) {
  DeclaredOutputs d;
  d.paths.insert(detail::arg_path(args, "child"));
  if (joint_makes_constraints(args)) {
    if (args.contains("limits")) d.constraint_names.insert("pos");
    if (args.contains("vel_limit")) d.constraint_names.insert("vel");
  }
  return d;
}

inline OpDelta connect_joint_apply(const ArticulationModel& model, const Json& args) {
  const std::string kind = detail::arg_string(args, "kind");
  const Path parent = detail::arg_path(args, "parent");
  const Path child = detail::arg_path(args, "child");
  const MatrixExpr& parent_fk = model.transform(parent);
  const MatrixExpr origin = detail::arg_matrix_or_identity(args, "origin");

  OpDelta d;
  if (kind == "fixed") {
    d.exprs.emplace(child, parent_fk * origin);
    return d;
  }

  const std::string base_kind = kind == "mimic" ? "revolute" : kind;
  if (base_kind != "revolute" && base_kind != "continuous" && base_kind != "prismatic")
    throw FormatError("unknown joint kind \"" + kind + "\"");
  const bool mimic = args.contains("mimic_of");
  if (kind == "mimic" && !mimic) throw FormatError("mimic joint needs \"mimic_of\"");

  ExtExpr v(0.0);
  std::string var_name;
  if (mimic) {
    const Variable target(detail::arg_string(args, "mimic_of"));
    const double mult = detail::arg_real_or(args, "multiplier", 1.0);
    const double off = detail::arg_real_or(args, "offset", 0.0);
    v = ExtExpr(ScalarExpr(target) * mult + off);
  } else {
    var_name = detail::arg_string(args, "var");
    v = ExtExpr(Variable(var_name));
  }

  const Eigen::Vector3d axis = detail::arg_axis(args);
  const MatrixExpr joint = base_kind == "prismatic"
                               ? translation(v * axis.x(), v * axis.y(), v * axis.z())
                               : rotation(axis, v);
  d.exprs.emplace(child, parent_fk * origin * joint);

  if (!mimic) {
    const Variable q(var_name);
    if (args.contains("limits")) {
      const Json& lim = args.at("limits");
      if (!lim.is_array() || lim.size() != 2 || !lim[0].is_number() || !lim[1].is_number())
        throw FormatError("operation argument \"limits\" must be [lower, upper]");
      d.constraints.emplace(
          "pos", Constraint{lim[0].get<double>(), lim[1].get<double>(), ScalarExpr(q)});
    } else if (base_kind != "continuous") {
      throw MissingLimitsError(var_name);
    }
    if (args.contains("vel_limit")) {
      const double vl = detail::arg_real(args, "vel_limit");
      d.constraints.emplace("vel", Constraint{-vl, vl, ScalarExpr(q.derivative())});
    }
  }
  return d;
}

// attach_diff_drive(base, wheel_radius, axle_half_width, x, y, theta, lw, rw)
//
// The pose variables x, y, theta are free symbols; the wheel coupling lives
// entirely in their extended gradients, so var(base FK) never mentions the
// wheels.
inline DeclaredOutputs attach_diff_drive_declare(const Json& args) {
  const Path base = detail::arg_path(args, "base");
  return {{base, base.child("x"), base.child("y"), base.child("theta")}, {}, {}};
}

inline OpDelta attach_diff_drive_apply(const ArticulationModel& model, const Json& args) {
  const Path base = detail::arg_path(args, "base");
  if (model.has_expr(base)) throw Error("base path already occupied: " + base.text());
  const double r = detail::arg_real(args, "wheel_radius");
  const double L = detail::arg_real(args, "axle_half_width");
  if (r <= 0.0 || L <= 0.0)
    throw Error("attach_diff_drive: wheel_radius and axle_half_width must be positive");

  const Variable x(detail::arg_string(args, "x")), y(detail::arg_string(args, "y")),
      th(detail::arg_string(args, "theta")), lw(detail::arg_string(args, "lw")),
      rw(detail::arg_string(args, "rw"));
  const ScalarExpr ct = cos(ScalarExpr(th)), st = sin(ScalarExpr(th));
  const ExtExpr ex(ScalarExpr(x),
                   {{lw.derivative(), r / 2.0 * ct}, {rw.derivative(), r / 2.0 * ct}});
  const ExtExpr ey(ScalarExpr(y),
                   {{lw.derivative(), r / 2.0 * st}, {rw.derivative(), r / 2.0 * st}});
  const ExtExpr eth(ScalarExpr(th), {{lw.derivative(), ScalarExpr(-r / (2.0 * L))},
                                     {rw.derivative(), ScalarExpr(r / (2.0 * L))}});

  OpDelta d;
  d.exprs.emplace(base, translation(ex, ey, 0.0) * rotation(Eigen::Vector3d::UnitZ(), eth));
  d.exprs.emplace(base.child("x"), ex);
  d.exprs.emplace(base.child("y"), ey);
  d.exprs.emplace(base.child("theta"), eth);
  return d;
}

// attach_garage_door(parent, door, rail_length, var, lock_var,
// lock_threshold?, closed_threshold?, sharpness?)
//
// The door runs on a vertical rail of length l: var a is the height of the
// upper hinge, the panel tilts so its lower edge stays on the floor plane.
// lock_var below lock_threshold latches the door shut once a passes
// closed_threshold; "unlocked" gates the velocity constraint on a.
inline DeclaredOutputs attach_garage_door_declare(const Json& args) {
  const Path door = detail::arg_path(args, "door");
  return {{door, door.child("unlocked")}, {"pos", "lock"}, {}};
}

inline OpDelta attach_garage_door_apply(const ArticulationModel& model, const Json& args) {
  const Path parent = detail::arg_path(args, "parent");
  const Path door = detail::arg_path(args, "door");
  const MatrixExpr& parent_fk = model.transform(parent);
  const double l = detail::arg_real(args, "rail_length");
  if (l <= 0.0) throw Error("attach_garage_door: rail_length must be positive");
  const Variable av(detail::arg_string(args, "var"));
  const Variable bv(detail::arg_string(args, "lock_var"));
  const double lock_t = detail::arg_real_or(args, "lock_threshold", 0.3);
  const double closed_t = detail::arg_real_or(args, "closed_threshold", 1.99);
  const double k = detail::arg_real_or(args, "sharpness", 2000.0);

  const ScalarExpr a(av), b(bv);
  const ScalarExpr u = a / l;
  const ScalarExpr w = sqrt(1.0 - u * u);
  const MatrixExpr tilt(4, 4, {ExtExpr(u), ExtExpr(0.0), ExtExpr(w), ExtExpr(0.0),
                               ExtExpr(0.0), ExtExpr(1.0), ExtExpr(0.0), ExtExpr(0.0),
                               ExtExpr(-w), ExtExpr(0.0), ExtExpr(u), ExtExpr(a),
                               ExtExpr(0.0), ExtExpr(0.0), ExtExpr(0.0), ExtExpr(1.0)});
  const ScalarExpr unlocked =
      1.0 - softstep_lt(b, lock_t, k) * softstep_lt(ScalarExpr(closed_t), a, k);

  OpDelta d;
  d.exprs.emplace(door, parent_fk * tilt);
  d.exprs.emplace(door.child("unlocked"), unlocked);
  d.constraints.emplace("pos", Constraint{0.0, l, a});
  d.constraints.emplace("lock", Constraint{-unlocked, unlocked, ScalarExpr(av.derivative())});
  return d;
}

// add_constraint(name, lb, ub, expr); lb/ub/expr are numbers or ASTs.
inline DeclaredOutputs add_constraint_declare(const Json& args) {
  return {{}, {detail::arg_string(args, "name")}, {}};
}

inline OpDelta add_constraint_apply(const ArticulationModel& model, const Json& args) {
  const std::string name = detail::arg_string(args, "name");
  // stored names are "tag/name"; the requested local name must be new
  for (const auto& [qualified, c] : model.constraints()) {
    const size_t slash = qualified.find('/');
    if (qualified.substr(slash == std::string::npos ? 0 : slash + 1) == name)
      throw DuplicateNameError(name);
  }
  OpDelta d;
  d.constraints.emplace(name, Constraint{detail::arg_expr(args, "lb"),
                                         detail::arg_expr(args, "ub"),
                                         detail::arg_expr(args, "expr")});
  return d;
}

// attach_shape(attach_to, shape: {sphere:{r}|box:{half_extents}|capsule:{r,
// half_length}}, pose?: constant matrix AST)
inline DeclaredOutputs attach_shape_declare(const Json&) { return {{}, {}, {""}}; }

inline OpDelta attach_shape_apply(const ArticulationModel& model, const Json& args) {
  const Path target = detail::arg_path(args, "attach_to");
  model.transform(target);
  const Json& js = detail::op_arg(args, "shape");
  if (!js.is_object() || js.size() != 1)
    throw FormatError("operation argument \"shape\" must hold exactly one shape kind");

  Shape shape;
  if (js.contains("sphere")) {
    const double r = detail::arg_real(js.at("sphere"), "r");
    if (r <= 0.0) throw FormatError("sphere radius must be positive");
    shape = SphereShape{r};
  } else if (js.contains("box")) {
    const Eigen::Vector3d he = detail::arg_vec3(js.at("box"), "half_extents");
    if (he.minCoeff() <= 0.0) throw FormatError("box half-extents must be positive");
    shape = BoxShape{he};
  } else if (js.contains("capsule")) {
    const double r = detail::arg_real(js.at("capsule"), "r");
    const double hl = detail::arg_real(js.at("capsule"), "half_length");
    if (r <= 0.0 || hl <= 0.0) throw FormatError("capsule dimensions must be positive");
    shape = CapsuleShape{r, hl};
  } else {
    throw FormatError("unknown shape kind in \"shape\"");
  }

  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
  if (args.contains("pose"))
    pose = matrix_from_json(args.at("pose"), "$.pose").evaluate({});

  OpDelta d;
  d.shapes.emplace("", ShapeAttachment{target, shape, pose});
  return d;
}

}  // namespace builtin_ops

/// Kind-name registry. Builtins are pre-registered; additional kinds may be
/// added before any history uses them.
class OperationRegistry {
public:
  static OperationRegistry& instance() {
    static OperationRegistry reg;
    return reg;
  }

  void add(const std::string& kind, OperationKind k) { kinds_[kind] = std::move(k); }
  bool has(const std::string& kind) const { return kinds_.count(kind) > 0; }

  const OperationKind& at(const std::string& kind) const {
    auto it = kinds_.find(kind);
    if (it == kinds_.end()) throw FormatError("unknown operation kind \"" + kind + "\"");
    return it->second;
  }

private:
  OperationRegistry() {
    add("create_body", {builtin_ops::create_body_declare, builtin_ops::create_body_apply});
    add("connect_joint", {builtin_ops::connect_joint_declare, builtin_ops::connect_joint_apply});
    add("attach_diff_drive",
        {builtin_ops::attach_diff_drive_declare, builtin_ops::attach_diff_drive_apply});
    add("attach_garage_door",
        {builtin_ops::attach_garage_door_declare, builtin_ops::attach_garage_door_apply});
    add("add_constraint", {builtin_ops::add_constraint_declare, builtin_ops::add_constraint_apply});
    add("attach_shape", {builtin_ops::attach_shape_declare, builtin_ops::attach_shape_apply});
  }

  std::map<std::string, OperationKind> kinds_;
};

struct Placement {
  enum class Kind { Append, Before, Replace };
  Kind kind = Kind::Append;
  std::string anchor;

  static Placement append() { return {}; }
  static Placement before(std::string tag) { return {Kind::Before, std::move(tag)}; }
  static Placement replace(std::string tag) { return {Kind::Replace, std::move(tag)}; }
};

namespace detail {

/// Re-raise operation errors with the failing tag in the message, keeping
/// the dynamic type (and its payload field) intact.
template <class Fn>
void run_tagged(const std::string& tag, Fn&& fn) {
  const std::string prefix = "operation \"" + tag + "\": ";
  try {
    fn();
  } catch (const UnknownPathError& e) {
    throw UnknownPathError(e.path, prefix + e.what());
  } catch (const DuplicateNameError& e) {
    throw DuplicateNameError(e.name, prefix + e.what());
  } catch (const MissingLimitsError& e) {
    throw MissingLimitsError(e.joint, prefix + e.what());
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  } catch (const DomainError& e) {
    throw DomainError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace detail

/// The model together with the tagged operation list that built it. Editing
/// anywhere but the end rolls the suffix off the model and re-applies it, so
/// the live model always equals a fresh replay of the entries.
class OperationHistory {
public:
  struct Entry {
    std::string tag;
    Operation op;

    bool operator==(const Entry& o) const { return tag == o.tag && op == o.op; }
  };

  const ArticulationModel& model() const { return model_; }

  size_t size() const { return recs_.size(); }
  bool empty() const { return recs_.empty(); }

  bool has_tag(const std::string& tag) const { return index_of(tag).has_value(); }

  std::vector<Entry> entries() const {
    std::vector<Entry> out;
    out.reserve(recs_.size());
    for (const auto& r : recs_) out.push_back({r.tag, r.op});
    return out;
  }

  void apply_operation(const std::string& tag, Operation op,
                       const Placement& placement = Placement::append()) {
    if (placement.kind == Placement::Kind::Append) {
      if (has_tag(tag)) throw DuplicateTagError(tag);
      Rec rec{tag, std::move(op), {}};
      detail::run_tagged(tag, [&] { apply_rec(rec); });
      recs_.push_back(std::move(rec));
      return;
    }

    const auto anchor = index_of(placement.anchor);
    if (!anchor) throw UnknownTagError(placement.anchor);
    const bool replacing = placement.kind == Placement::Kind::Replace;
    if (const auto existing = index_of(tag); existing && !(replacing && *existing == *anchor))
      throw DuplicateTagError(tag);

    const size_t at = *anchor;
    for (size_t j = recs_.size(); j-- > at;) rollback_rec(recs_[j]);

    std::vector<Rec> original(recs_.begin() + ptrdiff_t(at), recs_.end());
    std::vector<Rec> fresh;
    fresh.push_back(Rec{tag, std::move(op), {}});
    for (size_t j = replacing ? 1 : 0; j < original.size(); ++j)
      fresh.push_back(Rec{original[j].tag, original[j].op, {}});

    size_t done = 0;
    try {
      for (auto& r : fresh) {
        detail::run_tagged(r.tag, [&] { apply_rec(r); });
        ++done;
      }
    } catch (...) {
      while (done > 0) rollback_rec(fresh[--done]);
      // operations are deterministic, so restoring the old suffix on the
      // restored base state cannot fail
      for (auto& r : original) {
        r.undo = {};
        apply_rec(r);
      }
      throw;
    }

    recs_.erase(recs_.begin() + ptrdiff_t(at), recs_.end());
    for (auto& r : fresh) recs_.push_back(std::move(r));
  }

private:
  struct Undo {
    std::map<Path, std::optional<ModelValue>> exprs;
    std::map<std::string, std::optional<Constraint>> constraints;
    std::map<std::string, std::optional<ShapeAttachment>> shapes;
  };

  struct Rec {
    std::string tag;
    Operation op;
    Undo undo;
  };

  std::optional<size_t> index_of(const std::string& tag) const {
    for (size_t i = 0; i < recs_.size(); ++i)
      if (recs_[i].tag == tag) return i;
    return std::nullopt;
  }

  void apply_rec(Rec& rec) {
    const OperationKind& kind = OperationRegistry::instance().at(rec.op.kind);
    OpDelta delta = kind.apply(model_, rec.op.args);

    DeclaredOutputs decl = kind.declare(rec.op.args);
    std::set<Path> got_paths;
    std::set<std::string> got_constraints, got_shapes;
    for (const auto& [p, v] : delta.exprs) got_paths.insert(p);
    for (const auto& [n, c] : delta.constraints) got_constraints.insert(n);
    for (const auto& [k, s] : delta.shapes) got_shapes.insert(k);
    if (got_paths != decl.paths || got_constraints != decl.constraint_names ||
        got_shapes != decl.shape_keys)
      throw Error("operation kind \"" + rec.op.kind +
                  "\" produced outputs differing from its declaration");

    rec.undo = Undo{};
    for (auto& [p, v] : delta.exprs) {
      rec.undo.exprs.emplace(
          p, model_.has_expr(p) ? std::optional<ModelValue>(model_.expr(p)) : std::nullopt);
      model_.set_expr(p, std::move(v));
    }
    for (auto& [name, c] : delta.constraints) {
      const std::string qualified = rec.tag + "/" + name;
      rec.undo.constraints.emplace(qualified,
                                   model_.has_constraint(qualified)
                                       ? std::optional<Constraint>(model_.constraint(qualified))
                                       : std::nullopt);
      model_.set_constraint(qualified, std::move(c));
    }
    for (auto& [key, s] : delta.shapes) {
      const std::string qualified = key.empty() ? rec.tag : rec.tag + "/" + key;
      const auto it = model_.shapes().find(qualified);
      rec.undo.shapes.emplace(qualified, it != model_.shapes().end()
                                             ? std::optional<ShapeAttachment>(it->second)
                                             : std::nullopt);
      model_.set_shape(qualified, std::move(s));
    }
  }

  void rollback_rec(const Rec& rec) {
    for (const auto& [p, prev] : rec.undo.exprs)
      prev ? model_.set_expr(p, *prev) : model_.erase_expr(p);
    for (const auto& [n, prev] : rec.undo.constraints)
      prev ? model_.set_constraint(n, *prev) : model_.erase_constraint(n);
    for (const auto& [k, prev] : rec.undo.shapes)
      prev ? model_.set_shape(k, *prev) : model_.erase_shape(k);
  }

  ArticulationModel model_;
  std::vector<Rec> recs_;
};

/// Fresh model from an entry list; errors carry the failing tag.
inline ArticulationModel replay(const std::vector<OperationHistory::Entry>& entries) {
  OperationHistory h;
  for (const auto& e : entries) h.apply_operation(e.tag, e.op);
  return h.model();
}

inline ArticulationModel replay(const OperationHistory& history) {
  return replay(history.entries());
}

}  // namespace kineverse
