#pragma once

#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kineverse/json_ast.hpp"

namespace kineverse {

/// Dot-separated identifier path naming a model entry, e.g.
/// "kitchen.drawer.handle". Segments are [A-Za-z0-9_]+.
class Path {
public:
  Path(const char* text) : Path(std::string(text)) {}
  Path(std::string text) : text_(std::move(text)) {
    if (text_.empty()) throw FormatError("path: empty");
    size_t seg_len = 0;
    for (const char c : text_) {
      if (c == '.') {
        if (seg_len == 0) throw FormatError("path \"" + text_ + "\": empty segment");
        seg_len = 0;
        continue;
      }
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
        throw FormatError("path \"" + text_ + "\": bad character");
      ++seg_len;
    }
    if (seg_len == 0) throw FormatError("path \"" + text_ + "\": empty segment");
  }

  const std::string& text() const { return text_; }

  std::vector<std::string> segments() const {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= text_.size(); ++i)
      if (i == text_.size() || text_[i] == '.') {
        out.push_back(text_.substr(start, i - start));
        start = i + 1;
      }
    return out;
  }

  Path child(const std::string& segment) const { return Path(text_ + "." + segment); }

  /// Segment-wise prefix test: "door" covers "door" and "door.pose" but not
  /// "doorbell".
  bool covers(const Path& other) const {
    if (other.text_.size() < text_.size()) return false;
    if (other.text_.compare(0, text_.size(), text_) != 0) return false;
    return other.text_.size() == text_.size() || other.text_[text_.size()] == '.';
  }

  auto operator<=>(const Path&) const = default;

private:
  std::string text_;
};

/// Dual inequality constraint lb <= expr <= ub; the bounds may themselves be
/// expressions of state.
struct Constraint {
  ScalarExpr lb;
  ScalarExpr ub;
  ScalarExpr expr;

  bool operator==(const Constraint& o) const {
    return lb == o.lb && ub == o.ub && expr == o.expr;
  }
};

struct SphereShape {
  double radius;

  bool operator==(const SphereShape&) const = default;
};
struct BoxShape {
  Eigen::Vector3d half_extents;

  bool operator==(const BoxShape& o) const {
    return (half_extents.array() == o.half_extents.array()).all();
  }
};
/// Capsule along the local z axis.
struct CapsuleShape {
  double radius;
  double half_length;

  bool operator==(const CapsuleShape&) const = default;
};
using Shape = std::variant<SphereShape, BoxShape, CapsuleShape>;

/// Collision primitive fixed to a model frame.
struct ShapeAttachment {
  Path path;
  Shape shape;
  Eigen::Matrix4d local_pose = Eigen::Matrix4d::Identity();

  bool operator==(const ShapeAttachment& o) const {
    return path == o.path && shape == o.shape &&
           (local_pose.array() == o.local_pose.array()).all();
  }
};

/// The articulation model: named expressions plus named constraints (and the
/// collision shapes hung off its frames). Mutate only through operations so
/// the operation history stays an exact recipe for the current state.
class ArticulationModel {
public:
  bool has_expr(const Path& p) const { return exprs_.count(p) > 0; }

  const ModelValue& expr(const Path& p) const {
    auto it = exprs_.find(p);
    if (it == exprs_.end()) throw UnknownPathError(p.text());
    return it->second;
  }

  /// The 4x4 transform stored at `p`.
  const MatrixExpr& transform(const Path& p) const {
    const ModelValue& v = expr(p);
    if (!std::holds_alternative<MatrixExpr>(v))
      throw Error("path " + p.text() + " does not hold a transform");
    const MatrixExpr& m = std::get<MatrixExpr>(v);
    if (m.rows() != 4 || m.cols() != 4)
      throw Error("path " + p.text() + " does not hold a 4x4 transform");
    return m;
  }

  const std::map<Path, ModelValue>& exprs() const { return exprs_; }

  bool has_constraint(const std::string& name) const { return constraints_.count(name) > 0; }
  const Constraint& constraint(const std::string& name) const {
    auto it = constraints_.find(name);
    if (it == constraints_.end()) throw Error("unknown constraint \"" + name + "\"");
    return it->second;
  }
  const std::map<std::string, Constraint>& constraints() const { return constraints_; }

  bool has_shape(const std::string& key) const { return shapes_.count(key) > 0; }
  const ShapeAttachment& shape(const std::string& key) const {
    auto it = shapes_.find(key);
    if (it == shapes_.end()) throw Error("unknown shape \"" + key + "\"");
    return it->second;
  }
  const std::map<std::string, ShapeAttachment>& shapes() const { return shapes_; }

  void set_expr(const Path& p, ModelValue v) { exprs_.insert_or_assign(p, std::move(v)); }
  void erase_expr(const Path& p) { exprs_.erase(p); }
  void set_constraint(const std::string& name, Constraint c) {
    constraints_.insert_or_assign(name, std::move(c));
  }
  void erase_constraint(const std::string& name) { constraints_.erase(name); }
  void set_shape(const std::string& key, ShapeAttachment s) {
    shapes_.insert_or_assign(key, std::move(s));
  }
  void erase_shape(const std::string& key) { shapes_.erase(key); }

  /// Structural identity of every stored expression, constraint and shape.
  bool operator==(const ArticulationModel& o) const {
    return exprs_ == o.exprs_ && constraints_ == o.constraints_ && shapes_ == o.shapes_;
  }

private:
  std::map<Path, ModelValue> exprs_;
  std::map<std::string, Constraint> constraints_;
  std::map<std::string, ShapeAttachment> shapes_;
};

namespace detail {

inline std::set<std::string> base_names(const std::set<Variable>& vars) {
  std::set<std::string> out;
  for (const auto& v : vars) out.insert(v.name);
  return out;
}

inline std::set<std::string> moved_bases(const ModelValue& v) {
  std::set<std::string> out = base_names(value_variables(v));
  auto add_specials = [&out](const ExtExpr& e) {
    for (const auto& [k, g] : e.special_entries()) out.insert(k.name);
  };
  if (std::holds_alternative<ExtExpr>(v)) add_specials(std::get<ExtExpr>(v));
  if (std::holds_alternative<MatrixExpr>(v))
    for (const auto& e : std::get<MatrixExpr>(v).entries()) add_specials(e);
  return out;
}

}  // namespace detail

/// Constraints sharing at least one variable with `vars`. Matching is on
/// exact variables; a position variable does not pull in velocity
/// constraints (see constraints_for_controlled).
inline std::vector<std::pair<std::string, Constraint>> constraints_for(
    const ArticulationModel& model, const std::set<Variable>& vars) {
  std::vector<std::pair<std::string, Constraint>> out;
  for (const auto& [name, c] : model.constraints()) {
    const std::set<Variable> cv = c.expr.variables();
    for (const auto& v : vars)
      if (cv.count(v)) {
        out.emplace_back(name, c);
        break;
      }
  }
  return out;
}

/// constraints_for with each query variable expanded to derivative orders
/// 0..max_order of its base name, so controllers commanding derivatives see
/// the corresponding constraints as well.
inline std::vector<std::pair<std::string, Constraint>> constraints_for_controlled(
    const ArticulationModel& model, const std::set<Variable>& position_vars, int max_order) {
  std::set<Variable> expanded;
  for (const auto& v : position_vars)
    for (int o = 0; o <= max_order; ++o) expanded.insert(Variable(v.name, o));
  return constraints_for(model, expanded);
}

/// Paths whose stored expression moves when any of `vars` changes. Matching
/// is by base name and includes extended-gradient entries, so a wheel
/// variable reports the base frame it drives even though the frame's
/// expression does not mention the wheel.
inline std::set<Path> parts_moved_by(const ArticulationModel& model,
                                     const std::set<Variable>& vars) {
  const std::set<std::string> query = detail::base_names(vars);
  std::set<Path> out;
  for (const auto& [path, value] : model.exprs()) {
    const std::set<std::string> moved = detail::moved_bases(value);
    for (const auto& name : query)
      if (moved.count(name)) {
        out.insert(path);
        break;
      }
  }
  return out;
}

}  // namespace kineverse
