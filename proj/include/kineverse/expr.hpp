#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kineverse/errors.hpp"
#include "kineverse/variable.hpp"

namespace kineverse {

enum class Op : uint8_t {
  Const,
  Var,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Pow,
  Sqrt,
  Abs,
  Min,
  Max,
  Sin,
  Cos,
  Tan,
  Asin,
  Acos,
  Atan2,
  Exp,
  Log,
  Sigmoid,
  // select_le(a, b, x, y) evaluates x when a <= b, else y. Used to express the
  // deterministic subgradients of abs/min/max as expressions.
  SelectLe,
};

class ScalarExpr;

namespace detail {

struct ExprNode {
  Op op = Op::Const;
  double value = 0.0;  // Op::Const payload
  Variable var;        // Op::Var payload
  std::vector<std::shared_ptr<const ExprNode>> args;
};

using NodePtr = std::shared_ptr<const ExprNode>;

inline double stable_sigmoid(double x) {
  const double xc = std::clamp(x, -500.0, 500.0);
  if (xc >= 0.0) return 1.0 / (1.0 + std::exp(-xc));
  const double e = std::exp(xc);
  return e / (1.0 + e);
}

/// Applies `op` to numeric operands, raising DomainError outside the domain.
inline double apply_op(Op op, const double* a, size_t n) {
  switch (op) {
    case Op::Add:
      return a[0] + a[1];
    case Op::Sub:
      return a[0] - a[1];
    case Op::Mul:
      return a[0] * a[1];
    case Op::Div:
      if (a[1] == 0.0) throw DomainError("division by zero");
      return a[0] / a[1];
    case Op::Neg:
      return -a[0];
    case Op::Pow: {
      if (a[0] == 0.0 && a[1] < 0.0) throw DomainError("pow: zero base with negative exponent");
      if (a[0] < 0.0 && a[1] != std::floor(a[1]))
        throw DomainError("pow: negative base with non-integer exponent");
      return std::pow(a[0], a[1]);
    }
    case Op::Sqrt:
      if (a[0] < 0.0) throw DomainError("sqrt of negative value");
      return std::sqrt(a[0]);
    case Op::Abs:
      return std::fabs(a[0]);
    case Op::Min:
      return a[0] <= a[1] ? a[0] : a[1];
    case Op::Max:
      return a[0] >= a[1] ? a[0] : a[1];
    case Op::Sin:
      return std::sin(a[0]);
    case Op::Cos:
      return std::cos(a[0]);
    case Op::Tan:
      return std::tan(a[0]);
    case Op::Asin:
      if (a[0] < -1.0 || a[0] > 1.0) throw DomainError("asin argument outside [-1, 1]");
      return std::asin(a[0]);
    case Op::Acos:
      if (a[0] < -1.0 || a[0] > 1.0) throw DomainError("acos argument outside [-1, 1]");
      return std::acos(a[0]);
    case Op::Atan2:
      return std::atan2(a[0], a[1]);
    case Op::Exp:
      return std::exp(a[0]);
    case Op::Log:
      if (a[0] <= 0.0) throw DomainError("log of non-positive value");
      return std::log(a[0]);
    case Op::Sigmoid:
      return stable_sigmoid(a[0]);
    case Op::SelectLe:
      return a[0] <= a[1] ? a[2] : a[3];
    case Op::Const:
    case Op::Var:
      break;
  }
  throw Error("apply_op: not an operator");
}

inline size_t op_arity(Op op) {
  switch (op) {
    case Op::Const:
    case Op::Var:
      return 0;
    case Op::Neg:
    case Op::Sqrt:
    case Op::Abs:
    case Op::Sin:
    case Op::Cos:
    case Op::Tan:
    case Op::Asin:
    case Op::Acos:
    case Op::Exp:
    case Op::Log:
    case Op::Sigmoid:
      return 1;
    case Op::SelectLe:
      return 4;
    default:
      return 2;
  }
}

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "c";
    case Op::Var: return "var";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Pow: return "pow";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::Min: return "min";
    case Op::Max: return "max";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Tan: return "tan";
    case Op::Asin: return "asin";
    case Op::Acos: return "acos";
    case Op::Atan2: return "atan2";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::SelectLe: return "select_le";
  }
  return "?";
}

}  // namespace detail

/// Immutable symbolic scalar expression. Construction simplifies eagerly, but
/// only by constant folding, 0/1 identity elimination and double negation, so
/// every ScalarExpr is already in canonical form.
class ScalarExpr {
public:
  ScalarExpr() : ScalarExpr(0.0) {}

  ScalarExpr(double value) {
    auto n = std::make_shared<detail::ExprNode>();
    n->op = Op::Const;
    n->value = value;
    node_ = std::move(n);
  }

  ScalarExpr(const Variable& v) {
    auto n = std::make_shared<detail::ExprNode>();
    n->op = Op::Var;
    n->var = v;
    node_ = std::move(n);
  }

  static ScalarExpr constant(double value) { return ScalarExpr(value); }
  static ScalarExpr variable(const Variable& v) { return ScalarExpr(v); }

  Op op() const { return node_->op; }
  bool is_constant() const { return node_->op == Op::Const; }
  bool is_constant(double v) const { return is_constant() && node_->value == v; }
  bool is_variable() const { return node_->op == Op::Var; }
  double constant_value() const {
    if (!is_constant()) throw Error("expression is not a constant");
    return node_->value;
  }
  const Variable& variable_id() const {
    if (!is_variable()) throw Error("expression is not a variable");
    return node_->var;
  }
  size_t arg_count() const { return node_->args.size(); }
  ScalarExpr arg(size_t i) const { return ScalarExpr(node_->args.at(i)); }

  const detail::ExprNode* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

  /// Set of variable leaves.
  std::set<Variable> variables() const {
    std::set<Variable> out;
    std::unordered_map<const detail::ExprNode*, bool> seen;
    collect_vars(node_.get(), out, seen);
    return out;
  }

  /// Full numeric evaluation. Every leaf variable must be assigned.
  double evaluate(const Assignment& q) const {
    std::unordered_map<const detail::ExprNode*, double> memo;
    return eval_node(node_.get(), q, memo);
  }

  /// Replaces the given variables by constants and folds the result.
  ScalarExpr substitute(const Assignment& partial) const {
    if (partial.empty()) return *this;
    std::unordered_map<const detail::ExprNode*, ScalarExpr> memo;
    return subst_node(node_, partial, memo);
  }

  /// Analytic partial derivative with respect to `v`.
  ScalarExpr diff(const Variable& v) const {
    std::unordered_map<const detail::ExprNode*, ScalarExpr> memo;
    return diff_node(node_, v, memo);
  }

  /// Structural equality of canonical forms.
  bool same_structure(const ScalarExpr& other) const {
    return nodes_equal(node_.get(), other.node_.get());
  }
  bool operator==(const ScalarExpr& other) const { return same_structure(other); }
  bool operator!=(const ScalarExpr& other) const { return !same_structure(other); }

  std::string to_string() const {
    std::ostringstream os;
    print(node_.get(), os);
    return os.str();
  }

  friend ScalarExpr make_expr(Op op, std::vector<ScalarExpr> args);

  // memo-sharing evaluation entry point, used by matrix evaluation
  static double eval_node(const detail::ExprNode* n, const Assignment& q,
                          std::unordered_map<const detail::ExprNode*, double>& memo) {
    if (n->op == Op::Const) return n->value;
    if (n->op == Op::Var) return q.at(n->var);
    auto it = memo.find(n);
    if (it != memo.end()) return it->second;
    double a[4] = {0, 0, 0, 0};
    for (size_t i = 0; i < n->args.size(); ++i) a[i] = eval_node(n->args[i].get(), q, memo);
    const double r = detail::apply_op(n->op, a, n->args.size());
    memo.emplace(n, r);
    return r;
  }

private:
  explicit ScalarExpr(detail::NodePtr node) : node_(std::move(node)) {}

  static void collect_vars(const detail::ExprNode* n, std::set<Variable>& out,
                           std::unordered_map<const detail::ExprNode*, bool>& seen) {
    if (seen.count(n)) return;
    seen.emplace(n, true);
    if (n->op == Op::Var) {
      out.insert(n->var);
      return;
    }
    for (const auto& a : n->args) collect_vars(a.get(), out, seen);
  }

  static ScalarExpr subst_node(const detail::NodePtr& n, const Assignment& partial,
                               std::unordered_map<const detail::ExprNode*, ScalarExpr>& memo) {
    if (n->op == Op::Const) return ScalarExpr(n);
    if (n->op == Op::Var) {
      if (partial.contains(n->var)) return ScalarExpr(partial.at(n->var));
      return ScalarExpr(n);
    }
    auto it = memo.find(n.get());
    if (it != memo.end()) return it->second;
    std::vector<ScalarExpr> args;
    args.reserve(n->args.size());
    bool changed = false;
    for (const auto& a : n->args) {
      args.push_back(subst_node(a, partial, memo));
      changed = changed || args.back().node_.get() != a.get();
    }
    ScalarExpr r = changed ? make_expr(n->op, std::move(args)) : ScalarExpr(n);
    memo.emplace(n.get(), r);
    return r;
  }

  static ScalarExpr diff_node(const detail::NodePtr& n, const Variable& v,
                              std::unordered_map<const detail::ExprNode*, ScalarExpr>& memo);

  static bool nodes_equal(const detail::ExprNode* a, const detail::ExprNode* b) {
    if (a == b) return true;
    if (a->op != b->op || a->args.size() != b->args.size()) return false;
    if (a->op == Op::Const) return a->value == b->value;
    if (a->op == Op::Var) return a->var == b->var;
    for (size_t i = 0; i < a->args.size(); ++i)
      if (!nodes_equal(a->args[i].get(), b->args[i].get())) return false;
    return true;
  }

  static void print(const detail::ExprNode* n, std::ostringstream& os) {
    switch (n->op) {
      case Op::Const:
        os << n->value;
        return;
      case Op::Var:
        os << n->var.text();
        return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Pow: {
        const char* sym = n->op == Op::Add   ? " + "
                          : n->op == Op::Sub ? " - "
                          : n->op == Op::Mul ? " * "
                          : n->op == Op::Div ? " / "
                                             : " ^ ";
        os << '(';
        print(n->args[0].get(), os);
        os << sym;
        print(n->args[1].get(), os);
        os << ')';
        return;
      }
      case Op::Neg:
        os << "(-";
        print(n->args[0].get(), os);
        os << ')';
        return;
      default: {
        os << detail::op_name(n->op) << '(';
        for (size_t i = 0; i < n->args.size(); ++i) {
          if (i) os << ", ";
          print(n->args[i].get(), os);
        }
        os << ')';
        return;
      }
    }
  }

  detail::NodePtr node_;
};

/// Canonicalizing node constructor: folds constant subtrees (when the fold is
/// domain-valid and finite), removes 0/1 identities and double negation.
inline ScalarExpr make_expr(Op op, std::vector<ScalarExpr> args) {
  if (op == Op::Const || op == Op::Var) throw Error("make_expr: leaf kinds take no operands");
  if (detail::op_arity(op) != args.size()) throw Error("make_expr: wrong operand count");

  bool all_const = true;
  for (const auto& a : args) all_const = all_const && a.is_constant();
  if (all_const) {
    double v[4] = {0, 0, 0, 0};
    for (size_t i = 0; i < args.size(); ++i) v[i] = args[i].constant_value();
    try {
      const double r = detail::apply_op(op, v, args.size());
      if (std::isfinite(r)) return ScalarExpr(r);
    } catch (const DomainError&) {
      // keep the node; evaluation reports the domain violation
    }
  }

  switch (op) {
    case Op::Add:
      if (args[0].is_constant(0.0)) return args[1];
      if (args[1].is_constant(0.0)) return args[0];
      break;
    case Op::Sub:
      if (args[1].is_constant(0.0)) return args[0];
      if (args[0].is_constant(0.0)) return make_expr(Op::Neg, {args[1]});
      break;
    case Op::Mul:
      if (args[0].is_constant(0.0) || args[1].is_constant(0.0)) return ScalarExpr(0.0);
      if (args[0].is_constant(1.0)) return args[1];
      if (args[1].is_constant(1.0)) return args[0];
      break;
    case Op::Div:
      if (args[1].is_constant(1.0)) return args[0];
      break;
    case Op::Pow:
      if (args[1].is_constant(1.0)) return args[0];
      if (args[1].is_constant(0.0)) return ScalarExpr(1.0);
      break;
    case Op::Neg:
      if (args[0].op() == Op::Neg) return args[0].arg(0);
      break;
    case Op::SelectLe:
      if (args[0].is_constant() && args[1].is_constant())
        return args[0].constant_value() <= args[1].constant_value() ? args[2] : args[3];
      break;
    default:
      break;
  }

  auto n = std::make_shared<detail::ExprNode>();
  n->op = op;
  n->args.reserve(args.size());
  for (auto& a : args) n->args.push_back(a.node_ptr());
  return ScalarExpr(detail::NodePtr(std::move(n)));
}

// operator sugar

inline ScalarExpr operator+(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Add, {a, b}); }
inline ScalarExpr operator-(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Sub, {a, b}); }
inline ScalarExpr operator*(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Mul, {a, b}); }
inline ScalarExpr operator/(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Div, {a, b}); }
inline ScalarExpr operator-(const ScalarExpr& a) { return make_expr(Op::Neg, {a}); }

inline ScalarExpr pow(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Pow, {a, b}); }
inline ScalarExpr sqrt(const ScalarExpr& a) { return make_expr(Op::Sqrt, {a}); }
inline ScalarExpr abs(const ScalarExpr& a) { return make_expr(Op::Abs, {a}); }
inline ScalarExpr min(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Min, {a, b}); }
inline ScalarExpr max(const ScalarExpr& a, const ScalarExpr& b) { return make_expr(Op::Max, {a, b}); }
inline ScalarExpr sin(const ScalarExpr& a) { return make_expr(Op::Sin, {a}); }
inline ScalarExpr cos(const ScalarExpr& a) { return make_expr(Op::Cos, {a}); }
inline ScalarExpr tan(const ScalarExpr& a) { return make_expr(Op::Tan, {a}); }
inline ScalarExpr asin(const ScalarExpr& a) { return make_expr(Op::Asin, {a}); }
inline ScalarExpr acos(const ScalarExpr& a) { return make_expr(Op::Acos, {a}); }
inline ScalarExpr atan2(const ScalarExpr& y, const ScalarExpr& x) { return make_expr(Op::Atan2, {y, x}); }
inline ScalarExpr exp(const ScalarExpr& a) { return make_expr(Op::Exp, {a}); }
inline ScalarExpr log(const ScalarExpr& a) { return make_expr(Op::Log, {a}); }
inline ScalarExpr sigmoid(const ScalarExpr& a) { return make_expr(Op::Sigmoid, {a}); }
inline ScalarExpr select_le(const ScalarExpr& a, const ScalarExpr& b, const ScalarExpr& x,
                            const ScalarExpr& y) {
  return make_expr(Op::SelectLe, {a, b, x, y});
}

/// Smooth "x below t" indicator with sharpness k: sigmoid(k * (t - x)).
inline ScalarExpr softstep_lt(const ScalarExpr& x, const ScalarExpr& t, const ScalarExpr& k = 100.0) {
  return sigmoid(k * (t - x));
}

/// Convenience for a position variable leaf.
inline ScalarExpr sym(const std::string& name, int order = 0) {
  return ScalarExpr(Variable(name, order));
}

/// Piecewise sign expression with sign(0) = 0, used as the derivative of abs.
inline ScalarExpr sign_expr(const ScalarExpr& u) {
  return select_le(u, 0.0, select_le(0.0, u, 0.0, -1.0), 1.0);
}

/// Partial derivative of a unary operator with respect to its argument.
inline ScalarExpr unary_partial(Op op, const ScalarExpr& u) {
  switch (op) {
    case Op::Neg: return ScalarExpr(-1.0);
    case Op::Sqrt: return ScalarExpr(1.0) / (ScalarExpr(2.0) * sqrt(u));
    case Op::Abs: return sign_expr(u);
    case Op::Sin: return cos(u);
    case Op::Cos: return -sin(u);
    case Op::Tan: return ScalarExpr(1.0) / (cos(u) * cos(u));
    case Op::Asin: return ScalarExpr(1.0) / sqrt(ScalarExpr(1.0) - u * u);
    case Op::Acos: return -(ScalarExpr(1.0) / sqrt(ScalarExpr(1.0) - u * u));
    case Op::Exp: return exp(u);
    case Op::Log: return ScalarExpr(1.0) / u;
    case Op::Sigmoid: return sigmoid(u) * (ScalarExpr(1.0) - sigmoid(u));
    default:
      throw Error("unary_partial: not a unary operator");
  }
}

inline ScalarExpr ScalarExpr::diff_node(const detail::NodePtr& n, const Variable& v,
                                        std::unordered_map<const detail::ExprNode*, ScalarExpr>& memo) {
  if (n->op == Op::Const) return ScalarExpr(0.0);
  if (n->op == Op::Var) return ScalarExpr(n->var == v ? 1.0 : 0.0);
  auto it = memo.find(n.get());
  if (it != memo.end()) return it->second;

  std::vector<ScalarExpr> a;
  a.reserve(n->args.size());
  for (const auto& c : n->args) a.emplace_back(ScalarExpr(c));
  std::vector<ScalarExpr> d;
  d.reserve(n->args.size());
  for (const auto& c : n->args) d.push_back(diff_node(c, v, memo));

  ScalarExpr r;
  switch (n->op) {
    case Op::Add: r = d[0] + d[1]; break;
    case Op::Sub: r = d[0] - d[1]; break;
    case Op::Mul: r = d[0] * a[1] + a[0] * d[1]; break;
    case Op::Div: r = (d[0] * a[1] - a[0] * d[1]) / (a[1] * a[1]); break;
    case Op::Neg: r = -d[0]; break;
    case Op::Pow:
      if (a[1].is_constant()) {
        const double c = a[1].constant_value();
        r = ScalarExpr(c) * pow(a[0], c - 1.0) * d[0];
      } else {
        r = pow(a[0], a[1]) * (d[1] * log(a[0]) + a[1] * d[0] / a[0]);
      }
      break;
    case Op::Min: r = select_le(a[0], a[1], d[0], d[1]); break;
    case Op::Max: r = select_le(a[1], a[0], d[0], d[1]); break;
    case Op::Atan2: r = (a[1] * d[0] - a[0] * d[1]) / (a[0] * a[0] + a[1] * a[1]); break;
    case Op::SelectLe: r = select_le(a[0], a[1], d[2], d[3]); break;
    default:
      r = unary_partial(n->op, a[0]) * d[0];
      break;
  }
  memo.emplace(n.get(), r);
  return r;
}

namespace detail {
inline ScalarExpr rebuild(const NodePtr& n, std::unordered_map<const ExprNode*, ScalarExpr>& memo) {
  if (n->op == Op::Const) return ScalarExpr(n->value);
  if (n->op == Op::Var) return ScalarExpr(n->var);
  auto it = memo.find(n.get());
  if (it != memo.end()) return it->second;
  std::vector<ScalarExpr> args;
  args.reserve(n->args.size());
  for (const auto& a : n->args) args.push_back(rebuild(a, memo));
  ScalarExpr r = make_expr(n->op, std::move(args));
  memo.emplace(n.get(), r);
  return r;
}
}  // namespace detail

/// Rebuilds through the canonicalizing constructors. Expressions built by this
/// library are always canonical, so this is idempotent.
inline ScalarExpr simplify(const ScalarExpr& e) {
  std::unordered_map<const detail::ExprNode*, ScalarExpr> memo;
  return detail::rebuild(e.node_ptr(), memo);
}

}  // namespace kineverse
