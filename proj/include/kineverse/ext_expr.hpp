#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kineverse/expr.hpp"

namespace kineverse {

using ExtGradient = std::map<Variable, ScalarExpr>;

/// Scalar expression paired with an extended gradient. The gradient maps
/// derivative variables (order >= 1) to expressions. Entries for variables of
/// the expression default to the analytic partial derivative; entries may be
/// overridden, and entries for variables that do not appear in the expression
/// at all may be added. Overrides and extras survive arithmetic: they are
/// propagated by the differentiation laws of each operator, so a gradient
/// never silently reverts to the analytic derivative.
class ExtExpr {
public:
  ExtExpr() : expr_(0.0) {}
  ExtExpr(double c) : expr_(c) {}
  ExtExpr(const Variable& v) : expr_(v) {}
  ExtExpr(ScalarExpr e) : expr_(std::move(e)) {}

  ExtExpr(ScalarExpr e, ExtGradient overrides_and_extras)
      : expr_(std::move(e)), special_(std::move(overrides_and_extras)) {
    for (const auto& [k, g] : special_)
      if (k.order < 1)
        throw Error("extended gradient key must be a derivative variable: " + k.text());
  }

  const ScalarExpr& expr() const { return expr_; }

  /// Only the overridden/extra entries; analytic entries are derived on demand.
  const ExtGradient& special_entries() const { return special_; }

  bool has_special() const { return !special_.empty(); }
  bool is_special(const Variable& key) const { return special_.count(key) != 0; }

  /// All keys carrying a (possibly zero-valued) gradient entry: the derivative
  /// of every expression variable, plus every special key.
  std::set<Variable> gradient_keys() const {
    std::set<Variable> keys;
    for (const auto& v : expr_.variables()) keys.insert(v.derivative());
    for (const auto& [k, g] : special_) keys.insert(k);
    return keys;
  }

  /// Gradient entry for a derivative key; zero when the key is absent.
  ScalarExpr gradient_entry(const Variable& key) const {
    auto it = special_.find(key);
    if (it != special_.end()) return it->second;
    if (key.order >= 1) {
      Variable base(key.name, key.order - 1);
      auto vars = expr_.variables();
      if (vars.count(base)) return expr_.diff(base);
    }
    return ScalarExpr(0.0);
  }

  /// Materialized full gradient map.
  ExtGradient gradient() const {
    ExtGradient g;
    for (const auto& k : gradient_keys()) g.emplace(k, gradient_entry(k));
    return g;
  }

  ExtExpr substitute(const Assignment& partial) const {
    ExtGradient s;
    for (const auto& [k, g] : special_) s.emplace(k, g.substitute(partial));
    return ExtExpr(expr_.substitute(partial), std::move(s));
  }

  double evaluate(const Assignment& q) const { return expr_.evaluate(q); }

  bool operator==(const ExtExpr& other) const {
    if (expr_ != other.expr_) return false;
    if (special_.size() != other.special_.size()) return false;
    auto it = other.special_.begin();
    for (const auto& [k, g] : special_) {
      if (k != it->first || g != it->second) return false;
      ++it;
    }
    return true;
  }

private:
  ScalarExpr expr_;
  ExtGradient special_;
};

/// Lift with explicit analytic gradient view (identical to ExtExpr(e)).
inline ExtExpr lift(const ScalarExpr& e) { return ExtExpr(e); }

namespace detail {

/// Gradient propagation for one derivative key through a binary operator.
inline ScalarExpr binary_grad(Op op, const ScalarExpr& u, const ScalarExpr& w,
                              const ScalarExpr& gu, const ScalarExpr& gw) {
  switch (op) {
    case Op::Add: return gu + gw;
    case Op::Sub: return gu - gw;
    case Op::Mul: return w * gu + u * gw;
    case Op::Div: return (gu * w - u * gw) / (w * w);
    case Op::Pow:
      if (w.is_constant()) {
        const double c = w.constant_value();
        return ScalarExpr(c) * pow(u, c - 1.0) * gu;
      }
      return pow(u, w) * (gw * log(u) + w * gu / u);
    case Op::Min: return select_le(u, w, gu, gw);
    case Op::Max: return select_le(w, u, gu, gw);
    case Op::Atan2: return (w * gu - u * gw) / (u * u + w * w);
    default:
      throw Error("binary_grad: not a binary operator");
  }
}

}  // namespace detail

inline ExtExpr ext_binary(Op op, const ExtExpr& a, const ExtExpr& b) {
  ScalarExpr expr = make_expr(op, {a.expr(), b.expr()});
  ExtGradient special;
  std::set<Variable> keys;
  for (const auto& [k, g] : a.special_entries()) keys.insert(k);
  for (const auto& [k, g] : b.special_entries()) keys.insert(k);
  for (const auto& k : keys)
    special.emplace(k, detail::binary_grad(op, a.expr(), b.expr(), a.gradient_entry(k),
                                           b.gradient_entry(k)));
  return ExtExpr(std::move(expr), std::move(special));
}

inline ExtExpr ext_unary(Op op, const ExtExpr& a) {
  ScalarExpr expr = make_expr(op, {a.expr()});
  ExtGradient special;
  if (a.has_special()) {
    ScalarExpr outer = unary_partial(op, a.expr());
    for (const auto& [k, g] : a.special_entries()) special.emplace(k, outer * g);
  }
  return ExtExpr(std::move(expr), std::move(special));
}

inline ExtExpr operator+(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Add, a, b); }
inline ExtExpr operator-(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Sub, a, b); }
inline ExtExpr operator*(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Mul, a, b); }
inline ExtExpr operator/(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Div, a, b); }
inline ExtExpr operator-(const ExtExpr& a) { return ext_unary(Op::Neg, a); }

inline ExtExpr pow(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Pow, a, b); }
inline ExtExpr min(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Min, a, b); }
inline ExtExpr max(const ExtExpr& a, const ExtExpr& b) { return ext_binary(Op::Max, a, b); }
inline ExtExpr atan2(const ExtExpr& y, const ExtExpr& x) { return ext_binary(Op::Atan2, y, x); }
inline ExtExpr sqrt(const ExtExpr& a) { return ext_unary(Op::Sqrt, a); }
inline ExtExpr abs(const ExtExpr& a) { return ext_unary(Op::Abs, a); }
inline ExtExpr sin(const ExtExpr& a) { return ext_unary(Op::Sin, a); }
inline ExtExpr cos(const ExtExpr& a) { return ext_unary(Op::Cos, a); }
inline ExtExpr tan(const ExtExpr& a) { return ext_unary(Op::Tan, a); }
inline ExtExpr asin(const ExtExpr& a) { return ext_unary(Op::Asin, a); }
inline ExtExpr acos(const ExtExpr& a) { return ext_unary(Op::Acos, a); }
inline ExtExpr exp(const ExtExpr& a) { return ext_unary(Op::Exp, a); }
inline ExtExpr log(const ExtExpr& a) { return ext_unary(Op::Log, a); }
inline ExtExpr sigmoid(const ExtExpr& a) { return ext_unary(Op::Sigmoid, a); }

}  // namespace kineverse
