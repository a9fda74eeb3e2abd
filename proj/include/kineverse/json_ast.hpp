#pragma once

#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "kineverse/matrix_expr.hpp"

namespace kineverse {

using Json = nlohmann::json;

/// A model entry: plain scalar, scalar with extended gradient, or matrix.
using ModelValue = std::variant<ScalarExpr, ExtExpr, MatrixExpr>;

// JSON encoding
//   scalar node   {"op": "mul", "args": [...]}
//   variable leaf {"var": "a'"}     (apostrophes encode the derivative order)
//   constant leaf {"c": 3.5}
//   ext wrapper   {"expr": <node>, "grad": {"b'": <node>, ...}}  (grad lists
//                 only overrides/extras; analytic entries are implicit)
//   matrix        {"rows": 4, "cols": 4, "entries": [<node or ext>, ...]}

inline Json to_json(const ScalarExpr& e) {
  if (e.is_constant()) return Json{{"c", e.constant_value()}};
  if (e.is_variable()) return Json{{"var", e.variable_id().text()}};
  Json args = Json::array();
  for (size_t i = 0; i < e.arg_count(); ++i) args.push_back(to_json(e.arg(i)));
  return Json{{"op", detail::op_name(e.op())}, {"args", std::move(args)}};
}

inline Json to_json(const ExtExpr& e) {
  Json grad = Json::object();
  for (const auto& [k, g] : e.special_entries()) grad[k.text()] = to_json(g);
  return Json{{"expr", to_json(e.expr())}, {"grad", std::move(grad)}};
}

inline Json to_json(const MatrixExpr& m) {
  Json entries = Json::array();
  for (const auto& e : m.entries())
    entries.push_back(e.has_special() ? to_json(e) : to_json(e.expr()));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"entries", std::move(entries)}};
}

inline Json to_json(const ModelValue& v) {
  return std::visit([](const auto& x) { return to_json(x); }, v);
}

namespace detail {

inline Op op_from_name(const std::string& name, const std::string& where) {
  static const std::map<std::string, Op> table = {
      {"add", Op::Add},   {"sub", Op::Sub},   {"mul", Op::Mul},       {"div", Op::Div},
      {"neg", Op::Neg},   {"pow", Op::Pow},   {"sqrt", Op::Sqrt},     {"abs", Op::Abs},
      {"min", Op::Min},   {"max", Op::Max},   {"sin", Op::Sin},       {"cos", Op::Cos},
      {"tan", Op::Tan},   {"asin", Op::Asin}, {"acos", Op::Acos},     {"atan2", Op::Atan2},
      {"exp", Op::Exp},   {"log", Op::Log},   {"sigmoid", Op::Sigmoid},
      {"select_le", Op::SelectLe}};
  auto it = table.find(name);
  if (it == table.end()) throw FormatError(where + ": unknown op \"" + name + "\"");
  return it->second;
}

}  // namespace detail

inline ScalarExpr scalar_from_json(const Json& j, const std::string& where = "$") {
  if (!j.is_object()) throw FormatError(where + ": expression node must be a JSON object");
  if (j.contains("c")) {
    if (!j.at("c").is_number()) throw FormatError(where + ".c: must be a number");
    return ScalarExpr(j.at("c").get<double>());
  }
  if (j.contains("var")) {
    if (!j.at("var").is_string()) throw FormatError(where + ".var: must be a string");
    try {
      return ScalarExpr(Variable::parse(j.at("var").get<std::string>()));
    } catch (const FormatError& e) {
      throw FormatError(where + ".var: " + e.what());
    }
  }
  if (j.contains("op")) {
    if (!j.at("op").is_string()) throw FormatError(where + ".op: must be a string");
    const Op op = detail::op_from_name(j.at("op").get<std::string>(), where + ".op");
    if (!j.contains("args") || !j.at("args").is_array())
      throw FormatError(where + ".args: missing or not an array");
    const auto& jargs = j.at("args");
    if (jargs.size() != detail::op_arity(op))
      throw FormatError(where + ".args: wrong operand count for " + detail::op_name(op));
    std::vector<ScalarExpr> args;
    args.reserve(jargs.size());
    for (size_t i = 0; i < jargs.size(); ++i)
      args.push_back(scalar_from_json(jargs[i], where + ".args[" + std::to_string(i) + "]"));
    return make_expr(op, std::move(args));
  }
  throw FormatError(where + ": expression node needs \"op\", \"var\" or \"c\"");
}

inline ExtExpr ext_from_json(const Json& j, const std::string& where = "$") {
  if (!j.is_object() || !j.contains("expr"))
    throw FormatError(where + ": extended expression needs \"expr\"");
  ScalarExpr e = scalar_from_json(j.at("expr"), where + ".expr");
  ExtGradient special;
  if (j.contains("grad")) {
    if (!j.at("grad").is_object()) throw FormatError(where + ".grad: must be an object");
    for (const auto& [key, val] : j.at("grad").items()) {
      Variable v;
      try {
        v = Variable::parse(key);
      } catch (const FormatError& err) {
        throw FormatError(where + ".grad: " + err.what());
      }
      if (v.order < 1)
        throw FormatError(where + ".grad: key \"" + key + "\" is not a derivative variable");
      special.emplace(v, scalar_from_json(val, where + ".grad[\"" + key + "\"]"));
    }
  }
  return ExtExpr(std::move(e), std::move(special));
}

inline MatrixExpr matrix_from_json(const Json& j, const std::string& where = "$") {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("entries"))
    throw FormatError(where + ": matrix needs \"rows\", \"cols\" and \"entries\"");
  if (!j.at("rows").is_number_integer() || !j.at("cols").is_number_integer())
    throw FormatError(where + ": rows/cols must be integers");
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto& jents = j.at("entries");
  if (!jents.is_array() || jents.size() != size_t(rows) * size_t(cols))
    throw FormatError(where + ".entries: must be an array of rows*cols entries");
  std::vector<ExtExpr> entries;
  entries.reserve(jents.size());
  for (size_t i = 0; i < jents.size(); ++i) {
    const std::string ew = where + ".entries[" + std::to_string(i) + "]";
    if (jents[i].is_object() && jents[i].contains("expr"))
      entries.push_back(ext_from_json(jents[i], ew));
    else
      entries.push_back(ExtExpr(scalar_from_json(jents[i], ew)));
  }
  return MatrixExpr(rows, cols, std::move(entries));
}

inline ModelValue value_from_json(const Json& j, const std::string& where = "$") {
  if (j.is_object() && j.contains("rows")) return matrix_from_json(j, where);
  if (j.is_object() && j.contains("expr")) return ext_from_json(j, where);
  return scalar_from_json(j, where);
}

inline Eigen::MatrixXd value_evaluate(const ModelValue& v, const Assignment& q) {
  if (std::holds_alternative<MatrixExpr>(v)) return std::get<MatrixExpr>(v).evaluate(q);
  Eigen::MatrixXd m(1, 1);
  if (std::holds_alternative<ScalarExpr>(v))
    m(0, 0) = std::get<ScalarExpr>(v).evaluate(q);
  else
    m(0, 0) = std::get<ExtExpr>(v).evaluate(q);
  return m;
}

inline std::set<Variable> value_variables(const ModelValue& v) {
  if (std::holds_alternative<MatrixExpr>(v)) return std::get<MatrixExpr>(v).variables();
  if (std::holds_alternative<ScalarExpr>(v)) return std::get<ScalarExpr>(v).variables();
  return std::get<ExtExpr>(v).expr().variables();
}

}  // namespace kineverse
