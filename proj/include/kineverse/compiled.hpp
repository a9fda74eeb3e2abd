#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "kineverse/matrix_expr.hpp"

namespace kineverse {

/// Flat-tape evaluator for a batch of scalar expressions over a fixed input
/// variable order. Shared subtrees are emitted once. Evaluation matches the
/// tree interpreter, including its domain errors, and is re-entrant (each call
/// uses its own register buffer).
class CompiledExpr {
public:
  CompiledExpr() = default;

  CompiledExpr(const std::vector<ScalarExpr>& outputs, const std::vector<Variable>& inputs) {
    n_inputs_ = inputs.size();
    std::unordered_map<const detail::ExprNode*, int32_t> reg_of;
    std::map<Variable, int32_t> var_reg;
    for (size_t i = 0; i < inputs.size(); ++i) var_reg.emplace(inputs[i], int32_t(i));
    n_regs_ = int32_t(inputs.size());
    for (const auto& e : outputs) out_regs_.push_back(emit(e.node(), var_reg, reg_of));
  }

  CompiledExpr(const MatrixExpr& m, const std::vector<Variable>& inputs)
      : CompiledExpr(scalar_entries(m), inputs) {}

  size_t input_count() const { return n_inputs_; }
  size_t output_count() const { return out_regs_.size(); }
  size_t register_count() const { return size_t(n_regs_); }

  void run(std::span<const double> in, std::span<double> out) const {
    if (in.size() != n_inputs_) throw Error("compiled evaluator: wrong input count");
    if (out.size() != out_regs_.size()) throw Error("compiled evaluator: wrong output count");
    std::vector<double> regs(static_cast<size_t>(n_regs_));
    std::copy(in.begin(), in.end(), regs.begin());
    for (const auto& ins : code_) {
      if (ins.op == Op::Const) {
        regs[size_t(ins.dst)] = consts_[size_t(ins.a)];
        continue;
      }
      double a[4] = {0, 0, 0, 0};
      const int32_t idx[4] = {ins.a, ins.b, ins.c, ins.d};
      const size_t n = detail::op_arity(ins.op);
      for (size_t i = 0; i < n; ++i) a[i] = regs[size_t(idx[i])];
      regs[size_t(ins.dst)] = detail::apply_op(ins.op, a, n);
    }
    for (size_t i = 0; i < out_regs_.size(); ++i) out[i] = regs[size_t(out_regs_[i])];
  }

  std::vector<double> operator()(std::span<const double> in) const {
    std::vector<double> out(out_regs_.size());
    run(in, out);
    return out;
  }

private:
  struct Instr {
    Op op;
    int32_t dst = 0;
    int32_t a = 0, b = 0, c = 0, d = 0;
  };

  static std::vector<ScalarExpr> scalar_entries(const MatrixExpr& m) {
    std::vector<ScalarExpr> out;
    out.reserve(m.entries().size());
    for (const auto& e : m.entries()) out.push_back(e.expr());
    return out;
  }

  int32_t emit(const detail::ExprNode* n, const std::map<Variable, int32_t>& var_reg,
               std::unordered_map<const detail::ExprNode*, int32_t>& reg_of) {
    auto it = reg_of.find(n);
    if (it != reg_of.end()) return it->second;
    int32_t reg;
    if (n->op == Op::Var) {
      auto v = var_reg.find(n->var);
      if (v == var_reg.end()) throw UncoveredVariableError(n->var.text());
      reg = v->second;
    } else if (n->op == Op::Const) {
      reg = n_regs_++;
      consts_.push_back(n->value);
      code_.push_back({Op::Const, reg, int32_t(consts_.size() - 1), 0, 0, 0});
    } else {
      int32_t args[4] = {0, 0, 0, 0};
      for (size_t i = 0; i < n->args.size(); ++i) args[i] = emit(n->args[i].get(), var_reg, reg_of);
      reg = n_regs_++;
      code_.push_back({n->op, reg, args[0], args[1], args[2], args[3]});
    }
    reg_of.emplace(n, reg);
    return reg;
  }

  size_t n_inputs_ = 0;
  int32_t n_regs_ = 0;
  std::vector<Instr> code_;
  std::vector<double> consts_;
  std::vector<int32_t> out_regs_;
};

}  // namespace kineverse
