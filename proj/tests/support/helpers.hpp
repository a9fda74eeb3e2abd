#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kineverse/expr.hpp"

namespace kvtest {

inline std::string fixture_path(const std::string& name) {
  return std::string(KV_FIXTURE_DIR) + "/" + name;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline std::string read_fixture(const std::string& name) {
  return read_file(fixture_path(name));
}

using kineverse::Assignment;
using kineverse::ScalarExpr;
using kineverse::Variable;

/// Central finite difference, the independent oracle for analytic derivatives.
inline double fd_diff(const ScalarExpr& e, const Variable& v, const Assignment& at,
                      double h = 1e-6) {
  Assignment lo = at, hi = at;
  lo.set(v, at.at(v) - h);
  hi.set(v, at.at(v) + h);
  return (e.evaluate(hi) - e.evaluate(lo)) / (2.0 * h);
}

/// Random smooth expression over the given variables. Compositions that could
/// leave an operator's domain are guarded (shifted into safe ranges), so the
/// result is defined and differentiable on all of R^n.
class RandomExprGen {
public:
  explicit RandomExprGen(uint64_t seed, std::vector<Variable> vars)
      : rng_(seed), vars_(std::move(vars)) {}

  ScalarExpr sample(int depth = 5) { return gen(depth); }

  Assignment sample_point(double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Assignment a;
    for (const auto& v : vars_) a.set(v, d(rng_));
    return a;
  }

private:
  ScalarExpr leaf() {
    std::uniform_int_distribution<int> pick(0, int(vars_.size()));
    const int i = pick(rng_);
    if (i == int(vars_.size())) {
      std::uniform_real_distribution<double> c(-2.0, 2.0);
      return ScalarExpr(c(rng_));
    }
    return ScalarExpr(vars_[size_t(i)]);
  }

  ScalarExpr gen(int depth) {
    using namespace kineverse;
    if (depth <= 0) return leaf();
    std::uniform_int_distribution<int> pick(0, 13);
    ScalarExpr u = gen(depth - 1);
    switch (pick(rng_)) {
      case 0: return u + gen(depth - 1);
      case 1: return u - gen(depth - 1);
      case 2: return u * gen(depth - 1);
      case 3: {
        // keep the denominator away from zero
        ScalarExpr w = gen(depth - 1);
        return u / (w * w + 0.5);
      }
      case 4: return -u;
      case 5: return sin(u);
      case 6: return cos(u);
      case 7: return sigmoid(u);
      case 8: {
        // bounded argument keeps exp from overflowing
        return exp(sin(u));
      }
      case 9: return log(u * u + 0.5);
      case 10: return sqrt(u * u + 0.5);
      case 11: {
        std::uniform_int_distribution<int> e(2, 3);
        return pow(u, double(e(rng_)));
      }
      case 12: return atan2(u, gen(depth - 1) * gen(depth - 1) + 0.5);
      default: return tan(sigmoid(u));  // sigmoid keeps tan away from poles
    }
  }

  std::mt19937_64 rng_;
  std::vector<Variable> vars_;
};

/// Numeric agreement of two expressions at `n` random points.
inline bool semantically_equal(const ScalarExpr& a, const ScalarExpr& b, uint64_t seed,
                               int n = 32, double tol = 1e-9) {
  std::set<Variable> vars = a.variables();
  for (const auto& v : b.variables()) vars.insert(v);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int i = 0; i < n; ++i) {
    Assignment at;
    for (const auto& v : vars) at.set(v, d(rng));
    if (std::fabs(a.evaluate(at) - b.evaluate(at)) > tol) return false;
  }
  return true;
}

}  // namespace kvtest
