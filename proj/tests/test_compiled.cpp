#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <thread>

#include "kineverse/compiled.hpp"
#include "kineverse/matrix_expr.hpp"
#include "support/helpers.hpp"

using namespace kineverse;

TEST_CASE("compiled programs agree with tree evaluation") {
  std::mt19937_64 rng(11);
  std::vector<Variable> vars{Variable("a"), Variable("b"), Variable("c")};
  int compared = 0;
  for (int i = 0; i < 220; ++i) {
    kvtest::RandomExprGen gen(rng(), vars);
    ScalarExpr e = gen.sample(5);
    CompiledExpr prog({e}, vars);
    REQUIRE(prog.input_count() == 3);
    REQUIRE(prog.output_count() == 1);
    for (int k = 0; k < 4; ++k) {
      Assignment q = gen.sample_point();
      double in[3] = {q.at(vars[0]), q.at(vars[1]), q.at(vars[2])};
      double out[1];
      prog.run(in, out);
      double want = e.evaluate(q);
      CHECK(out[0] == Catch::Approx(want).margin(1e-12).epsilon(1e-12));
      ++compared;
    }
  }
  CHECK(compared >= 800);
}

TEST_CASE("shared subtrees are computed once") {
  ScalarExpr u = sin(sym("a")) + sym("b");
  ScalarExpr e = u * u + u;  // same node reused three times
  CompiledExpr prog({e}, {Variable("a"), Variable("b")});
  // 2 inputs, sin, +, *, + is six registers if the repeated subtree is shared
  CHECK(prog.register_count() <= 6);
  double in[2] = {0.3, 0.7};
  double out[1];
  prog.run(in, out);
  const double uv = std::sin(0.3) + 0.7;
  CHECK(out[0] == Catch::Approx(uv * uv + uv).margin(1e-14));
}

TEST_CASE("compiling a matrix column flattens row-major") {
  const Variable a("a"), b("b");
  MatrixExpr t = rotation(Eigen::Vector3d::UnitZ(), ExtExpr(ScalarExpr(a))) *
                 translation(0.0, 0.0, ExtExpr(ScalarExpr(b)));
  CompiledExpr prog(t, {a, b});
  REQUIRE(prog.output_count() == 16);
  double in[2] = {M_PI, 2.0};
  std::vector<double> out(16);
  prog.run(in, out);
  Eigen::MatrixXd want = t.evaluate({{a, M_PI}, {b, 2.0}});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(out[size_t(i) * 4 + j] == Catch::Approx(want(i, j)).margin(1e-12));
}

TEST_CASE("uncovered variables are rejected at compile time") {
  ScalarExpr e = sym("a") + sym("zeta");
  CHECK_THROWS_AS(CompiledExpr({e}, {Variable("a")}), UncoveredVariableError);
  try {
    CompiledExpr({e}, {Variable("a")});
  } catch (const UncoveredVariableError& err) {
    CHECK(std::string(err.what()).find("zeta") != std::string::npos);
  }
}

TEST_CASE("domain errors match the interpreter") {
  ScalarExpr e = sqrt(sym("a"));
  CompiledExpr prog({e}, {Variable("a")});
  double in[1] = {-1.0};
  double out[1];
  CHECK_THROWS_AS(prog.run(in, out), DomainError);
}

TEST_CASE("a compiled program is re-entrant") {
  ScalarExpr e = exp(sin(sym("a"))) * sym("a");
  CompiledExpr prog({e}, {Variable("a")});
  std::vector<std::thread> workers;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&prog, &mismatches, t] {
      for (int i = 0; i < 2000; ++i) {
        const double x = 0.1 * t + 1e-4 * i;
        double out[1];
        double in[1] = {x};
        prog.run(in, out);
        if (std::abs(out[0] - std::exp(std::sin(x)) * x) > 1e-12) ++mismatches;
      }
    });
  }
  for (auto& w : workers) w.join();
  CHECK(mismatches.load() == 0);
}
