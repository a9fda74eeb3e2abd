#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kineverse/ops.hpp"
#include "support/helpers.hpp"

using namespace kineverse;

namespace {

Operation make_op(const std::string& kind, Json args) {
  return Operation{kind, std::move(args)};
}

Operation create_body_op(const std::string& name) {
  return make_op("create_body", {{"name", name}});
}

Json constant_translation_ast(double x, double y, double z) {
  return to_json(translation(ExtExpr(x), ExtExpr(y), ExtExpr(z)));
}

Operation revolute_op(const std::string& parent, const std::string& child,
                      const std::string& var, Json extra = Json::object()) {
  Json args{{"kind", "revolute"},
            {"parent", parent},
            {"child", child},
            {"var", var},
            {"axis", {0.0, 0.0, 1.0}},
            {"limits", {-3.0, 3.0}},
            {"vel_limit", 1.0}};
  args.update(extra);
  return make_op("connect_joint", args);
}

}  // namespace

TEST_CASE("create_body places a frame, optionally under a parent pose") {
  OperationHistory h;
  h.apply_operation("world", create_body_op("world"));
  CHECK(h.model().transform(Path("world")).evaluate({}) == Eigen::Matrix4d::Identity());

  Json args{{"name", "shelf"}, {"parent_pose", constant_translation_ast(1.0, 2.0, 3.0)}};
  h.apply_operation("shelf", make_op("create_body", args));
  Eigen::Matrix4d m = h.model().transform(Path("shelf")).evaluate({});
  CHECK(m(0, 3) == 1.0);
  CHECK(m(2, 3) == 3.0);

  // a path string copies the referenced frame's pose expression
  h.apply_operation("shelf2", make_op("create_body", Json{{"name", "shelf2"},
                                                          {"parent_pose", "shelf"}}));
  CHECK(h.model().transform(Path("shelf2")) == h.model().transform(Path("shelf")));

  // occupied target path
  CHECK_THROWS_AS(h.apply_operation("again", create_body_op("world")), Error);
  // reused tag
  CHECK_THROWS_AS(h.apply_operation("world", create_body_op("elsewhere")), DuplicateTagError);
  CHECK(h.size() == 3);
}

TEST_CASE("fixed joints compose parent and origin exactly") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("mount", make_op("connect_joint",
                                     Json{{"kind", "fixed"},
                                          {"parent", "base"},
                                          {"child", "base.plate"},
                                          {"origin", constant_translation_ast(0.0, 0.0, 0.4)}}));

  const MatrixExpr& plate = h.model().transform(Path("base.plate"));
  Eigen::Matrix4d expect = Eigen::Matrix4d::Identity();
  expect(2, 3) = 0.4;
  CHECK((plate.evaluate({}) - expect).norm() == 0.0);
  CHECK(plate.variables().empty());
}

TEST_CASE("prismatic joints slide along their normalized axis") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("slide", make_op("connect_joint", Json{{"kind", "prismatic"},
                                                           {"parent", "base"},
                                                           {"child", "base.carriage"},
                                                           {"var", "s"},
                                                           {"axis", {0.0, 0.0, 2.0}},
                                                           {"limits", {0.0, 0.5}}}));

  const MatrixExpr& fk = h.model().transform(Path("base.carriage"));
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> d(0.0, 0.5);
  for (int i = 0; i < 10; ++i) {
    const double s = d(rng);
    Assignment at;
    at.set(Variable("s"), s);
    Eigen::Matrix4d expect = Eigen::Matrix4d::Identity();
    expect(2, 3) = s;  // axis [0,0,2] normalizes to z
    CHECK((fk.evaluate(at) - expect).norm() < 1e-15);
  }
}

TEST_CASE("moving joints record position and velocity constraints") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("j1", make_op("connect_joint", Json{{"kind", "revolute"},
                                                        {"parent", "base"},
                                                        {"child", "base.l1"},
                                                        {"var", "q1"},
                                                        {"axis", {0.0, 0.0, 1.0}},
                                                        {"limits", {0.0, 1.5}},
                                                        {"vel_limit", 1.0}}));

  const Variable q1("q1");
  const auto pos = constraints_for(h.model(), {q1});
  REQUIRE(pos.size() == 1);
  CHECK(pos[0].first == "j1/pos");
  Assignment none;
  CHECK(pos[0].second.lb.evaluate(none) == 0.0);
  CHECK(pos[0].second.ub.evaluate(none) == 1.5);

  const auto vel = constraints_for(h.model(), {q1.derivative()});
  REQUIRE(vel.size() == 1);
  CHECK(vel[0].first == "j1/vel");
  CHECK(vel[0].second.lb.evaluate(none) == -1.0);
  CHECK(vel[0].second.ub.evaluate(none) == 1.0);

  CHECK(constraints_for_controlled(h.model(), {q1}, 1).size() == 2);
}

TEST_CASE("moving joints without limits are rejected unless continuous") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));

  Json bare{{"kind", "revolute"},
            {"parent", "base"},
            {"child", "base.l1"},
            {"var", "q1"},
            {"axis", {0.0, 0.0, 1.0}}};
  try {
    h.apply_operation("j1", make_op("connect_joint", bare));
    FAIL("expected MissingLimitsError");
  } catch (const MissingLimitsError& e) {
    CHECK(e.joint == "q1");
    CHECK(std::string(e.what()).find("operation \"j1\"") != std::string::npos);
  }
  // the failed edit left nothing behind
  CHECK(h.size() == 1);
  CHECK_FALSE(h.model().has_expr(Path("base.l1")));

  Json cont = bare;
  cont["kind"] = "continuous";
  h.apply_operation("j1", make_op("connect_joint", cont));
  CHECK(h.model().has_expr(Path("base.l1")));
  CHECK(h.model().constraints().empty());
}

TEST_CASE("a revolute chain matches the hand-composed product") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("j1", revolute_op("base", "base.l1", "q1"));
  h.apply_operation("j2", revolute_op("base.l1", "base.l1.l2", "q2",
                                      Json{{"origin", constant_translation_ast(0.45, 0, 0)}}));
  h.apply_operation("j3", revolute_op("base.l1.l2", "base.l1.l2.l3", "q3",
                                      Json{{"origin", constant_translation_ast(0.45, 0, 0)}}));
  h.apply_operation("ee", make_op("connect_joint",
                                  Json{{"kind", "fixed"},
                                       {"parent", "base.l1.l2.l3"},
                                       {"child", "base.l1.l2.l3.ee"},
                                       {"origin", constant_translation_ast(0.2, 0, 0)}}));

  const MatrixExpr& fk = h.model().transform(Path("base.l1.l2.l3.ee"));
  CHECK(fk.variables() == std::set<Variable>{Variable("q1"), Variable("q2"), Variable("q3")});

  auto rz = [](double a) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 0) = std::cos(a), m(0, 1) = -std::sin(a);
    m(1, 0) = std::sin(a), m(1, 1) = std::cos(a);
    return m;
  };
  auto tx = [](double x) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 3) = x;
    return m;
  };

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const double q1 = d(rng), q2 = d(rng), q3 = d(rng);
    Assignment at;
    at.set(Variable("q1"), q1);
    at.set(Variable("q2"), q2);
    at.set(Variable("q3"), q3);
    const Eigen::Matrix4d expect = rz(q1) * tx(0.45) * rz(q2) * tx(0.45) * rz(q3) * tx(0.2);
    CHECK((fk.evaluate(at) - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("mimic joints follow their target with no variable of their own") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("j1", revolute_op("base", "base.p1", "q1", Json{{"limits", {0.0, 1.57}}}));
  h.apply_operation("j2", make_op("connect_joint",
                                  Json{{"kind", "revolute"},
                                       {"parent", "base.p1"},
                                       {"child", "base.p1.p2"},
                                       {"origin", constant_translation_ast(0.5, 0, 0)},
                                       {"axis", {0.0, 0.0, 1.0}},
                                       {"mimic_of", "q1"},
                                       {"multiplier", -2.0},
                                       {"offset", 0.1}}));

  const MatrixExpr& fk = h.model().transform(Path("base.p1.p2"));
  CHECK(fk.variables() == std::set<Variable>{Variable("q1")});
  // the mimic stored no own constraints
  for (const auto& [name, c] : h.model().constraints()) CHECK(name.rfind("j2/", 0) != 0);

  // oracle: an explicit joint driven at -2*q1 + 0.1
  OperationHistory ref;
  ref.apply_operation("base", create_body_op("base"));
  ref.apply_operation("j1", revolute_op("base", "base.p1", "q1", Json{{"limits", {0.0, 1.57}}}));
  ref.apply_operation("j2", revolute_op("base.p1", "base.p1.p2", "q2",
                                        Json{{"origin", constant_translation_ast(0.5, 0, 0)},
                                             {"limits", {-4.0, 4.0}}}));
  const MatrixExpr& ref_fk = ref.model().transform(Path("base.p1.p2"));

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> d(0.0, 1.57);
  for (int i = 0; i < 20; ++i) {
    const double q = d(rng);
    Assignment at, ref_at;
    at.set(Variable("q1"), q);
    ref_at.set(Variable("q1"), q);
    ref_at.set(Variable("q2"), -2.0 * q + 0.1);
    CHECK((fk.evaluate(at) - ref_fk.evaluate(ref_at)).cwiseAbs().maxCoeff() < 1e-12);
  }

  // the shorthand kind behaves like revolute-with-mimic
  OperationHistory alias;
  alias.apply_operation("base", create_body_op("base"));
  alias.apply_operation("j1", revolute_op("base", "base.p1", "q1", Json{{"limits", {0.0, 1.57}}}));
  alias.apply_operation("j2", make_op("connect_joint",
                                      Json{{"kind", "mimic"},
                                           {"parent", "base.p1"},
                                           {"child", "base.p1.p2"},
                                           {"origin", constant_translation_ast(0.5, 0, 0)},
                                           {"axis", {0.0, 0.0, 1.0}},
                                           {"mimic_of", "q1"},
                                           {"multiplier", -2.0},
                                           {"offset", 0.1}}));
  CHECK(alias.model().transform(Path("base.p1.p2")) == fk);

  Json no_target{{"kind", "mimic"}, {"parent", "base"}, {"child", "base.x"}};
  CHECK_THROWS_AS(h.apply_operation("bad", make_op("connect_joint", no_target)), FormatError);
}

TEST_CASE("diff drive couples wheels through the extended gradient") {
  const double r = 0.05, L = 0.2;
  OperationHistory h;
  h.apply_operation("drive", make_op("attach_diff_drive", Json{{"base", "base"},
                                                               {"wheel_radius", r},
                                                               {"axle_half_width", L},
                                                               {"x", "x"},
                                                               {"y", "y"},
                                                               {"theta", "theta"},
                                                               {"lw", "lw"},
                                                               {"rw", "rw"}}));

  const ArticulationModel& m = h.model();
  REQUIRE(m.has_expr(Path("base")));
  const ExtExpr& px = std::get<ExtExpr>(m.expr(Path("base.x")));
  const ExtExpr& py = std::get<ExtExpr>(m.expr(Path("base.y")));
  const ExtExpr& pth = std::get<ExtExpr>(m.expr(Path("base.theta")));

  // the pose expressions never mention the wheels
  CHECK(px.expr().variables() == std::set<Variable>{Variable("x")});
  CHECK(pth.expr().variables() == std::set<Variable>{Variable("theta")});

  const std::vector<Variable> wheels{Variable("lw"), Variable("rw")};
  const MatrixExpr jac = jacobian(std::vector<ExtExpr>{px, py, pth}, wheels);
  Assignment at;
  at.set(Variable("theta"), 0.0);
  Eigen::MatrixXd j0 = jac.evaluate(at);
  Eigen::MatrixXd expect(3, 2);
  expect << r / 2, r / 2, 0, 0, -r / (2 * L), r / (2 * L);
  CHECK((j0 - expect).cwiseAbs().maxCoeff() < 1e-15);

  // heading column is antisymmetric: equal wheel speeds do not turn
  const ScalarExpr dlw = pth.gradient_entry(Variable("lw").derivative());
  const ScalarExpr drw = pth.gradient_entry(Variable("rw").derivative());
  CHECK(dlw.evaluate({}) + drw.evaluate({}) == 0.0);

  // at a heading the translation columns rotate with it
  at.set(Variable("theta"), 0.9);
  Eigen::MatrixXd j9 = jac.evaluate(at);
  CHECK(j9(0, 0) == Catch::Approx(r / 2 * std::cos(0.9)).margin(1e-15));
  CHECK(j9(1, 1) == Catch::Approx(r / 2 * std::sin(0.9)).margin(1e-15));

  // a wheel variable reports the frames it drives
  auto moved = parts_moved_by(m, {Variable("lw")});
  CHECK(moved.count(Path("base")) == 1);
  CHECK(moved.count(Path("base.x")) == 1);
  CHECK(moved.count(Path("base.theta")) == 1);

  // base FK equals translate(x,y) * rotate_z(theta)
  at.set(Variable("x"), 1.2);
  at.set(Variable("y"), -0.3);
  Eigen::Matrix4d pose = m.transform(Path("base")).evaluate(at);
  CHECK(pose(0, 3) == 1.2);
  CHECK(pose(1, 3) == -0.3);
  CHECK(pose(0, 0) == Catch::Approx(std::cos(0.9)).margin(1e-15));
  CHECK(pose(1, 0) == Catch::Approx(std::sin(0.9)).margin(1e-15));
}

TEST_CASE("garage door rides its rail and locks near closed") {
  const double l = 2.0;
  OperationHistory h;
  h.apply_operation("wall", create_body_op("wall"));
  h.apply_operation("g", make_op("attach_garage_door", Json{{"parent", "wall"},
                                                            {"door", "door"},
                                                            {"rail_length", l},
                                                            {"var", "a"},
                                                            {"lock_var", "b"}}));

  const ArticulationModel& m = h.model();
  const MatrixExpr& fk = m.transform(Path("door"));
  const Variable a("a"), b("b");

  Assignment top;
  top.set(a, 2.0);
  Eigen::Matrix4d expect_top = Eigen::Matrix4d::Identity();
  expect_top(2, 3) = 2.0;
  CHECK((fk.evaluate(top) - expect_top).cwiseAbs().maxCoeff() < 1e-12);

  Assignment flat;
  flat.set(a, 0.0);
  Eigen::Matrix4d expect_flat;
  expect_flat << 0, 0, 1, 0, 0, 1, 0, 0, -1, 0, 0, 0, 0, 0, 0, 1;
  CHECK((fk.evaluate(flat) - expect_flat).cwiseAbs().maxCoeff() < 1e-12);

  // panel points stay on the tilt ellipse: for the point a fraction f down
  // the panel (local -z), (x/(l f))^2 + (z/(l (1-f)))^2 = 1 wherever the
  // door sits
  for (double f : {0.25, 0.5, 0.75}) {
    const MatrixExpr pt = transform_point(fk, Eigen::Vector3d(0, 0, -l * f));
    for (double av = 0.05; av < l; av += 0.13) {
      Assignment at;
      at.set(a, av);
      Eigen::MatrixXd p = pt.evaluate(at);
      const double ex = p(0, 0) / (l * f);
      const double ez = p(2, 0) / (l * (1.0 - f));
      CHECK(std::fabs(ex * ex + ez * ez - 1.0) < 1e-9);
      CHECK(std::fabs(p(1, 0)) < 1e-12);
    }
  }

  // the upper hinge stays on the rail (x = 0), the lower hinge on the floor
  const MatrixExpr foot = transform_point(fk, Eigen::Vector3d(0, 0, -l));
  for (double av = 0.0; av <= l; av += 0.25) {
    Assignment at;
    at.set(a, av);
    CHECK(std::fabs(fk.evaluate(at)(0, 3)) < 1e-12);
    CHECK(std::fabs(foot.evaluate(at)(2, 0)) < 1e-12);
  }

  const ScalarExpr& unlocked = std::get<ScalarExpr>(m.expr(Path("door.unlocked")));
  auto unlocked_at = [&](double av, double bv) {
    Assignment at;
    at.set(a, av);
    at.set(b, bv);
    return unlocked.evaluate(at);
  };
  CHECK(unlocked_at(2.0, 0.0) <= 0.01);   // shut and latch engaged
  CHECK(unlocked_at(1.0, 0.0) >= 0.99);   // half open, latch irrelevant
  CHECK(unlocked_at(2.0, 0.5) >= 0.99);   // latch held off

  // rail limits and the gated velocity constraint
  const Constraint& pos = m.constraint("g/pos");
  Assignment none;
  CHECK(pos.lb.evaluate(none) == 0.0);
  CHECK(pos.ub.evaluate(none) == l);

  const Constraint& lock = m.constraint("g/lock");
  CHECK(lock.expr.variables() == std::set<Variable>{a.derivative()});
  Assignment shut;
  shut.set(a, 2.0);
  shut.set(b, 0.0);
  CHECK(lock.ub.evaluate(shut) <= 0.01);
  CHECK(lock.lb.evaluate(shut) >= -0.01);
  Assignment open;
  open.set(a, 1.0);
  open.set(b, 0.0);
  CHECK(lock.ub.evaluate(open) >= 0.99);
}

TEST_CASE("add_constraint stores under the tag and rejects duplicate names") {
  OperationHistory h;
  Json nonneg{{"name", "nonneg"}, {"lb", 0.0}, {"ub", 10.0}, {"expr", to_json(sym("z"))}};
  h.apply_operation("c1", make_op("add_constraint", nonneg));

  const Constraint& c = h.model().constraint("c1/nonneg");
  CHECK(c.expr.variables() == std::set<Variable>{Variable("z")});
  CHECK(c.ub.evaluate({}) == 10.0);

  // same local name under a different tag still collides
  try {
    h.apply_operation("c2", make_op("add_constraint", nonneg));
    FAIL("expected DuplicateNameError");
  } catch (const DuplicateNameError& e) {
    CHECK(e.name == "nonneg");
    CHECK(std::string(e.what()).find("operation \"c2\"") != std::string::npos);
  }

  // expression bounds are allowed
  Json gated{{"name", "gated"},
             {"lb", to_json(-sym("g"))},
             {"ub", to_json(sym("g"))},
             {"expr", to_json(sym("z", 1))}};
  h.apply_operation("c3", make_op("add_constraint", gated));
  Assignment at;
  at.set(Variable("g"), 0.25);
  CHECK(h.model().constraint("c3/gated").ub.evaluate(at) == 0.25);
}

TEST_CASE("attach_shape validates its target and geometry") {
  OperationHistory h;
  h.apply_operation("body", create_body_op("body"));

  h.apply_operation("skin", make_op("attach_shape",
                                    Json{{"attach_to", "body"},
                                         {"shape", {{"sphere", {{"r", 0.1}}}}}}));
  REQUIRE(h.model().has_shape("skin"));
  const ShapeAttachment& s = h.model().shape("skin");
  CHECK(s.path == Path("body"));
  CHECK(std::get<SphereShape>(s.shape).radius == 0.1);

  Json posed{{"attach_to", "body"},
             {"shape", {{"box", {{"half_extents", {0.1, 0.2, 0.3}}}}}},
             {"pose", constant_translation_ast(0.0, 0.0, 0.5)}};
  h.apply_operation("crate", make_op("attach_shape", posed));
  CHECK(h.model().shape("crate").local_pose(2, 3) == 0.5);

  Json capsule{{"attach_to", "body"},
               {"shape", {{"capsule", {{"r", 0.05}, {"half_length", 0.2}}}}}};
  h.apply_operation("rod", make_op("attach_shape", capsule));
  CHECK(std::get<CapsuleShape>(h.model().shape("rod").shape).half_length == 0.2);

  CHECK_THROWS_AS(
      h.apply_operation("lost", make_op("attach_shape",
                                        Json{{"attach_to", "ghost"},
                                             {"shape", {{"sphere", {{"r", 0.1}}}}}})),
      UnknownPathError);
  CHECK_THROWS_AS(
      h.apply_operation("flat", make_op("attach_shape",
                                        Json{{"attach_to", "body"},
                                             {"shape", {{"sphere", {{"r", -0.1}}}}}})),
      FormatError);

  // shape poses must be constant
  Json moving{{"attach_to", "body"},
              {"shape", {{"sphere", {{"r", 0.1}}}}},
              {"pose", to_json(translation(ExtExpr(Variable("t")), ExtExpr(0.0), ExtExpr(0.0)))}};
  CHECK_THROWS_AS(h.apply_operation("drift", make_op("attach_shape", moving)), Error);
}

TEST_CASE("replace rebuilds the suffix on the edited prefix") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("j1", revolute_op("base", "base.l1", "q1"));
  h.apply_operation("j2", make_op("connect_joint",
                                  Json{{"kind", "fixed"},
                                       {"parent", "base.l1"},
                                       {"child", "base.l1.tip"},
                                       {"origin", constant_translation_ast(1.0, 0, 0)}}));

  Assignment at;
  at.set(Variable("q1"), 1.0);
  const Eigen::Vector3d before = h.model().transform(Path("base.l1.tip")).evaluate(at).block<3, 1>(0, 3);
  CHECK(before.z() == 0.0);

  // same joint, axis y instead of z
  h.apply_operation("j1", revolute_op("base", "base.l1", "q1", Json{{"axis", {0.0, 1.0, 0.0}}}),
                    Placement::replace("j1"));

  CHECK(h.size() == 3);
  const Eigen::Vector3d after = h.model().transform(Path("base.l1.tip")).evaluate(at).block<3, 1>(0, 3);
  CHECK(after.y() == 0.0);
  CHECK(after.z() == Catch::Approx(-std::sin(1.0)));
  // upstream expression untouched, downstream rebuilt, equal to a fresh replay
  CHECK(h.model() == replay(h.entries()));

  // replacing may rename the tag as long as it stays unique
  h.apply_operation("j1b", revolute_op("base", "base.l1", "q1"), Placement::replace("j1"));
  CHECK(h.has_tag("j1b"));
  CHECK_FALSE(h.has_tag("j1"));
  CHECK_THROWS_AS(
      h.apply_operation("j2", revolute_op("base", "base.l1", "q1"), Placement::replace("j1b")),
      DuplicateTagError);
  CHECK_THROWS_AS(h.apply_operation("x", create_body_op("x"), Placement::before("nope")),
                  UnknownTagError);
}

TEST_CASE("before-insertions make their outputs visible to the suffix") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("j2", make_op("connect_joint",
                                  Json{{"kind", "fixed"},
                                       {"parent", "base"},
                                       {"child", "tip"},
                                       {"origin", constant_translation_ast(1.0, 0, 0)}}));

  // introduce an intermediate frame, then reroute the tip onto it
  h.apply_operation("mid", make_op("create_body",
                                   Json{{"name", "mid"},
                                        {"parent_pose", constant_translation_ast(0, 0, 2.0)}}),
                    Placement::before("j2"));
  h.apply_operation("j2", make_op("connect_joint",
                                  Json{{"kind", "fixed"},
                                       {"parent", "mid"},
                                       {"child", "tip"},
                                       {"origin", constant_translation_ast(1.0, 0, 0)}}),
                    Placement::replace("j2"));

  Eigen::Matrix4d tip = h.model().transform(Path("tip")).evaluate({});
  CHECK(tip(0, 3) == 1.0);
  CHECK(tip(2, 3) == 2.0);

  const auto entries = h.entries();
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].tag == "base");
  CHECK(entries[1].tag == "mid");
  CHECK(entries[2].tag == "j2");
  CHECK(h.model() == replay(entries));
}

TEST_CASE("a failing edit rolls the whole history back") {
  OperationHistory h;
  h.apply_operation("base", create_body_op("base"));
  h.apply_operation("jB", make_op("connect_joint", Json{{"kind", "continuous"},
                                                        {"parent", "base"},
                                                        {"child", "b"},
                                                        {"var", "q"},
                                                        {"axis", {0.0, 0.0, 1.0}}}));
  h.apply_operation("jC", make_op("connect_joint",
                                  Json{{"kind", "fixed"},
                                       {"parent", "b"},
                                       {"child", "c"},
                                       {"origin", constant_translation_ast(1.0, 0, 0)}}));

  const ArticulationModel snapshot = h.model();
  const auto snapshot_entries = h.entries();

  // retargeting jB to a different child orphans jC's parent lookup
  Json retarget{{"kind", "continuous"},
                {"parent", "base"},
                {"child", "b2"},
                {"var", "q"},
                {"axis", {0.0, 0.0, 1.0}}};
  try {
    h.apply_operation("jB", make_op("connect_joint", retarget), Placement::replace("jB"));
    FAIL("expected UnknownPathError");
  } catch (const UnknownPathError& e) {
    CHECK(e.path == "b");
    CHECK(std::string(e.what()).find("operation \"jC\"") != std::string::npos);
  }

  // the model and the entry list both survived intact
  CHECK(h.model() == snapshot);
  CHECK(h.entries() == snapshot_entries);
  CHECK(h.model() == replay(h.entries()));
  CHECK_FALSE(h.model().has_expr(Path("b2")));
}

TEST_CASE("operations must produce exactly their declared outputs") {
  OperationRegistry::instance().add(
      "sneaky_extra",
      {[](const Json&) { return DeclaredOutputs{}; },
       [](const ArticulationModel&, const Json&) {
         OpDelta d;
         d.exprs.emplace(Path("surprise"), ScalarExpr(1.0));
         return d;
       }});

  OperationHistory h;
  try {
    h.apply_operation("s", make_op("sneaky_extra", Json::object()));
    FAIL("expected declaration mismatch");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("differing from its declaration") != std::string::npos);
  }
  CHECK(h.empty());
  CHECK_FALSE(h.model().has_expr(Path("surprise")));

  CHECK_THROWS_AS(h.apply_operation("u", make_op("no_such_kind", Json::object())), FormatError);
}

TEST_CASE("an empty history replays to an empty model") {
  OperationHistory h;
  CHECK(h.empty());
  CHECK(h.model() == ArticulationModel{});
  CHECK(replay(std::vector<OperationHistory::Entry>{}) == ArticulationModel{});
}
