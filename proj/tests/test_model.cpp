#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "bellport/model.hpp"

using namespace bellport;

namespace {

// Independent oracle for the conjugate: bracket the concave map
// x -> U(x) - x*y on a log grid, then polish by golden section.
double conjugate_sup_oracle(double p, double D, double y) {
  auto f = [&](double x) { return D * std::pow(x, p) / p - x * y; };
  double best_x = 1.0, best = f(1.0);
  for (int i = 0; i <= 4800; ++i) {
    double x = std::pow(10.0, -12.0 + 24.0 * i / 4800.0);
    double v = f(x);
    if (v > best) best = v, best_x = x;
  }
  double lo = best_x / 10.0, hi = best_x * 10.0;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c1) < f(c2)) {
      a = c1;
      c1 = c2;
      c2 = a + gr * (b - a);
    } else {
      b = c2;
      c2 = c1;
      c1 = b - gr * (b - a);
    }
  }
  return f(0.5 * (a + b));
}

PowerUtilitySpec make_spec(double p) {
  PowerUtilitySpec s;
  s.p = p;
  return s;
}

Vec vec1(double a) {
  Vec v(1);
  v << a;
  return v;
}

}  // namespace

TEST_CASE("utility evaluation") {
  CHECK(eval_utility(make_spec(0.5), 0.0, 1.0) == Catch::Approx(2.0).margin(1e-15));
  CHECK(eval_utility(make_spec(-1.0), 0.0, 1.0) == Catch::Approx(-1.0).margin(1e-15));
  auto s = make_spec(0.5);
  s.D_vals = {2.0};
  CHECK(eval_utility(s, 0.3, 4.0) == Catch::Approx(8.0));
  CHECK_THROWS_AS(eval_utility(s, 0.0, 0.0), std::domain_error);
  CHECK_THROWS_AS(eval_utility(s, 0.0, -1.0), std::domain_error);
}

TEST_CASE("spec validation and taste path") {
  auto s = make_spec(0.0);
  CHECK_THROWS_AS(s.validate(), config_error);
  s.p = 1.5;
  CHECK_THROWS_AS(s.validate(), config_error);
  s.p = 0.5;
  s.T = 2.0;
  s.D_vals = {1.0, 2.0};
  s.validate();
  CHECK(s.D(0.0) == Catch::Approx(1.0));
  CHECK(s.D(1.0) == Catch::Approx(1.5));
  CHECK(s.D(2.0) == Catch::Approx(2.0));
}

TEST_CASE("conjugate frozen values and duality") {
  CHECK(eval_conjugate(make_spec(0.5), 0.0, 1.0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(eval_conjugate(make_spec(0.5), 0.0, 2.0) == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(eval_conjugate(make_spec(0.5), 0.0, 0.0), std::domain_error);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> up(0.05, 0.95), un(-3.0, -0.05), ud(0.2, 3.0),
      uy(0.1, 5.0);
  for (int i = 0; i < 100; ++i) {
    double p = (i % 2 == 0) ? up(rng) : un(rng);
    double D = ud(rng), y = uy(rng);
    PowerUtilitySpec s;
    s.p = p;
    s.D_vals = {D};
    double got = eval_conjugate(s, 0.0, y);
    double want = conjugate_sup_oracle(p, D, y);
    CHECK(got == Catch::Approx(want).epsilon(1e-6).margin(1e-9));
  }
}

TEST_CASE("binomial lattice moments") {
  auto chars = JointCharacteristics::make(1);
  SECTION("unit variance single step") {
    chars.cR(0, 0) = 1.0;
    auto lat = build_lattice(chars, 1.0, 1, LatticeScheme::binomial);
    REQUIRE(lat.levels[0][0].branches.size() == 2);
    CHECK(lat.levels[0][0].branches[0].dR[0] == Catch::Approx(1.0).margin(1e-14));
    CHECK(lat.levels[0][0].branches[1].dR[0] == Catch::Approx(-1.0).margin(1e-14));
    CHECK(lat.levels[0][0].branches[0].prob == Catch::Approx(0.5));
    CHECK(lat.levels[0][0].branches[1].prob == Catch::Approx(0.5));
  }
  SECTION("drifting step moments") {
    chars.bR = vec1(0.1);
    chars.cR(0, 0) = 0.04;
    auto lat = build_lattice(chars, 1.0, 100, LatticeScheme::binomial);
    double m1 = 0.0, m2 = 0.0;
    for (const auto& br : lat.levels[0][0].branches) {
      m1 += br.prob * br.dR[0];
      m2 += br.prob * br.dR[0] * br.dR[0];
    }
    CHECK(m1 == Catch::Approx(0.001).margin(1e-12));
    CHECK(m2 - m1 * m1 == Catch::Approx(0.0004).margin(1e-12));
  }
}

TEST_CASE("jump branches and step-size guard") {
  auto chars = JointCharacteristics::make(1);
  chars.cR(0, 0) = 0.04;
  chars.atoms.push_back({vec1(-0.5), 0.0, 2.0});
  auto lat = build_lattice(chars, 1.0, 100, LatticeScheme::binomial);
  const auto& brs = lat.levels[0][0].branches;
  REQUIRE(brs.size() == 3);
  CHECK(brs[2].atom == 0);
  CHECK(brs[2].prob == Catch::Approx(0.02).margin(1e-15));
  CHECK(brs[2].dR[0] == Catch::Approx(-0.5));

  // Exact first moment, second moment within O(dt^2) of the target.
  double dt = 0.01;
  double m1 = 0.0, m2 = 0.0;
  for (const auto& br : brs) {
    m1 += br.prob * br.dR[0];
    m2 += br.prob * br.dR[0] * br.dR[0];
  }
  CHECK(m1 == Catch::Approx(chars.drift_rate()[0] * dt).margin(1e-15));
  double target2 = chars.cR(0, 0) * dt + 2.0 * dt * 0.25;
  CHECK(std::abs(m2 - target2) <= 10.0 * dt * dt);

  CHECK_THROWS_AS(build_lattice(chars, 1.0, 1, LatticeScheme::binomial), lattice_error);
}

TEST_CASE("multinomial lattice covariance") {
  auto chars = JointCharacteristics::make(2);
  chars.bR = Vec::Zero(2);
  chars.cR << 0.04, 0.01, 0.01, 0.09;
  auto lat = build_lattice(chars, 1.0, 50, LatticeScheme::multinomial);
  const auto& brs = lat.levels[0][0].branches;
  REQUIRE(brs.size() == 4);
  Mat m2 = Mat::Zero(2, 2);
  double mass = 0.0;
  for (const auto& br : brs) {
    m2 += br.prob * br.dR * br.dR.transpose();
    mass += br.prob;
  }
  CHECK(mass == Catch::Approx(1.0).margin(1e-12));
  CHECK((m2 - chars.cR * 0.02).norm() < 1e-12);
  CHECK_THROWS_AS(build_lattice(chars, 1.0, 10, LatticeScheme::binomial), lattice_error);
}

TEST_CASE("expansion bookkeeping") {
  auto chars = JointCharacteristics::make(1);
  chars.cR(0, 0) = 1.0;
  auto flat = build_lattice(chars, 1.0, 3, LatticeScheme::binomial);
  CHECK(flat.levels[3].size() == 1);
  CHECK(!flat.is_tree());
  auto tree = build_lattice(chars, 1.0, 3, LatticeScheme::binomial, true);
  CHECK(tree.levels[1].size() == 2);
  CHECK(tree.levels[2].size() == 4);
  CHECK(tree.levels[3].size() == 8);
  CHECK(tree.is_tree());
  CHECK_THROWS_AS(build_lattice(chars, 1.0, 25, LatticeScheme::binomial, true, 100000),
                  lattice_error);
}

TEST_CASE("wealth propagation") {
  auto chars = JointCharacteristics::make(1);
  chars.cR(0, 0) = 1.0;
  auto lat = build_lattice(chars, 1.0, 1, LatticeScheme::binomial, true);
  PowerUtilitySpec spec = make_spec(0.5);
  auto X = wealth_path(lat, spec, constant_strategy(lat, vec1(0.25), 0.0));
  REQUIRE(X[1].size() == 2);
  CHECK(X[1][0] == Catch::Approx(1.25));
  CHECK(X[1][1] == Catch::Approx(0.75));
  CHECK_THROWS_AS(wealth_path(lat, spec, constant_strategy(lat, vec1(1.5), 0.0)),
                  admissibility_error);
  auto flat = build_lattice(chars, 1.0, 2, LatticeScheme::binomial);
  CHECK_THROWS_AS(wealth_path(flat, spec, constant_strategy(flat, vec1(0.0), 0.0)),
                  lattice_error);
}

TEST_CASE("consumption reduces wealth when charged") {
  auto chars = JointCharacteristics::make(1);
  chars.cR(0, 0) = 1.0;
  auto lat = build_lattice(chars, 1.0, 1, LatticeScheme::binomial, true);
  PowerUtilitySpec spec = make_spec(0.5);
  spec.intermediate = true;
  auto X = wealth_path(lat, spec, constant_strategy(lat, vec1(0.0), 0.1));
  CHECK(X[1][0] == Catch::Approx(0.9));
}

TEST_CASE("large jump integrability weight") {
  auto chars = JointCharacteristics::make(1);
  chars.atoms.push_back({vec1(3.0), 0.0, 2.0});
  CHECK(p_suitable_check(chars, 0.5) == Catch::Approx(4.0).margin(1e-14));
  chars.atoms.push_back({vec1(0.5), 0.0, 5.0});  // inside the unit ball, ignored
  CHECK(p_suitable_check(chars, 0.5) == Catch::Approx(4.0).margin(1e-14));
}

TEST_CASE("structure condition solve") {
  auto chars = JointCharacteristics::make(1);
  chars.bR = vec1(0.1);
  chars.cR(0, 0) = 0.04;
  auto sc = check_structure_condition(chars);
  REQUIRE(sc.ok);
  CHECK(sc.lambda[0] == Catch::Approx(2.5).margin(1e-12));

  auto bad = JointCharacteristics::make(2);
  bad.bR = Vec::Ones(2) * 0.1;
  bad.cR << 0.04, 0.0, 0.0, 0.0;
  CHECK(!check_structure_condition(bad).ok);

  auto zero = JointCharacteristics::make(1);
  auto sc0 = check_structure_condition(zero);
  REQUIRE(sc0.ok);
  CHECK(sc0.lambda.norm() == 0.0);
}

TEST_CASE("clock rate scales step weights") {
  auto chars = JointCharacteristics::make(1);
  chars.cR(0, 0) = 0.04;
  chars.dA = 2.0;
  chars.atoms.push_back({vec1(0.3), 0.0, 1.0});
  auto lat = build_lattice(chars, 1.0, 10, LatticeScheme::binomial);
  CHECK(lat.dA[0] == Catch::Approx(0.2));
  CHECK(lat.levels[0][0].branches.back().prob == Catch::Approx(0.2));
}
