#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "bellport/verify.hpp"

using namespace bellport;

namespace {

Vec v1(double a) {
  Vec v(1);
  v << a;
  return v;
}

PowerUtilitySpec make_spec(double p, bool intermediate = false, double D = 1.0, double T = 1.0) {
  PowerUtilitySpec spec;
  spec.p = p;
  spec.intermediate = intermediate;
  spec.D_vals = {D};
  spec.T = T;
  return spec;
}

JointCharacteristics merton_chars(double b = 0.1, double c = 0.04) {
  auto ch = JointCharacteristics::make(1);
  ch.bR[0] = b;
  ch.cR(0, 0) = c;
  return ch;
}

ConstraintSet positive_cone() {
  Mat row(1, 1);
  row << -1.0;
  return ConstraintSet::cone(row);
}

MarketLattice one_period(const std::vector<std::pair<double, double>>& branches) {
  MarketLattice lat;
  lat.d = 1;
  lat.times = {0.0, 1.0};
  lat.dA = {1.0};
  lat.levels.resize(2);
  lat.levels[0].resize(1);
  lat.levels[1].resize(branches.size());
  for (int b = 0; b < int(branches.size()); ++b)
    lat.levels[0][0].branches.push_back({v1(branches[b].first), branches[b].second, b, b});
  return lat;
}

// Expanded random jump tree: every node gets its own children, so paths are
// unique and wealth is a function of the node.
MarketLattice random_tree(std::mt19937& rng, int periods) {
  std::uniform_real_distribution<double> ux(-0.3, 0.4);
  std::uniform_real_distribution<double> uw(0.2, 1.0);
  std::uniform_int_distribution<int> nb(2, 3);
  MarketLattice lat;
  lat.d = 1;
  lat.levels.resize(periods + 1);
  lat.levels[0].resize(1);
  for (int k = 0; k <= periods; ++k) lat.times.push_back(double(k) / periods);
  lat.dA.assign(periods, 1.0 / periods);
  for (int k = 0; k < periods; ++k) {
    int next = 0;
    for (auto& node : lat.levels[k]) {
      int m = nb(rng);
      std::vector<double> w(m);
      double tot = 0.0;
      for (auto& x : w) tot += (x = uw(rng));
      for (int b = 0; b < m; ++b) {
        node.branches.push_back({v1(ux(rng)), w[b] / tot, next++, b});
      }
    }
    lat.levels[k + 1].resize(next);
  }
  return lat;
}

// Scales the interior opportunity values and keeps the propensity consistent
// with the scaled values, so the result is a well-formed candidate.
SolutionTriple interior_scaled(SolutionTriple cand, const MarketLattice& lat,
                               const PowerUtilitySpec& spec, double factor) {
  for (std::size_t k = 0; k + 1 < cand.ell.size(); ++k)
    for (std::size_t n = 0; n < cand.ell[k].size(); ++n) {
      cand.ell[k][n] *= factor;
      if (spec.intermediate)
        cand.strategy[k][n].kappa = kappa_star(spec, lat.times[k], cand.ell[k][n]);
    }
  return cand;
}

}  // namespace

TEST_CASE("value process accounts for wealth and collected consumption") {
  auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
  auto C = ConstraintSet::box(v1(-1.0), v1(1.0));

  SECTION("root value is strategy independent, terminal value is realized utility") {
    auto spec = make_spec(0.5);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    double z0 = cand.ell[0][0] * 2.0;
    for (double y : {-0.5, 0.0, 0.8}) {
      auto strat = constant_strategy(lat, v1(y), 0.0);
      auto Z = z_path(cand, lat, spec, strat);
      CHECK(Z[0][0] == Catch::Approx(z0).margin(1e-12));
      auto X = wealth_path(lat, spec, strat);
      for (std::size_t n = 0; n < Z[2].size(); ++n)
        CHECK(Z[2][n] == Catch::Approx(2.0 * std::sqrt(X[2][n])).margin(1e-12));
    }
  }

  SECTION("consumption utility accumulates along paths") {
    auto spec = make_spec(0.5, true);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto strat = constant_strategy(lat, v1(0.3), 0.4);
    auto Z = z_path(cand, lat, spec, strat);
    auto X = wealth_path(lat, spec, strat);
    double paid = 2.0 * std::sqrt(0.4 * spec.x0) * 0.5;
    int node = lat.levels[0][0].branches[1].child;
    double x1 = X[1][node];
    double paid2 = paid + 2.0 * std::sqrt(0.4 * x1) * 0.5;
    int node2 = lat.levels[1][node].branches[0].child;
    CHECK(Z[1][node] == Catch::Approx(cand.ell[1][node] * 2.0 * std::sqrt(x1) + paid));
    CHECK(Z[2][node2] == Catch::Approx(2.0 * std::sqrt(X[2][node2]) + paid2));
  }

  SECTION("no-trade solution makes the value process constant") {
    auto spec = make_spec(0.5, true);
    auto zeroC = ConstraintSet::finite_set({v1(0.0)});
    auto opp = solve_tree_dp(lat, spec, zeroC);
    auto cand = to_candidate(opp, lat, spec);
    auto Z = z_path(cand, lat, spec, cand.strategy);
    for (std::size_t k = 0; k < Z.size(); ++k)
      for (double z : Z[k]) CHECK(z == Catch::Approx(Z[0][0]).margin(1e-12));
  }
}

TEST_CASE("value-process drift check accepts the solution and rejects scalings") {
  auto C = ConstraintSet::box(v1(-1.0), v1(1.0));

  for (double p : {0.5, -1.0}) {
    auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
    auto spec = make_spec(p);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto competitors = build_competitor_tables(cand, lat, spec, C, 512);
    auto rep = check_z(cand, lat, spec, C, competitors);
    INFO("p = " << p);
    CHECK(rep.candidate_residual <= 1e-9);
    CHECK(rep.competitor_max_drift <= 1e-9);
    CHECK_FALSE(rep.counterexample.has_value());
    CHECK(rep.checked > 10);

    double over = p > 0 ? 1.1 : 0.9;
    double under = p > 0 ? 0.9 : 1.1;
    auto up = check_z(interior_scaled(cand, lat, spec, over), lat, spec, C, competitors);
    CHECK(up.candidate_residual > 1e-6);
    CHECK_FALSE(up.counterexample.has_value());
    auto down = check_z(interior_scaled(cand, lat, spec, under), lat, spec, C, competitors);
    CHECK(down.candidate_residual > 1e-6);
    REQUIRE(down.counterexample.has_value());
    CHECK(down.counterexample->check == "value-process");
    CHECK(down.counterexample->drift > 1e-9);
  }
}

TEST_CASE("competitors with infinite consumption disutility are excluded") {
  auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
  auto spec = make_spec(-1.0, true);
  auto C = ConstraintSet::box(v1(-1.0), v1(1.0));
  auto opp = solve_tree_dp(lat, spec, C);
  auto cand = to_candidate(opp, lat, spec);
  std::vector<StrategyTable> comps{constant_strategy(lat, v1(0.0), 0.0)};
  auto rep = check_z(cand, lat, spec, C, comps);
  CHECK(rep.checked == 0);
  CHECK(rep.excluded == 1);
  CHECK_FALSE(rep.counterexample.has_value());

  auto pspec = make_spec(0.5, true);
  auto popp = solve_tree_dp(lat, pspec, C);
  auto pcand = to_candidate(popp, lat, pspec);
  auto prep = check_z(pcand, lat, pspec, C, comps);
  CHECK(prep.checked == 1);
  CHECK(prep.excluded == 0);
}

TEST_CASE("deflator drift check and the p-scaled value identity") {
  auto C = ConstraintSet::box(v1(-1.0), v1(1.0));

  SECTION("terminal-only solution") {
    auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto competitors = build_competitor_tables(cand, lat, spec, C, 256);
    auto rep = check_gamma(cand, lat, spec, competitors);
    CHECK(rep.applicable);
    CHECK(rep.candidate_residual <= 1e-9);
    CHECK(rep.competitor_max_drift <= 1e-9);
    CHECK(rep.pz_gap <= 1e-12);
    auto G = gamma_path(cand, lat, spec, cand.strategy);
    CHECK(G[0][0] == Catch::Approx(cand.ell[0][0] * spec.x0).margin(1e-12));
  }

  SECTION("consumption solution satisfies the identity through the propensity formula") {
    auto lat = build_lattice(merton_chars(0.05, 0.04), 1.0, 4, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5, true);
    auto opp = solve_tree_dp(lat, spec, ConstraintSet::full_space(1));
    auto cand = to_candidate(opp, lat, spec);
    auto rep = check_gamma(cand, lat, spec, {});
    CHECK(rep.applicable);
    CHECK(rep.candidate_residual <= 1e-9);
    CHECK(rep.pz_gap <= 1e-12);

    SolutionTriple wrong = cand;
    for (std::size_t n = 0; n < wrong.strategy[1].size(); ++n) wrong.strategy[1][n].kappa *= 1.2;
    auto bad = check_gamma(wrong, lat, spec, {});
    CHECK(bad.pz_gap > 1e-6);
  }

  SECTION("zero strategy is a supermartingale competitor") {
    auto lat = build_lattice(merton_chars(), 1.0, 3, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    std::vector<StrategyTable> comps{constant_strategy(lat, v1(0.0), 0.0)};
    auto rep = check_gamma(cand, lat, spec, comps);
    CHECK(rep.checked == 1);
    CHECK(rep.competitor_max_drift <= 1e-9);
    CHECK_FALSE(rep.counterexample.has_value());
  }
}

TEST_CASE("deflator drift equals the directional derivative on exact steps") {
  SECTION("at the optimizer both sides vanish") {
    auto lat = one_period({{0.12, 0.55}, {-0.08, 0.45}});
    auto spec = make_spec(0.5);
    auto C = ConstraintSet::box(v1(-2.0), v1(2.0));
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto pairs =
        gamma_drift_vs_G(cand, lat, spec, cand.strategy[0][0].pi, cand.strategy[0][0].kappa);
    CHECK(std::abs(pairs[0][0].first) <= 1e-12);
    CHECK(std::abs(pairs[0][0].second) <= 1e-12);
  }

  SECTION("one-step tree against direct arithmetic") {
    auto lat = one_period({{0.1, 0.6}, {-0.05, 0.4}});
    auto spec = make_spec(0.5);
    auto C = ConstraintSet::box(v1(-2.0), v1(2.0));
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    double pic = cand.strategy[0][0].pi[0];
    double y = 0.7;
    auto pairs = gamma_drift_vs_G(cand, lat, spec, v1(y), 0.0);
    double empirical = 0.0;
    double formula = 0.0;
    for (const auto& br : lat.levels[0][0].branches) {
      double x = br.dR[0];
      empirical += br.prob * 1.0 * std::pow(1.0 + pic * x, -0.5) * (1.0 + y * x);
      formula += br.prob * 1.0 * std::pow(1.0 + pic * x, -0.5) * (y - pic) * x;
    }
    empirical -= cand.ell[0][0];
    CHECK(pairs[0][0].first == Catch::Approx(empirical).margin(1e-12));
    CHECK(pairs[0][0].second == Catch::Approx(formula).margin(1e-12));
    CHECK(pairs[0][0].first == Catch::Approx(pairs[0][0].second).margin(1e-12));
  }

  SECTION("consumption-mode gap halves under refinement") {
    auto spec = make_spec(0.5, true);
    auto C = ConstraintSet::box(v1(0.0), v1(1.2));
    std::vector<double> gaps;
    for (int N : {50, 100, 200, 400}) {
      auto lat = build_lattice(merton_chars(), 1.0, N, LatticeScheme::binomial);
      auto opp = solve_tree_dp(lat, spec, C);
      auto cand = to_candidate(opp, lat, spec);
      auto pairs = gamma_drift_vs_G(cand, lat, spec, v1(0.0), 0.0);
      double gap = 0.0;
      for (const auto& row : pairs)
        for (const auto& pr : row) gap = std::max(gap, std::abs(pr.first - pr.second));
      gaps.push_back(gap);
    }
    for (std::size_t i = 0; i + 1 < gaps.size(); ++i) {
      double ratio = gaps[i] / gaps[i + 1];
      INFO("gap " << gaps[i] << " -> " << gaps[i + 1]);
      CHECK(ratio >= 1.5);
      CHECK(ratio <= 3.0);
    }
  }
}

TEST_CASE("product decomposition of deflated competitor wealth is exact on trees") {
  SECTION("one-step hand check") {
    auto lat = one_period({{0.2, 0.5}, {-0.1, 0.5}});
    auto spec = make_spec(0.5);
    SolutionTriple cand;
    cand.ell = {{0.9}, {1.0, 1.0}};
    cand.strategy = {{{v1(0.4), 0.0}}, {{v1(0.0), 1.0}, {v1(0.0), 1.0}}};
    CHECK(xi_decomposition_check(cand, lat, spec, v1(0.0), 0.0) <= 1e-15);

    double p = 0.5, lk = 0.9, lb = 1.0, x = 0.2, pic = 0.4, y = 0.0;
    double pibar = (p - 1.0) * pic + y;
    double direct = lb * std::pow(1.0 + pic * x, p - 1.0) * (1.0 + y * x) - lk;
    double sum = (lb - lk) + lk * pibar * x + (lb - lk) * pibar * x +
                 lb * (std::pow(1.0 + pic * x, p - 1.0) * (1.0 + y * x) - 1.0 - pibar * x);
    CHECK(direct == Catch::Approx(sum).margin(1e-15));
  }

  SECTION("reduces to the value dynamics at the candidate pair") {
    auto lat = build_lattice(merton_chars(), 1.0, 3, LatticeScheme::binomial, true);
    auto spec = make_spec(-2.0);
    auto C = ConstraintSet::box(v1(-0.8), v1(0.8));
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    double res = xi_decomposition_check(cand, lat, spec, cand.strategy[0][0].pi, 0.0);
    CHECK(res <= 1e-9);
  }

  SECTION("random candidate values and strategy pairs on three-period trees") {
    std::mt19937 rng(20240816);
    std::uniform_real_distribution<double> ul(0.4, 2.5);
    std::uniform_real_distribution<double> up(-0.8, 0.8);
    for (int rep = 0; rep < 100; ++rep) {
      auto lat = random_tree(rng, 3);
      double p = rep % 2 ? 0.5 : -1.5;
      auto spec = make_spec(p);
      SolutionTriple cand;
      cand.ell.resize(lat.levels.size());
      cand.strategy.resize(lat.levels.size());
      for (std::size_t k = 0; k < lat.levels.size(); ++k) {
        for (std::size_t n = 0; n < lat.levels[k].size(); ++n) {
          cand.ell[k].push_back(k + 1 == lat.levels.size() ? 1.0 : ul(rng));
          cand.strategy[k].push_back({v1(up(rng)), 0.0});
        }
      }
      double res = xi_decomposition_check(cand, lat, spec, v1(up(rng)), 0.0);
      INFO("rep " << rep << " p " << p);
      CHECK(res <= 1e-9);
    }
  }

  SECTION("consumption clock leaves a first-order remainder") {
    auto spec = make_spec(0.5, true);
    auto C = ConstraintSet::box(v1(0.0), v1(1.2));
    auto lat = build_lattice(merton_chars(), 1.0, 100, LatticeScheme::binomial);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    double res = xi_decomposition_check(cand, lat, spec, v1(0.2), 0.3);
    CHECK(res > 1e-6);
    CHECK(res < 10.0 / 100.0);
  }
}

TEST_CASE("exponential formula reproduces the deflated candidate wealth") {
  SECTION("terminal-only tree is matched exactly") {
    auto lat = build_lattice(merton_chars(), 1.0, 3, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5);
    auto C = ConstraintSet::box(v1(-1.0), v1(1.0));
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto rep = psi_exponential_check(cand, lat, spec);
    CHECK(rep.applicable);
    CHECK(rep.max_residual <= 1e-9);
  }

  SECTION("no-trade consumption fixture leaves only the clock factor") {
    auto lat = build_lattice(merton_chars(), 1.0, 8, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5, true);
    auto opp = solve_tree_dp(lat, spec, ConstraintSet::finite_set({v1(0.0)}));
    auto cand = to_candidate(opp, lat, spec);
    auto rep = psi_exponential_check(cand, lat, spec);
    CHECK(rep.applicable);

    double expected = 0.0;
    double clock = 0.0, x = spec.x0;
    double z0 = cand.ell[0][0] * 2.0 * std::sqrt(spec.x0);
    for (std::size_t k = 0; k < lat.levels.size(); ++k) {
      double V = cand.ell[k][0] * 2.0 * std::sqrt(x);
      expected = std::max(expected, std::abs(V - z0 * std::exp(-clock)));
      if (k + 1 < lat.levels.size()) {
        double kap = cand.strategy[k][0].kappa;
        clock += kap * lat.dA[k];
        x *= 1.0 - kap * lat.dA[k];
      }
    }
    CHECK(rep.max_residual == Catch::Approx(expected).margin(1e-12));
    CHECK(rep.max_residual < 0.1);
  }

  SECTION("a distorted candidate turns the exponential nonpositive") {
    auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5);
    auto C = ConstraintSet::box(v1(-1.0), v1(1.0));
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    cand.ell[1][0] = 1e-4;
    cand.ell[1][1] = 50.0;
    auto rep = psi_exponential_check(cand, lat, spec);
    CHECK_FALSE(rep.applicable);
  }
}

TEST_CASE("binding term of the optimal portfolio") {
  SECTION("interior optimum has vanishing binding term") {
    auto lat = build_lattice(merton_chars(), 1.0, 20, LatticeScheme::binomial);
    auto spec = make_spec(0.5);
    auto opp = solve_tree_dp(lat, spec, ConstraintSet::full_space(1));
    auto vals = deflator_qopt_drift(opp, lat, spec, ConstraintSet::full_space(1));
    for (const auto& row : vals)
      for (double v : row) CHECK(std::abs(v) <= 1e-8);
  }

  SECTION("origin maximizer vanishes within the drift tolerance") {
    auto lat = build_lattice(merton_chars(-0.1, 0.04), 1.0, 5, LatticeScheme::binomial);
    auto spec = make_spec(0.5);
    auto cone = positive_cone();
    auto opp = solve_tree_dp(lat, spec, cone);
    CHECK(std::abs(opp.strategy[0][0].pi[0]) <= 1e-8);
    auto vals = deflator_qopt_drift(opp, lat, spec, cone);
    for (const auto& row : vals)
      for (double v : row) CHECK(std::abs(v) <= 1e-8);
  }

  SECTION("ball constraint with exterior optimum binds strictly") {
    auto lat = one_period({{0.15, 0.5}, {-0.05, 0.5}});
    auto spec = make_spec(0.5);
    auto ball = ConstraintSet::ball(1, 0.5);
    auto opp = solve_tree_dp(lat, spec, ball);
    CHECK(std::abs(opp.strategy[0][0].pi[0]) == Catch::Approx(0.5).margin(1e-7));
    auto vals = deflator_qopt_drift(opp, lat, spec, ball);
    double pic = opp.strategy[0][0].pi[0];
    double hand = 0.0;
    for (const auto& br : lat.levels[0][0].branches)
      hand += br.prob * opp.L[1][br.child] * std::pow(1.0 + pic * br.dR[0], -0.5) * pic * br.dR[0];
    CHECK(vals[0][0] == Catch::Approx(hand).margin(1e-10));
    CHECK(vals[0][0] > 1e-4);
  }

  SECTION("non-convex constraints are rejected") {
    auto lat = one_period({{0.15, 0.5}, {-0.05, 0.5}});
    auto spec = make_spec(0.5);
    auto C = ConstraintSet::finite_set({v1(0.0), v1(1.0)});
    auto opp = solve_tree_dp(lat, spec, C);
    CHECK_THROWS_AS(deflator_qopt_drift(opp, lat, spec, C), config_error);
  }
}

TEST_CASE("full verification of exact solutions and rejection of perturbations") {
  struct Fixture {
    const char* name;
    MarketLattice lat;
    PowerUtilitySpec spec;
    ConstraintSet C;
  };
  std::vector<Fixture> fixtures;
  fixtures.push_back({"binomial box p=0.5",
                      build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true),
                      make_spec(0.5), ConstraintSet::box(v1(-1.0), v1(1.0))});
  fixtures.push_back({"binomial ball p=-1",
                      build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true),
                      make_spec(-1.0), ConstraintSet::ball(1, 0.4)});
  {
    auto jchars = merton_chars(0.05, 0.02);
    jchars.atoms.push_back({v1(-0.2), 0.0, 0.5});
    fixtures.push_back({"jump diffusion cone p=0.3",
                        build_lattice(jchars, 1.0, 2, LatticeScheme::multinomial, true),
                        make_spec(0.3), positive_cone()});
  }
  fixtures.push_back({"consumption no-trade",
                      build_lattice(merton_chars(), 1.0, 3, LatticeScheme::binomial, true),
                      make_spec(0.5, true), ConstraintSet::finite_set({v1(0.0)})});
  fixtures.push_back({"consumption cone",
                      build_lattice(merton_chars(-0.05, 0.04), 1.0, 4, LatticeScheme::binomial,
                                    true),
                      make_spec(0.5, true), positive_cone()});

  for (auto& fx : fixtures) {
    INFO(fx.name);
    auto opp = solve_tree_dp(fx.lat, fx.spec, fx.C);
    auto cand = to_candidate(opp, fx.lat, fx.spec);
    auto rep = verify_all(cand, fx.lat, fx.spec, fx.C, 512, &opp);
    CHECK(rep.pass);
    CHECK(rep.z_candidate_residual <= 1e-9);
    CHECK(rep.z_competitor_max_drift <= 1e-9);
    CHECK(rep.value_certificate);
    CHECK_FALSE(rep.counterexample.has_value());
    CHECK(rep.deflator_applicable);
    CHECK(rep.gamma_residual <= 1e-9);
    CHECK(rep.gamma_competitor_max_drift <= 1e-9);
    CHECK(rep.gamma_pz_gap <= 1e-12);
    CHECK(rep.deflator_certificate);
    if (fx.C.is_convex()) CHECK(rep.convex_deflator_certificate);
    if (!fx.spec.intermediate) {
      CHECK(rep.xi_residual <= 1e-9);
      CHECK(rep.psi_residual <= 1e-9);
    }
    CHECK(rep.competitors_checked >= 10);
    CHECK(rep.competitors_excluded == 0);
    CHECK(rep.has_oracle);
    CHECK(rep.minimality);
    CHECK(rep.oracle_sup_ratio == Catch::Approx(1.0));
    CHECK_FALSE(rep.class_d_note.empty());

    for (double f : {1.1, 0.9}) {
      INFO("scaled by " << f);
      auto bad =
          verify_all(interior_scaled(cand, fx.lat, fx.spec, f), fx.lat, fx.spec, fx.C, 512, &opp);
      CHECK_FALSE(bad.pass);
      CHECK_FALSE(bad.value_certificate);
      CHECK(bad.z_candidate_residual > 1e-9);
      CHECK(bad.minimality == (f > 1.0));
      if (f > 1.0) CHECK(bad.oracle_sup_ratio == Catch::Approx(f));
      bool expect_cex = fx.spec.p < 0.0 || f < 1.0;
      CHECK(bad.counterexample.has_value() == expect_cex);
    }
  }
}

TEST_CASE("verification passes the vanishing-wealth solution through the value route") {
  auto lat = one_period({{-1.0, 0.5}, {8.0, 0.5}});
  auto spec = make_spec(0.5);
  auto C = ConstraintSet::finite_set({v1(0.0), v1(1.0)});
  auto opp = solve_tree_dp(lat, spec, C);
  auto cand = to_candidate(opp, lat, spec);
  CHECK(opp.strategy[0][0].pi[0] == Catch::Approx(1.0));
  CHECK(opp.L0() == Catch::Approx(1.5));
  auto rep = verify_all(cand, lat, spec, C, 64, &opp);
  CHECK(rep.pass);
  CHECK(rep.value_certificate);
  CHECK_FALSE(rep.deflator_applicable);
  CHECK(rep.competitors_excluded > 0);
  CHECK(rep.minimality);
  CHECK_FALSE(rep.counterexample.has_value());

  auto bad = verify_all(interior_scaled(cand, lat, spec, 1.1), lat, spec, C, 64, &opp);
  CHECK_FALSE(bad.pass);
  CHECK(bad.minimality);
}

TEST_CASE("joint consumption and trading keeps the value certificate exact") {
  auto lat = build_lattice(merton_chars(0.05, 0.04), 1.0, 4, LatticeScheme::binomial, true);
  auto spec = make_spec(0.5, true);
  auto C = ConstraintSet::full_space(1);
  auto opp = solve_tree_dp(lat, spec, C);
  auto cand = to_candidate(opp, lat, spec);
  auto rep = verify_all(cand, lat, spec, C, 512, &opp);
  CHECK(rep.value_certificate);
  CHECK(rep.minimality);
  CHECK(rep.z_candidate_residual <= 1e-9);
  CHECK(rep.gamma_residual <= 1e-12);
  CHECK(rep.gamma_pz_gap <= 1e-12);
  CHECK(rep.gamma_competitor_max_drift < 1e-8);
  if (rep.counterexample.has_value()) CHECK(rep.counterexample->check == "deflator");
}

TEST_CASE("undervalued candidates are rejected with a counterexample") {
  SECTION("positive exponent, scaled down") {
    auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
    auto spec = make_spec(0.5);
    auto C = ConstraintSet::box(v1(-1.0), v1(1.0));
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto down = verify_all(interior_scaled(cand, lat, spec, 0.9), lat, spec, C, 512, &opp);
    CHECK_FALSE(down.pass);
    REQUIRE(down.counterexample.has_value());
    CHECK(down.counterexample->check == "value-process");
    CHECK(down.counterexample->drift > 1e-9);
    CHECK(down.counterexample->level >= 0);
    CHECK(down.counterexample->node >= 0);
    CHECK_FALSE(down.minimality);
  }

  SECTION("negative exponent, both directions carry a witness") {
    auto lat = build_lattice(merton_chars(), 1.0, 2, LatticeScheme::binomial, true);
    auto spec = make_spec(-1.0);
    auto C = ConstraintSet::ball(1, 0.4);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);

    auto up = verify_all(interior_scaled(cand, lat, spec, 1.1), lat, spec, C, 512, &opp);
    CHECK_FALSE(up.pass);
    REQUIRE(up.counterexample.has_value());
    CHECK(up.counterexample->check == "value-process");
    CHECK(up.minimality);
    CHECK(up.oracle_sup_ratio == Catch::Approx(1.1));

    auto down = verify_all(interior_scaled(cand, lat, spec, 0.9), lat, spec, C, 512, &opp);
    CHECK_FALSE(down.pass);
    REQUIRE(down.counterexample.has_value());
    CHECK(down.counterexample->check == "deflator");
    CHECK_FALSE(down.minimality);
  }
}
