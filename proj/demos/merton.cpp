// Single risky asset with constant coefficients: the opportunity process has
// the closed form L_t = exp(p/(2(1-p)) |theta|^2 (T-t)), so every solver in
// the library can be checked against it side by side.
#include <cstdio>

#include "bellport/verify.hpp"

using namespace bellport;

int main() {
  const double theta = 0.2, T = 1.0;

  std::printf("terminal wealth only, theta = %.2f, T = %.1f\n\n", theta, T);
  std::printf("%8s %14s %14s %14s %12s\n", "p", "closed form", "ode", "lattice(200)",
              "lattice err");
  for (double p : {-2.0, -1.0, -0.5, 0.3, 0.5, 0.8}) {
    PowerUtilitySpec spec;
    spec.p = p;
    spec.T = T;
    double closed = std::exp(p / (2.0 * (1.0 - p)) * theta * theta * T);

    Vec th(1);
    th << theta;
    auto ode = solve_deterministic_ito(spec, th, Mat(Mat::Identity(1, 1)),
                                       ConstraintSet::full_space(1));
    double L_ode = std::exp(ode.front().second);

    auto chars = JointCharacteristics::make(1);
    chars.bR[0] = theta;
    chars.cR(0, 0) = 1.0;
    auto lat = build_lattice(chars, T, 200, LatticeScheme::binomial);
    double L_dp = solve_tree_dp(lat, spec, ConstraintSet::full_space(1)).L0();

    std::printf("%8.2f %14.9f %14.9f %14.9f %12.2e\n", p, closed, L_ode, L_dp,
                std::abs(L_dp - closed));
  }

  std::printf("\nwith consumption, p = 0.5: root strategy and certificate\n\n");
  PowerUtilitySpec spec;
  spec.p = 0.5;
  spec.T = T;
  spec.intermediate = true;
  auto chars = JointCharacteristics::make(1);
  chars.bR[0] = theta;
  chars.cR(0, 0) = 1.0;
  auto C = ConstraintSet::full_space(1);
  auto lat = build_lattice(chars, T, 100, LatticeScheme::binomial);
  auto opp = solve_tree_dp(lat, spec, C);
  auto cand = to_candidate(opp, lat, spec);
  auto rep = verify_all(cand, lat, spec, C, 256, &opp);

  std::printf("  L0      = %.9f\n", opp.L0());
  std::printf("  pi      = %.6f   (unconstrained target %.6f)\n", opp.strategy[0][0].pi[0],
              theta / (1.0 - spec.p));
  std::printf("  kappa   = %.6f   (formula %.6f)\n", cand.strategy[0][0].kappa,
              kappa_star(spec, 0.0, opp.L0()));
  std::printf("  verified: %s (value %s, deflator %s, minimal %s)\n",
              rep.pass ? "yes" : "no", rep.value_certificate ? "yes" : "no",
              rep.deflator_certificate ? "yes" : "no", rep.minimality ? "yes" : "no");
  return rep.pass ? 0 : 1;
}
