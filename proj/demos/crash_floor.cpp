// Jump-diffusion where the asset can crash by a fixed fraction. Positive
// wealth then caps the admissible leverage at 1/crash even without an
// explicit constraint set; the budget cap tightens as crashes deepen and the
// investor walks away from the diffusion-only target.
#include <cstdio>

#include "bellport/verify.hpp"

using namespace bellport;

int main() {
  const double b = 0.12, c = 0.04, T = 1.0;
  PowerUtilitySpec spec;
  spec.p = 0.5;
  spec.T = T;
  auto C = ConstraintSet::full_space(1);

  double merton_pi = b / ((1.0 - spec.p) * c);
  std::printf("diffusion-only target pi = %.4f, crash intensity 0.4 per year\n\n", merton_pi);
  std::printf("%8s %10s %10s %12s %10s\n", "crash", "cap 1/x", "pi", "L0", "certified");

  for (double crash : {0.10, 0.20, 0.35, 0.50, 0.80}) {
    auto chars = JointCharacteristics::make(1);
    chars.bR[0] = b;
    chars.cR(0, 0) = c;
    Vec x(1);
    x << -crash;
    chars.atoms.push_back({x, 0.0, 0.4});

    auto lat = build_lattice(chars, T, 50, LatticeScheme::multinomial);
    auto opp = solve_tree_dp(lat, spec, C);
    auto cand = to_candidate(opp, lat, spec);
    auto rep = verify_all(cand, lat, spec, C, 128, &opp);

    std::printf("%8.2f %10.2f %10.4f %12.6f %10s\n", crash, 1.0 / crash,
                opp.strategy[0][0].pi[0], opp.L0(), rep.pass ? "yes" : "no");
    if (!rep.pass) return 1;
  }

  std::printf("\nthe p = -1 investor shrinks further: ruin carries infinite disutility\n");
  spec.p = -1.0;
  for (double crash : {0.35, 0.80}) {
    auto chars = JointCharacteristics::make(1);
    chars.bR[0] = b;
    chars.cR(0, 0) = c;
    Vec x(1);
    x << -crash;
    chars.atoms.push_back({x, 0.0, 0.4});
    auto lat = build_lattice(chars, T, 50, LatticeScheme::multinomial);
    auto opp = solve_tree_dp(lat, spec, C);
    std::printf("  crash %.2f: pi = %.4f\n", crash, opp.strategy[0][0].pi[0]);
  }
  return 0;
}
