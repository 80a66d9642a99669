#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bellport/gfun.hpp"

namespace bellport {

// Opportunity process on a lattice together with the maximizing strategy.
struct OpportunityLattice {
  std::vector<std::vector<double>> L;
  StrategyTable strategy;
  double value0 = 0.0;

  double L0() const { return L.at(0).at(0); }
};

// Candidate triple (ell, pi_check, kappa_check) in lattice form.
struct SolutionTriple {
  std::vector<std::vector<double>> ell;
  StrategyTable strategy;

  void validate(const MarketLattice& lat, const PowerUtilitySpec& spec) const {
    if (ell.size() != lat.levels.size() || strategy.size() != lat.levels.size())
      throw config_error("candidate level count does not match the lattice");
    double DT = spec.D(lat.times.back());
    for (std::size_t k = 0; k < ell.size(); ++k) {
      if (ell[k].size() != lat.levels[k].size() || strategy[k].size() != lat.levels[k].size())
        throw config_error("candidate node count mismatch at level " + std::to_string(k));
      bool terminal = k + 1 == ell.size();
      for (std::size_t n = 0; n < ell[k].size(); ++n) {
        if (!(ell[k][n] > 0.0))
          throw config_error("candidate ell must be positive at level " + std::to_string(k));
        if (strategy[k][n].pi.size() != lat.d)
          throw config_error("candidate strategy dimension mismatch");
        double kap = strategy[k][n].kappa;
        if (terminal) {
          if (std::abs(ell[k][n] - DT) > 1e-12 * std::max(1.0, DT))
            throw config_error("candidate terminal value differs from the terminal payoff");
          if (std::abs(kap - 1.0) > 1e-12)
            throw config_error("terminal consumption propensity must be one");
        } else if (spec.intermediate) {
          double want = kappa_star(spec, lat.times[k], ell[k][n]);
          if (std::abs(kap - want) > 1e-10 * (1.0 + want))
            throw config_error("candidate kappa differs from the consumption formula");
        } else if (std::abs(kap) > 1e-12) {
          throw config_error("interior consumption must vanish without an intermediate clock");
        }
      }
    }
  }
};

// Finite strategy menu for grid-restricted optimization and the oracle.
struct StrategyGrid {
  std::vector<Vec> pis;
  std::vector<double> kappas;
};

namespace detail {

// One-step objective (1/p)[ D kappa^p dmu + sum_b p_b L_b (1 + pi.dR_b - kappa dmu)^p ].
inline double step_objective(const PowerUtilitySpec& spec, double t, double dmu,
                             const LatticeNode& node, const std::vector<double>& Lnext,
                             const Vec& pi, double kappa) {
  double tot = dmu > 0.0 ? spec.D(t) * upow(kappa, spec.p) * dmu : 0.0;
  for (const auto& br : node.branches) {
    double f = 1.0 + pi.dot(br.dR) - kappa * dmu;
    double thr = 1e-12 * (1.0 + std::abs(pi.dot(br.dR)) + kappa * dmu);
    if (f < 0.0) {
      if (f < -thr) return kNegInf;
      f = 0.0;
    }
    tot += br.prob * Lnext[br.child] * upow(f, spec.p);
  }
  return tot / spec.p;
}

inline double golden_kappa(const std::function<double(double)>& f, double a, double b) {
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < 140; ++i) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

// Portfolio step at fixed consumption: the one-step expectation is maximized
// through the drift objective of the scaled jumps dR/(1 - kappa dmu), whose
// compensated form leaves exactly E[L_next (1 + pi.x')^p] / p up to a
// pi-independent shift.
inline GMax pi_step(const PowerUtilitySpec& spec, const ConstraintSet& C, const LatticeNode& node,
                    const std::vector<double>& Lnext, double scale,
                    const std::optional<Vec>& start, unsigned seed) {
  auto chars = JointCharacteristics::make(int(C.dim()));
  for (const auto& br : node.branches) {
    Vec x = br.dR / scale;
    chars.atoms.push_back({x, Lnext[br.child] - 1.0, br.prob});
    chars.bR += br.prob * cutoff(x);
  }
  auto ctx = GContext::make(spec.p, 1.0, chars, C);
  return maximize_g(ctx, start, seed);
}

}  // namespace detail

inline OpportunityLattice solve_tree_dp(const MarketLattice& lat, const PowerUtilitySpec& spec,
                                        const ConstraintSet& C,
                                        const StrategyGrid* grid = nullptr) {
  lat.validate();
  spec.validate();
  if (int(C.dim()) != lat.d) throw config_error("constraint dimension does not match the lattice");

  const int N = lat.periods();
  OpportunityLattice out;
  out.L.resize(N + 1);
  out.strategy.resize(N + 1);
  double DT = spec.D(lat.times.back());
  out.L[N].assign(lat.levels[N].size(), DT);
  out.strategy[N].assign(lat.levels[N].size(), NodeStrategy{Vec::Zero(lat.d), 1.0});

  std::vector<Vec> grid_pis;
  if (grid)
    for (const auto& y : grid->pis)
      if (C.contains(y, kMemberTol)) grid_pis.push_back(y);

  for (int k = N - 1; k >= 0; --k) {
    double t = lat.times[k];
    double dmu = dmu_step(lat, spec, k);
    std::size_t nn = lat.levels[k].size();
    out.L[k].assign(nn, 0.0);
    out.strategy[k].assign(nn, NodeStrategy{Vec::Zero(lat.d), 0.0});
    for (std::size_t n = 0; n < nn; ++n) {
      const auto& node = lat.levels[k][n];
      const auto& Lnext = out.L[k + 1];
      Vec pi = Vec::Zero(lat.d);
      double kappa = 0.0;
      double J = kNegInf;
      if (grid) {
        std::vector<double> kaps = dmu > 0.0 ? grid->kappas : std::vector<double>{0.0};
        for (const auto& py : grid_pis)
          for (double kap : kaps) {
            double v = detail::step_objective(spec, t, dmu, node, Lnext, py, kap);
            if (v > J) {
              J = v;
              pi = py;
              kappa = kap;
            }
          }
        if (J == kNegInf)
          throw config_error("no admissible grid strategy at level " + std::to_string(k) +
                             " node " + std::to_string(n));
      } else {
        int rounds = dmu > 0.0 ? 5 : 1;
        for (int r = 0; r < rounds; ++r) {
          double scale = 1.0 - kappa * dmu;
          if (scale > 1e-12) {
            try {
              auto mx = detail::pi_step(spec, C, node, Lnext, scale, std::optional<Vec>(pi),
                                        unsigned(k) * 2654435761u + unsigned(n) * 97u + r);
              pi = mx.argmax;
            } catch (const unbounded_error& e) {
              throw unbounded_error("objective unbounded at level " + std::to_string(k) +
                                    " node " + std::to_string(n) + ": " + e.what());
            }
          }
          if (dmu > 0.0) {
            double worst = kPosInf;
            for (const auto& br : node.branches) worst = std::min(worst, pi.dot(br.dR));
            double khi = (1.0 + worst) / dmu;
            double klo = spec.p < 0.0 ? 1e-8 : 0.0;
            if (khi > klo) {
              auto psi = [&](double kap) {
                return detail::step_objective(spec, t, dmu, node, Lnext, pi, kap);
              };
              kappa = detail::golden_kappa(psi, klo, khi);
            } else {
              kappa = klo;
            }
          }
        }
        J = detail::step_objective(spec, t, dmu, node, Lnext, pi, kappa);
      }
      double Lval = spec.p * J;
      if (!(Lval > 0.0) || !std::isfinite(Lval))
        throw structure_error("opportunity value left the positive domain at level " +
                              std::to_string(k) + " node " + std::to_string(n));
      out.L[k][n] = Lval;
      out.strategy[k][n] = NodeStrategy{pi, kappa};
    }
  }
  out.value0 = out.L[0][0] * upow(spec.x0, spec.p) / spec.p;
  return out;
}

// Exhaustive maximum over grid-valued adapted strategies. Expected utility is
// accumulated through measure-weighted p-th wealth moments, so recombining
// lattices are handled exactly without path enumeration.
inline std::pair<double, StrategyTable> brute_force_oracle(const MarketLattice& lat,
                                                           const PowerUtilitySpec& spec,
                                                           const ConstraintSet& C,
                                                           const StrategyGrid& grid) {
  lat.validate();
  spec.validate();
  const int N = lat.periods();

  std::vector<Vec> pis;
  for (const auto& y : grid.pis)
    if (C.contains(y, kMemberTol)) pis.push_back(y);
  if (pis.empty()) throw config_error("strategy grid has no feasible portfolio");

  struct Slot {
    int level, node;
    std::size_t options;
  };
  std::vector<Slot> slots;
  long long total = 1;
  for (int k = 0; k < N; ++k) {
    double dmu = dmu_step(lat, spec, k);
    std::size_t opts = pis.size() * (dmu > 0.0 ? grid.kappas.size() : 1);
    if (opts == 0) throw config_error("empty consumption grid");
    for (std::size_t n = 0; n < lat.levels[k].size(); ++n) {
      slots.push_back({k, int(n), opts});
      total *= static_cast<long long>(opts);
      if (total > 1'000'000)
        throw config_error("strategy grid exceeds the enumeration budget of 1e6 assignments");
    }
  }

  auto pick = [&](int k, std::size_t digit) {
    double dmu = dmu_step(lat, spec, k);
    std::size_t nk = dmu > 0.0 ? grid.kappas.size() : 1;
    const Vec& py = pis[digit / nk];
    double kap = dmu > 0.0 ? grid.kappas[digit % nk] : 0.0;
    return NodeStrategy{py, kap};
  };

  double x0p = upow(spec.x0, spec.p);
  std::vector<std::vector<double>> m(N + 1);
  auto evaluate = [&](const std::vector<std::size_t>& digits) {
    for (int k = 0; k <= N; ++k) m[k].assign(lat.levels[k].size(), 0.0);
    m[0][0] = 1.0;
    double util = 0.0;
    std::size_t s = 0;
    for (int k = 0; k < N; ++k) {
      double t = lat.times[k];
      double dmu = dmu_step(lat, spec, k);
      for (std::size_t n = 0; n < lat.levels[k].size(); ++n, ++s) {
        NodeStrategy st = pick(k, digits[s]);
        if (m[k][n] == 0.0) continue;
        if (dmu > 0.0) {
          double c = spec.D(t) * upow(st.kappa, spec.p) * dmu * m[k][n] * x0p / spec.p;
          if (c == kNegInf) return kNegInf;
          util += c;
        }
        for (const auto& br : lat.levels[k][n].branches) {
          double f = 1.0 + st.pi.dot(br.dR) - st.kappa * dmu;
          double thr = 1e-12 * (1.0 + std::abs(st.pi.dot(br.dR)) + st.kappa * dmu);
          if (f < 0.0) {
            if (f < -thr) return kNegInf;
            f = 0.0;
          }
          if (spec.p < 0.0 && f == 0.0) return kNegInf;
          m[k + 1][br.child] += m[k][n] * br.prob * upow(f, spec.p);
        }
      }
    }
    double tail = 0.0;
    for (double w : m[N]) tail += w;
    return util + spec.D(lat.times.back()) * tail * x0p / spec.p;
  };

  std::vector<std::size_t> digits(slots.size(), 0), best_digits;
  double best = kNegInf;
  for (;;) {
    double v = evaluate(digits);
    if (v > best) {
      best = v;
      best_digits = digits;
    }
    std::size_t i = 0;
    while (i < digits.size() && ++digits[i] == slots[i].options) digits[i++] = 0;
    if (i == digits.size()) break;
  }
  if (best == kNegInf) throw config_error("every grid strategy is inadmissible");

  StrategyTable table(N + 1);
  for (int k = 0; k <= N; ++k)
    table[k].assign(lat.levels[k].size(), NodeStrategy{Vec::Zero(lat.d), k == N ? 1.0 : 0.0});
  for (std::size_t s = 0; s < slots.size(); ++s)
    table[slots[s].level][slots[s].node] = pick(slots[s].level, best_digits[s]);
  return {best, table};
}

// Candidate triple read off a solved lattice; consumption recomputed from the
// closed-form propensity so that the triple satisfies the defining relations.
inline SolutionTriple to_candidate(const OpportunityLattice& opp, const MarketLattice& lat,
                                   const PowerUtilitySpec& spec) {
  SolutionTriple cand;
  cand.ell = opp.L;
  cand.strategy = opp.strategy;
  for (std::size_t k = 0; k + 1 < cand.strategy.size(); ++k)
    for (std::size_t n = 0; n < cand.strategy[k].size(); ++n)
      cand.strategy[k][n].kappa =
          spec.intermediate ? kappa_star(spec, lat.times[k], cand.ell[k][n]) : 0.0;
  return cand;
}

// Joint characteristics of (dR, dL) read off one node's exact branch law.
namespace detail {
inline GContext empirical_context(const PowerUtilitySpec& spec, const ConstraintSet& C,
                                  const LatticeNode& node, const std::vector<double>& Lnext,
                                  double Lnode, double dAk) {
  auto chars = JointCharacteristics::make(int(C.dim()));
  for (const auto& br : node.branches) {
    chars.atoms.push_back({br.dR, Lnext[br.child] - Lnode, br.prob / dAk});
    chars.bR += (br.prob / dAk) * cutoff(br.dR);
  }
  return GContext::make(spec.p, Lnode, chars, C);
}
}  // namespace detail

// Signed residual of the drift identity at each non-terminal node:
// E[dL]/dA + p [ U*(L) dmu/dA + max g ].
inline std::vector<std::vector<double>> drift_identity_residual(const OpportunityLattice& opp,
                                                                const MarketLattice& lat,
                                                                const PowerUtilitySpec& spec,
                                                                const ConstraintSet& C) {
  const int N = lat.periods();
  std::vector<std::vector<double>> res(N);
  for (int k = 0; k < N; ++k) {
    double dAk = lat.dA[k];
    double dmu = dmu_step(lat, spec, k);
    res[k].assign(lat.levels[k].size(), 0.0);
    for (std::size_t n = 0; n < lat.levels[k].size(); ++n) {
      const auto& node = lat.levels[k][n];
      double Lnode = opp.L[k][n];
      double EdL = -Lnode;
      for (const auto& br : node.branches) EdL += br.prob * opp.L[k + 1][br.child];
      auto ctx = detail::empirical_context(spec, C, node, opp.L[k + 1], Lnode, dAk);
      double gmax = maximize_g(ctx, opp.strategy[k][n].pi, unsigned(k) * 131u + unsigned(n)).value;
      double ustar = dmu > 0.0 ? eval_conjugate(spec, lat.times[k], Lnode) * (dmu / dAk) : 0.0;
      res[k][n] = EdL / dAk + spec.p * (ustar + gmax);
    }
  }
  return res;
}

// Orthogonal decomposition of the one-step martingale part of L against R:
// regression coefficient phi on the diffusion branches, jump table read from
// the jump branches, residual orthogonal to dR by the normal equations.
struct MartingaleParts {
  double aL = 0.0;
  Vec phi;
  std::vector<std::pair<int, double>> jumpW;
  std::vector<double> residualN;
  bool reduced_rank = false;
};

inline std::vector<std::vector<MartingaleParts>> decompose_martingale_part(
    const OpportunityLattice& opp, const MarketLattice& lat) {
  const int N = lat.periods();
  const int d = lat.d;
  std::vector<std::vector<MartingaleParts>> out(N);
  for (int k = 0; k < N; ++k) {
    out[k].resize(lat.levels[k].size());
    for (std::size_t n = 0; n < lat.levels[k].size(); ++n) {
      const auto& node = lat.levels[k][n];
      MartingaleParts& mp = out[k][n];
      double Lnode = opp.L[k][n];
      double EdL = 0.0;
      Vec EdR = Vec::Zero(d);
      for (const auto& br : node.branches) {
        EdL += br.prob * (opp.L[k + 1][br.child] - Lnode);
        EdR += br.prob * br.dR;
      }
      mp.aL = EdL / lat.dA[k];
      mp.phi = Vec::Zero(d);
      mp.residualN.assign(node.branches.size(), 0.0);

      std::vector<int> diff;
      for (int b = 0; b < int(node.branches.size()); ++b)
        if (node.branches[b].atom < 0) diff.push_back(b);

      double c0 = 0.0;
      if (!diff.empty()) {
        Mat A(int(diff.size()), d + 1);
        Vec rhs(int(diff.size()));
        for (int i = 0; i < int(diff.size()); ++i) {
          const auto& br = node.branches[diff[i]];
          double sw = std::sqrt(br.prob);
          A(i, 0) = sw;
          A.row(i).tail(d) = sw * (br.dR - EdR).transpose();
          rhs[i] = sw * (opp.L[k + 1][br.child] - Lnode - EdL);
        }
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(A);
        cod.setThreshold(1e-12);
        Vec coef = cod.solve(rhs);
        mp.reduced_rank = cod.rank() < d + 1;
        c0 = coef[0];
        mp.phi = coef.tail(d);
      }

      for (int b = 0; b < int(node.branches.size()); ++b) {
        const auto& br = node.branches[b];
        double dLb = opp.L[k + 1][br.child] - Lnode - EdL;
        if (br.atom >= 0)
          mp.jumpW.push_back({b, dLb});
        else
          mp.residualN[b] = dLb - c0 - mp.phi.dot(br.dR - EdR);
      }
    }
  }
  return out;
}

// Deterministic reduction with constant characteristics: backward RK4 on
// L'(t) = -p [ delta U*(L) + L g0 dA ], terminal value D_T.
inline std::vector<std::pair<double, double>> solve_levy_ode(const PowerUtilitySpec& spec,
                                                             const JointCharacteristics& chars,
                                                             const ConstraintSet& C,
                                                             int steps = 2000) {
  spec.validate();
  chars.validate();
  if (chars.cRL.norm() > 0.0)
    throw config_error("deterministic reduction needs zero opportunity covariation");
  for (const auto& a : chars.atoms)
    if (a.xp != 0.0) throw config_error("deterministic reduction needs zero opportunity jumps");

  auto ctx = GContext::make(spec.p, 1.0, chars, C);
  double g0 = maximize_g(ctx).value;

  auto rhs = [&](double t, double L) {
    double drive = spec.intermediate ? eval_conjugate(spec, t, L) : 0.0;
    return -spec.p * (drive + L * g0 * chars.dA);
  };
  double h = spec.T / steps;
  double L = spec.D(spec.T);
  std::vector<std::pair<double, double>> table;
  table.reserve(steps + 1);
  table.push_back({spec.T, L});
  for (int i = 0; i < steps; ++i) {
    double t = spec.T - i * h;
    double k1 = rhs(t, L);
    double k2 = rhs(t - 0.5 * h, L - 0.5 * h * k1);
    double k3 = rhs(t - 0.5 * h, L - 0.5 * h * k2);
    double k4 = rhs(t - h, L - h * k3);
    L -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!(L > 0.0)) throw std::runtime_error("opportunity process left the positive domain");
    table.push_back({spec.T - (i + 1) * h, L});
  }
  std::reverse(table.begin(), table.end());
  return table;
}

// Deterministic-coefficient quadratic BSDE reduction: backward RK4 on
// Y'(t) = f(Y, 0, 0) with Y(T) = log D_T; the opportunity process is e^Y.
inline std::vector<std::pair<double, double>> solve_deterministic_ito(
    const PowerUtilitySpec& spec, const std::function<Vec(double)>& theta, const Mat& sigma,
    const ConstraintSet& C, int steps = 2000) {
  spec.validate();
  Vec zero = Vec::Zero(sigma.cols());
  auto rhs = [&](double t, double Y) {
    return hu_driver(Y, zero, theta(t), sigma, C, spec, spec.D(t));
  };
  double h = spec.T / steps;
  double Y = std::log(spec.D(spec.T));
  std::vector<std::pair<double, double>> table;
  table.reserve(steps + 1);
  table.push_back({spec.T, Y});
  for (int i = 0; i < steps; ++i) {
    double t = spec.T - i * h;
    double k1 = rhs(t, Y);
    double k2 = rhs(t - 0.5 * h, Y - 0.5 * h * k1);
    double k3 = rhs(t - 0.5 * h, Y - 0.5 * h * k2);
    double k4 = rhs(t - h, Y - h * k3);
    Y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    table.push_back({spec.T - (i + 1) * h, Y});
  }
  std::reverse(table.begin(), table.end());
  return table;
}

inline std::vector<std::pair<double, double>> solve_deterministic_ito(
    const PowerUtilitySpec& spec, const Vec& theta, const Mat& sigma, const ConstraintSet& C,
    int steps = 2000) {
  return solve_deterministic_ito(
      spec, std::function<Vec(double)>([theta](double) { return theta; }), sigma, C, steps);
}

// Minimality report of a candidate against the computed opportunity process.
struct OracleComparison {
  double max_violation = 0.0;
  double max_abs_diff = 0.0;
  double sup_ratio = 0.0;
  bool minimal = true;
  bool identical = true;
};

inline OracleComparison compare_solution_to_oracle(const SolutionTriple& cand,
                                                   const OpportunityLattice& opp) {
  if (cand.ell.size() != opp.L.size())
    throw config_error("candidate and oracle live on different lattices");
  OracleComparison rep;
  for (std::size_t k = 0; k < cand.ell.size(); ++k) {
    if (cand.ell[k].size() != opp.L[k].size())
      throw config_error("candidate and oracle node counts differ at level " + std::to_string(k));
    for (std::size_t n = 0; n < cand.ell[k].size(); ++n) {
      double diff = cand.ell[k][n] - opp.L[k][n];
      rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(diff));
      rep.max_violation = std::max(rep.max_violation, -diff);
      rep.sup_ratio = std::max(rep.sup_ratio, cand.ell[k][n] / opp.L[k][n]);
    }
  }
  rep.minimal = rep.max_violation <= 1e-9;
  rep.identical = rep.max_abs_diff <= 1e-9;
  return rep;
}

}  // namespace bellport
