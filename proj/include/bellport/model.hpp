#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bellport/linalg.hpp"

namespace bellport {

// x^p with the boundary conventions used throughout: 0^p = 0 for p > 0 and
// +inf for p < 0. Negative bases are a caller bug and surface as NaN.
inline double upow(double x, double p) {
  if (x > 0.0) return std::pow(x, p);
  if (x == 0.0) return p > 0.0 ? 0.0 : kPosInf;
  return std::numeric_limits<double>::quiet_NaN();
}

// Power utility preferences with a deterministic taste path D and horizon T.
// D is stored as samples on a uniform grid over [0, T] (size 1 = constant)
// and evaluated by linear interpolation.
struct PowerUtilitySpec {
  double p = 0.5;
  std::vector<double> D_vals{1.0};
  bool intermediate = false;  // charge consumption along the way, not only at T
  double x0 = 1.0;
  double T = 1.0;

  double q() const { return p / (p - 1.0); }
  double beta() const { return 1.0 / (1.0 - p); }

  double D(double t) const {
    if (D_vals.size() == 1) return D_vals[0];
    double s = std::clamp(t / T, 0.0, 1.0) * double(D_vals.size() - 1);
    std::size_t i = std::min(std::size_t(s), D_vals.size() - 2);
    double w = s - double(i);
    return (1.0 - w) * D_vals[i] + w * D_vals[i + 1];
  }

  void validate() const {
    if (!(p < 1.0) || p == 0.0 || !std::isfinite(p))
      throw config_error("utility exponent must lie in (-inf,0) or (0,1)");
    if (D_vals.empty()) throw config_error("taste path D is empty");
    for (double d : D_vals)
      if (!(d > 0.0)) throw config_error("taste path D must be positive");
    if (!(x0 > 0.0)) throw config_error("initial capital must be positive");
    if (!(T > 0.0)) throw config_error("horizon must be positive");
  }
};

// U_t(x) = D(t) * x^p / p on x > 0.
inline double eval_utility(const PowerUtilitySpec& spec, double t, double x) {
  if (!(x > 0.0)) throw std::domain_error("utility argument must be positive");
  return spec.D(t) * upow(x, spec.p) / spec.p;
}

// Convex conjugate sup_{x>0} (U_t(x) - x*y) = -(1/q) y^q D(t)^beta on y > 0.
inline double eval_conjugate(const PowerUtilitySpec& spec, double t, double y) {
  if (!(y > 0.0)) throw std::domain_error("conjugate argument must be positive");
  return -(1.0 / spec.q()) * std::pow(y, spec.q()) * std::pow(spec.D(t), spec.beta());
}

// Truncation used for drift bookkeeping: keep jumps inside the unit ball.
inline Vec cutoff(const Vec& x) {
  return x.norm() <= 1.0 ? x : Vec(Vec::Zero(x.size()));
}

// One jump of the pair (returns, companion scalar) with arrival rate w per unit clock.
struct JumpAtom {
  Vec x;          // return jump
  double xp = 0;  // companion jump
  double w = 0;   // rate
};

// Local differential data of the return vector and a companion scalar process,
// all rates per unit of the operational clock (clock = calendar time here).
struct JointCharacteristics {
  int d = 1;
  Vec bR;    // return drift under the unit-ball cutoff
  double aL = 0.0;  // companion drift
  Mat cR;    // covariance rate of the continuous return part
  Vec cRL;   // covariance rate between returns and the companion
  std::vector<JumpAtom> atoms;
  double dA = 1.0;  // clock rate multiplier

  static JointCharacteristics make(int d) {
    JointCharacteristics c;
    c.d = d;
    c.bR = Vec::Zero(d);
    c.cR = Mat::Zero(d, d);
    c.cRL = Vec::Zero(d);
    return c;
  }

  void validate() const {
    if (d < 1) throw config_error("dimension must be at least 1");
    if (bR.size() != d || cR.rows() != d || cR.cols() != d || cRL.size() != d)
      throw config_error("characteristic shapes do not match dimension");
    if (!(dA > 0.0)) throw config_error("clock rate must be positive");
    for (const auto& a : atoms) {
      if (a.x.size() != d) throw config_error("jump atom dimension mismatch");
      if (!(a.w > 0.0)) throw config_error("jump rates must be positive");
    }
  }

  // Cut-off independent drift rate: bR plus the uncompensated large-jump mass.
  Vec drift_rate() const {
    Vec a = bR;
    for (const auto& at : atoms) a += at.w * (at.x - cutoff(at.x));
    return a;
  }
};

// Integrability weight of the large jumps at exponent p. Finite lattice data
// always gives a finite value; the number itself feeds suitability reporting.
inline double p_suitable_check(const JointCharacteristics& chars, double p) {
  double s = 0.0;
  for (const auto& a : chars.atoms)
    if (a.x.norm() > 1.0) s += a.w * (1.0 + std::abs(a.xp)) * std::pow(1.0 + a.x.norm(), p);
  return s;
}

struct StructureCondition {
  bool ok = false;
  Vec lambda;      // minimum-norm market price of risk when ok
  double residual = 0.0;
};

// Decide whether the drift lies in the range of the covariance; report the
// minimum-norm solution of cR * lambda = bR or the failure (arbitrage caveat).
inline StructureCondition check_structure_condition(const JointCharacteristics& chars) {
  StructureCondition out;
  auto sol = minnorm_solve(chars.cR, chars.bR);
  if (!sol) {
    out.ok = false;
    out.lambda = Vec::Zero(chars.d);
    out.residual = chars.bR.norm();
    return out;
  }
  out.ok = true;
  out.lambda = *sol;
  out.residual = (chars.cR * out.lambda - chars.bR).norm();
  return out;
}

// ---------------------------------------------------------------------------
// Lattices

struct LatticeBranch {
  Vec dR;
  double prob = 0.0;
  int child = 0;   // node index at the next level
  int atom = -1;   // >= 0 when the branch realizes that jump atom
};

struct LatticeNode {
  std::vector<LatticeBranch> branches;  // empty at the terminal level
};

struct MarketLattice {
  int d = 1;
  std::vector<double> times;                     // size N+1
  std::vector<std::vector<LatticeNode>> levels;  // size N+1
  std::vector<double> dA;                        // clock increments, size N

  int periods() const { return int(times.size()) - 1; }

  // True when every non-root node is reached by exactly one branch, so each
  // node carries a unique history and path quantities are well defined.
  bool is_tree() const {
    for (int k = 0; k + 1 < int(levels.size()); ++k) {
      std::vector<int> indeg(levels[k + 1].size(), 0);
      for (const auto& node : levels[k])
        for (const auto& br : node.branches) {
          if (br.child < 0 || br.child >= int(indeg.size())) return false;
          ++indeg[br.child];
        }
      for (int c : indeg)
        if (c != 1) return false;
    }
    return levels.empty() ? false : levels[0].size() == 1;
  }

  void validate(double tol = 1e-12) const {
    if (times.size() < 2 || levels.size() != times.size() || dA.size() + 1 != times.size())
      throw lattice_error("lattice level bookkeeping is inconsistent");
    for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
      for (const auto& node : levels[k]) {
        if (node.branches.empty()) throw lattice_error("interior node without branches");
        double mass = 0.0;
        for (const auto& br : node.branches) {
          if (br.dR.size() != d) throw lattice_error("branch dimension mismatch");
          if (br.prob < -tol) throw lattice_error("negative branch probability");
          if (br.child < 0 || br.child >= int(levels[k + 1].size()))
            throw lattice_error("branch child out of range");
          mass += br.prob;
        }
        if (std::abs(mass - 1.0) > 1e-12 * std::max<double>(1.0, node.branches.size()))
          throw lattice_error("branch probabilities do not sum to one");
      }
    }
  }
};

// Consumption clock increment of step k (zero when consumption is terminal only).
inline double dmu_step(const MarketLattice& lat, const PowerUtilitySpec& spec, int k) {
  return spec.intermediate ? lat.times[k + 1] - lat.times[k] : 0.0;
}

enum class LatticeScheme { binomial, multinomial };

namespace detail {

// Branch menu of a single step of length dt: two diffusion branches per
// covariance direction plus one branch per jump atom. The diffusion mean is
// chosen so the exact first moment equals drift_rate * dt.
inline std::vector<LatticeBranch> step_branches(const JointCharacteristics& chars, double dt) {
  double wsum = 0.0;
  for (const auto& a : chars.atoms) wsum += a.w;
  double q0 = 1.0 - dt * wsum;
  if (!(q0 > 0.0)) {
    double cap = wsum > 0.0 ? 1.0 / wsum : kPosInf;
    throw lattice_error("step size too large for the jump intensity; need dt < " +
                        std::to_string(cap));
  }
  Mat sigma = psd_sqrt(chars.cR);
  bool has_diff = sigma.norm() > 0.0;
  Vec jump_mean = Vec::Zero(chars.d);
  for (const auto& a : chars.atoms) jump_mean += a.w * a.x;
  Vec m = (chars.drift_rate() - jump_mean) / q0;

  std::vector<LatticeBranch> out;
  if (has_diff) {
    int nd = chars.d;
    double scale = std::sqrt(double(nd) * dt / q0);
    for (int k = 0; k < nd; ++k) {
      Vec v = scale * sigma.col(k);
      out.push_back({m * dt + v, q0 / (2.0 * nd), 0, -1});
      out.push_back({m * dt - v, q0 / (2.0 * nd), 0, -1});
    }
  } else {
    out.push_back({m * dt, q0, 0, -1});
  }
  for (int i = 0; i < int(chars.atoms.size()); ++i)
    out.push_back({chars.atoms[i].x, chars.atoms[i].w * dt, 0, i});
  return out;
}

}  // namespace detail

// Build an N-step lattice on [0, T]. The default is the collapsed (one node
// per time) form; expand = true grows a genuine tree with per-path nodes,
// subject to the node budget.
inline MarketLattice build_lattice(const JointCharacteristics& chars, double T, int steps,
                                   LatticeScheme scheme, bool expand = false,
                                   std::size_t max_nodes = 2'000'000) {
  chars.validate();
  if (steps < 1) throw lattice_error("need at least one step");
  if (!(T > 0.0)) throw lattice_error("horizon must be positive");
  if (scheme == LatticeScheme::binomial && chars.d != 1)
    throw lattice_error("binomial scheme requires a single asset");

  double dt = T / steps;
  auto menu = detail::step_branches(chars, dt * chars.dA);
  MarketLattice lat;
  lat.d = chars.d;
  lat.times.resize(steps + 1);
  for (int k = 0; k <= steps; ++k) lat.times[k] = dt * k;
  lat.dA.assign(steps, dt * chars.dA);
  lat.levels.resize(steps + 1);

  std::size_t count = 1;
  lat.levels[0].resize(1);
  for (int k = 0; k < steps; ++k) {
    std::size_t width = lat.levels[k].size();
    std::size_t next = expand ? width * menu.size() : 1;
    count += next;
    if (count > max_nodes) throw lattice_error("expanded tree exceeds the node budget");
    lat.levels[k + 1].resize(next);
    for (std::size_t n = 0; n < width; ++n) {
      auto& node = lat.levels[k][n];
      node.branches = menu;
      if (expand)
        for (std::size_t b = 0; b < menu.size(); ++b)
          node.branches[b].child = int(n * menu.size() + b);
    }
  }
  lat.validate();
  return lat;
}

// Per-node investment fraction vector and consumption propensity.
struct NodeStrategy {
  Vec pi;
  double kappa = 0.0;
};

using StrategyTable = std::vector<std::vector<NodeStrategy>>;

inline StrategyTable constant_strategy(const MarketLattice& lat, const Vec& pi, double kappa) {
  StrategyTable st(lat.levels.size());
  for (std::size_t k = 0; k < lat.levels.size(); ++k) {
    bool terminal = k + 1 == lat.levels.size();
    st[k].assign(lat.levels[k].size(), NodeStrategy{pi, terminal ? 1.0 : kappa});
  }
  return st;
}

// Forward wealth along an expanded tree. Requires strictly positive
// multipliers; the violating node is named otherwise.
inline std::vector<std::vector<double>> wealth_path(const MarketLattice& lat,
                                                    const PowerUtilitySpec& spec,
                                                    const StrategyTable& strat) {
  if (!lat.is_tree())
    throw lattice_error("wealth paths need an expanded tree (unique node histories)");
  std::vector<std::vector<double>> X(lat.levels.size());
  for (std::size_t k = 0; k < lat.levels.size(); ++k) X[k].assign(lat.levels[k].size(), 0.0);
  X[0][0] = spec.x0;
  for (std::size_t k = 0; k + 1 < lat.levels.size(); ++k) {
    double dmu = dmu_step(lat, spec, int(k));
    for (std::size_t n = 0; n < lat.levels[k].size(); ++n) {
      const NodeStrategy& s = strat.at(k).at(n);
      for (const auto& br : lat.levels[k][n].branches) {
        double mult = 1.0 + s.pi.dot(br.dR) - s.kappa * dmu;
        if (!(mult > 0.0))
          throw admissibility_error("wealth multiplier vanished at level " + std::to_string(k) +
                                    " node " + std::to_string(n));
        X[k + 1][br.child] = X[k][n] * mult;
      }
    }
  }
  return X;
}

}  // namespace bellport
