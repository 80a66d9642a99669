#pragma once

#include <optional>
#include <random>

#include "bellport/constraints.hpp"

namespace bellport {

// Everything needed to evaluate the local drift objective at one point in
// time: the left limit of the opportunity process, the joint characteristics
// with per-atom opportunity jumps, and the admissible set.
struct GContext {
  double p = 0.5;
  double ell_minus = 1.0;
  JointCharacteristics chars = JointCharacteristics::make(1);
  ConstraintSet constraint = ConstraintSet::full_space(1);
  NaturalConstraints natural;

  static GContext make(double p, double ell, JointCharacteristics ch, ConstraintSet C) {
    GContext ctx{p, ell, std::move(ch), std::move(C), {}};
    ctx.natural = NaturalConstraints::from(ctx.chars);
    ctx.validate();
    return ctx;
  }

  void validate() const {
    if (p == 0.0 || p >= 1.0) throw config_error("exponent must lie in (-inf,0) or (0,1)");
    if (!(ell_minus > 0.0)) throw config_error("left limit of the opportunity process must be positive");
    chars.validate();
    if (constraint.dim() != chars.d) throw config_error("constraint dimension mismatch");
    for (const auto& a : chars.atoms)
      if (a.w > 0.0 && !(ell_minus + a.xp > 0.0))
        throw structure_error("opportunity jump would make the process nonpositive");
  }
};

// Extended-real result: a genuine -inf value (possible for p < 0 at a
// zero-margin atom) is distinct from evaluation outside the closure of the
// admissible margins.
struct GValue {
  double value = 0.0;
  bool in_domain = true;
};

namespace detail {

inline GValue eval_g_impl(const GContext& ctx, const Vec& y, bool with_cutoff) {
  const double p = ctx.p;
  double val = ctx.ell_minus * y.dot(ctx.chars.bR) + y.dot(ctx.chars.cRL) +
               ctx.ell_minus * 0.5 * (p - 1.0) * y.dot(ctx.chars.cR * y);
  for (const auto& a : ctx.chars.atoms) {
    if (a.w <= 0.0) continue;
    double m = 1.0 + y.dot(a.x);
    double tol = 1e-12 * std::max(1.0, y.norm() * a.x.norm());
    if (m < -tol) return {kNegInf, false};
    m = std::max(m, 0.0);
    double ydh = (with_cutoff && a.x.norm() <= 1.0) ? y.dot(a.x) : 0.0;
    val += a.w * (a.xp * ydh + (ctx.ell_minus + a.xp) * ((upow(m, p) - 1.0) / p - ydh));
  }
  return {val, true};
}

}  // namespace detail

inline GValue eval_g(const GContext& ctx, const Vec& y) {
  return detail::eval_g_impl(ctx, y, true);
}

// Pointwise consumption objective U_t(k) - ell * k; its supremum over k is the
// convex conjugate and is attained at kappa_star.
inline double eval_f(const GContext& ctx, const PowerUtilitySpec& spec, double t, double k) {
  if (k < 0.0) throw config_error("consumption propensity must be nonnegative");
  return spec.D(t) * upow(k, spec.p) / spec.p - ctx.ell_minus * k;
}

inline double kappa_star(const PowerUtilitySpec& spec, double t, double ell) {
  if (!(ell > 0.0)) throw config_error("opportunity value must be positive");
  return std::pow(spec.D(t) / ell, spec.beta());
}

// Gradient and Hessian of g; both need strictly positive margins.
inline Vec grad_g(const GContext& ctx, const Vec& y) {
  const double p = ctx.p;
  Vec grad = ctx.ell_minus * ctx.chars.bR + ctx.chars.cRL +
             ctx.ell_minus * (p - 1.0) * (ctx.chars.cR * y);
  for (const auto& a : ctx.chars.atoms) {
    if (a.w <= 0.0) continue;
    double m = 1.0 + y.dot(a.x);
    if (!(m > 0.0)) throw std::domain_error("gradient needs strictly positive jump margins");
    Vec h = cutoff(a.x);
    grad += a.w * (a.xp * h + (ctx.ell_minus + a.xp) * (upow(m, p - 1.0) * a.x - h));
  }
  return grad;
}

inline Mat hess_g(const GContext& ctx, const Vec& y) {
  const double p = ctx.p;
  Mat H = ctx.ell_minus * (p - 1.0) * ctx.chars.cR;
  for (const auto& a : ctx.chars.atoms) {
    if (a.w <= 0.0) continue;
    double m = 1.0 + y.dot(a.x);
    if (!(m > 0.0)) throw std::domain_error("Hessian needs strictly positive jump margins");
    H += a.w * (ctx.ell_minus + a.xp) * (p - 1.0) * upow(m, p - 2.0) * (a.x * a.x.transpose());
  }
  return H;
}

// Formal directional derivative of g at ycheck in the direction of y.
inline double directional_G(const GContext& ctx, const Vec& y, const Vec& ycheck) {
  const double p = ctx.p;
  Vec dy = y - ycheck;
  double val = ctx.ell_minus * dy.dot(ctx.chars.bR) + dy.dot(ctx.chars.cRL) +
               ctx.ell_minus * (p - 1.0) * dy.dot(ctx.chars.cR * ycheck);
  for (const auto& a : ctx.chars.atoms) {
    if (a.w <= 0.0) continue;
    double m = 1.0 + ycheck.dot(a.x);
    if (!(m > 0.0))
      throw std::domain_error("directional derivative needs a strict-margin base point");
    double dyh = a.x.norm() <= 1.0 ? dy.dot(a.x) : 0.0;
    val += a.w * (a.xp * dyh + (ctx.ell_minus + a.xp) * (upow(m, p - 1.0) * dy.dot(a.x) - dyh));
  }
  return val;
}

// ---------------------------------------------------------------------------
// Maximization of g over the admissible set

struct GMax {
  Vec argmax;
  double value = 0.0;
  bool attained = true;
};

namespace detail {

inline double g_or_neg_inf(const GContext& ctx, const Vec& y) {
  auto gv = eval_g(ctx, y);
  return gv.in_domain ? gv.value : kNegInf;
}

inline ConstraintSet windowed(const ConstraintSet& C, double R) {
  const int d = C.dim();
  switch (C.kind()) {
    case ConstraintKind::FullSpace:
      return ConstraintSet::box(Vec::Constant(d, -R), Vec::Constant(d, R));
    case ConstraintKind::Box: {
      Vec lo = C.lo().cwiseMax(-R), hi = C.hi().cwiseMin(R);
      return ConstraintSet::box(lo, hi);
    }
    case ConstraintKind::Polyhedron:
    case ConstraintKind::Cone: {
      int m = int(C.rows().rows());
      Mat A(m + 2 * d, d);
      Vec b(m + 2 * d);
      A.topRows(m) = C.rows();
      b.head(m) = C.bounds();
      A.middleRows(m, d) = Mat::Identity(d, d);
      A.bottomRows(d) = -Mat::Identity(d, d);
      b.tail(2 * d) = Vec::Constant(2 * d, R);
      return ConstraintSet::polyhedron(A, b);
    }
    default:
      return C;
  }
}

inline Mat active_rows_at(const ConstraintSet& W, const Vec& y) {
  const int d = int(y.size());
  std::vector<Vec> rows;
  switch (W.kind()) {
    case ConstraintKind::Box:
      for (int i = 0; i < d; ++i) {
        if (y[i] >= W.hi()[i] - 1e-9 * (1.0 + std::abs(W.hi()[i]))) rows.push_back(Vec(Vec::Unit(d, i)));
        if (y[i] <= W.lo()[i] + 1e-9 * (1.0 + std::abs(W.lo()[i]))) rows.push_back(Vec(-Vec::Unit(d, i)));
      }
      break;
    case ConstraintKind::Ball:
      if (y.norm() >= W.radius() - 1e-9 * (1.0 + W.radius()) && y.norm() > 0.0)
        rows.push_back(Vec(y / y.norm()));
      break;
    case ConstraintKind::Polyhedron:
    case ConstraintKind::Cone:
      for (int i = 0; i < W.rows().rows(); ++i)
        if (W.rows().row(i).dot(y) >= W.bounds()[i] - 1e-9 * (1.0 + std::abs(W.bounds()[i]) + y.norm()))
          rows.push_back(Vec(W.rows().row(i).transpose()));
      break;
    default:
      break;
  }
  Mat A(int(rows.size()), d);
  for (int i = 0; i < int(rows.size()); ++i) A.row(i) = rows[i].transpose();
  return A;
}

// Projected gradient ascent with Newton polish over one convex window.
inline std::pair<Vec, double> ascend_window(const GContext& ctx, const ConstraintSet& W,
                                            const std::vector<Vec>& starts) {
  const int d = ctx.chars.d;
  const double floor = ctx.p < 0.0 ? kMarginFloor : -kPosInf;
  auto feasible_val = [&](const Vec& y) {
    if (ctx.natural.margin(y) < floor) return kNegInf;
    return g_or_neg_inf(ctx, y);
  };

  Vec besty = Vec::Zero(d);
  double bestv = feasible_val(besty);

  for (Vec y0 : starts) {
    Vec y = W.project(y0)[0];
    double fy = feasible_val(y);
    if (fy == kNegInf) {
      // Walk the start toward the origin until the margins open up.
      for (int k = 0; k < 60 && fy == kNegInf; ++k) {
        y *= 0.5;
        fy = feasible_val(y);
      }
      if (fy == kNegInf) continue;
    }
    double step = 1.0;
    int stall = 0;
    for (int it = 0; it < 1500 && stall < 8; ++it) {
      if (ctx.natural.margin(y) <= 1e-13) y *= 1.0 - 1e-9;
      Vec gr;
      try {
        gr = grad_g(ctx, y);
      } catch (const std::domain_error&) {
        y *= 1.0 - 1e-9;
        continue;
      }
      bool moved = false;
      for (int bt = 0; bt < 55; ++bt) {
        Vec cand = W.project(Vec(y + step * gr))[0];
        double fc = feasible_val(cand);
        if (fc > fy) {
          double gain = fc - fy;
          y = cand;
          fy = fc;
          step *= 1.7;
          moved = true;
          if (gain <= 1e-15 * (1.0 + std::abs(fy))) ++stall;
          else stall = 0;
          break;
        }
        step *= 0.5;
      }
      if (!moved) ++stall;
    }

    // Newton polish: full step when it stays feasible, otherwise restricted to
    // the active face of the window.
    for (int round = 0; round < 40; ++round) {
      Vec gr;
      Mat H;
      try {
        gr = grad_g(ctx, y);
        H = hess_g(ctx, y);
      } catch (const std::domain_error&) {
        break;
      }
      Vec dy = Vec::Zero(d);
      Eigen::LDLT<Mat> ldlt(Mat(-H));
      if (ldlt.info() == Eigen::Success) dy = ldlt.solve(gr);
      Mat Aact = active_rows_at(W, y);
      Vec dyr = Vec::Zero(d);
      if (Aact.rows() > 0) {
        Mat Z = kernel_basis(Aact, d);
        if (Z.cols() > 0) {
          Mat Hr = Z.transpose() * H * Z;
          Eigen::LDLT<Mat> lr(Mat(-Hr));
          if (lr.info() == Eigen::Success) dyr = Z * lr.solve(Vec(Z.transpose() * gr));
        }
      }
      bool improved = false;
      for (const Vec& base : {dy, dyr}) {
        if (base.norm() <= 1e-16 * (1.0 + y.norm())) continue;
        double s = 1.0;
        for (int bt = 0; bt < 45; ++bt) {
          Vec cand = W.project(Vec(y + s * base))[0];
          double fc = feasible_val(cand);
          if (fc > fy) {
            y = cand;
            fy = fc;
            improved = true;
            break;
          }
          s *= 0.5;
        }
        if (improved) break;
      }
      if (!improved) break;
    }

    // Stationarity polish. Value comparisons saturate once the remaining gain
    // drops below the resolution of fy, which leaves the gradient residual
    // around 1e-8. Accept contracting Newton steps on the active face without
    // demanding a representable improvement.
    double prev_norm = kPosInf;
    int expansions = 0;
    for (int round = 0; round < 30; ++round) {
      Vec gr;
      Mat H;
      try {
        gr = grad_g(ctx, y);
        H = hess_g(ctx, y);
      } catch (const std::domain_error&) {
        break;
      }
      Mat Aact = active_rows_at(W, y);
      Vec dy = Vec::Zero(d);
      if (Aact.rows() == 0) {
        Eigen::LDLT<Mat> ldlt(Mat(-H));
        if (ldlt.info() != Eigen::Success) break;
        dy = ldlt.solve(gr);
      } else {
        Mat Z = kernel_basis(Aact, d);
        if (Z.cols() == 0) break;
        Eigen::LDLT<Mat> lr(Mat(-Z.transpose() * H * Z));
        if (lr.info() != Eigen::Success) break;
        dy = Z * lr.solve(Vec(Z.transpose() * gr));
      }
      double n = dy.norm();
      if (!std::isfinite(n) || n <= 1e-14 * (1.0 + y.norm())) break;
      if (n > 0.9 * prev_norm && ++expansions > 2) break;
      Vec cand = W.project(Vec(y + dy))[0];
      double fc = feasible_val(cand);
      if (fc == kNegInf || fc < fy - 1e-12 * (1.0 + std::abs(fy))) break;
      y = cand;
      fy = std::max(fy, fc);
      prev_norm = n;
    }

    if (fy > bestv) {
      bestv = fy;
      besty = y;
    }
  }
  return {besty, bestv};
}

inline std::vector<Vec> audit_points(const ConstraintSet& W, const NaturalConstraints& nat,
                                     double p, const Vec& around, unsigned seed) {
  const int d = W.dim();
  std::vector<Vec> pts;
  double B = std::max(4.0, 2.0 * around.lpNorm<Eigen::Infinity>());
  Vec lo, hi;
  W.bounding_box(B, lo, hi);
  auto admit = [&](const Vec& y) {
    if (!W.contains(y, 1e-9)) return false;
    double m = nat.margin(y);
    return p < 0.0 ? m > 1e-9 : m >= -1e-9;
  };
  if (d == 1) {
    for (int i = 0; i <= 40; ++i) {
      Vec y(1);
      y << lo[0] + (hi[0] - lo[0]) * i / 40.0;
      if (admit(y)) pts.push_back(y);
    }
  } else if (d == 2) {
    for (int i = 0; i <= 40; ++i)
      for (int j = 0; j <= 40; ++j) {
        Vec y(2);
        y << lo[0] + (hi[0] - lo[0]) * i / 40.0, lo[1] + (hi[1] - lo[1]) * j / 40.0;
        if (admit(y)) pts.push_back(y);
      }
  } else {
    std::mt19937 rng(seed + 17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1600; ++i) {
      Vec y(d);
      for (int c = 0; c < d; ++c) y[c] = lo[c] + (hi[c] - lo[c]) * u(rng);
      y = W.project(y)[0];
      if (admit(y)) pts.push_back(y);
    }
  }
  std::mt19937 rng(seed + 29);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double eps : {1e-6, 1e-4, 1e-2}) {
    for (int i = 0; i < 6; ++i) {
      Vec y = around;
      for (int c = 0; c < d; ++c) y[c] += eps * n(rng);
      y = W.project(y)[0];
      if (admit(y)) pts.push_back(y);
    }
  }
  return pts;
}

inline GMax maximize_quadratic(const GContext& ctx) {
  // Atom-free objective: complete the square and project in the sigma' image.
  const int d = ctx.chars.d;
  Vec lincoef = ctx.chars.bR + ctx.chars.cRL / ctx.ell_minus;
  if (ctx.chars.cR.norm() == 0.0) {
    if (lincoef.norm() > 0.0)
      throw structure_error("drift is not in the range of the covariance");
    return {Vec::Zero(d), 0.0, true};
  }
  auto Lambda = minnorm_solve(ctx.chars.cR, lincoef);
  if (!Lambda) throw structure_error("drift is not in the range of the covariance");
  Mat sigma = psd_sqrt(ctx.chars.cR);
  auto img = sigma_image(sigma, ctx.constraint);
  double beta = 1.0 / (1.0 - ctx.p);
  auto [zp, w] = img.project(Vec(sigma.transpose() * (beta * *Lambda)));
  (void)zp;
  auto gv = eval_g(ctx, w);
  return {w, gv.value, true};
}

}  // namespace detail

// Maximize g over constraint ∩ {nonnegative margins}. Dispatch: atom-free
// contexts use the closed form via the sigma' image; finite sets enumerate;
// star unions run a golden-section search per segment; everything else runs
// projected gradient ascent with Newton polish, an audit grid, and window
// doubling to detect an unbounded objective.
inline GMax maximize_g(const GContext& ctx, std::optional<Vec> start = std::nullopt,
                       unsigned seed = 0) {
  const int d = ctx.chars.d;
  const ConstraintSet& C = ctx.constraint;

  if (C.kind() == ConstraintKind::FiniteSet) {
    Vec besty = Vec::Zero(d);
    double bestv = kNegInf;
    for (const auto& pt : C.points()) {
      auto gv = eval_g(ctx, pt);
      if (!gv.in_domain) continue;
      if (gv.value > bestv || (gv.value == bestv && pt.norm() < besty.norm())) {
        bestv = gv.value;
        besty = pt;
      }
    }
    if (bestv == kNegInf) return {Vec::Zero(d), eval_g(ctx, Vec(Vec::Zero(d))).value, true};
    return {besty, bestv, true};
  }

  bool has_atoms = false;
  for (const auto& a : ctx.chars.atoms) has_atoms = has_atoms || a.w > 0.0;

  if (!has_atoms) {
    try {
      return detail::maximize_quadratic(ctx);
    } catch (const not_representable_error&) {
      // No closed form for this sigma/constraint pair; use the iterative path.
    }
  }

  if (C.kind() == ConstraintKind::ScaledStar) {
    Vec besty = Vec::Zero(d);
    double bestv = 0.0;
    for (const auto& base : C.points()) {
      auto phi = [&](double t) { return detail::g_or_neg_inf(ctx, Vec(t * base)); };
      double a = 0.0, b = 1.0;
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
      double f1 = phi(x1), f2 = phi(x2);
      for (int it = 0; it < 200; ++it) {
        if (f1 < f2) {
          a = x1;
          x1 = x2;
          f1 = f2;
          x2 = a + gr * (b - a);
          f2 = phi(x2);
        } else {
          b = x2;
          x2 = x1;
          f2 = f1;
          x1 = b - gr * (b - a);
          f1 = phi(x1);
        }
      }
      for (double t : {0.5 * (a + b), 1.0}) {
        double v = phi(t);
        if (v > bestv) {
          bestv = v;
          besty = t * base;
        }
      }
    }
    return {besty, bestv, true};
  }

  // Convex iterative path with window doubling.
  std::mt19937 rng(seed * 7919u + 3u);
  std::normal_distribution<double> nrm(0.0, 1.0);
  bool intrinsically_bounded = C.kind() == ConstraintKind::Ball;
  double R = 8.0;
  if (C.kind() == ConstraintKind::Box && C.lo().allFinite() && C.hi().allFinite()) {
    intrinsically_bounded = true;
    R = std::max(R, std::max(C.lo().lpNorm<Eigen::Infinity>(), C.hi().lpNorm<Eigen::Infinity>()));
  }
  double prev = kNegInf;
  Vec y = Vec::Zero(d);
  double v = detail::g_or_neg_inf(ctx, y);
  for (;;) {
    ConstraintSet W = detail::windowed(C, R);
    std::vector<Vec> starts;
    starts.push_back(Vec::Zero(d));
    if (start) starts.push_back(*start);
    starts.push_back(y);
    for (int i = 0; i < 2; ++i) {
      Vec r(d);
      for (int c = 0; c < d; ++c) r[c] = nrm(rng);
      starts.push_back(Vec(0.5 * r));
    }
    auto [wy, wv] = detail::ascend_window(ctx, W, starts);
    for (int audit = 0; audit < 3; ++audit) {
      Vec better;
      double bv = wv;
      for (const auto& pt : detail::audit_points(W, ctx.natural, ctx.p, wy, seed + audit)) {
        double pv = detail::g_or_neg_inf(ctx, pt);
        if (pv > bv + 1e-13) {
          bv = pv;
          better = pt;
        }
      }
      if (better.size() == 0) break;
      auto [ry, rv] = detail::ascend_window(ctx, W, {better, wy});
      if (rv > wv) {
        wy = ry;
        wv = rv;
      }
    }
    y = wy;
    v = wv;
    bool at_edge = y.lpNorm<Eigen::Infinity>() >= 0.8 * R;
    if (intrinsically_bounded || !at_edge) return {y, v, true};
    if (v <= prev + 1e-12 * (1.0 + std::abs(v))) return {y, v, false};
    prev = v;
    R *= 4.0;
    if (R > 1e6) {
      // The argmax still sits at the window edge. A concave objective has a
      // nonincreasing slope along the ray, so the remaining gain is bounded by
      // slope * |y|; a vanishing bound means a finite sup approached at
      // infinity rather than an unbounded one.
      double gain_bound = kPosInf;
      if (y.norm() > 0.0) {
        try {
          gain_bound = grad_g(ctx, y).dot(y);
        } catch (const std::domain_error&) {
        }
      }
      if (gain_bound <= 1e-6 * (1.0 + std::abs(v))) return {y, v, false};
      throw unbounded_error("objective keeps growing along the admissible set");
    }
  }
}

// ---------------------------------------------------------------------------
// Continuous-case drivers

inline double continuous_driver_F(double ell, const Vec& phi, const Mat& sigma, const Vec& lambda,
                                  const ConstraintSet& C, double p) {
  if (!(ell > 0.0)) throw config_error("left limit must be positive");
  double beta = 1.0 / (1.0 - p);
  Vec Psi = sigma.transpose() * (lambda + phi / ell);
  auto img = sigma_image(sigma, C);
  return 0.5 * ell *
         (p * (1.0 - p) * img.distance_sq(Vec(beta * Psi)) + p / (p - 1.0) * Psi.squaredNorm());
}

inline double cone_driver_F(double ell, const Vec& phi, const Mat& sigma, const Vec& lambda,
                            const ConstraintSet& C, double p) {
  if (!(ell > 0.0)) throw config_error("left limit must be positive");
  Vec Psi = sigma.transpose() * (lambda + phi / ell);
  auto img = sigma_image(sigma, C);
  return p / (2.0 * (p - 1.0)) * ell * img.project(Psi).first.squaredNorm();
}

inline double hu_driver(double Y, const Vec& ztilde, const Vec& theta, const Mat& sigma,
                        const ConstraintSet& C, const PowerUtilitySpec& spec, double Dt) {
  double p = spec.p, q = spec.q(), beta = spec.beta();
  double delta = spec.intermediate ? 1.0 : 0.0;
  auto img = sigma_image(sigma, C);
  Vec s = theta + ztilde;
  return 0.5 * p * (1.0 - p) * img.distance_sq(Vec(beta * s)) + 0.5 * q * s.squaredNorm() +
         delta * (p - 1.0) * std::pow(Dt, beta) * std::exp((q - 1.0) * Y) -
         0.5 * ztilde.squaredNorm();
}

inline double hu_driver_split(double Y, const Vec& Z, const Vec& Zperp, const Vec& theta,
                              const Mat& sigma, const ConstraintSet& C,
                              const PowerUtilitySpec& spec, double Dt) {
  double p = spec.p, q = spec.q(), beta = spec.beta();
  double delta = spec.intermediate ? 1.0 : 0.0;
  auto img = sigma_image(sigma, C);
  Vec s = theta + Z;
  return 0.5 * p * (1.0 - p) * img.distance_sq(Vec(beta * s)) + 0.5 * q * s.squaredNorm() +
         delta * (p - 1.0) * std::pow(Dt, beta) * std::exp((q - 1.0) * Y) -
         0.5 * (Z.squaredNorm() + Zperp.squaredNorm());
}

}  // namespace bellport
