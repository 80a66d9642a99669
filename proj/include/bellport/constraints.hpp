#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

#include "bellport/model.hpp"

namespace bellport {

namespace detail {

inline void for_each_subset(int n, int k, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> idx(k);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == k) {
      fn(idx);
      return;
    }
    for (int i = start; i <= n - (k - depth); ++i) {
      idx[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  if (k >= 0 && k <= n) rec(0, 0);
}

inline bool rows_feasible(const Mat& A, const Vec& b, const Vec& y, double tol = 1e-9) {
  for (int i = 0; i < A.rows(); ++i)
    if (A.row(i).dot(y) > b[i] + tol * std::max(1.0, std::abs(b[i]) + y.norm() * A.row(i).norm()))
      return false;
  return true;
}

// Exact projection onto {y : A y <= b} by enumerating candidate active sets.
// Intended for small row counts; the active set of the true projection is one
// of the enumerated subsets, so the feasible candidate at minimal distance is
// the projection.
inline Vec project_onto_rows(const Mat& A, const Vec& b, const Vec& x) {
  if (rows_feasible(A, b, x)) return x;
  int d = int(x.size()), m = int(A.rows());
  double best = kPosInf;
  Vec besty = Vec::Zero(d);
  bool found = false;
  for (int s = 1; s <= std::min(d, m); ++s) {
    for_each_subset(m, s, [&](const std::vector<int>& S) {
      Mat AS(s, d);
      Vec bS(s);
      for (int i = 0; i < s; ++i) {
        AS.row(i) = A.row(S[i]);
        bS[i] = b[S[i]];
      }
      Vec z = lstsq(Mat(AS * AS.transpose()), Vec(AS * x - bS));
      Vec y = x - AS.transpose() * z;
      if ((AS * y - bS).norm() > 1e-8 * (1.0 + bS.norm() + y.norm())) return;
      if (!rows_feasible(A, b, y)) return;
      double dist = (x - y).squaredNorm();
      if (dist < best) {
        best = dist;
        besty = y;
        found = true;
      }
    });
  }
  if (!found) throw not_representable_error("projection onto an empty polyhedron");
  return besty;
}

// Vertex enumeration for {y : A y <= b}. Only meaningful when the system is
// bounded; callers add box rows when they need that guarantee.
inline std::vector<Vec> polyhedron_vertices(const Mat& A, const Vec& b) {
  int d = int(A.cols()), m = int(A.rows());
  std::vector<Vec> out;
  for_each_subset(m, d, [&](const std::vector<int>& S) {
    Mat AS(d, d);
    Vec bS(d);
    for (int i = 0; i < d; ++i) {
      AS.row(i) = A.row(S[i]);
      bS[i] = b[S[i]];
    }
    Eigen::FullPivLU<Mat> lu(AS);
    if (!lu.isInvertible()) return;
    Vec y = lu.solve(bS);
    if (!rows_feasible(A, b, y, 1e-8)) return;
    for (const auto& v : out)
      if ((v - y).norm() <= 1e-8 * (1.0 + y.norm())) return;
    out.push_back(y);
  });
  return out;
}

inline bool polyhedron_is_bounded(const Mat& A, const Vec& b) {
  (void)b;
  int d = int(A.cols());
  Mat A2(A.rows() + 2 * d, d);
  Vec b2(A.rows() + 2 * d);
  A2.topRows(A.rows()) = A;
  b2.head(A.rows()).setZero();
  A2.middleRows(A.rows(), d) = Mat::Identity(d, d);
  A2.bottomRows(d) = -Mat::Identity(d, d);
  b2.tail(2 * d).setOnes();
  for (const auto& v : polyhedron_vertices(A2, b2))
    if (v.lpNorm<Eigen::Infinity>() >= 1.0 - 1e-9) return false;
  return true;
}

}  // namespace detail

enum class ConstraintKind { FullSpace, Box, Ball, Polyhedron, Cone, FiniteSet, ScaledStar };

// Closed constraint set containing the origin. Non-convex sets are supported
// as finite point lists or unions of segments from the origin (star shape).
class ConstraintSet {
 public:
  static ConstraintSet full_space(int d) {
    ConstraintSet c(ConstraintKind::FullSpace, d);
    return c;
  }
  static ConstraintSet box(Vec lo, Vec hi) {
    ConstraintSet c(ConstraintKind::Box, int(lo.size()));
    c.lo_ = std::move(lo);
    c.hi_ = std::move(hi);
    if (c.lo_.size() != c.hi_.size()) throw config_error("box bound sizes differ");
    for (int i = 0; i < c.d_; ++i)
      if (!(c.lo_[i] <= 0.0 && 0.0 <= c.hi_[i]))
        throw config_error("box must contain the origin");
    return c;
  }
  static ConstraintSet ball(int d, double r) {
    ConstraintSet c(ConstraintKind::Ball, d);
    if (!(r >= 0.0)) throw config_error("ball radius must be nonnegative");
    c.radius_ = r;
    return c;
  }
  static ConstraintSet polyhedron(Mat rows, Vec bounds) {
    ConstraintSet c(ConstraintKind::Polyhedron, int(rows.cols()));
    if (rows.rows() != bounds.size()) throw config_error("polyhedron row count mismatch");
    for (int i = 0; i < bounds.size(); ++i)
      if (bounds[i] < 0.0) throw config_error("polyhedron must contain the origin");
    c.rows_ = std::move(rows);
    c.bounds_ = std::move(bounds);
    return c;
  }
  static ConstraintSet cone(Mat rows) {
    ConstraintSet c(ConstraintKind::Cone, int(rows.cols()));
    c.rows_ = std::move(rows);
    c.bounds_ = Vec::Zero(c.rows_.rows());
    return c;
  }
  static ConstraintSet finite_set(std::vector<Vec> pts) {
    if (pts.empty()) throw config_error("finite constraint set is empty");
    ConstraintSet c(ConstraintKind::FiniteSet, int(pts[0].size()));
    bool has_zero = false;
    for (const auto& p : pts) {
      if (int(p.size()) != c.d_) throw config_error("finite set point dimension mismatch");
      has_zero = has_zero || p.norm() <= kMemberTol;
    }
    if (!has_zero) throw config_error("finite constraint set must contain the origin");
    c.points_ = std::move(pts);
    return c;
  }
  // Union of the segments [0, p] over the base points p.
  static ConstraintSet scaled_star(std::vector<Vec> pts) {
    if (pts.empty()) throw config_error("star constraint set needs base points");
    ConstraintSet c(ConstraintKind::ScaledStar, int(pts[0].size()));
    for (const auto& p : pts)
      if (int(p.size()) != c.d_) throw config_error("star base point dimension mismatch");
    c.points_ = std::move(pts);
    return c;
  }

  ConstraintKind kind() const { return kind_; }
  int dim() const { return d_; }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  double radius() const { return radius_; }
  const Mat& rows() const { return rows_; }
  const Vec& bounds() const { return bounds_; }
  const std::vector<Vec>& points() const { return points_; }

  bool is_convex() const {
    switch (kind_) {
      case ConstraintKind::FiniteSet:
        return points_.size() == 1;
      case ConstraintKind::ScaledStar:
        return points_.size() == 1;
      default:
        return true;
    }
  }

  // Star shape (eta-scaling closed for eta in [0,1]) holds for every variant
  // except general finite sets.
  bool is_star_shaped() const { return kind_ != ConstraintKind::FiniteSet; }

  bool contains(const Vec& y, double tol = kMemberTol) const {
    double scale = std::max(1.0, y.norm());
    switch (kind_) {
      case ConstraintKind::FullSpace:
        return true;
      case ConstraintKind::Box:
        for (int i = 0; i < d_; ++i)
          if (y[i] < lo_[i] - tol * scale || y[i] > hi_[i] + tol * scale) return false;
        return true;
      case ConstraintKind::Ball:
        return y.norm() <= radius_ + tol * scale;
      case ConstraintKind::Polyhedron:
      case ConstraintKind::Cone:
        return detail::rows_feasible(rows_, bounds_, y, tol);
      case ConstraintKind::FiniteSet:
      case ConstraintKind::ScaledStar:
        return distance_sq(y) <= tol * tol * scale * scale;
    }
    return false;
  }

  // All nearest points (singleton for the convex variants, ties listed for the
  // point and segment unions).
  std::vector<Vec> project(const Vec& x) const {
    switch (kind_) {
      case ConstraintKind::FullSpace:
        return {x};
      case ConstraintKind::Box: {
        Vec y = x;
        for (int i = 0; i < d_; ++i) y[i] = std::clamp(y[i], lo_[i], hi_[i]);
        return {y};
      }
      case ConstraintKind::Ball: {
        double n = x.norm();
        if (n <= radius_ || n == 0.0) return {x};
        return {Vec(x * (radius_ / n))};
      }
      case ConstraintKind::Polyhedron:
      case ConstraintKind::Cone:
        return {detail::project_onto_rows(rows_, bounds_, x)};
      case ConstraintKind::FiniteSet: {
        double best = kPosInf;
        for (const auto& p : points_) best = std::min(best, (x - p).squaredNorm());
        std::vector<Vec> out;
        for (const auto& p : points_)
          if ((x - p).squaredNorm() <= best + kMemberTol) out.push_back(p);
        return out;
      }
      case ConstraintKind::ScaledStar: {
        std::vector<Vec> cands;
        double best = kPosInf;
        for (const auto& p : points_) {
          double nn = p.squaredNorm();
          double t = nn > 0.0 ? std::clamp(x.dot(p) / nn, 0.0, 1.0) : 0.0;
          Vec y = t * p;
          cands.push_back(y);
          best = std::min(best, (x - y).squaredNorm());
        }
        std::vector<Vec> out;
        for (const auto& y : cands) {
          if ((x - y).squaredNorm() > best + kMemberTol) continue;
          bool dup = false;
          for (const auto& z : out) dup = dup || (z - y).norm() <= 1e-12 * (1.0 + y.norm());
          if (!dup) out.push_back(y);
        }
        return out;
      }
    }
    return {x};
  }

  double distance_sq(const Vec& x) const {
    switch (kind_) {
      case ConstraintKind::FiniteSet: {
        double best = kPosInf;
        for (const auto& p : points_) best = std::min(best, (x - p).squaredNorm());
        return best;
      }
      case ConstraintKind::ScaledStar: {
        double best = kPosInf;
        for (const auto& p : points_) {
          double nn = p.squaredNorm();
          double t = nn > 0.0 ? std::clamp(x.dot(p) / nn, 0.0, 1.0) : 0.0;
          best = std::min(best, (x - t * p).squaredNorm());
        }
        return best;
      }
      default:
        return (x - project(x)[0]).squaredNorm();
    }
  }

  // Axis-aligned cover of the set clipped to [-B, B]^d, used for audit grids.
  void bounding_box(double B, Vec& blo, Vec& bhi) const {
    blo = Vec::Constant(d_, -B);
    bhi = Vec::Constant(d_, B);
    switch (kind_) {
      case ConstraintKind::Box:
        for (int i = 0; i < d_; ++i) {
          blo[i] = std::max(lo_[i], -B);
          bhi[i] = std::min(hi_[i], B);
        }
        break;
      case ConstraintKind::Ball:
        for (int i = 0; i < d_; ++i) {
          blo[i] = std::max(-radius_, -B);
          bhi[i] = std::min(radius_, B);
        }
        break;
      case ConstraintKind::FiniteSet:
      case ConstraintKind::ScaledStar: {
        blo = Vec::Zero(d_);
        bhi = Vec::Zero(d_);
        for (const auto& p : points_)
          for (int i = 0; i < d_; ++i) {
            blo[i] = std::min(blo[i], p[i]);
            bhi[i] = std::max(bhi[i], p[i]);
          }
        break;
      }
      case ConstraintKind::Polyhedron: {
        Mat A2(rows_.rows() + 2 * d_, d_);
        Vec b2(rows_.rows() + 2 * d_);
        A2.topRows(rows_.rows()) = rows_;
        b2.head(rows_.rows()) = bounds_;
        A2.middleRows(rows_.rows(), d_) = Mat::Identity(d_, d_);
        A2.bottomRows(d_) = -Mat::Identity(d_, d_);
        b2.tail(2 * d_) = Vec::Constant(2 * d_, B);
        auto verts = detail::polyhedron_vertices(A2, b2);
        if (!verts.empty()) {
          blo = Vec::Constant(d_, kPosInf);
          bhi = Vec::Constant(d_, -kPosInf);
          for (const auto& v : verts)
            for (int i = 0; i < d_; ++i) {
              blo[i] = std::min(blo[i], v[i]);
              bhi[i] = std::max(bhi[i], v[i]);
            }
          blo = blo.cwiseMin(0.0);
          bhi = bhi.cwiseMax(0.0);
        }
        break;
      }
      default:
        break;
    }
  }

 private:
  ConstraintSet(ConstraintKind k, int d) : kind_(k), d_(d) {
    if (d < 1) throw config_error("constraint dimension must be at least 1");
  }
  ConstraintKind kind_;
  int d_;
  Vec lo_, hi_;
  double radius_ = 0.0;
  Mat rows_{0, 0};
  Vec bounds_;
  std::vector<Vec> points_;
};

// Half-space system 1 + y'x >= 0 collected from the jump atoms. The strict
// variant demands a positive margin.
struct NaturalConstraints {
  std::vector<Vec> xs;

  static NaturalConstraints from(const JointCharacteristics& chars) {
    NaturalConstraints n;
    for (const auto& a : chars.atoms)
      if (a.w > 0.0) n.xs.push_back(a.x);
    return n;
  }

  double margin(const Vec& y) const {
    double m = kPosInf;
    for (const auto& x : xs) m = std::min(m, 1.0 + y.dot(x));
    return m;
  }

  bool contains(const Vec& y, bool strict = false, double tol = kMemberTol) const {
    double m = margin(y);
    return strict ? m > tol : m >= -tol;
  }

  // Rows of the polyhedral form (-x)'y <= 1.
  Mat rows(int d) const {
    Mat A(int(xs.size()), d);
    for (int i = 0; i < int(xs.size()); ++i) A.row(i) = -xs[i].transpose();
    return A;
  }
};

inline bool membership(const ConstraintSet& C, const Vec& y, bool /*strict*/ = false,
                       double tol = kMemberTol) {
  return C.contains(y, tol);
}

inline bool membership(const NaturalConstraints& N, const Vec& y, bool strict = false,
                       double tol = kMemberTol) {
  return N.contains(y, strict, tol);
}

// Orthonormal basis of the directions that move neither the drift, nor the
// covariance, nor any jump: investments along them leave wealth unchanged.
inline Mat null_space(const JointCharacteristics& chars) {
  int d = chars.d;
  Mat rows(1 + d + int(chars.atoms.size()), d);
  rows.row(0) = chars.bR.transpose();
  rows.middleRows(1, d) = chars.cR;
  for (int i = 0; i < int(chars.atoms.size()); ++i)
    rows.row(1 + d + i) = chars.atoms[i].x.transpose();
  return kernel_basis(rows, d);
}

// ---------------------------------------------------------------------------
// Images of constraint sets under sigma'

namespace detail {

// Generators of the polyhedral cone {y : A y <= 0} for dimensions up to 3.
inline std::vector<Vec> cone_generators(const Mat& A, int d) {
  std::vector<Vec> gens;
  auto feasible = [&](const Vec& v) {
    for (int i = 0; i < A.rows(); ++i)
      if (A.row(i).dot(v) > 1e-10 * std::max(1.0, v.norm() * A.row(i).norm())) return false;
    return true;
  };
  auto push = [&](Vec v) {
    double n = v.norm();
    if (n < 1e-12) return;
    v /= n;
    if (!feasible(v)) return;
    for (const auto& g : gens)
      if ((g - v).norm() < 1e-9) return;
    gens.push_back(v);
  };

  if (A.rows() == 0) {
    for (int i = 0; i < d; ++i) {
      push(Vec(Vec::Unit(d, i)));
      push(Vec(-Vec::Unit(d, i)));
    }
    return gens;
  }
  Mat lin = kernel_basis(A, d);
  for (int i = 0; i < lin.cols(); ++i) {
    push(Vec(lin.col(i)));
    push(Vec(-lin.col(i)));
  }
  if (d == 1) {
    push(Vec(Vec::Unit(1, 0)));
    push(Vec(-Vec::Unit(1, 0)));
    return gens;
  }
  // Inward normals cover non-pointed interiors such as half-spaces.
  for (int i = 0; i < A.rows(); ++i) push(Vec(-A.row(i).transpose()));
  if (d == 2) {
    for (int i = 0; i < A.rows(); ++i) {
      Vec p(2);
      p << -A(i, 1), A(i, 0);
      push(p);
      push(Vec(-p));
    }
    return gens;
  }
  if (d == 3) {
    int m = int(A.rows());
    for_each_subset(m, 2, [&](const std::vector<int>& S) {
      Mat AS(2, 3);
      AS.row(0) = A.row(S[0]);
      AS.row(1) = A.row(S[1]);
      Mat K = kernel_basis(AS, 3);
      if (K.cols() == 1) {
        push(Vec(K.col(0)));
        push(Vec(-K.col(0)));
      }
    });
    for (int i = 0; i < m; ++i) {
      Mat K = kernel_basis(Mat(A.row(i)), 3);
      if (K.cols() != 2) continue;
      Mat Asub(m - 1, 2);
      int r = 0;
      for (int jj = 0; jj < m; ++jj)
        if (jj != i) Asub.row(r++) = A.row(jj) * K;
      for (const auto& g2 : cone_generators(Asub, 2)) push(Vec(K * g2));
    }
    return gens;
  }
  throw not_representable_error("cone generator enumeration supports up to three dimensions");
}

}  // namespace detail

// Image of a constraint set under the map y -> sigma' y, with enough structure
// to project onto it and to pull projections back to witnesses in the source.
class ImageSet {
 public:
  enum class Kind { Subspace, Box, Ball, Polytope, Cone, Finite, Star };

  Kind kind() const { return kind_; }
  int dim() const { return m_; }

  std::pair<Vec, Vec> project(const Vec& z) const {
    switch (kind_) {
      case Kind::Subspace: {
        Vec zp = basis_ * (basis_.transpose() * z);
        return {zp, lstsq(sigmaT_, zp)};
      }
      case Kind::Box: {
        Vec zp = z;
        Vec w = Vec::Zero(sigmaT_.cols());
        for (int i = 0; i < m_; ++i) {
          zp[i] = std::clamp(zp[i], lo_[i], hi_[i]);
          w[i] = diag_[i] != 0.0 ? zp[i] / diag_[i] : 0.0;
        }
        return {zp, w};
      }
      case Kind::Ball: {
        double n = z.norm();
        Vec zp = (n <= radius_ || n == 0.0) ? z : Vec(z * (radius_ / n));
        return {zp, Vec(zp / scale_)};
      }
      case Kind::Polytope:
        return project_hull(z, true);
      case Kind::Cone:
        return project_hull(z, false);
      case Kind::Finite: {
        double best = kPosInf;
        std::size_t bi = 0;
        for (std::size_t i = 0; i < pts_.size(); ++i) {
          double ds = (z - pts_[i]).squaredNorm();
          if (ds < best) {
            best = ds;
            bi = i;
          }
        }
        return {pts_[bi], wits_[bi]};
      }
      case Kind::Star: {
        double best = kPosInf;
        Vec zp = Vec::Zero(m_), w = Vec::Zero(sigmaT_.cols());
        for (std::size_t i = 0; i < pts_.size(); ++i) {
          double nn = pts_[i].squaredNorm();
          double t = nn > 0.0 ? std::clamp(z.dot(pts_[i]) / nn, 0.0, 1.0) : 0.0;
          double ds = (z - t * pts_[i]).squaredNorm();
          if (ds < best) {
            best = ds;
            zp = t * pts_[i];
            w = t * wits_[i];
          }
        }
        return {zp, w};
      }
    }
    return {z, Vec::Zero(sigmaT_.cols())};
  }

  double distance_sq(const Vec& z) const { return (z - project(z).first).squaredNorm(); }

  bool contains(const Vec& z, double tol = 1e-9) const {
    return distance_sq(z) <= tol * tol * std::max(1.0, z.squaredNorm());
  }

  static ImageSet build(const Mat& sigma, const ConstraintSet& C);

 private:
  std::pair<Vec, Vec> project_hull(const Vec& z, bool affine) const {
    // Enumerate support sets; the projection onto a hull uses at most m_+1
    // points (affine case) or m_ generators (conic case).
    int n = int(pts_.size());
    int cap = std::min(n, affine ? m_ + 1 : m_);
    double best = kPosInf;
    Vec bz = Vec::Zero(m_), bw = Vec::Zero(sigmaT_.cols());
    if (!affine) {
      best = z.squaredNorm();  // origin is always in the cone
    }
    for (int s = 1; s <= cap; ++s) {
      detail::for_each_subset(n, s, [&](const std::vector<int>& S) {
        Mat G(m_, s);
        for (int i = 0; i < s; ++i) G.col(i) = pts_[S[i]];
        Vec alpha;
        if (affine) {
          Mat K(s + 1, s + 1);
          K.setZero();
          K.topLeftCorner(s, s) = G.transpose() * G;
          K.topRightCorner(s, 1).setOnes();
          K.bottomLeftCorner(1, s).setOnes();
          Vec rhs(s + 1);
          rhs.head(s) = G.transpose() * z;
          rhs[s] = 1.0;
          Vec sol = lstsq(K, rhs);
          alpha = sol.head(s);
          if (std::abs(alpha.sum() - 1.0) > 1e-7) return;
        } else {
          alpha = lstsq(G, z);
        }
        for (int i = 0; i < s; ++i)
          if (alpha[i] < -1e-10) return;
        Vec zp = G * alpha;
        double ds = (z - zp).squaredNorm();
        if (ds < best - 1e-15) {
          best = ds;
          bz = zp;
          bw = Vec::Zero(sigmaT_.cols());
          for (int i = 0; i < s; ++i) bw += alpha[i] * wits_[S[i]];
        }
      });
    }
    return {bz, bw};
  }

  Kind kind_ = Kind::Subspace;
  int m_ = 0;
  Mat sigmaT_{0, 0};
  Mat basis_{0, 0};
  Vec lo_, hi_, diag_;
  double radius_ = 0.0, scale_ = 1.0;
  std::vector<Vec> pts_, wits_;
};

inline ImageSet ImageSet::build(const Mat& sigma, const ConstraintSet& C) {
  ImageSet img;
  img.m_ = int(sigma.cols());
  img.sigmaT_ = sigma.transpose();
  const int d = int(sigma.rows());
  if (C.dim() != d) throw config_error("constraint dimension does not match sigma");

  auto map_points = [&](const std::vector<Vec>& src) {
    img.pts_.clear();
    img.wits_.clear();
    for (const auto& p : src) {
      img.pts_.push_back(img.sigmaT_ * p);
      img.wits_.push_back(p);
    }
  };

  switch (C.kind()) {
    case ConstraintKind::FullSpace:
      img.kind_ = Kind::Subspace;
      img.basis_ = orth_basis(img.sigmaT_);
      if (img.basis_.cols() == 0) img.basis_ = Mat::Zero(img.m_, 0);
      return img;
    case ConstraintKind::Box: {
      bool diag = (img.m_ == d);
      if (diag)
        for (int i = 0; i < d && diag; ++i)
          for (int j = 0; j < d && diag; ++j)
            if (i != j && std::abs(sigma(i, j)) > 1e-13 * (1.0 + sigma.norm())) diag = false;
      if (diag) {
        img.kind_ = Kind::Box;
        img.lo_ = Vec(d);
        img.hi_ = Vec(d);
        img.diag_ = sigma.diagonal();
        for (int i = 0; i < d; ++i) {
          double a = sigma(i, i) * C.lo()[i], b = sigma(i, i) * C.hi()[i];
          img.lo_[i] = std::min(a, b);
          img.hi_[i] = std::max(a, b);
        }
        return img;
      }
      if (d > 12) throw not_representable_error("box image needs diagonal sigma in high dimension");
      bool has_inf = false;
      for (int i = 0; i < d; ++i)
        has_inf = has_inf || std::isinf(C.lo()[i]) || std::isinf(C.hi()[i]);
      if (has_inf) throw not_representable_error("box image with free coordinates and mixing sigma");
      std::vector<Vec> verts;
      for (int mask = 0; mask < (1 << d); ++mask) {
        Vec v(d);
        for (int i = 0; i < d; ++i) v[i] = (mask >> i) & 1 ? C.hi()[i] : C.lo()[i];
        verts.push_back(v);
      }
      img.kind_ = Kind::Polytope;
      map_points(verts);
      return img;
    }
    case ConstraintKind::Ball: {
      double s = sigma(0, 0);
      if (img.m_ != d || (sigma - s * Mat::Identity(d, d)).norm() > 1e-12 * (1.0 + sigma.norm()))
        throw not_representable_error("ball image needs sigma proportional to the identity");
      img.kind_ = Kind::Ball;
      img.scale_ = s;
      img.radius_ = std::abs(s) * C.radius();
      return img;
    }
    case ConstraintKind::Polyhedron: {
      if (!detail::polyhedron_is_bounded(C.rows(), C.bounds()))
        throw not_representable_error("polyhedron image needs a bounded polyhedron");
      auto verts = detail::polyhedron_vertices(C.rows(), C.bounds());
      if (verts.empty()) throw not_representable_error("polyhedron has no vertices");
      img.kind_ = Kind::Polytope;
      map_points(verts);
      return img;
    }
    case ConstraintKind::Cone: {
      auto gens = detail::cone_generators(C.rows(), d);
      img.kind_ = Kind::Cone;
      std::vector<Vec> keep;
      for (const auto& g : gens) keep.push_back(g);
      map_points(keep);
      // Drop generators that vanish under sigma'.
      std::vector<Vec> p2, w2;
      for (std::size_t i = 0; i < img.pts_.size(); ++i)
        if (img.pts_[i].norm() > 1e-12) {
          p2.push_back(img.pts_[i]);
          w2.push_back(img.wits_[i]);
        }
      img.pts_ = std::move(p2);
      img.wits_ = std::move(w2);
      return img;
    }
    case ConstraintKind::FiniteSet:
      img.kind_ = Kind::Finite;
      map_points(C.points());
      return img;
    case ConstraintKind::ScaledStar:
      img.kind_ = Kind::Star;
      map_points(C.points());
      return img;
  }
  throw not_representable_error("unsupported constraint variant");
}

inline ImageSet sigma_image(const Mat& sigma, const ConstraintSet& C) {
  return ImageSet::build(sigma, C);
}

// ---------------------------------------------------------------------------
// Representative portfolios and the coordinate transform built from them

namespace detail {

// Largest t in (0, 1] with margin(t*y) >= 0; the caller halves afterwards to
// gain a strict margin.
inline double natural_scale(const Vec& y, const NaturalConstraints& nat) {
  double t = 1.0;
  for (const auto& x : nat.xs) {
    double s = y.dot(x);
    if (s < 0.0) t = std::min(t, -1.0 / s);
  }
  return t;
}

}  // namespace detail

// A bounded feasible direction with a nonzero j-th coordinate, or nothing when
// the feasible set puts no weight on asset j. Star-shaped variants are halved
// into the strict natural region.
inline std::optional<Vec> representative_portfolio(int j, const ConstraintSet& C,
                                                   const NaturalConstraints& nat) {
  const int d = C.dim();
  if (j < 0 || j >= d) throw config_error("representative index out of range");
  auto finish = [&](Vec y) -> std::optional<Vec> {
    double t = detail::natural_scale(y, nat);
    Vec phi = 0.5 * t * y;
    if (phi.norm() > 1.0) phi /= phi.norm();
    if (std::abs(phi[j]) <= 1e-12) return std::nullopt;
    return phi;
  };

  switch (C.kind()) {
    case ConstraintKind::FullSpace:
      return finish(Vec(Vec::Unit(d, j)));
    case ConstraintKind::Box: {
      double up = std::min(C.hi()[j], 1.0), dn = std::max(C.lo()[j], -1.0);
      double t = std::abs(up) >= std::abs(dn) ? up : dn;
      if (std::abs(t) <= 1e-12) return std::nullopt;
      return finish(Vec(t * Vec::Unit(d, j)));
    }
    case ConstraintKind::Ball: {
      double t = std::min(C.radius(), 1.0);
      if (t <= 1e-12) return std::nullopt;
      return finish(Vec(t * Vec::Unit(d, j)));
    }
    case ConstraintKind::Polyhedron:
    case ConstraintKind::Cone: {
      Mat NA = nat.rows(d);
      int mc = int(C.rows().rows()), mn = int(NA.rows());
      Mat A(mc + mn + 2 * d, d);
      Vec b(mc + mn + 2 * d);
      A.topRows(mc) = C.rows();
      b.head(mc) = C.bounds();
      A.middleRows(mc, mn) = NA;
      b.segment(mc, mn).setOnes();
      A.middleRows(mc + mn, d) = Mat::Identity(d, d);
      A.bottomRows(d) = -Mat::Identity(d, d);
      b.tail(2 * d).setOnes();
      double best = 0.0;
      Vec besty;
      for (const auto& v : detail::polyhedron_vertices(A, b)) {
        double a = std::abs(v[j]);
        bool better = a > best + 1e-12 ||
                      (a > best - 1e-12 && besty.size() == d && v.norm() < besty.norm() - 1e-12);
        if (better) {
          best = std::max(best, a);
          besty = v;
        }
      }
      if (best <= 1e-9) return std::nullopt;
      return finish(besty);
    }
    case ConstraintKind::FiniteSet: {
      // No scaling is available inside a general finite set, so the point is
      // returned as stored; the strict margin is required of the point itself.
      const Vec* pick = nullptr;
      for (const auto& p : C.points()) {
        if (std::abs(p[j]) <= 1e-12 || !nat.contains(p, true)) continue;
        if (!pick || p.norm() < pick->norm()) pick = &p;
      }
      if (!pick) return std::nullopt;
      return *pick;
    }
    case ConstraintKind::ScaledStar: {
      std::optional<Vec> bestphi;
      for (const auto& p : C.points()) {
        if (std::abs(p[j]) <= 1e-12) continue;
        double t = std::min(1.0, 1.0 / std::max(1.0, p.norm()));
        auto phi = finish(Vec(t * p));
        if (phi && (!bestphi || std::abs((*phi)[j]) > std::abs((*bestphi)[j]))) bestphi = phi;
      }
      return bestphi;
    }
  }
  return std::nullopt;
}

struct TransformResult {
  JointCharacteristics chars;
  ConstraintSet constraint;
  Mat Phi;
  std::vector<bool> active;  // false where no representative direction exists
};

namespace detail {

inline ConstraintSet preimage(const ConstraintSet& C, const Mat& Phi) {
  const int d = C.dim();
  bool diag = true;
  for (int i = 0; i < d && diag; ++i)
    for (int j = 0; j < d && diag; ++j)
      if (i != j && std::abs(Phi(i, j)) > 1e-13 * (1.0 + Phi.norm())) diag = false;
  switch (C.kind()) {
    case ConstraintKind::FullSpace:
      return C;
    case ConstraintKind::Box: {
      if (diag) {
        Vec lo(d), hi(d);
        for (int i = 0; i < d; ++i) {
          double s = Phi(i, i);
          if (s == 0.0) {
            lo[i] = -kPosInf;
            hi[i] = kPosInf;
          } else {
            double a = C.lo()[i] / s, b = C.hi()[i] / s;
            lo[i] = std::min(a, b);
            hi[i] = std::max(a, b);
          }
        }
        return ConstraintSet::box(lo, hi);
      }
      Mat A(2 * d, d);
      Vec b(2 * d);
      A.topRows(d) = Phi;
      b.head(d) = C.hi();
      A.bottomRows(d) = -Phi;
      b.tail(d) = -C.lo();
      return ConstraintSet::polyhedron(A, b);
    }
    case ConstraintKind::Polyhedron:
      return ConstraintSet::polyhedron(Mat(C.rows() * Phi), C.bounds());
    case ConstraintKind::Cone:
      return ConstraintSet::cone(Mat(C.rows() * Phi));
    case ConstraintKind::Ball: {
      if (Phi.norm() <= 1e-14) return ConstraintSet::full_space(d);
      double s = Phi(0, 0);
      if ((Phi - s * Mat::Identity(d, d)).norm() > 1e-12 * (1.0 + Phi.norm()) || s == 0.0)
        throw not_representable_error("ball preimage needs a uniform scaling");
      return ConstraintSet::ball(d, C.radius() / std::abs(s));
    }
    case ConstraintKind::FiniteSet:
    case ConstraintKind::ScaledStar: {
      if (Phi.norm() <= 1e-14) {
        // Everything maps to the origin, which the set contains.
        return ConstraintSet::full_space(d);
      }
      Eigen::FullPivLU<Mat> lu(Phi);
      if (!lu.isInvertible())
        throw not_representable_error("point-set preimage needs an invertible transform");
      std::vector<Vec> pts;
      for (const auto& p : C.points()) pts.push_back(lu.solve(p));
      return C.kind() == ConstraintKind::FiniteSet ? ConstraintSet::finite_set(pts)
                                                   : ConstraintSet::scaled_star(pts);
    }
  }
  throw not_representable_error("unsupported preimage variant");
}

}  // namespace detail

// Column-by-column change of coordinates: asset j of the new model invests
// along the j-th representative portfolio of the running model. Returns the
// transformed characteristics, the pulled-back constraint set, and the
// accumulated matrix. Columns without a representative direction are zero.
inline TransformResult transform_model(const JointCharacteristics& chars,
                                       const ConstraintSet& C) {
  chars.validate();
  const int d = chars.d;
  if (C.dim() != d) throw config_error("constraint dimension mismatch");
  JointCharacteristics cur = chars;
  ConstraintSet curC = C;
  Mat Phi = Mat::Identity(d, d);
  std::vector<bool> active(d, false);

  for (int j = 0; j < d; ++j) {
    auto nat = NaturalConstraints::from(cur);
    auto phi = representative_portfolio(j, curC, nat);
    Mat Pj = Mat::Identity(d, d);
    if (phi) {
      Pj.col(j) = *phi;
      active[j] = true;
    } else {
      Pj.col(j).setZero();
    }
    cur.bR = Pj.transpose() * cur.bR;
    cur.cR = Pj.transpose() * cur.cR * Pj;
    cur.cRL = Pj.transpose() * cur.cRL;
    for (auto& a : cur.atoms) a.x = Pj.transpose() * a.x;
    curC = detail::preimage(curC, Pj);
    Phi = Phi * Pj;
  }
  return {cur, curC, Phi, active};
}

}  // namespace bellport
