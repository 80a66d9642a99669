#pragma once

#include <Eigen/Dense>
#include <optional>

#include "bellport/common.hpp"

namespace bellport {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Symmetric PSD square root with small-eigenvalue clipping.
inline Mat psd_sqrt(const Mat& c, double clip = kEigClip) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (c + c.transpose()));
  Vec ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) ev[i] = ev[i] > clip ? std::sqrt(ev[i]) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Minimum-norm solution of c*x = b for symmetric PSD c. Empty if b is not in range(c).
inline std::optional<Vec> minnorm_solve(const Mat& c, const Vec& b, double tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (c + c.transpose()));
  const Vec& ev = es.eigenvalues();
  double emax = ev.size() ? std::abs(ev[ev.size() - 1]) : 0.0;
  double cut = std::max(emax, 1.0) * 1e-13;
  Vec coef = es.eigenvectors().transpose() * b;
  Vec sol = Vec::Zero(b.size());
  for (int i = 0; i < ev.size(); ++i) {
    if (std::abs(ev[i]) > cut)
      sol += (coef[i] / ev[i]) * es.eigenvectors().col(i);
    else if (std::abs(coef[i]) > tol * std::max(1.0, b.norm()))
      return std::nullopt;
  }
  return sol;
}

// Orthonormal basis (columns) of the null space of the row system `rows`.
// A matrix with zero rows yields the identity-size full basis.
inline Mat kernel_basis(const Mat& rows, int dim, double tol = 1e-11) {
  if (rows.rows() == 0) return Mat::Identity(dim, dim);
  Eigen::JacobiSVD<Mat> svd(rows, Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  double smax = sv.size() ? sv[0] : 0.0;
  double cut = std::max(smax, 1.0) * tol;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > cut) ++rank;
  return svd.matrixV().rightCols(dim - rank);
}

// Orthonormal basis of the column span of `cols`.
inline Mat orth_basis(const Mat& cols, double tol = 1e-11) {
  Eigen::JacobiSVD<Mat> svd(cols, Eigen::ComputeFullU);
  const Vec& sv = svd.singularValues();
  double smax = sv.size() ? sv[0] : 0.0;
  double cut = std::max(smax, 1.0) * tol;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > cut) ++rank;
  return svd.matrixU().leftCols(rank);
}

// Least-squares solution of A*x = b (minimum norm among minimizers).
inline Vec lstsq(const Mat& A, const Vec& b) {
  return A.completeOrthogonalDecomposition().solve(b);
}

}  // namespace bellport
