#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace bellport {

// Configuration or input-file problems. CLI maps these to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A requested set image or preimage has no representation in the supported variants.
struct not_representable_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Objective has no finite supremum over the given constraint set.
struct unbounded_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Drift vector is not in the range of the covariance matrix.
struct structure_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A wealth multiplier left the admissible region.
struct admissibility_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lattice construction rejected the step size or node budget.
struct lattice_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kOptTol = 1e-9;        // optimizer stopping / audit tolerance
inline constexpr double kMartTol = 1e-9;       // drift residual tolerance for certificates
inline constexpr double kIdentityTol = 1e-12;  // exact algebraic identities
inline constexpr double kConeTol = 1e-10;      // cone driver equivalence
inline constexpr double kOrthoTol = 1e-10;     // regression orthogonality
inline constexpr double kDirTol = 1e-8;        // directional derivative bound at maximizers
inline constexpr double kEigClip = 1e-12;      // eigenvalue clipping in PSD square roots
inline constexpr double kMarginFloor = 1e-12;  // safeguard floor on 1 + y'x for p < 0
inline constexpr double kMemberTol = 1e-12;    // set membership slack

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

}  // namespace bellport
