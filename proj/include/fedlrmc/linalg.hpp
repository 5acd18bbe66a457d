#pragma once

#include <functional>
#include <optional>
#include <span>

#include "fedlrmc/prng.hpp"
#include "fedlrmc/types.hpp"

namespace fedlrmc {

/// n x r matrix with orthonormal columns, checked on construction.
class OrthonormalBasis {
 public:
  static constexpr double kDefaultTolerance = 1e-10;

  OrthonormalBasis() = default;
  explicit OrthonormalBasis(Matrix m, double tolerance = kDefaultTolerance);

  const Matrix& matrix() const { return matrix_; }
  double tolerance() const { return tolerance_; }
  Eigen::Index rows() const { return matrix_.rows(); }
  Eigen::Index cols() const { return matrix_.cols(); }

  /// max |Q^T Q - I| over entries.
  double orthonormality_defect() const;

 private:
  Matrix matrix_;
  double tolerance_ = kDefaultTolerance;
};

/// Unique thin QR output: Q orthonormal, R upper triangular with
/// nonnegative diagonal.
struct QRFactorization {
  OrthonormalBasis q;
  Matrix r_factor;
};

/// Unique thin QR of an n x r matrix, n >= r, via Householder reflections with
/// the nonnegative-diagonal sign convention.
///
/// When the input is already orthonormal to roundoff (R within snap tolerance
/// of the identity) the input is returned unchanged with R = I, so orthonormal
/// matrices are exact fixed points; a zero-gradient descent step followed by
/// this QR reproduces its input bit for bit.
///
/// Throws RankDeficient when sigma_min(m) <= 1e-12 * sigma_max(m).
QRFactorization thin_qr(const Matrix& m);

/// Linear operator access for implicit matrices: products A*M and A^T*M plus
/// the dimensions of A. Used by the power method so callers never densify.
/// apply_gram, when set, fuses A*(A^T*M); the power method prefers it, which
/// lets masked operators fix their column accumulation order.
struct LinearOperator {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::function<Matrix(const Matrix&)> apply;        // A   * (cols x b) -> rows x b
  std::function<Matrix(const Matrix&)> apply_trans;  // A^T * (rows x b) -> cols x b
  std::function<Matrix(const Matrix&)> apply_gram;   // optional: A A^T * (rows x b)
};

struct PowerIterationResult {
  OrthonormalBasis basis;            // approximate top-r left singular subspace of A
  double top_singular_estimate = 0;  // sqrt(R_11) of the final A A^T block, ~ sigma_1(A)
};

/// Block power method on A A^T: M <- A (A^T M), orthonormalized by thin_qr
/// every iteration. Start block is a seeded Gaussian, so the result is
/// deterministic given (seed, iters).
PowerIterationResult power_top_r(const LinearOperator& op, int r, int iters, std::uint64_t seed);

/// Same iteration from a caller-supplied start block (used for warm starts).
PowerIterationResult power_top_r_from(const LinearOperator& op, Matrix start, int iters);

/// The seeded Gaussian start block power_top_r uses; exposed so distributed
/// drivers can reproduce the centralized iteration exactly.
Matrix power_start_block(Eigen::Index rows, int r, std::uint64_t seed);

/// argmin_b || y - U(rows,:) b || via the normal equations with a dense r x r
/// solve. rows must index distinct rows of u. Returns nullopt when the column
/// is underdetermined (|rows| < r or sigma_min(U_k^T U_k) <= 1e-12).
std::optional<Vector> try_masked_column_ls(const Matrix& u, std::span<const int> rows,
                                           std::span<const double> values);

/// Throwing wrapper: UnderdeterminedColumn instead of nullopt.
Vector masked_column_ls(const OrthonormalBasis& u, std::span<const int> rows,
                        std::span<const double> values);

/// SE_F(U1, U2) = ||(I - U1 U1^T) U2||_F, computed from the n x r residual
/// U2 - U1 (U1^T U2). No n x n intermediate, and no large-term cancellation,
/// so distances remain measurable down to ~1e-14 (the Gram identity
/// sqrt(r - ||U1^T U2||_F^2) floors near sqrt(eps)).
double subspace_dist_F(const OrthonormalBasis& u1, const OrthonormalBasis& u2);

/// SE_2(U1, U2) = ||(I - U1 U1^T) U2||, the spectral norm of the same
/// residual (via the r x r residual Gram matrix).
double subspace_dist_2(const OrthonormalBasis& u1, const OrthonormalBasis& u2);

/// Extreme singular values via the eigenvalues of the small-side Gram matrix.
struct SingularExtremes {
  double min = 0;
  double max = 0;
};
SingularExtremes singular_extremes(const Matrix& m);

}  // namespace fedlrmc
