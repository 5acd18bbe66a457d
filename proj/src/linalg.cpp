#include "fedlrmc/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fedlrmc {

namespace {

// Entrywise snap tolerance under which a computed R is treated as the
// identity. Well below every contract tolerance (1e-10 orthonormality,
// 1e-12 reconstruction) but above roundoff accumulated over r columns.
constexpr double kQrIdentitySnapTol = 1e-13;

// R within snap distance of diag(+-1): the input is orthonormal to roundoff
// and its unique (nonnegative-diagonal) factorization is (input, I).
bool r_is_signed_identity(const Matrix& r_factor) {
  const Eigen::Index r = r_factor.cols();
  for (Eigen::Index j = 0; j < r; ++j) {
    if (std::abs(std::abs(r_factor(j, j)) - 1.0) > kQrIdentitySnapTol) return false;
    for (Eigen::Index i = 0; i < j; ++i)
      if (std::abs(r_factor(i, j)) > kQrIdentitySnapTol) return false;
  }
  return true;
}

}  // namespace

OrthonormalBasis::OrthonormalBasis(Matrix m, double tolerance)
    : matrix_(std::move(m)), tolerance_(tolerance) {
  if (matrix_.rows() < matrix_.cols())
    throw InvalidDimensions("OrthonormalBasis: more columns than rows");
  require_finite(matrix_, "OrthonormalBasis");
  const double defect = orthonormality_defect();
  if (defect > tolerance_)
    throw InvalidDimensions("OrthonormalBasis: columns not orthonormal, defect " +
                            std::to_string(defect));
}

double OrthonormalBasis::orthonormality_defect() const {
  const Eigen::Index r = matrix_.cols();
  Matrix gram = matrix_.transpose() * matrix_;
  gram -= Matrix::Identity(r, r);
  return gram.cwiseAbs().maxCoeff();
}

QRFactorization thin_qr(const Matrix& m) {
  const Eigen::Index n = m.rows();
  const Eigen::Index r = m.cols();
  if (n < r) throw InvalidDimensions("thin_qr: input has more columns than rows");
  require_finite(m, "thin_qr");

  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix r_factor = qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>();

  // sigma(R) = sigma(m); full SVD of the r x r factor, since a Gram-based
  // check cannot resolve sigma_min below sqrt(eps) * sigma_max.
  {
    Eigen::JacobiSVD<Matrix> sv(r_factor);
    const double smax = sv.singularValues()(0);
    const double smin = sv.singularValues()(r - 1);
    if (smax == 0.0 || smin <= 1e-12 * smax)
      throw RankDeficient("thin_qr: input is numerically rank deficient");
  }

  // Orthonormal fast path: the input already is the unique Q, so return it
  // untouched (exact fixed point).
  if (r_is_signed_identity(r_factor)) return {OrthonormalBasis(m), Matrix::Identity(r, r)};

  // Nonnegative-diagonal convention makes the factorization unique.
  Matrix q = qr.householderQ() * Matrix::Identity(n, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    if (r_factor(j, j) < 0.0) {
      q.col(j) = -q.col(j);
      r_factor.row(j) = -r_factor.row(j);
    }
  }
  return {OrthonormalBasis(std::move(q)), std::move(r_factor)};
}

PowerIterationResult power_top_r_from(const LinearOperator& op, Matrix block, int iters) {
  if (iters < 1) throw InvalidDimensions("power_top_r: iters must be >= 1");
  if (block.rows() != op.rows || block.cols() > std::min(op.rows, op.cols))
    throw InvalidDimensions("power_top_r: bad start block shape");

  const auto gram_apply = [&op](const Matrix& m) {
    return op.apply_gram ? op.apply_gram(m) : Matrix(op.apply(op.apply_trans(m)));
  };

  double top_sq = 0.0;
  QRFactorization qr = thin_qr(block);
  for (int it = 0; it < iters; ++it) {
    block = gram_apply(qr.q.matrix());
    qr = thin_qr(block);
    top_sq = qr.r_factor(0, 0);  // Rayleigh estimate of sigma_1(A)^2
  }
  return {std::move(qr.q), std::sqrt(std::max(top_sq, 0.0))};
}

Matrix power_start_block(Eigen::Index rows, int r, std::uint64_t seed) {
  Prng rng(seed, RngStream::power_init);
  Matrix start(rows, r);
  for (int j = 0; j < r; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) start(i, j) = rng.next_gaussian();
  return start;
}

PowerIterationResult power_top_r(const LinearOperator& op, int r, int iters, std::uint64_t seed) {
  if (r < 1 || r > std::min(op.rows, op.cols))
    throw InvalidDimensions("power_top_r: rank out of range");
  return power_top_r_from(op, power_start_block(op.rows, r, seed), iters);
}

std::optional<Vector> try_masked_column_ls(const Matrix& u, std::span<const int> rows,
                                           std::span<const double> values) {
  const Eigen::Index r = u.cols();
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  if (m != static_cast<Eigen::Index>(values.size()))
    throw DimensionMismatch("masked_column_ls: rows/values length mismatch");
  if (m < r) return std::nullopt;

  Matrix gram = Matrix::Zero(r, r);
  Vector rhs = Vector::Zero(r);
  for (Eigen::Index t = 0; t < m; ++t) {
    const auto row = u.row(rows[t]).transpose();
    gram.selfadjointView<Eigen::Lower>().rankUpdate(row, 1.0);
    rhs += values[t] * row;
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.eigenvalues()(0) <= 1e-12) return std::nullopt;
  return eig.eigenvectors() *
         (eig.eigenvectors().transpose() * rhs).cwiseQuotient(eig.eigenvalues());
}

Vector masked_column_ls(const OrthonormalBasis& u, std::span<const int> rows,
                        std::span<const double> values) {
  auto b = try_masked_column_ls(u.matrix(), rows, values);
  if (!b) throw UnderdeterminedColumn("masked_column_ls: column has rank-deficient mask");
  return *std::move(b);
}

namespace {

Matrix projection_residual(const OrthonormalBasis& u1, const OrthonormalBasis& u2) {
  return u2.matrix() - u1.matrix() * (u1.matrix().transpose() * u2.matrix());
}

}  // namespace

double subspace_dist_F(const OrthonormalBasis& u1, const OrthonormalBasis& u2) {
  if (u1.rows() != u2.rows() || u1.cols() != u2.cols())
    throw DimensionMismatch("subspace_dist_F: shape mismatch");
  return projection_residual(u1, u2).norm();
}

double subspace_dist_2(const OrthonormalBasis& u1, const OrthonormalBasis& u2) {
  if (u1.rows() != u2.rows() || u1.cols() != u2.cols())
    throw DimensionMismatch("subspace_dist_2: shape mismatch");
  return singular_extremes(projection_residual(u1, u2)).max;
}

SingularExtremes singular_extremes(const Matrix& m) {
  Matrix gram = (m.rows() <= m.cols()) ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  return {std::sqrt(std::max(eig.eigenvalues().minCoeff(), 0.0)),
          std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0))};
}

}  // namespace fedlrmc
