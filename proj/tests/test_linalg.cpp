#include <doctest.h>

#include "fedlrmc/linalg.hpp"
#include "oracles.hpp"

using namespace fedlrmc;
using oracles::gaussian;

namespace {

LinearOperator dense_operator(const Matrix& a) {
  LinearOperator op;
  op.rows = a.rows();
  op.cols = a.cols();
  op.apply = [&a](const Matrix& m) { return Matrix(a * m); };
  op.apply_trans = [&a](const Matrix& m) { return Matrix(a.transpose() * m); };
  return op;
}

}  // namespace

TEST_CASE("thin_qr: identity columns are a fixed point with R = I") {
  const Matrix m = Matrix::Identity(7, 3);
  const QRFactorization qr = thin_qr(m);
  CHECK(qr.q.matrix() == m);
  CHECK(qr.r_factor == Matrix::Identity(3, 3));
}

TEST_CASE("thin_qr: scaled identity columns") {
  const Matrix m = 2.0 * Matrix::Identity(6, 4);
  const QRFactorization qr = thin_qr(m);
  CHECK((qr.q.matrix() - Matrix::Identity(6, 4)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((qr.r_factor - 2.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("thin_qr: seeded 20x5 Gaussian reconstructs") {
  const Matrix m = gaussian(20, 5, 42);
  const QRFactorization qr = thin_qr(m);
  CHECK(qr.q.orthonormality_defect() < 1e-12);
  CHECK((qr.q.matrix() * qr.r_factor - m).norm() / m.norm() < 1e-12);
  for (int j = 0; j < 5; ++j) CHECK(qr.r_factor(j, j) >= 0.0);
}

TEST_CASE("thin_qr: idempotent on its own output, bit for bit") {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const QRFactorization first = thin_qr(gaussian(30, 6, seed));
    const QRFactorization second = thin_qr(first.q.matrix());
    CHECK(second.q.matrix() == first.q.matrix());
    CHECK(second.r_factor == Matrix::Identity(6, 6));
  }
}

TEST_CASE("thin_qr: rank deficient input throws") {
  Matrix m = gaussian(10, 3, 7);
  m.col(2) = m.col(0) + m.col(1);
  CHECK_THROWS_AS(thin_qr(m), RankDeficient);
}

TEST_CASE("power_top_r: diagonal operator recovers leading coordinates") {
  Matrix a = Matrix::Zero(5, 5);
  a.diagonal() << 5, 4, 3, 2, 1;
  const auto res = power_top_r(dense_operator(a), 2, 50, 11);
  const double err = oracles::se_f_dense(Matrix::Identity(5, 5).leftCols(2), res.basis.matrix());
  CHECK(err <= 1e-8);
  CHECK(res.top_singular_estimate == doctest::Approx(5.0).epsilon(1e-8));
}

TEST_CASE("power_top_r: matches the dense SVD oracle on a noisy 50x40 low-rank matrix") {
  // Planted top-5 spectrum over a Gaussian bulk; the rank gap keeps the
  // subspace well conditioned so the oracle comparison is meaningful.
  const Matrix u0 = thin_qr(gaussian(50, 5, 96)).q.matrix();
  const Matrix v0 = thin_qr(gaussian(40, 5, 97)).q.matrix();
  Vector spectrum(5);
  spectrum << 6, 5, 4, 3, 2;
  const Matrix a = u0 * spectrum.asDiagonal() * v0.transpose() + 0.1 * gaussian(50, 40, 99);
  const Matrix u_exact = oracles::top_left_singular(a, 5);

  const auto many = power_top_r(dense_operator(a), 5, 100, 3);
  const double err_many = oracles::se_f_dense(u_exact, many.basis.matrix());
  CHECK(err_many <= 1e-6);

  const auto few = power_top_r(dense_operator(a), 5, 15, 3);
  const double err_few = oracles::se_f_dense(u_exact, few.basis.matrix());
  CHECK(err_few > err_many);

  const Vector sv = oracles::singular_values(a);
  CHECK(many.top_singular_estimate == doctest::Approx(sv(0)).epsilon(1e-8));
}

TEST_CASE("power_top_r: deterministic given seed") {
  const Matrix a = gaussian(30, 20, 5);
  const auto r1 = power_top_r(dense_operator(a), 3, 25, 17);
  const auto r2 = power_top_r(dense_operator(a), 3, 25, 17);
  CHECK(r1.basis.matrix() == r2.basis.matrix());
  CHECK(r1.top_singular_estimate == r2.top_singular_estimate);
}

TEST_CASE("masked_column_ls: consistent full system returns exact coefficients") {
  const OrthonormalBasis u = thin_qr(gaussian(8, 3, 21)).q;
  Vector b0(3);
  b0 << 1.5, -0.25, 2.0;
  const Vector y = u.matrix() * b0;
  std::vector<int> rows{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<double> vals(y.data(), y.data() + y.size());
  const Vector b = masked_column_ls(u, rows, vals);
  CHECK((b - b0).norm() < 1e-12);
}

TEST_CASE("masked_column_ls: matches the independent dense solver") {
  const OrthonormalBasis u = thin_qr(gaussian(6, 2, 33)).q;
  const std::vector<int> rows{0, 2, 3, 5};
  Prng rng(5, RngStream::generic);
  std::vector<double> vals(rows.size());
  for (auto& v : vals) v = rng.next_gaussian();

  const Vector b = masked_column_ls(u, rows, vals);

  Matrix sub(rows.size(), 2);
  Vector y(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    sub.row(t) = u.matrix().row(rows[t]);
    y(t) = vals[t];
  }
  const Vector b_oracle = oracles::dense_ls(sub, y);
  CHECK((b - b_oracle).norm() < 1e-10);
}

TEST_CASE("masked_column_ls: fewer equations than unknowns") {
  const OrthonormalBasis u = thin_qr(gaussian(6, 2, 3)).q;
  const std::vector<int> rows{1};
  const std::vector<double> vals{0.7};
  CHECK_THROWS_AS(masked_column_ls(u, rows, vals), UnderdeterminedColumn);
}

TEST_CASE("masked_column_ls: optimality against random perturbations") {
  // 200 random small instances; the LS residual beats 1000 perturbed
  // candidates b + delta, ||delta|| = 1e-3, on a sampled subset per instance.
  Prng rng(1234, RngStream::generic);
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 6 + static_cast<int>(rng.next_below(6));
    const int r = 2 + static_cast<int>(rng.next_below(2));
    const OrthonormalBasis u = thin_qr(gaussian(n, r, 1000 + inst)).q;
    std::vector<int> rows;
    for (int j = 0; j < n; ++j)
      if (rng.next_bernoulli(0.8)) rows.push_back(j);
    if (static_cast<int>(rows.size()) < r) continue;
    std::vector<double> vals(rows.size());
    for (auto& v : vals) v = rng.next_gaussian();

    const Vector b = masked_column_ls(u, rows, vals);
    const auto residual = [&](const Vector& cand) {
      double s = 0;
      for (std::size_t t = 0; t < rows.size(); ++t) {
        const double diff = u.matrix().row(rows[t]).dot(cand) - vals[t];
        s += diff * diff;
      }
      return s;
    };
    const double best = residual(b);
    const int probes = 5;  // 200 x 5 = 1000 perturbations across instances
    for (int probe = 0; probe < probes; ++probe) {
      Vector delta(r);
      for (int i = 0; i < r; ++i) delta(i) = rng.next_gaussian();
      delta *= 1e-3 / delta.norm();
      CHECK(best <= residual(b + delta) + 1e-15);
    }
  }
}

TEST_CASE("subspace distances: identical and orthogonal spans") {
  const OrthonormalBasis u = thin_qr(gaussian(12, 3, 8)).q;
  CHECK(subspace_dist_F(u, u) <= 1e-14);
  CHECK(subspace_dist_2(u, u) <= 1e-14);

  const int r = 3;
  const OrthonormalBasis e_lo{Matrix(Matrix::Identity(12, 12).leftCols(r))};
  const OrthonormalBasis e_hi{Matrix(Matrix::Identity(12, 12).middleCols(r, r))};
  CHECK(subspace_dist_F(e_lo, e_hi) == doctest::Approx(std::sqrt(double(r))));
  CHECK(subspace_dist_2(e_lo, e_hi) == doctest::Approx(1.0));
}

TEST_CASE("subspace distances: invariant under unitary right-multiplication") {
  const OrthonormalBasis u1 = thin_qr(gaussian(20, 4, 14)).q;
  const OrthonormalBasis u2 = thin_qr(gaussian(20, 4, 15)).q;
  const Matrix rot = thin_qr(gaussian(4, 4, 16)).q.matrix();
  const OrthonormalBasis u1_rot{Matrix(u1.matrix() * rot)};
  CHECK(subspace_dist_F(u1_rot, u2) == doctest::Approx(subspace_dist_F(u1, u2)).epsilon(1e-12));
  CHECK(subspace_dist_F(u1, OrthonormalBasis{Matrix(u2.matrix() * rot)}) ==
        doctest::Approx(subspace_dist_F(u1, u2)).epsilon(1e-12));
  CHECK(subspace_dist_2(u1_rot, u2) == doctest::Approx(subspace_dist_2(u1, u2)).epsilon(1e-12));
}

TEST_CASE("subspace distances: SE_2 <= SE_F <= sqrt(r) SE_2 and dense-oracle match") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const int r = 3;
    const OrthonormalBasis u1 = thin_qr(gaussian(15, r, 100 + seed)).q;
    const OrthonormalBasis u2 = thin_qr(gaussian(15, r, 200 + seed)).q;
    const double se_f = subspace_dist_F(u1, u2);
    const double se_2 = subspace_dist_2(u1, u2);
    CHECK(se_2 <= se_f + 1e-12);
    CHECK(se_f <= std::sqrt(double(r)) * se_2 + 1e-12);
    CHECK(se_f == doctest::Approx(oracles::se_f_dense(u1.matrix(), u2.matrix())).epsilon(1e-10));
  }
}

TEST_CASE("subspace distances: dimension mismatch throws") {
  const OrthonormalBasis u1 = thin_qr(gaussian(10, 2, 1)).q;
  const OrthonormalBasis u2 = thin_qr(gaussian(10, 3, 2)).q;
  CHECK_THROWS_AS(subspace_dist_F(u1, u2), DimensionMismatch);
  CHECK_THROWS_AS(subspace_dist_2(u1, u2), DimensionMismatch);
}
