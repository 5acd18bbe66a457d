#include <doctest.h>

#include <cmath>

#include "fedlrmc/baselines.hpp"
#include "oracles.hpp"

using namespace fedlrmc;
using oracles::gaussian;

namespace {

struct Instance {
  GroundTruth gt;
  SparseObservation y;
  SampleSplit split;
};

Instance make_instance(int n, int q, int r, double p, std::uint64_t seed) {
  Instance inst;
  inst.gt = gen_ground_truth(n, q, r, {SpectrumKind::gaussian, 1.0}, seed);
  inst.y = observe(inst.gt, sample_mask(n, q, p, seed + 1), 0, NoiseShape::rademacher, seed + 2);
  inst.split = split_mask(inst.y, 1, SplitMode::reuse, seed + 3);
  return inst;
}

BaselineConfig base_config(Algorithm alg, int r, int iters) {
  BaselineConfig cfg;
  cfg.algorithm = alg;
  cfg.base.r = r;
  cfg.base.iterations = iters;
  cfg.base.eta_rule = EtaRule::empirical;
  cfg.base.eta_c = 1.0;
  return cfg;
}

}  // namespace

TEST_CASE("altmin_iteration: full data lands in the planted span in one step") {
  const Instance inst = make_instance(30, 36, 3, 1.0, 300);
  const OrthonormalBasis u0 = thin_qr(gaussian(30, 3, 301)).q;
  const RowMajorView rows = row_major_view(inst.y);
  const AltMinStep step = altmin_iteration(u0, inst.y, rows, UnderdeterminedPolicy::zero_column);
  CHECK(subspace_dist_F(step.u_next, inst.gt.u_star) <= 1e-10);
  CHECK(step.underdetermined_columns == 0);
  CHECK(step.underdetermined_rows == 0);
}

TEST_CASE("altmin_iteration: row LS matches the independent dense oracle") {
  const Instance inst = make_instance(8, 6, 2, 0.85, 310);
  const OrthonormalBasis u0 = thin_qr(gaussian(8, 2, 311)).q;
  const RowMajorView rows = row_major_view(inst.y);
  const AltMinStep step = altmin_iteration(u0, inst.y, rows, UnderdeterminedPolicy::zero_column);

  const Matrix bt = step.b.transpose();
  for (int j = 0; j < 8; ++j) {
    const auto cols = rows.row_columns(j);
    const auto vals = rows.row_values(j);
    if (static_cast<int>(cols.size()) < 2) continue;
    Matrix design(cols.size(), 2);
    Vector rhs(cols.size());
    for (std::size_t t = 0; t < cols.size(); ++t) {
      design.row(t) = bt.row(cols[t]);
      rhs(t) = vals[t];
    }
    auto sol = try_masked_column_ls(bt, cols, vals);
    REQUIRE(sol.has_value());
    const Vector expected = oracles::dense_ls(design, rhs);
    CHECK((design * *sol - rhs).norm() ==
          doctest::Approx((design * expected - rhs).norm()).epsilon(1e-10));
    CHECK((*sol - expected).norm() < 1e-10);
  }
}

TEST_CASE("altmin: transpose duality of the two half-steps") {
  // Applying the column-LS step to Y^T with design B^T reproduces the U step.
  const Instance inst = make_instance(10, 12, 2, 0.9, 320);
  const OrthonormalBasis u0 = thin_qr(gaussian(10, 2, 321)).q;
  const RowMajorView rows = row_major_view(inst.y);
  const AltMinStep step = altmin_iteration(u0, inst.y, rows, UnderdeterminedPolicy::zero_column);

  SparseObservation yt;
  yt.mask.n = inst.y.mask.q;
  yt.mask.q = inst.y.mask.n;
  yt.mask.p = inst.y.mask.p;
  yt.mask.col_ptr.assign(yt.mask.q + 1, 0);
  for (int j = 0; j < inst.y.mask.n; ++j) {
    const auto cols = rows.row_columns(j);
    const auto vals = rows.row_values(j);
    for (std::size_t t = 0; t < cols.size(); ++t) {
      yt.mask.row_idx.push_back(cols[t]);
      yt.values.push_back(vals[t]);
    }
    yt.mask.col_ptr[j + 1] = static_cast<int>(yt.mask.row_idx.size());
  }

  const BUpdateResult swapped =
      update_B(step.b.transpose(), yt, UnderdeterminedPolicy::zero_column);
  const OrthonormalBasis u_dual = thin_qr(swapped.b.transpose()).q;
  CHECK((u_dual.matrix() - step.u_next.matrix()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("altmin_private_u_step: many inner steps approach the exact LS solution") {
  const Instance inst = make_instance(24, 30, 2, 0.8, 330);
  const OrthonormalBasis u0 = thin_qr(gaussian(24, 2, 331)).q;
  const RowMajorView rows = row_major_view(inst.y);
  const AltMinStep exact = altmin_iteration(u0, inst.y, rows, UnderdeterminedPolicy::zero_column);

  const double p = inst.y.mask.density();
  const double y_norm = oracles::singular_values(oracles::densify(inst.y))(0);
  const double eta = p / (y_norm * y_norm);
  const OrthonormalBasis near_exact = altmin_private_u_step(u0, exact.b, inst.y, 2500, eta);
  CHECK(subspace_dist_F(near_exact, exact.u_next) <= 1e-6);
}

TEST_CASE("altmin_private_u_step: gradient vanishes at the exact LS solution") {
  const Instance inst = make_instance(20, 25, 2, 0.9, 340);
  const OrthonormalBasis u0 = thin_qr(gaussian(20, 2, 341)).q;
  const RowMajorView rows = row_major_view(inst.y);
  const AltMinStep step = altmin_iteration(u0, inst.y, rows, UnderdeterminedPolicy::zero_column);

  const Matrix bt = step.b.transpose();
  Matrix u_tilde(20, 2);
  for (int j = 0; j < 20; ++j) {
    auto sol = try_masked_column_ls(bt, rows.row_columns(j), rows.row_values(j));
    REQUIRE(sol.has_value());
    u_tilde.row(j) = sol->transpose();
  }
  CHECK(gradient_U(u_tilde, step.b, inst.y).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("factgd gradients: lambda = 0 data term matches gradient_U") {
  const Instance inst = make_instance(15, 18, 3, 0.7, 350);
  const Matrix u_raw = gaussian(15, 3, 351);
  const Matrix b_raw = gaussian(3, 18, 352);
  const std::vector<int> cols = all_columns(18);
  Matrix g = Matrix::Zero(15, 3);
  accumulate_residual_gradient(inst.y, cols, u_raw, b_raw, g);
  CHECK((g - gradient_U(u_raw, b_raw, inst.y)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("factgd balance gradients: finite-difference check along 20 directions") {
  const Matrix u0 = gaussian(12, 3, 360);
  const Matrix b0 = gaussian(3, 14, 361);
  const auto h = [&](const Matrix& u, const Matrix& b) {
    return (u.transpose() * u - b * b.transpose()).squaredNorm();
  };
  const Matrix gu = balance_gradient_u(u0, b0);
  const Matrix gb = balance_gradient_b(u0, b0);
  for (int dir = 0; dir < 20; ++dir) {
    Matrix du = gaussian(12, 3, 1360 + dir);
    du /= du.norm();
    Matrix db = gaussian(3, 14, 2360 + dir);
    db /= db.norm();
    const double fd_u =
        oracles::central_difference([&](const Matrix& u) { return h(u, b0); }, u0, du, 1e-6);
    const double fd_b =
        oracles::central_difference([&](const Matrix& b) { return h(u0, b); }, b0, db, 1e-6);
    CHECK(std::abs(fd_u - gu.cwiseProduct(du).sum()) / std::abs(fd_u) < 1e-6);
    CHECK(std::abs(fd_b - gb.cwiseProduct(db).sum()) / std::abs(fd_b) < 1e-6);
  }
}

TEST_CASE("factgd_iteration: clipping is a no-op inside the incoherent sets") {
  const Instance inst = make_instance(20, 24, 2, 0.8, 370);
  const Matrix u_raw = gaussian(20, 2, 371);
  const Matrix b_raw = gaussian(2, 24, 372);
  const double huge = 1e9;
  const FactGdStep a = factgd_iteration(u_raw, b_raw, inst.y, 1e-3, 0.5, huge, huge);
  const double ru = a.u.rowwise().norm().maxCoeff() * (1 + 1e-9);
  const double rb = a.b.colwise().norm().maxCoeff() * (1 + 1e-9);
  const FactGdStep b = factgd_iteration(u_raw, b_raw, inst.y, 1e-3, 0.5, ru, rb);
  CHECK(a.u == b.u);
  CHECK(a.b == b.b);
}

TEST_CASE("projgd_iteration: zero residual is a fixed point") {
  const Instance inst = make_instance(20, 26, 2, 0.7, 380);
  FactorPair x{inst.gt.u_star, inst.gt.b_star()};
  const FactorPair next = projgd_iteration(x, inst.y, 1.0 / inst.y.mask.density(), 40);
  const Matrix before = x.u.matrix() * x.b;
  const Matrix after = next.u.matrix() * next.b;
  CHECK((after - before).norm() / before.norm() <= 1e-8);
}

TEST_CASE("projgd_iteration: full data recovers in one unit step") {
  const Instance inst = make_instance(18, 22, 2, 1.0, 390);
  const OrthonormalBasis u0 = thin_qr(gaussian(18, 2, 391)).q;
  const BUpdateResult b0 = update_B(u0.matrix(), inst.y, UnderdeterminedPolicy::zero_column);
  const FactorPair next = projgd_iteration({u0, b0.b}, inst.y, 1.0, 40);
  const Matrix x_hat = next.u.matrix() * next.b;
  CHECK((x_hat - inst.gt.dense()).norm() / inst.gt.dense().norm() <= 1e-8);
}

TEST_CASE("projgd_iteration: implicit operator matches the densified oracle") {
  const Instance inst = make_instance(40, 50, 3, 0.5, 400);
  const OrthonormalBasis u = thin_qr(gaussian(40, 3, 401)).q;
  const Matrix b = gaussian(3, 50, 402);
  const double eta = 2.0;

  SparseObservation resid = inst.y;
  for (int k = 0; k < 50; ++k)
    for (int idx = resid.mask.col_ptr[k]; idx < resid.mask.col_ptr[k + 1]; ++idx)
      resid.values[idx] =
          u.matrix().row(resid.mask.row_idx[idx]).dot(b.col(k)) - inst.y.values[idx];
  const Matrix m_dense = u.matrix() * b - eta * oracles::densify(resid);

  const LinearOperator s_op = observation_operator(resid);
  const Matrix v = gaussian(50, 3, 403);
  const Matrix implicit = u.matrix() * (b * v) - eta * s_op.apply(v);
  CHECK((implicit - m_dense * v).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix w = gaussian(40, 3, 404);
  const Matrix implicit_t =
      b.transpose() * (u.matrix().transpose() * w) - eta * s_op.apply_trans(w);
  CHECK((implicit_t - m_dense.transpose() * w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("run_algorithm: altmin contracts SE_F by at least half per sweep") {
  const Instance inst = make_instance(200, 200, 5, 0.3, 410);
  BaselineConfig cfg = base_config(Algorithm::altmin, 5, 25);
  cfg.base.stop_se_f = 1e-13;
  const RunResult res = run_algorithm(inst.y, inst.split, &inst.gt, cfg, 411);
  REQUIRE(res.trace.rows.size() >= 4);
  CHECK(res.trace.rows.back().se_f <= 1e-10);
  for (std::size_t t = 1; t < res.trace.rows.size(); ++t) {
    const double prev = res.trace.rows[t - 1].se_f;
    if (prev < 1e-12) break;  // below this the ratio is rounding noise
    CHECK(res.trace.rows[t].se_f <= 0.5 * prev);
  }
}

TEST_CASE("run_algorithm: altmin_private converges with the shared init point") {
  const Instance inst = make_instance(120, 120, 3, 0.4, 420);
  BaselineConfig exact = base_config(Algorithm::altmin, 3, 20);
  exact.base.stop_se_f = 1e-11;
  BaselineConfig priv = base_config(Algorithm::altmin_private, 3, 80);
  priv.base.stop_se_f = 1e-11;
  priv.inner_iters = 10;

  const RunResult res_exact = run_algorithm(inst.y, inst.split, &inst.gt, exact, 421);
  const RunResult res_priv = run_algorithm(inst.y, inst.split, &inst.gt, priv, 421);
  CHECK(res_exact.trace.rows.back().se_f <= 1e-10);
  CHECK(res_priv.trace.rows.back().se_f <= 1e-10);
  // Inexact U updates cost extra outer iterations.
  CHECK(res_priv.trace.rows.size() >= res_exact.trace.rows.size());
  CHECK(res_priv.trace.rows[0].se_f == doctest::Approx(res_exact.trace.rows[0].se_f));
}

TEST_CASE("run_algorithm: factgd at r = 20 needs several times more iterations") {
  // The iteration-count gap grows with r; r = 20 makes it pronounced.
  const Instance inst = make_instance(150, 150, 20, 0.4, 430);
  BaselineConfig gdmin = base_config(Algorithm::altgdmin, 20, 2000);
  gdmin.base.stop_se_f = 1e-10;
  BaselineConfig fact = base_config(Algorithm::factgd, 20, 20000);
  fact.base.stop_se_f = 1e-10;

  const RunResult res_gdmin = run_algorithm(inst.y, inst.split, &inst.gt, gdmin, 431);
  const RunResult res_fact = run_algorithm(inst.y, inst.split, &inst.gt, fact, 431);
  REQUIRE(res_gdmin.trace.rows.back().se_f <= 1e-10);
  REQUIRE(res_fact.trace.rows.back().se_f <= 1e-10);
  CHECK(res_fact.trace.rows.size() >= 3 * res_gdmin.trace.rows.size());
  CHECK(res_fact.trace.rows[0].se_f == doctest::Approx(res_gdmin.trace.rows[0].se_f));
}

TEST_CASE("run_algorithm: projgd reaches the success threshold") {
  const Instance inst = make_instance(100, 100, 3, 0.5, 440);
  BaselineConfig cfg = base_config(Algorithm::projgd, 3, 150);
  cfg.base.stop_se_f = 1e-10;
  cfg.projgd_svd_iters = 30;
  const RunResult res = run_algorithm(inst.y, inst.split, &inst.gt, cfg, 441);
  CHECK(res.trace.rows.back().se_f <= 1e-10);
}

TEST_CASE("run_algorithm: every algorithm shares the trace schema and init point") {
  const Instance inst = make_instance(80, 90, 3, 0.6, 450);
  const Algorithm algs[] = {Algorithm::altgdmin, Algorithm::altmin, Algorithm::altmin_private,
                            Algorithm::factgd, Algorithm::projgd};
  double se0 = -1;
  for (Algorithm alg : algs) {
    BaselineConfig cfg = base_config(alg, 3, 3);
    const RunResult res = run_algorithm(inst.y, inst.split, &inst.gt, cfg, 451);
    REQUIRE(res.trace.rows.size() == 4);
    if (se0 < 0) se0 = res.trace.rows[0].se_f;
    CHECK(res.trace.rows[0].se_f == doctest::Approx(se0).epsilon(1e-12));
    const std::string csv = res.trace.to_csv();
    CHECK(csv.rfind(IterationTrace::csv_header(), 0) == 0);
  }
}
