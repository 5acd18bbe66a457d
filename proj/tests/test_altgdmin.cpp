#include <doctest.h>

#include <cmath>

#include "fedlrmc/altgdmin.hpp"
#include "oracles.hpp"

using namespace fedlrmc;
using oracles::gaussian;

namespace {

struct Instance {
  GroundTruth gt;
  SparseObservation y;
  SampleSplit split;
};

Instance make_instance(int n, int q, int r, double p, std::uint64_t seed, double eps_noise = 0.0,
                       int parts = 1, SplitMode mode = SplitMode::reuse) {
  Instance inst;
  inst.gt = gen_ground_truth(n, q, r, {SpectrumKind::gaussian, 1.0}, seed);
  inst.y = observe(inst.gt, sample_mask(n, q, p, seed + 1), eps_noise, NoiseShape::rademacher,
                   seed + 2);
  inst.split = split_mask(inst.y, parts, mode, seed + 3);
  return inst;
}

}  // namespace

TEST_CASE("project_row_incoherent: identity below the threshold") {
  const Matrix m = 0.1 * gaussian(10, 3, 1);
  CHECK(project_row_incoherent(m, 10.0) == m);
}

TEST_CASE("project_row_incoherent: oversized rows land exactly on the threshold") {
  Matrix m = gaussian(6, 2, 2);
  m.row(3) *= 50.0;
  const double thr = m.row(3).norm() / 2.0;
  const Matrix out = project_row_incoherent(m, thr);
  CHECK(out.row(3).norm() == doctest::Approx(thr).epsilon(1e-12));
  CHECK((out.row(3) / out.row(3).norm() - m.row(3) / m.row(3).norm()).norm() < 1e-12);
  // Zero rows pass through.
  Matrix z = m;
  z.row(0).setZero();
  CHECK(project_row_incoherent(z, thr).row(0).norm() == 0.0);
}

TEST_CASE("project_row_incoherent: non-expansive over 500 seeded pairs") {
  Prng rng(7, RngStream::generic);
  for (int pair = 0; pair < 500; ++pair) {
    const Matrix a = gaussian(8, 3, 3000 + pair);
    const Matrix b = gaussian(8, 3, 4000 + pair);
    const double thr = 0.2 + rng.next_double();
    CHECK((project_row_incoherent(a, thr) - project_row_incoherent(b, thr)).norm() <=
          (a - b).norm() + 1e-12);
  }
}

TEST_CASE("init: full data recovers the planted subspace") {
  const Instance inst = make_instance(40, 50, 3, 1.0, 10);
  AltGDminConfig cfg;
  cfg.r = 3;
  cfg.power_iters = 200;
  const InitResult res = init(inst.y, cfg, 5);
  CHECK(subspace_dist_F(res.u, inst.gt.u_star) <= 1e-6);
}

TEST_CASE("init: estimated threshold is honored and clipping off matches") {
  const Instance inst = make_instance(200, 200, 5, 0.5, 20);
  AltGDminConfig cfg;
  cfg.r = 5;
  const InitResult est = init(inst.y, cfg, 6);
  // Row bound from the estimation rule holds exactly (clip was a no-op).
  const double bound = est.clip_threshold;
  for (int j = 0; j < 200; ++j) CHECK(est.u.matrix().row(j).norm() <= bound * (1 + 1e-12));
  CHECK(est.clipped_rows == 0);
  CHECK(subspace_dist_F(est.u, inst.gt.u_star) < 0.5);

  AltGDminConfig unclipped = cfg;
  unclipped.mu_threshold = std::numeric_limits<double>::infinity();
  const InitResult raw = init(inst.y, unclipped, 6);
  CHECK(raw.u.matrix() == est.u.matrix());
}

TEST_CASE("init: strict true-mu clipping keeps the 1.5x row slack") {
  const Instance inst = make_instance(200, 200, 5, 0.5, 30);
  AltGDminConfig cfg;
  cfg.r = 5;
  cfg.mu_threshold = inst.gt.mu;  // strict mode: clip at the true mu
  const InitResult res = init(inst.y, cfg, 8);
  const double level = inst.gt.mu * std::sqrt(5.0 / 200.0);
  for (int j = 0; j < 200; ++j)
    CHECK(res.u.matrix().row(j).norm() <= 1.5 * level * (1 + 1e-10));
  CHECK(subspace_dist_F(res.u, inst.gt.u_star) < 0.5);
}

TEST_CASE("update_B: full data projects exactly") {
  const Instance inst = make_instance(30, 40, 4, 1.0, 40);
  AltGDminConfig cfg;
  cfg.r = 4;
  cfg.power_iters = 100;
  const InitResult ini = init(inst.y, cfg, 9);
  const BUpdateResult res =
      update_B(ini.u.matrix(), inst.y, UnderdeterminedPolicy::zero_column);
  const Matrix expected = ini.u.matrix().transpose() * inst.gt.dense();
  CHECK((res.b - expected).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(res.underdetermined == 0);
}

TEST_CASE("update_B: matches the per-column dense oracle") {
  const Instance inst = make_instance(8, 6, 2, 0.8, 50);
  const OrthonormalBasis u = thin_qr(gaussian(8, 2, 51)).q;
  const BUpdateResult res = update_B(u.matrix(), inst.y, UnderdeterminedPolicy::zero_column);
  for (int k = 0; k < 6; ++k) {
    const auto rows = inst.y.mask.column(k);
    const auto vals = inst.y.column_values(k);
    if (static_cast<int>(rows.size()) < 2) continue;
    Matrix sub(rows.size(), 2);
    Vector rhs(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      sub.row(t) = u.matrix().row(rows[t]);
      rhs(t) = vals[t];
    }
    CHECK((res.b.col(k) - oracles::dense_ls(sub, rhs)).norm() < 1e-10);
  }
}

TEST_CASE("update_B: underdetermined column policies") {
  // Column 2 keeps a single observation.
  GroundTruth gt = gen_ground_truth(10, 4, 2, {SpectrumKind::gaussian, 1.0}, 60);
  ObservationMask mask = sample_mask(10, 4, 1.0, 61);
  mask.col_ptr = {0, 10, 20, 21, 31};
  mask.row_idx.clear();
  for (int k = 0; k < 4; ++k) {
    if (k == 2) {
      mask.row_idx.push_back(3);
      continue;
    }
    for (int j = 0; j < 10; ++j) mask.row_idx.push_back(j);
  }
  const SparseObservation y = observe(gt, mask, 0, NoiseShape::rademacher, 62);
  const OrthonormalBasis u = thin_qr(gaussian(10, 2, 63)).q;

  const BUpdateResult zeroed = update_B(u.matrix(), y, UnderdeterminedPolicy::zero_column);
  CHECK(zeroed.underdetermined == 1);
  CHECK(zeroed.b.col(2).norm() == 0.0);

  Matrix prev = Matrix::Constant(2, 4, 7.0);
  const BUpdateResult kept = update_B(u.matrix(), y, UnderdeterminedPolicy::skip_column, &prev);
  CHECK(kept.b.col(2) == prev.col(2));

  CHECK_THROWS_AS(update_B(u.matrix(), y, UnderdeterminedPolicy::fail), UnderdeterminedAbort);
}

TEST_CASE("gradient_U: zero residual gives the zero matrix") {
  const Instance inst = make_instance(12, 14, 2, 0.6, 70);
  const OrthonormalBasis u = thin_qr(gaussian(12, 2, 71)).q;
  const BUpdateResult bres = update_B(u.matrix(), inst.y, UnderdeterminedPolicy::zero_column);
  // Build y2 = (U B)_Omega so residuals vanish identically.
  SparseObservation y2 = inst.y;
  for (int k = 0; k < y2.mask.q; ++k)
    for (int idx = y2.mask.col_ptr[k]; idx < y2.mask.col_ptr[k + 1]; ++idx)
      y2.values[idx] = u.matrix().row(y2.mask.row_idx[idx]).dot(bres.b.col(k));
  CHECK(gradient_U(u.matrix(), bres.b, y2).norm() == 0.0);
}

TEST_CASE("gradient_U: central finite differences along 20 directions") {
  const Instance inst = make_instance(15, 18, 3, 0.5, 80);
  const Matrix u0 = gaussian(15, 3, 81);
  const Matrix b = gaussian(3, 18, 82);
  const Matrix grad = gradient_U(u0, b, inst.y);
  const std::vector<int> cols = all_columns(18);
  const auto f = [&](const Matrix& u) { return masked_residual_sq(inst.y, cols, u, b); };
  for (int dir = 0; dir < 20; ++dir) {
    Matrix d = gaussian(15, 3, 900 + dir);
    d /= d.norm();
    const double fd = oracles::central_difference(f, u0, d, 1e-5);
    const double analytic = grad.cwiseProduct(d).sum();
    CHECK(std::abs(fd - analytic) / std::max(std::abs(fd), 1e-12) < 1e-6);
  }
}

TEST_CASE("gradient_U: Monte Carlo expectation approximates p (X - X*) B^T") {
  const GroundTruth gt = gen_ground_truth(50, 60, 3, {SpectrumKind::gaussian, 1.0}, 90);
  const OrthonormalBasis u = thin_qr(gaussian(50, 3, 91)).q;
  const Matrix b = gaussian(3, 60, 92);
  const double p = 0.3;

  Matrix mean = Matrix::Zero(50, 3);
  const int draws = 2000;
  for (int t = 0; t < draws; ++t) {
    const ObservationMask mask = sample_mask(50, 60, p, 10000 + t);
    const SparseObservation y = observe(gt, mask, 0, NoiseShape::rademacher, 1);
    mean += gradient_U(u.matrix(), b, y);
  }
  mean /= double(draws);

  const Matrix expected = p * (u.matrix() * b - gt.dense()) * b.transpose();
  CHECK((0.5 * mean - expected).norm() / expected.norm() < 0.05);
}

TEST_CASE("gd_step_qr: zero gradient is an exact fixed point") {
  const OrthonormalBasis u = thin_qr(gaussian(20, 4, 100)).q;
  const QRFactorization step = gd_step_qr(u, Matrix::Zero(20, 4), 0.7);
  CHECK(step.q.matrix() == u.matrix());
  CHECK(step.r_factor == Matrix::Identity(4, 4));
}

TEST_CASE("gd_step_qr: rank-collapsing step throws") {
  const OrthonormalBasis u = thin_qr(gaussian(10, 3, 101)).q;
  const double eta = 0.25;
  Vector scale(3);
  scale << 1.0 / eta, 0.0, 0.0;  // wipes out the first column
  const Matrix grad = u.matrix() * scale.asDiagonal();
  CHECK_THROWS_AS(gd_step_qr(u, grad, eta), RankDeficient);
}

TEST_CASE("gd_step_qr: one theory-rate step decreases SE_F") {
  const Instance inst = make_instance(100, 120, 3, 0.5, 110);
  AltGDminConfig cfg;
  cfg.r = 3;
  const InitResult ini = init(inst.y, cfg, 12);
  const BUpdateResult bres = update_B(ini.u.matrix(), inst.y, UnderdeterminedPolicy::zero_column);
  const Matrix grad = gradient_U(ini.u.matrix(), bres.b, inst.y);
  const double p = inst.y.mask.density();
  const double eta = 0.5 / (p * inst.gt.sigma_max() * inst.gt.sigma_max());
  const QRFactorization step = gd_step_qr(ini.u, grad, eta);
  const double before = subspace_dist_F(ini.u, inst.gt.u_star);
  const double after = subspace_dist_F(step.q, inst.gt.u_star);
  CHECK(after < before);
}

TEST_CASE("diagnostics_step: planted solution reads zero everywhere") {
  const GroundTruth gt = gen_ground_truth(30, 35, 3, {SpectrumKind::gaussian, 1.0}, 120);
  const TraceRow row = diagnostics_step(gt.u_star, gt.b_star(), gt);
  CHECK(row.se_f == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(row.b_minus_g == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(row.rel_frob_err == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(row.sigma_max_b == doctest::Approx(gt.sigma_max()).epsilon(1e-10));
  CHECK(row.sigma_min_b == doctest::Approx(gt.sigma_min()).epsilon(1e-10));
}

TEST_CASE("diagnostics_step: factored error identity matches the densified oracle") {
  const GroundTruth gt = gen_ground_truth(40, 50, 4, {SpectrumKind::gaussian, 1.0}, 130);
  const OrthonormalBasis u = thin_qr(gaussian(40, 4, 131)).q;
  const Matrix b = gaussian(4, 50, 132);
  const TraceRow row = diagnostics_step(u, b, gt);

  const Matrix x_dense = u.matrix() * b;
  const Matrix x_star = gt.dense();
  const double rel_oracle = (x_dense - x_star).norm() / x_star.norm();
  CHECK(row.rel_frob_err == doctest::Approx(rel_oracle).epsilon(1e-10));

  const Matrix g_oracle = u.matrix().transpose() * x_star;
  CHECK(row.b_minus_g == doctest::Approx((b - g_oracle).norm()).epsilon(1e-10));
}

TEST_CASE("run: complete data converges to machine precision") {
  const Instance inst = make_instance(40, 45, 3, 1.0, 140);
  AltGDminConfig cfg;
  cfg.r = 3;
  cfg.iterations = 50;
  cfg.eta_rule = EtaRule::empirical;
  cfg.eta_c = 1.0;
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 14);
  CHECK(res.status == RunStatus::ok);
  CHECK(res.trace.rows.size() == 51);
  CHECK(res.trace.rows.back().rel_frob_err <= 1e-10);
}

TEST_CASE("run: regression instance decays geometrically to 1e-10") {
  const Instance inst = make_instance(200, 200, 5, 0.3, 150);
  AltGDminConfig cfg;
  cfg.r = 5;
  cfg.iterations = 400;
  cfg.eta_rule = EtaRule::empirical;
  cfg.eta_c = 1.0;
  cfg.stop_se_f = 1e-12;
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 15);
  REQUIRE(res.trace.rows.size() >= 5);
  CHECK(res.trace.rows.back().se_f <= 1e-10);
  for (std::size_t t = 3; t < res.trace.rows.size(); ++t)
    CHECK(res.trace.rows[t].se_f <= res.trace.rows[t - 1].se_f * (1 + 1e-9));

  // Singular values of B track the planted spectrum up to the current
  // subspace error delta (5% slack on the high-probability bounds).
  const double smax = inst.gt.sigma_max();
  const double smin = inst.gt.sigma_min();
  const double kappa = inst.gt.kappa;
  for (const TraceRow& row : res.trace.rows) {
    const double delta = row.se_f;
    CHECK(row.sigma_max_b <= (1 + delta) * smax * 1.05);
    const double lower = (std::sqrt(std::max(1 - delta * delta, 0.0)) - delta * kappa) * smin;
    CHECK(row.sigma_min_b >= lower * 0.95 - 1e-12);
  }
}

TEST_CASE("run: noisy observations plateau at or under the kappa^2 sqrt(r) eps floor") {
  const double eps_noise = 1e-3;
  const Instance inst = make_instance(200, 200, 5, 0.3, 160, eps_noise);
  AltGDminConfig cfg;
  cfg.r = 5;
  cfg.iterations = 150;
  cfg.eta_rule = EtaRule::empirical;
  cfg.eta_c = 1.0;
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 16);
  const double floor_bound =
      inst.gt.kappa * inst.gt.kappa * std::sqrt(5.0) * eps_noise;
  const double plateau = res.trace.rows.back().se_f;
  CHECK(plateau <= floor_bound);
  CHECK(plateau > 1e-8);  // genuinely floored, not converged to zero
}

TEST_CASE("run: trace CSV uses the documented schema") {
  const Instance inst = make_instance(20, 22, 2, 0.8, 170);
  AltGDminConfig cfg;
  cfg.r = 2;
  cfg.iterations = 3;
  cfg.eta_rule = EtaRule::empirical;
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 17);
  const std::string csv = res.trace.to_csv();
  CHECK(csv.rfind("iter,se_f,se_2,rel_frob_err,b_minus_g,sigma_min_B,sigma_max_B,max_row_u,"
                  "max_col_b,grad_frob,wall_s,undercols\n", 0) == 0);
  // 4 rows + header.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("run: sample splitting consumes 2T+1 subsets") {
  const int T = 3;
  const Instance inst = make_instance(200, 200, 2, 0.95, 180, 0.0, 2 * T + 1, SplitMode::split);
  AltGDminConfig cfg;
  cfg.r = 2;
  cfg.iterations = T;
  cfg.split_mode = SplitMode::split;
  cfg.eta_rule = EtaRule::empirical;
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 18);
  CHECK(res.trace.rows.size() == T + 1);
  CHECK(res.trace.rows.back().se_f < 0.5 * res.trace.rows.front().se_f);

  AltGDminConfig bad = cfg;
  bad.iterations = T + 1;  // needs 2T+3 subsets
  CHECK_THROWS_AS(run(inst.y, inst.split, &inst.gt, bad, 18), InvalidDimensions);
}

TEST_CASE("run: orthonormality of the iterate is maintained") {
  const Instance inst = make_instance(80, 90, 3, 0.4, 190);
  AltGDminConfig cfg;
  cfg.r = 3;
  cfg.iterations = 30;
  cfg.eta_rule = EtaRule::empirical;
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 19, /*record_iterates=*/true);
  for (const Matrix& u : res.iterates) {
    Matrix gram = u.transpose() * u;
    gram -= Matrix::Identity(3, 3);
    CHECK(gram.cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("run: divergence guard trips on an oversized step") {
  const Instance inst = make_instance(60, 60, 3, 0.5, 200);
  AltGDminConfig cfg;
  cfg.r = 3;
  cfg.iterations = 60;
  cfg.eta_rule = EtaRule::theory;
  cfg.eta_c = 2.0;  // far beyond the 0.5 cap
  const RunResult res = run(inst.y, inst.split, &inst.gt, cfg, 20);
  const bool flagged = res.status == RunStatus::diverged ||
                       (res.status == RunStatus::ok && res.trace.rows.back().se_f > 1e-10);
  CHECK(flagged);
}
