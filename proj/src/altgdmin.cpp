#include "fedlrmc/altgdmin.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace fedlrmc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void fill_pair_stats(TraceRow& row, const Matrix& u, const Matrix& b) {
  const SingularExtremes sv = singular_extremes(b);
  row.sigma_min_b = sv.min;
  row.sigma_max_b = sv.max;
  row.max_row_u = u.rowwise().norm().maxCoeff();
  row.max_col_b = b.colwise().norm().maxCoeff();
}

}  // namespace

const char* IterationTrace::csv_header() {
  return "iter,se_f,se_2,rel_frob_err,b_minus_g,sigma_min_B,sigma_max_B,max_row_u,max_col_b,"
         "grad_frob,wall_s,undercols";
}

std::string IterationTrace::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << csv_header() << '\n';
  for (const TraceRow& r : rows) {
    os << r.iter << ',' << r.se_f << ',' << r.se_2 << ',' << r.rel_frob_err << ',' << r.b_minus_g
       << ',' << r.sigma_min_b << ',' << r.sigma_max_b << ',' << r.max_row_u << ',' << r.max_col_b
       << ',' << r.grad_frob << ',' << r.wall_seconds << ',' << r.underdetermined_columns << '\n';
  }
  return os.str();
}

void IterationTrace::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << to_csv();
}

Matrix project_row_incoherent(const Matrix& m, double threshold) {
  if (!(threshold > 0.0)) throw InvalidDimensions("project_row_incoherent: threshold must be > 0");
  Matrix out = m;
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    const double norm = m.row(j).norm();
    if (norm > threshold) out.row(j) *= threshold / norm;
  }
  return out;
}

InitResult finish_init(PowerIterationResult power, const AltGDminConfig& cfg) {
  InitResult res;
  res.sigma_top_y = power.top_singular_estimate;
  const double row_scale = std::sqrt(static_cast<double>(cfg.r) / power.basis.rows());
  res.mu_estimate = power.basis.matrix().rowwise().norm().maxCoeff() / row_scale;

  const double mu_clip = cfg.mu_threshold.value_or(res.mu_estimate);
  res.clip_threshold = mu_clip * row_scale;

  if (std::isfinite(res.clip_threshold)) {
    Matrix clipped = project_row_incoherent(power.basis.matrix(), res.clip_threshold);
    for (Eigen::Index j = 0; j < clipped.rows(); ++j)
      if (power.basis.matrix().row(j).norm() > res.clip_threshold) ++res.clipped_rows;
    res.u = res.clipped_rows > 0 ? thin_qr(clipped).q : std::move(power.basis);
  } else {
    res.u = std::move(power.basis);
  }
  return res;
}

InitResult init(const SparseObservation& y0, const AltGDminConfig& cfg, std::uint64_t seed) {
  const int n = y0.mask.n;
  const int q = y0.mask.q;
  if (y0.mask.total_observed() == 0) throw InvalidDimensions("init: empty observation set");
  if (cfg.r < 1 || cfg.r > std::min(n, q)) throw InvalidDimensions("init: rank out of range");

  const LinearOperator op = observation_operator(y0);
  return finish_init(power_top_r(op, cfg.r, cfg.power_iters, seed), cfg);
}

BUpdateResult update_B(const Matrix& u, const SparseObservation& y, UnderdeterminedPolicy policy,
                       const Matrix* previous) {
  const int q = y.mask.q;
  const Eigen::Index r = u.cols();
  if (u.rows() != y.mask.n) throw DimensionMismatch("update_B: row count mismatch");

  BUpdateResult res;
  res.b = Matrix::Zero(r, q);
  for (int k = 0; k < q; ++k) {
    auto bk = try_masked_column_ls(u, y.mask.column(k), y.column_values(k));
    if (bk) {
      res.b.col(k) = *bk;
      continue;
    }
    ++res.underdetermined;
    switch (policy) {
      case UnderdeterminedPolicy::zero_column:
        break;  // stays zero
      case UnderdeterminedPolicy::skip_column:
        if (previous && previous->cols() == q) res.b.col(k) = previous->col(k);
        break;
      case UnderdeterminedPolicy::fail:
        throw UnderdeterminedAbort("update_B: column " + std::to_string(k) +
                                   " is underdetermined");
    }
  }
  return res;
}

Matrix gradient_U(const Matrix& u, const Matrix& b, const SparseObservation& y) {
  if (u.rows() != y.mask.n || b.cols() != y.mask.q || u.cols() != b.rows())
    throw DimensionMismatch("gradient_U: shape mismatch");
  Matrix grad = Matrix::Zero(u.rows(), u.cols());
  const std::vector<int> cols = all_columns(y.mask.q);
  accumulate_residual_gradient(y, cols, u, b, grad);
  return grad;
}

QRFactorization gd_step_qr(const OrthonormalBasis& u, const Matrix& grad, double eta) {
  if (!(eta > 0.0)) throw InvalidDimensions("gd_step_qr: eta must be > 0");
  if (grad.rows() != u.rows() || grad.cols() != u.cols())
    throw DimensionMismatch("gd_step_qr: gradient shape mismatch");
  return thin_qr(u.matrix() - eta * grad);
}

TraceRow diagnostics_step(const OrthonormalBasis& u, const Matrix& b, const GroundTruth& gt) {
  if (u.rows() != gt.n || b.cols() != gt.q || u.cols() != gt.r || b.rows() != gt.r)
    throw DimensionMismatch("diagnostics_step: shape mismatch with ground truth");

  TraceRow row;
  const Matrix overlap = u.matrix().transpose() * gt.u_star.matrix();  // r x r
  // Residual of U* against span(U): cancellation-free subspace distances.
  const Matrix resid = gt.u_star.matrix() - u.matrix() * overlap;
  row.se_f = resid.norm();
  row.se_2 = singular_extremes(resid).max;

  const Matrix g = (overlap * gt.sigma_star.asDiagonal()) * gt.v_star.matrix().transpose();
  row.b_minus_g = (b - g).norm();

  // ||X - X*||_F^2 = ||B - G||_F^2 + ||(I - U U^T) U* diag(Sigma*)||_F^2:
  // the two terms live in span(U) and its complement. No n x q densification.
  const double perp_sq = (resid * gt.sigma_star.asDiagonal()).squaredNorm();
  const double err_sq = row.b_minus_g * row.b_minus_g + perp_sq;
  row.rel_frob_err = std::sqrt(err_sq / gt.sigma_star.squaredNorm());

  fill_pair_stats(row, u.matrix(), b);
  return row;
}

TraceRow diagnostics_step_blind(const OrthonormalBasis& u, const Matrix& b) {
  TraceRow row;
  row.se_f = row.se_2 = row.rel_frob_err = row.b_minus_g = kNaN;
  fill_pair_stats(row, u.matrix(), b);
  return row;
}

RunResult run(const SparseObservation& y, const SampleSplit& split, const GroundTruth* gt_for_diag,
              const AltGDminConfig& cfg, std::uint64_t seed, bool record_iterates) {
  const int T = cfg.iterations;
  if (T < 1) throw InvalidDimensions("run: iterations must be >= 1");
  if (!(cfg.eta_c > 0.0)) throw InvalidDimensions("run: eta_c must be > 0");
  if (split.mode() == SplitMode::split && split.parts() < 2 * T + 1)
    throw InvalidDimensions("run: split needs 2T+1 subsets");
  if (split.subset(0).mask.n != y.mask.n || split.subset(0).mask.q != y.mask.q)
    throw DimensionMismatch("run: split does not match the observation");

  const auto b_subset = [&](int t) -> const SparseObservation& {
    // Algorithm subsets: 0 init, t-th for the B step of iteration t.
    return split.subset(split.mode() == SplitMode::split ? t : 0);
  };
  const auto grad_subset = [&](int t) -> const SparseObservation& {
    return split.subset(split.mode() == SplitMode::split ? T + t : 0);
  };

  RunResult res;
  double t0 = now_seconds();
  const InitResult initial = init(split.subset(0), cfg, seed);
  OrthonormalBasis u = initial.u;

  // sigma*_max estimate: ||Y0|| scales as p * sigma*_max in expectation.
  const double p_init = split.subset(0).mask.density();
  res.sigma_max_est =
      cfg.sigma_max_hint.value_or(p_init > 0 ? initial.sigma_top_y / p_init : 0.0);

  const double p_step = grad_subset(1).mask.density();
  if (cfg.eta_rule == EtaRule::theory) {
    if (!(res.sigma_max_est > 0) || !(p_step > 0))
      throw InvalidDimensions("run: cannot form theory step size");
    res.eta = cfg.eta_c / (p_step * res.sigma_max_est * res.sigma_max_est);
  } else {
    const double y_norm = initial.sigma_top_y;
    if (!(y_norm > 0)) throw InvalidDimensions("run: cannot form empirical step size");
    res.eta = cfg.eta_c * p_step / (y_norm * y_norm);
  }

  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(cfg.r));

  Matrix b;
  res.trace.rows.reserve(T + 1);
  if (record_iterates) res.iterates.push_back(u.matrix());

  for (int i = 0; i <= T; ++i) {
    // Iteration t = i+1 of the algorithm updates B from subset t; the final
    // row refreshes B against the last B subset so the returned pair solves
    // the LS problem for the final U.
    const SparseObservation& yb = b_subset(std::min(i + 1, T));
    BUpdateResult bu = update_B(u.matrix(), yb, cfg.underdetermined_policy, b.size() ? &b : nullptr);
    b = std::move(bu.b);

    if (!b.allFinite() || b.norm() > diverge_cap) {
      res.status = RunStatus::diverged;
      break;
    }

    TraceRow row = gt_for_diag ? diagnostics_step(u, b, *gt_for_diag)
                               : diagnostics_step_blind(u, b);
    row.iter = i;
    row.underdetermined_columns = bu.underdetermined;

    if (i < T) {
      const Matrix grad = gradient_U(u.matrix(), b, grad_subset(i + 1));
      row.grad_frob = grad.norm();
      row.wall_seconds = now_seconds() - t0;
      t0 = now_seconds();
      res.trace.rows.push_back(row);

      if (gt_for_diag && cfg.stop_se_f && row.se_f <= *cfg.stop_se_f) {
        res.status = RunStatus::stopped_early;
        break;
      }
      try {
        // The algorithm steps along the residual product (U B - Y)_Omega B^T,
        // which is half the squared-loss gradient; eta keeps the
        // eta <= 0.5/(p sigma_max^2) convention of the analysis.
        u = gd_step_qr(u, grad, 0.5 * res.eta).q;
      } catch (const RankDeficient&) {
        res.status = RunStatus::diverged;
        break;
      }
      if (record_iterates) res.iterates.push_back(u.matrix());
    } else {
      // Final state: gradient norm measured on the last gradient subset.
      row.grad_frob = gradient_U(u.matrix(), b, grad_subset(T)).norm();
      row.wall_seconds = now_seconds() - t0;
      t0 = now_seconds();
      res.trace.rows.push_back(row);
    }
  }

  res.factors = FactorPair{std::move(u), std::move(b)};
  return res;
}

}  // namespace fedlrmc
