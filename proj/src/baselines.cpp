#include "fedlrmc/baselines.hpp"

#include <chrono>
#include <cmath>

namespace fedlrmc {

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::altgdmin: return "altgdmin";
    case Algorithm::altmin: return "altmin";
    case Algorithm::altmin_private: return "altmin_private";
    case Algorithm::factgd: return "factgd";
    case Algorithm::projgd: return "projgd";
  }
  return "unknown";
}

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "altgdmin") return Algorithm::altgdmin;
  if (name == "altmin") return Algorithm::altmin;
  if (name == "altmin_private" || name == "altmin-private") return Algorithm::altmin_private;
  if (name == "factgd") return Algorithm::factgd;
  if (name == "projgd") return Algorithm::projgd;
  throw std::invalid_argument("unknown algorithm: " + name);
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

AltMinStep altmin_iteration(const OrthonormalBasis& u, const SparseObservation& y,
                            const RowMajorView& rows, UnderdeterminedPolicy policy,
                            const Matrix* previous_u) {
  AltMinStep step;
  BUpdateResult bu = update_B(u.matrix(), y, policy);
  step.b = std::move(bu.b);
  step.underdetermined_columns = bu.underdetermined;

  const Matrix bt = step.b.transpose();  // q x r design matrix for the row problems
  Matrix u_tilde = Matrix::Zero(u.rows(), u.cols());
  for (int j = 0; j < u.rows(); ++j) {
    auto uj = try_masked_column_ls(bt, rows.row_columns(j), rows.row_values(j));
    if (uj) {
      u_tilde.row(j) = uj->transpose();
      continue;
    }
    ++step.underdetermined_rows;
    switch (policy) {
      case UnderdeterminedPolicy::zero_column:
        break;
      case UnderdeterminedPolicy::skip_column:
        u_tilde.row(j) = previous_u ? previous_u->row(j) : u.matrix().row(j);
        break;
      case UnderdeterminedPolicy::fail:
        throw UnderdeterminedRow("altmin_iteration: row " + std::to_string(j) +
                                 " is underdetermined");
    }
  }
  step.u_next = thin_qr(u_tilde).q;
  return step;
}

OrthonormalBasis altmin_private_u_step(const OrthonormalBasis& u_prev, const Matrix& b,
                                       const SparseObservation& y, int inner_iters,
                                       double eta_inner) {
  if (inner_iters < 1) throw InvalidDimensions("altmin_private_u_step: inner_iters must be >= 1");
  Matrix u_tilde = u_prev.matrix();
  for (int it = 0; it < inner_iters; ++it) {
    // Residual-product step, same eta convention as the outer algorithm.
    const Matrix grad = gradient_U(u_tilde, b, y);
    u_tilde -= (0.5 * eta_inner) * grad;
  }
  return thin_qr(u_tilde).q;
}

Matrix balance_gradient_u(const Matrix& u, const Matrix& b) {
  const Matrix s = u.transpose() * u - b * b.transpose();
  return 4.0 * u * s;
}

Matrix balance_gradient_b(const Matrix& u, const Matrix& b) {
  const Matrix s = u.transpose() * u - b * b.transpose();
  return -4.0 * s * b;
}

Matrix column_gram(const Matrix& b, std::span<const int> cols) {
  Matrix gram = Matrix::Zero(b.rows(), b.rows());
  for (int k : cols) gram.selfadjointView<Eigen::Lower>().rankUpdate(b.col(k), 1.0);
  return gram.selfadjointView<Eigen::Lower>();
}

FactGdStep factgd_iteration(const Matrix& u_raw, const Matrix& b_raw, const SparseObservation& y,
                            double eta, double lambda, double radius_u, double radius_b) {
  const std::vector<int> cols = all_columns(y.mask.q);
  const Matrix s = u_raw.transpose() * u_raw - column_gram(b_raw, cols);

  Matrix grad_u = Matrix::Zero(u_raw.rows(), u_raw.cols());
  accumulate_residual_gradient(y, cols, u_raw, b_raw, grad_u);
  grad_u += lambda * u_raw * s;

  Matrix grad_b_data = Matrix::Zero(b_raw.rows(), b_raw.cols());
  accumulate_residual_gradient_b(y, cols, u_raw, b_raw, grad_b_data);

  FactGdStep step;
  step.u = project_row_incoherent(u_raw - eta * grad_u, radius_u);
  // Column-wise update and clip; the federated nodes run the same per-column
  // statements on their blocks.
  step.b = b_raw;
  for (int k : cols) {
    Vector col = b_raw.col(k) - eta * (grad_b_data.col(k) - lambda * (s * b_raw.col(k)));
    const double norm = col.norm();
    if (norm > radius_b) col *= radius_b / norm;
    step.b.col(k) = col;
  }
  return step;
}

FactorPair projgd_iteration(const FactorPair& x, const SparseObservation& y, double eta,
                            int svd_iters) {
  const int n = y.mask.n;
  const int q = y.mask.q;
  const Matrix& u = x.u.matrix();
  const Matrix& b = x.b;

  // Sparse residual S with s_jk = (U B - Y)_jk on Omega; the stepped matrix
  // M = U B - eta S stays in rank-r-plus-sparse form.
  SparseObservation resid;
  resid.mask = y.mask;
  resid.values.resize(y.values.size());
  for (int k = 0; k < q; ++k) {
    const auto bk = b.col(k);
    for (int idx = y.mask.col_ptr[k]; idx < y.mask.col_ptr[k + 1]; ++idx)
      resid.values[idx] = u.row(y.mask.row_idx[idx]).dot(bk) - y.values[idx];
  }
  const LinearOperator s_op = observation_operator(resid);

  LinearOperator m_op;
  m_op.rows = n;
  m_op.cols = q;
  m_op.apply = [&](const Matrix& v) { return Matrix(u * (b * v) - eta * s_op.apply(v)); };
  m_op.apply_trans = [&](const Matrix& w) {
    return Matrix(b.transpose() * (u.transpose() * w) - eta * s_op.apply_trans(w));
  };

  // Warm start from the current basis; the projection subspace moves little
  // between steps.
  PowerIterationResult top = power_top_r_from(m_op, u, svd_iters);
  const Matrix& u_next = top.basis.matrix();
  Matrix b_next =
      (u_next.transpose() * u) * b - eta * s_op.apply_trans(u_next).transpose();
  return FactorPair{std::move(top.basis), std::move(b_next)};
}

namespace {

struct SubsetSchedule {
  const SampleSplit* split;
  int iterations;
  const SparseObservation& b_subset(int t) const {
    return split->subset(split->mode() == SplitMode::split ? t : 0);
  }
  const SparseObservation& u_subset(int t) const {
    return split->subset(split->mode() == SplitMode::split ? iterations + t : 0);
  }
};

TraceRow make_row(const OrthonormalBasis& u, const Matrix& b, const GroundTruth* gt, int iter,
                  int undercols) {
  TraceRow row = gt ? diagnostics_step(u, b, *gt) : diagnostics_step_blind(u, b);
  row.iter = iter;
  row.underdetermined_columns = undercols;
  return row;
}

bool should_stop(const AltGDminConfig& cfg, const GroundTruth* gt, const TraceRow& row) {
  return gt && cfg.stop_se_f && row.se_f <= *cfg.stop_se_f;
}

RunResult run_altmin(const SparseObservation& y, const SampleSplit& split, const GroundTruth* gt,
                     const BaselineConfig& cfg, std::uint64_t seed, bool record_iterates,
                     bool private_u_step) {
  const AltGDminConfig& base = cfg.base;
  const int T = base.iterations;
  if (split.subset(0).mask.n != y.mask.n || split.subset(0).mask.q != y.mask.q)
    throw DimensionMismatch("run_algorithm: split does not match the observation");
  SubsetSchedule sched{&split, T};

  RunResult res;
  double t0 = now_seconds();
  const InitResult initial = init(split.subset(0), base, seed);
  OrthonormalBasis u = initial.u;
  const double p_init = split.subset(0).mask.density();
  res.sigma_max_est = base.sigma_max_hint.value_or(p_init > 0 ? initial.sigma_top_y / p_init : 0.0);
  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(base.r));

  // Inner GD step size for the private LS solves (empirical rule).
  const double p_step = sched.u_subset(1).mask.density();
  res.eta = private_u_step
                ? p_step / (initial.sigma_top_y * initial.sigma_top_y)
                : 0.0;

  RowMajorView rows_reuse;
  if (split.mode() == SplitMode::reuse && !private_u_step) rows_reuse = row_major_view(split.subset(0));

  if (record_iterates) res.iterates.push_back(u.matrix());
  Matrix prev_u;
  for (int i = 0; i <= T; ++i) {
    const SparseObservation& yb = sched.b_subset(std::min(i + 1, T));
    BUpdateResult bu = update_B(u.matrix(), yb, base.underdetermined_policy);
    if (!bu.b.allFinite() || bu.b.norm() > diverge_cap) {
      res.status = RunStatus::diverged;
      res.factors = FactorPair{std::move(u), std::move(bu.b)};
      return res;
    }

    TraceRow row = make_row(u, bu.b, gt, i, bu.underdetermined);
    row.grad_frob = gradient_U(u.matrix(), bu.b, yb).norm();
    row.wall_seconds = now_seconds() - t0;
    t0 = now_seconds();
    res.trace.rows.push_back(row);

    if (i == T || should_stop(base, gt, row)) {
      if (i < T) res.status = RunStatus::stopped_early;
      res.factors = FactorPair{std::move(u), std::move(bu.b)};
      return res;
    }

    const SparseObservation& yu = sched.u_subset(i + 1);
    prev_u = u.matrix();
    if (private_u_step) {
      u = altmin_private_u_step(u, bu.b, yu, cfg.inner_iters, res.eta);
    } else {
      const RowMajorView rows =
          (split.mode() == SplitMode::reuse) ? rows_reuse : row_major_view(yu);
      const Matrix bt = bu.b.transpose();
      Matrix u_tilde = Matrix::Zero(u.rows(), u.cols());
      for (int j = 0; j < u.rows(); ++j) {
        auto uj = try_masked_column_ls(bt, rows.row_columns(j), rows.row_values(j));
        if (uj) {
          u_tilde.row(j) = uj->transpose();
        } else if (base.underdetermined_policy == UnderdeterminedPolicy::fail) {
          throw UnderdeterminedRow("altmin: underdetermined row " + std::to_string(j));
        } else if (base.underdetermined_policy == UnderdeterminedPolicy::skip_column) {
          u_tilde.row(j) = prev_u.row(j);
        }
      }
      u = thin_qr(u_tilde).q;
    }
    if (record_iterates) res.iterates.push_back(u.matrix());
  }
  return res;  // unreachable
}

RunResult run_factgd(const SparseObservation& y, const SampleSplit& split, const GroundTruth* gt,
                     const BaselineConfig& cfg, std::uint64_t seed, bool record_iterates) {
  const AltGDminConfig& base = cfg.base;
  const int T = base.iterations;
  SubsetSchedule sched{&split, T};

  RunResult res;
  double t0 = now_seconds();
  const InitResult initial = init(split.subset(0), base, seed);
  const double p_init = split.subset(0).mask.density();
  res.sigma_max_est = base.sigma_max_hint.value_or(p_init > 0 ? initial.sigma_top_y / p_init : 0.0);
  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(base.r));

  // Balanced factor split of the init estimate: ||U0|| ~ ||B0|| spectrally.
  BUpdateResult b_fit = update_B(initial.u.matrix(), sched.b_subset(1), base.underdetermined_policy);
  const double scale = std::sqrt(std::max(singular_extremes(b_fit.b).max, 1e-300));
  Matrix u_raw = initial.u.matrix() * scale;
  Matrix b_raw = b_fit.b / scale;

  const double radius_u = cfg.clip_slack * u_raw.rowwise().norm().maxCoeff();
  const double radius_b = cfg.clip_slack * b_raw.colwise().norm().maxCoeff();
  const double p_step = sched.u_subset(1).mask.density();
  res.eta = cfg.c_step * p_step / std::max(initial.sigma_top_y, 1e-300);

  for (int i = 0; i <= T; ++i) {
    if (!u_raw.allFinite() || !b_raw.allFinite()) {
      res.status = RunStatus::diverged;
      break;
    }
    // Orthonormalized equivalent pair for the shared trace schema:
    // X = U_raw B_raw = Q (R B_raw).
    QRFactorization qr;
    try {
      qr = thin_qr(u_raw);
    } catch (const RankDeficient&) {
      res.status = RunStatus::diverged;
      break;
    }
    Matrix b_equiv = qr.r_factor * b_raw;
    if (b_equiv.norm() > diverge_cap) {
      res.status = RunStatus::diverged;
      break;
    }
    if (record_iterates) res.iterates.push_back(u_raw);

    TraceRow row = make_row(qr.q, b_equiv, gt, i, 0);
    {
      const std::vector<int> cols = all_columns(y.mask.q);
      const SparseObservation& ys = sched.u_subset(std::min(i + 1, T));
      Matrix g = Matrix::Zero(u_raw.rows(), u_raw.cols());
      accumulate_residual_gradient(ys, cols, u_raw, b_raw, g);
      g += cfg.lambda_balance * u_raw *
           (u_raw.transpose() * u_raw - column_gram(b_raw, cols));
      row.grad_frob = g.norm();
    }
    row.wall_seconds = now_seconds() - t0;
    t0 = now_seconds();
    res.trace.rows.push_back(row);

    if (i == T || should_stop(base, gt, row)) {
      if (i < T) res.status = RunStatus::stopped_early;
      res.factors = FactorPair{qr.q, std::move(b_equiv)};
      return res;
    }

    // Same residual-product step convention as the other solvers: the
    // applied step halves the squared-loss gradient.
    FactGdStep step = factgd_iteration(u_raw, b_raw, sched.u_subset(i + 1), 0.5 * res.eta,
                                       cfg.lambda_balance, radius_u, radius_b);
    u_raw = std::move(step.u);
    b_raw = std::move(step.b);
  }

  // Reached only on divergence; the factors carry the (unusable) init basis.
  res.factors = FactorPair{initial.u, Matrix::Zero(base.r, y.mask.q)};
  return res;
}

RunResult run_projgd(const SparseObservation& y, const SampleSplit& split, const GroundTruth* gt,
                     const BaselineConfig& cfg, std::uint64_t seed, bool record_iterates) {
  const AltGDminConfig& base = cfg.base;
  const int T = base.iterations;
  if (split.subset(0).mask.n != y.mask.n || split.subset(0).mask.q != y.mask.q)
    throw DimensionMismatch("run_algorithm: split does not match the observation");
  SubsetSchedule sched{&split, T};

  RunResult res;
  double t0 = now_seconds();
  const InitResult initial = init(split.subset(0), base, seed);
  const double p_init = split.subset(0).mask.density();
  res.sigma_max_est = base.sigma_max_hint.value_or(p_init > 0 ? initial.sigma_top_y / p_init : 0.0);
  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(base.r));

  BUpdateResult b_fit = update_B(initial.u.matrix(), sched.b_subset(1), base.underdetermined_policy);
  FactorPair x{initial.u, std::move(b_fit.b)};
  const double p_step = sched.u_subset(1).mask.density();
  res.eta = cfg.projgd_eta.value_or(1.0 / std::max(p_step, 1e-300));

  for (int i = 0; i <= T; ++i) {
    if (!x.b.allFinite() || x.b.norm() > diverge_cap) {
      res.status = RunStatus::diverged;
      break;
    }
    if (record_iterates) res.iterates.push_back(x.u.matrix());

    TraceRow row = make_row(x.u, x.b, gt, i, 0);
    const SparseObservation& ys = sched.u_subset(std::min(i + 1, T));
    const std::vector<int> cols = all_columns(ys.mask.q);
    row.grad_frob = std::sqrt(masked_residual_sq(ys, cols, x.u.matrix(), x.b));
    row.wall_seconds = now_seconds() - t0;
    t0 = now_seconds();
    res.trace.rows.push_back(row);

    if (i == T || should_stop(base, gt, row)) {
      if (i < T) res.status = RunStatus::stopped_early;
      break;
    }
    try {
      x = projgd_iteration(x, sched.u_subset(i + 1), res.eta, cfg.projgd_svd_iters);
    } catch (const RankDeficient&) {
      res.status = RunStatus::diverged;
      break;
    }
  }
  res.factors = std::move(x);
  return res;
}

}  // namespace

RunResult run_algorithm(const SparseObservation& y, const SampleSplit& split,
                        const GroundTruth* gt_for_diag, const BaselineConfig& cfg,
                        std::uint64_t seed, bool record_iterates) {
  switch (cfg.algorithm) {
    case Algorithm::altgdmin:
      return run(y, split, gt_for_diag, cfg.base, seed, record_iterates);
    case Algorithm::altmin:
      return run_altmin(y, split, gt_for_diag, cfg, seed, record_iterates, false);
    case Algorithm::altmin_private:
      return run_altmin(y, split, gt_for_diag, cfg, seed, record_iterates, true);
    case Algorithm::factgd:
      return run_factgd(y, split, gt_for_diag, cfg, seed, record_iterates);
    case Algorithm::projgd:
      return run_projgd(y, split, gt_for_diag, cfg, seed, record_iterates);
  }
  throw std::invalid_argument("run_algorithm: unknown algorithm");
}

}  // namespace fedlrmc
