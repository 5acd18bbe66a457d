#pragma once

#include "fedlrmc/altgdmin.hpp"

namespace fedlrmc {

enum class Algorithm { altgdmin, altmin, altmin_private, factgd, projgd };

const char* algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

/// Shared solver configuration. `base` carries the init and iteration settings
/// common to every algorithm; the remaining fields are per-algorithm knobs.
struct BaselineConfig {
  Algorithm algorithm = Algorithm::altmin;
  AltGDminConfig base;
  int inner_iters = 10;               // altmin_private: GD steps per LS solve
  double c_step = 0.75;               // factgd: eta = c_step * p / ||Y||
  double lambda_balance = 0.5;        // factgd norm-balance weight
  double clip_slack = 1.5;            // factgd projection radius multiplier
  std::optional<double> projgd_eta;   // default 1/p
  int projgd_svd_iters = 30;          // power iterations per rank-r projection
};

/// One AltMin sweep: B by per-column masked LS against u, then each row of
/// U by masked LS against the rows of B^T, orthonormalized by thin QR.
struct AltMinStep {
  Matrix b;
  OrthonormalBasis u_next;
  int underdetermined_columns = 0;
  int underdetermined_rows = 0;
};
AltMinStep altmin_iteration(const OrthonormalBasis& u, const SparseObservation& y,
                            const RowMajorView& rows, UnderdeterminedPolicy policy,
                            const Matrix* previous_u = nullptr);

/// Private-variant U update: inner_iters gradient steps on
/// ||(Y - U~ B)_Omega||_F^2 from u_prev, then thin QR.
OrthonormalBasis altmin_private_u_step(const OrthonormalBasis& u_prev, const Matrix& b,
                                       const SparseObservation& y, int inner_iters,
                                       double eta_inner);

/// Norm-balance penalty gradients for ||U^T U - B B^T||_F^2: (4 U S, -4 S B)
/// with S = U^T U - B B^T. Exposed for finite-difference checks.
Matrix balance_gradient_u(const Matrix& u, const Matrix& b);
Matrix balance_gradient_b(const Matrix& u, const Matrix& b);

/// sum_{k in cols} b_k b_k^T accumulated in ascending column order, so the
/// federated per-node partials reproduce the centralized value bit for bit
/// when gamma = 1.
Matrix column_gram(const Matrix& b, std::span<const int> cols);

/// One simultaneous FactGD step on raw factors: data gradients plus the
/// lambda-weighted balance terms, then row/column clipping at the given radii.
struct FactGdStep {
  Matrix u;
  Matrix b;
};
FactGdStep factgd_iteration(const Matrix& u_raw, const Matrix& b_raw, const SparseObservation& y,
                            double eta, double lambda, double radius_u, double radius_b);

/// One ProjGD step in factored form: X+ = Proj_r(X - eta (X - Y)_Omega) with
/// the rank-r projection done by the power method against the implicit
/// operator U B - eta S (S = sparse residual). Never densifies X.
FactorPair projgd_iteration(const FactorPair& x, const SparseObservation& y, double eta,
                            int svd_iters);

/// Unified solver entry: dispatches to AltGDmin or one of the baselines, all
/// sharing the spectral initialization and the IterationTrace schema. Row i of
/// the trace describes the iterate after i outer updates, paired with the
/// coefficient matrix the algorithm holds at that point.
RunResult run_algorithm(const SparseObservation& y, const SampleSplit& split,
                        const GroundTruth* gt_for_diag, const BaselineConfig& cfg,
                        std::uint64_t seed, bool record_iterates = false);

}  // namespace fedlrmc
