#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedlrmc/linalg.hpp"
#include "fedlrmc/problem.hpp"

namespace fedlrmc {

/// Step-size rule. theory: eta = c / (p * sigma_max_est^2); the convergence
/// guarantee covers c <= 0.5 (larger values are accepted and left to the
/// divergence guard). empirical: eta = c * p / ||Y||^2.
enum class EtaRule { theory, empirical };

/// What to do with columns whose mask cannot determine b_k (|Omega_k| < r or
/// rank-deficient restricted basis).
enum class UnderdeterminedPolicy { zero_column, skip_column, fail };

struct AltGDminConfig {
  int r = 1;
  EtaRule eta_rule = EtaRule::theory;
  double eta_c = 0.5;  // c_eta (theory) or c (empirical)
  int iterations = 100;
  int power_iters = 15;
  // Row-clip level mu~ for the initialization projection. nullopt: use the
  // smallest mu satisfying the row bound on U^(00), which makes clipping a
  // no-op by construction (the estimation rule used in practice). A value
  // clips at value * sqrt(r/n); +inf disables clipping. Strict mode passes the
  // true mu of U*.
  std::optional<double> mu_threshold;
  SplitMode split_mode = SplitMode::reuse;
  UnderdeterminedPolicy underdetermined_policy = UnderdeterminedPolicy::zero_column;
  // True sigma*_max for the theory rule when ground truth is in hand;
  // otherwise the power-method estimate ||Y0|| / p is used.
  std::optional<double> sigma_max_hint;
  // Stop once se_f <= this value (needs ground-truth diagnostics). The trace
  // is then shorter than iterations+1 rows.
  std::optional<double> stop_se_f;
};

/// The iterate: U orthonormal n x r, B r x q, estimate X = U B.
struct FactorPair {
  OrthonormalBasis u;
  Matrix b;
};

/// One per-iteration diagnostics row. Ground-truth-dependent fields (se_f,
/// se_2, rel_frob_err, b_minus_g) are NaN when no ground truth was supplied.
struct TraceRow {
  int iter = 0;
  double se_f = 0, se_2 = 0;
  double rel_frob_err = 0;   // ||X - X*||_F / ||X*||_F
  double b_minus_g = 0;      // ||B - U^T X*||_F
  double sigma_min_b = 0, sigma_max_b = 0;
  double max_row_u = 0;      // max_j ||u^j||
  double max_col_b = 0;      // max_k ||b_k||
  double grad_frob = 0;
  double wall_seconds = 0;
  int underdetermined_columns = 0;
};

struct IterationTrace {
  std::vector<TraceRow> rows;

  static const char* csv_header();  // fixed, documented schema
  void write_csv(const std::string& path) const;
  std::string to_csv() const;
};

enum class RunStatus { ok, stopped_early, diverged };

struct RunResult {
  FactorPair factors;
  IterationTrace trace;
  RunStatus status = RunStatus::ok;
  double eta = 0;             // step size actually used
  double sigma_max_est = 0;   // sigma*_max estimate backing the step size
  // Set when the caller asks for per-iteration iterates (federated
  // equivalence checks); iterates[i] is U after i gradient steps.
  std::vector<Matrix> iterates;
};

/// Row j of the output is m^j * min(1, threshold / ||m^j||): rows above the
/// norm threshold are renormalized onto it, all others (including zero rows)
/// pass through unchanged. Projection onto the convex set of row-incoherent
/// matrices, hence non-expansive in Frobenius norm.
Matrix project_row_incoherent(const Matrix& m, double threshold);

struct InitResult {
  OrthonormalBasis u;          // U^(0): clipped and re-orthonormalized spectral init
  double sigma_top_y = 0;      // power-method estimate of ||Y0||
  double mu_estimate = 0;      // smallest mu with ||u^(00)j|| <= mu sqrt(r/n)
  double clip_threshold = 0;   // row-norm level actually applied
  int clipped_rows = 0;
};

/// Spectral initialization: top-r left singular subspace of Y0 by the power
/// method, row-clipped at the incoherence threshold, then re-orthonormalized.
InitResult init(const SparseObservation& y0, const AltGDminConfig& cfg, std::uint64_t seed);

/// Clip + re-orthonormalize step of init, split out so a distributed driver
/// can feed its own power-method output through the identical code path.
InitResult finish_init(PowerIterationResult power, const AltGDminConfig& cfg);

/// Per-column masked least squares B update. Columns that are underdetermined
/// follow the policy: zero_column writes zeros, skip_column keeps the matching
/// column of *previous (zeros when absent), fail throws UnderdeterminedAbort.
struct BUpdateResult {
  Matrix b;
  int underdetermined = 0;
};
BUpdateResult update_B(const Matrix& u, const SparseObservation& y, UnderdeterminedPolicy policy,
                       const Matrix* previous = nullptr);

/// grad_U ||(Y - U B)_Omega||_F^2 = 2 ((U B)_Omega - Y) B^T, accumulated
/// sparsely in ascending column order at cost O(|Omega| r).
Matrix gradient_U(const Matrix& u, const Matrix& b, const SparseObservation& y);

/// One descent step with QR retraction: thin_qr(u - eta * grad). The R factor
/// feeds diagnostics. Throws RankDeficient when the step collapses rank.
QRFactorization gd_step_qr(const OrthonormalBasis& u, const Matrix& grad, double eta);

/// Diagnostics for the pair (U, B): subspace distances and errors against the
/// ground truth plus incoherence statistics. Never densifies X or X*:
/// G = (U^T U*) diag(Sigma*) V*^T and
/// ||X - X*||_F^2 = ||B||_F^2 + ||Sigma*||^2 - 2 <B, G>.
TraceRow diagnostics_step(const OrthonormalBasis& u, const Matrix& b, const GroundTruth& gt);

/// Incoherence-only diagnostics when no ground truth is available.
TraceRow diagnostics_step_blind(const OrthonormalBasis& u, const Matrix& b);

/// Full AltGDmin: spectral init + iterations of (LS B update, gradient U step,
/// QR). Subset usage per sample-splitting: subset 0 for init, subset t for the
/// B update of iteration t, subset T+t for its gradient. The returned pair is
/// refreshed so b solves the LS problem against the final u. Trace row i
/// describes U after i gradient steps together with its LS coefficients.
RunResult run(const SparseObservation& y, const SampleSplit& split, const GroundTruth* gt_for_diag,
              const AltGDminConfig& cfg, std::uint64_t seed, bool record_iterates = false);

}  // namespace fedlrmc
