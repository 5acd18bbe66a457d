#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedlrmc/linalg.hpp"
#include "fedlrmc/prng.hpp"
#include "fedlrmc/types.hpp"

namespace fedlrmc {

/// Planted rank-r factorization X* = U* diag(Sigma*) V*^T together with its
/// tight incoherence and conditioning constants.
struct GroundTruth {
  OrthonormalBasis u_star;  // n x r
  Vector sigma_star;        // r positive, nonincreasing
  OrthonormalBasis v_star;  // q x r
  int n = 0, q = 0, r = 0;
  double mu = 1.0;     // tight: smallest mu satisfying the row/column norm bounds
  double kappa = 1.0;  // sigma_star(0) / sigma_star(r-1)

  /// B* = diag(Sigma*) V*^T, r x q.
  Matrix b_star() const;
  /// Dense X*; test/debug use only.
  Matrix dense() const;
  double sigma_max() const { return sigma_star(0); }
  double sigma_min() const { return sigma_star(sigma_star.size() - 1); }
};

/// Per-column sorted row-index sets of observed entries (CSC layout without
/// values).
struct ObservationMask {
  int n = 0, q = 0;
  double p = 1.0;                // sampling probability used to draw the mask
  std::vector<int> col_ptr;      // size q+1
  std::vector<int> row_idx;      // size |Omega|, strictly increasing per column

  std::int64_t total_observed() const { return static_cast<std::int64_t>(row_idx.size()); }
  double density() const {
    return n && q ? static_cast<double>(total_observed()) / (static_cast<double>(n) * q) : 0.0;
  }
  std::span<const int> column(int k) const {
    return {row_idx.data() + col_ptr[k], static_cast<std::size_t>(col_ptr[k + 1] - col_ptr[k])};
  }
  bool operator==(const ObservationMask&) const = default;
};

/// Observed values aligned with a mask, Y = X*_Omega (+ bounded multiplicative
/// noise when noise_level > 0).
struct SparseObservation {
  ObservationMask mask;
  std::vector<double> values;  // |Omega|, column-major order matching mask
  double noise_level = 0.0;    // eps_noise; 0 for noise-free

  std::span<const double> column_values(int k) const {
    return {values.data() + mask.col_ptr[k],
            static_cast<std::size_t>(mask.col_ptr[k + 1] - mask.col_ptr[k])};
  }
  bool operator==(const SparseObservation&) const = default;
};

enum class SplitMode { split, reuse };

/// 2T+1 observation subsets for sample splitting. In split mode the subsets
/// partition the parent mask; in reuse mode every subset is the parent mask.
class SampleSplit {
 public:
  static SampleSplit make_reuse(const SparseObservation& parent, int parts);
  static SampleSplit make_split(const SparseObservation& parent, int parts, std::uint64_t seed);

  SplitMode mode() const { return mode_; }
  int parts() const { return parts_; }
  const SparseObservation& subset(int i) const;

 private:
  SplitMode mode_ = SplitMode::reuse;
  int parts_ = 1;
  SparseObservation parent_;                // reuse mode
  std::vector<SparseObservation> subsets_;  // split mode
};

enum class SpectrumKind { gaussian, linear };

struct SpectrumSpec {
  SpectrumKind kind = SpectrumKind::gaussian;
  double kappa_target = 1.0;  // linear mode only
};

enum class NoiseShape { signed_uniform, rademacher };

/// Gaussian mode: U* = QR(Gaussian).Q, B* = Gaussian, (Sigma*, V*) from the SVD
/// of B*. Linear mode: singular values linearly spaced in [1/kappa_target, 1]
/// with orthonormalized Gaussian factors. mu and kappa are computed tight from
/// the realized factors. Deterministic given seed.
GroundTruth gen_ground_truth(int n, int q, int r, SpectrumSpec spectrum, std::uint64_t seed);

/// Each (j,k) observed independently with probability p.
ObservationMask sample_mask(int n, int q, double p, std::uint64_t seed);

/// split mode: each observed index assigned uniformly to one of `parts`
/// subsets; reuse mode: every subset equals the parent.
SampleSplit split_mask(const SparseObservation& y, int parts, SplitMode mode, std::uint64_t seed);

/// value(j,k) = x*_jk * (1 + eps_noise * s_jk), s_jk in [-1,1] (signed_uniform)
/// or {-1,+1} (rademacher), so |w_jk| <= eps_noise |x*_jk| by construction.
SparseObservation observe(const GroundTruth& gt, const ObservationMask& mask, double eps_noise,
                          NoiseShape shape, std::uint64_t seed);

// --- masked operator kernels -------------------------------------------------
//
// Shared by the centralized solvers and the federated simulator; the federated
// paths call them per column block, so a single-node federation reproduces the
// centralized arithmetic bit for bit.

/// out += sum_{k in cols} y_k (y_k^T m), accumulated in ascending column
/// order. m is n x b, out is n x b.
void accumulate_yyt_times(const SparseObservation& y, std::span<const int> cols, const Matrix& m,
                          Matrix& out);

/// out += sum_{k in cols} 2 * ((u b_k - y_k) restricted to Omega_k) b_k^T,
/// the gradient of ||(Y - U B)_Omega||_F^2 in U over the given columns.
void accumulate_residual_gradient(const SparseObservation& y, std::span<const int> cols,
                                  const Matrix& u, const Matrix& b, Matrix& out);

/// out.col(k) += sum_{j in Omega_k} 2 * (u^j b_k - y_jk) u^j for k in cols:
/// the gradient of ||(Y - U B)_Omega||_F^2 in B.
void accumulate_residual_gradient_b(const SparseObservation& y, std::span<const int> cols,
                                    const Matrix& u, const Matrix& b, Matrix& out);

/// f(U,B) = ||(Y - U B)_Omega||_F^2 over the given columns.
double masked_residual_sq(const SparseObservation& y, std::span<const int> cols, const Matrix& u,
                          const Matrix& b);

/// Row-major companion of the CSC mask: per-row sorted column indices and
/// values. Needed by row-wise least squares (AltMin's U step).
struct RowMajorView {
  std::vector<int> row_ptr;    // n+1
  std::vector<int> col_idx;    // |Omega|, ascending per row
  std::vector<double> value;   // aligned with col_idx

  std::span<const int> row_columns(int j) const {
    return {col_idx.data() + row_ptr[j], static_cast<std::size_t>(row_ptr[j + 1] - row_ptr[j])};
  }
  std::span<const double> row_values(int j) const {
    return {value.data() + row_ptr[j], static_cast<std::size_t>(row_ptr[j + 1] - row_ptr[j])};
  }
};
RowMajorView row_major_view(const SparseObservation& y);

/// LinearOperator view of Y (zero-filled off the mask), with a fused
/// apply_gram that fixes the column accumulation order.
LinearOperator observation_operator(const SparseObservation& y);

/// All q column indices, ascending. Convenience for the kernels above.
std::vector<int> all_columns(int q);

// --- serialization -----------------------------------------------------------
//
// Binary container: magic "FLRM", u16 version, u16 payload tag, then
// little-endian dims and payload. Debug text form is human-readable.

void save_ground_truth(const GroundTruth& gt, const std::string& path);
GroundTruth load_ground_truth(const std::string& path);
void save_observation(const SparseObservation& y, const std::string& path);
SparseObservation load_observation(const std::string& path);

std::string debug_text(const GroundTruth& gt);
std::string debug_text(const SparseObservation& y);

}  // namespace fedlrmc
