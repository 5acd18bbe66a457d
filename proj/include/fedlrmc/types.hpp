#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedlrmc {

using Matrix = Eigen::MatrixXd;  // column-major, real
using Vector = Eigen::VectorXd;

/// Dimension/precondition violations on public entry points.
struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidDimensions : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A factorization input lost (numerical) column rank.
struct RankDeficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A masked least-squares column has fewer usable equations than unknowns.
struct UnderdeterminedColumn : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnderdeterminedRow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised by solvers running under the `fail` underdetermined policy.
struct UnderdeterminedAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Iterate norm blew past the divergence guard.
struct Diverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Algorithm has no federated protocol in this simulator.
struct UnsupportedFederation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

}  // namespace fedlrmc
