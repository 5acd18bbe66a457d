#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlrmc/baselines.hpp"

namespace fedlrmc {

/// Star-topology federation: gamma nodes, node l holding the disjoint column
/// set partition[l]; the sets cover [0, q).
struct Topology {
  int gamma = 1;
  std::vector<std::vector<int>> partition;  // sorted column ids per node

  /// Contiguous blocks of size q/gamma (remainder spread over the first nodes).
  static Topology uniform(int q, int gamma);
  void validate(int q) const;
};

enum class Direction { up, down };

enum class PayloadKind { partial_gradient, power_partial, broadcast_u, raw_column, b_column };

const char* direction_name(Direction d);
const char* payload_kind_name(PayloadKind k);

/// One node<->center transfer; scalar_count is the exact number of reals in
/// the payload (bytes = 8x).
struct Message {
  int round = 0;
  Direction direction = Direction::up;
  int node_id = 0;
  PayloadKind kind = PayloadKind::partial_gradient;
  std::int64_t scalar_count = 0;
};

/// Append-only record of every transfer, with per-direction totals and a
/// privacy monitor: up-messages of kind raw_column or b_column count as
/// violations (the private protocols must never construct them).
class MessageLedger {
 public:
  void log(int round, Direction dir, int node, PayloadKind kind, std::int64_t scalars);

  const std::vector<Message>& messages() const { return messages_; }
  std::int64_t total_up() const { return total_up_; }
  std::int64_t total_down() const { return total_down_; }
  int privacy_violations() const { return privacy_violations_; }

  std::int64_t scalars(Direction dir, PayloadKind kind) const;
  std::int64_t scalars_in_rounds(Direction dir, int round_begin, int round_end) const;
  /// Distinct up-message batches a node sends in [round_begin, round_end),
  /// divided by the number of rounds: the "exchanges per round" count.
  double up_messages_per_round_per_node(int round_begin, int round_end, int gamma) const;

  void write_csv(const std::string& path) const;  // round,direction,node,kind,scalars
  std::string to_csv() const;
  std::string summary_json(const std::string& algorithm) const;

 private:
  std::vector<Message> messages_;
  std::int64_t total_up_ = 0;
  std::int64_t total_down_ = 0;
  int privacy_violations_ = 0;
};

struct FederatedPowerResult {
  OrthonormalBasis basis;
  double top_singular_estimate = 0;
  MessageLedger ledger;
};

/// Federated power method on Y Y^T: each round every node pushes its n x r
/// partial sum_{k in S_l} y_k (y_k^T U) (logged at min(n, sum |Omega_k|) * r
/// scalars), the center sums in node-id order, re-orthonormalizes by QR and
/// broadcasts (n r scalars per node). The nodes derive the seeded start block
/// from the shared seed, so no start broadcast is needed. Output bit-identical
/// to centralized power_top_r for gamma = 1.
FederatedPowerResult federated_power_init(const SparseObservation& y, const Topology& topo, int r,
                                          int iters, std::uint64_t seed);

struct FederatedRunResult {
  FactorPair factors;
  IterationTrace trace;
  MessageLedger ledger;
  RunStatus status = RunStatus::ok;
  double eta = 0;
  double sigma_max_est = 0;
  int algorithm_round_begin = 0;  // first ledger round of the iteration phase
  int algorithm_rounds = 0;       // outer rounds executed
  std::vector<Matrix> iterates;   // per-round U at the center (when recorded)
};

/// Runs the federated protocol for altgdmin, altmin_private, or factgd: the
/// simulator advances plain node-state records in lockstep, the center reduces
/// in fixed node order, and every transfer is logged. Raw columns and B
/// columns never leave the nodes. Trace diagnostics are computed by the
/// simulator (omniscient), not transmitted. Throws UnsupportedFederation for
/// centralized-only algorithms (altmin, projgd).
FederatedRunResult federated_run(const BaselineConfig& cfg, const SparseObservation& y,
                                 const SampleSplit& split, const Topology& topo,
                                 const GroundTruth* gt_for_diag, std::uint64_t seed,
                                 bool record_iterates = false);

}  // namespace fedlrmc
