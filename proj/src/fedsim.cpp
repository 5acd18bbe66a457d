#include "fedlrmc/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fedlrmc {

Topology Topology::uniform(int q, int gamma) {
  if (gamma < 1 || gamma > q) throw InvalidDimensions("Topology: gamma out of range");
  Topology topo;
  topo.gamma = gamma;
  topo.partition.resize(gamma);
  const int block = q / gamma;
  const int extra = q % gamma;
  int next = 0;
  for (int l = 0; l < gamma; ++l) {
    const int size = block + (l < extra ? 1 : 0);
    topo.partition[l].reserve(size);
    for (int i = 0; i < size; ++i) topo.partition[l].push_back(next++);
  }
  return topo;
}

void Topology::validate(int q) const {
  if (gamma != static_cast<int>(partition.size()))
    throw InvalidDimensions("Topology: gamma does not match partition size");
  std::vector<char> seen(q, 0);
  for (const auto& cols : partition)
    for (int k : cols) {
      if (k < 0 || k >= q || seen[k]) throw InvalidDimensions("Topology: partition is not a partition of [0,q)");
      seen[k] = 1;
    }
  for (int k = 0; k < q; ++k)
    if (!seen[k]) throw InvalidDimensions("Topology: partition does not cover [0,q)");
}

const char* direction_name(Direction d) { return d == Direction::up ? "up" : "down"; }

const char* payload_kind_name(PayloadKind k) {
  switch (k) {
    case PayloadKind::partial_gradient: return "partial_gradient";
    case PayloadKind::power_partial: return "power_partial";
    case PayloadKind::broadcast_u: return "broadcast_u";
    case PayloadKind::raw_column: return "raw_column";
    case PayloadKind::b_column: return "b_column";
  }
  return "unknown";
}

void MessageLedger::log(int round, Direction dir, int node, PayloadKind kind,
                        std::int64_t scalars) {
  messages_.push_back({round, dir, node, kind, scalars});
  if (dir == Direction::up) {
    total_up_ += scalars;
    if (kind == PayloadKind::raw_column || kind == PayloadKind::b_column) ++privacy_violations_;
  } else {
    total_down_ += scalars;
  }
}

std::int64_t MessageLedger::scalars(Direction dir, PayloadKind kind) const {
  std::int64_t total = 0;
  for (const Message& m : messages_)
    if (m.direction == dir && m.kind == kind) total += m.scalar_count;
  return total;
}

std::int64_t MessageLedger::scalars_in_rounds(Direction dir, int round_begin,
                                              int round_end) const {
  std::int64_t total = 0;
  for (const Message& m : messages_)
    if (m.direction == dir && m.round >= round_begin && m.round < round_end)
      total += m.scalar_count;
  return total;
}

double MessageLedger::up_messages_per_round_per_node(int round_begin, int round_end,
                                                     int gamma) const {
  std::int64_t count = 0;
  for (const Message& m : messages_)
    if (m.direction == Direction::up && m.round >= round_begin && m.round < round_end) ++count;
  const int rounds = round_end - round_begin;
  if (rounds <= 0 || gamma <= 0) return 0.0;
  return static_cast<double>(count) / (static_cast<double>(rounds) * gamma);
}

std::string MessageLedger::to_csv() const {
  std::ostringstream os;
  os << "round,direction,node,kind,scalars\n";
  for (const Message& m : messages_)
    os << m.round << ',' << direction_name(m.direction) << ',' << m.node_id << ','
       << payload_kind_name(m.kind) << ',' << m.scalar_count << '\n';
  return os.str();
}

void MessageLedger::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << to_csv();
}

std::string MessageLedger::summary_json(const std::string& algorithm) const {
  std::ostringstream os;
  os << "{\"algorithm\":\"" << algorithm << "\",\"messages\":" << messages_.size()
     << ",\"total_up_scalars\":" << total_up_ << ",\"total_down_scalars\":" << total_down_
     << ",\"privacy_violations\":" << privacy_violations_ << "}";
  return os.str();
}

namespace {

std::vector<std::int64_t> node_observation_counts(const SparseObservation& y,
                                                  const Topology& topo) {
  std::vector<std::int64_t> nnz(topo.gamma, 0);
  for (int l = 0; l < topo.gamma; ++l)
    for (int k : topo.partition[l]) nnz[l] += y.mask.col_ptr[k + 1] - y.mask.col_ptr[k];
  return nnz;
}

// Upstream payload size for an n x r node partial that may be row-sparse:
// min(n, sum_k |Omega_k|) * r.
std::int64_t partial_scalars(int n, std::int64_t node_nnz, int r) {
  return std::min<std::int64_t>(n, node_nnz) * r;
}

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

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

FederatedPowerResult federated_power_init(const SparseObservation& y, const Topology& topo, int r,
                                          int iters, std::uint64_t seed) {
  if (iters < 1) throw InvalidDimensions("federated_power_init: iters must be >= 1");
  topo.validate(y.mask.q);
  const int n = y.mask.n;
  const std::vector<std::int64_t> nnz = node_observation_counts(y, topo);

  FederatedPowerResult res;
  // Nodes derive the start block from the shared seed; no matrix broadcast.
  QRFactorization qr = thin_qr(power_start_block(n, r, seed));
  double top_sq = 0.0;

  for (int round = 0; round < iters; ++round) {
    std::vector<Matrix> partials(topo.gamma);
    for (int l = 0; l < topo.gamma; ++l) {
      partials[l] = Matrix::Zero(n, r);
      accumulate_yyt_times(y, topo.partition[l], qr.q.matrix(), partials[l]);
      res.ledger.log(round, Direction::up, l, PayloadKind::power_partial,
                     partial_scalars(n, nnz[l], r));
    }
    Matrix sum = std::move(partials[0]);
    for (int l = 1; l < topo.gamma; ++l) sum += partials[l];
    qr = thin_qr(sum);
    top_sq = qr.r_factor(0, 0);
    for (int l = 0; l < topo.gamma; ++l)
      res.ledger.log(round, Direction::down, l, PayloadKind::broadcast_u,
                     static_cast<std::int64_t>(n) * r);
  }
  res.basis = std::move(qr.q);
  res.top_singular_estimate = std::sqrt(std::max(top_sq, 0.0));
  return res;
}

namespace {

struct FedContext {
  const BaselineConfig* cfg;
  const SparseObservation* y;
  const SampleSplit* split;
  const Topology* topo;
  const GroundTruth* gt;
  std::uint64_t seed;
  bool record_iterates;
};

// Shared init phase: federated power method, then the clip + QR finish at the
// center, broadcast once (round = power_iters).
struct FedInit {
  InitResult initial;
  MessageLedger ledger;
  int algorithm_round_begin = 0;
};

FedInit fed_init_phase(const FedContext& ctx) {
  const AltGDminConfig& base = ctx.cfg->base;
  FederatedPowerResult power = federated_power_init(ctx.split->subset(0), *ctx.topo, base.r,
                                                    base.power_iters, ctx.seed);
  FedInit out;
  out.ledger = std::move(power.ledger);
  out.initial = finish_init(
      PowerIterationResult{std::move(power.basis), power.top_singular_estimate}, base);
  const int n = ctx.y->mask.n;
  for (int l = 0; l < ctx.topo->gamma; ++l)
    out.ledger.log(base.power_iters, Direction::down, l, PayloadKind::broadcast_u,
                   static_cast<std::int64_t>(n) * base.r);
  out.algorithm_round_begin = base.power_iters + 1;
  return out;
}

FederatedRunResult fed_altgdmin(const FedContext& ctx) {
  const AltGDminConfig& base = ctx.cfg->base;
  const int T = base.iterations;
  const int n = ctx.y->mask.n;
  const int gamma = ctx.topo->gamma;
  SubsetSchedule sched{ctx.split, T};

  FederatedRunResult res;
  double t0 = now_seconds();
  FedInit fi = fed_init_phase(ctx);
  res.ledger = std::move(fi.ledger);
  res.algorithm_round_begin = fi.algorithm_round_begin;
  OrthonormalBasis u = fi.initial.u;

  const double p_init = ctx.split->subset(0).mask.density();
  res.sigma_max_est =
      base.sigma_max_hint.value_or(p_init > 0 ? fi.initial.sigma_top_y / p_init : 0.0);
  const double p_step = sched.u_subset(1).mask.density();
  if (base.eta_rule == EtaRule::theory) {
    res.eta = base.eta_c / (p_step * res.sigma_max_est * res.sigma_max_est);
  } else {
    res.eta = base.eta_c * p_step / (fi.initial.sigma_top_y * fi.initial.sigma_top_y);
  }
  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(base.r));

  Matrix b;
  if (ctx.record_iterates) res.iterates.push_back(u.matrix());

  for (int i = 0; i <= T; ++i) {
    // B update is node-local (columns never transit).
    const SparseObservation& yb = sched.b_subset(std::min(i + 1, T));
    BUpdateResult bu =
        update_B(u.matrix(), yb, base.underdetermined_policy, b.size() ? &b : nullptr);
    b = std::move(bu.b);
    if (!b.allFinite() || b.norm() > diverge_cap) {
      res.status = RunStatus::diverged;
      break;
    }

    TraceRow row = ctx.gt ? diagnostics_step(u, b, *ctx.gt) : diagnostics_step_blind(u, b);
    row.iter = i;
    row.underdetermined_columns = bu.underdetermined;

    if (i == T) {
      row.grad_frob = gradient_U(u.matrix(), b, sched.u_subset(T)).norm();
      row.wall_seconds = now_seconds() - t0;
      res.trace.rows.push_back(row);
      break;
    }

    const SparseObservation& yg = sched.u_subset(i + 1);
    const std::vector<std::int64_t> nnz = node_observation_counts(yg, *ctx.topo);
    const int round = res.algorithm_round_begin + i;

    std::vector<Matrix> partials(gamma);
    for (int l = 0; l < gamma; ++l) {
      partials[l] = Matrix::Zero(n, base.r);
      accumulate_residual_gradient(yg, ctx.topo->partition[l], u.matrix(), b, partials[l]);
      res.ledger.log(round, Direction::up, l, PayloadKind::partial_gradient,
                     partial_scalars(n, nnz[l], base.r));
    }
    Matrix grad = std::move(partials[0]);
    for (int l = 1; l < gamma; ++l) grad += partials[l];

    row.grad_frob = grad.norm();
    row.wall_seconds = now_seconds() - t0;
    t0 = now_seconds();
    res.trace.rows.push_back(row);
    if (ctx.gt && base.stop_se_f && row.se_f <= *base.stop_se_f) {
      res.status = RunStatus::stopped_early;
      break;
    }

    try {
      u = gd_step_qr(u, grad, 0.5 * res.eta).q;
    } catch (const RankDeficient&) {
      res.status = RunStatus::diverged;
      break;
    }
    for (int l = 0; l < gamma; ++l)
      res.ledger.log(round, Direction::down, l, PayloadKind::broadcast_u,
                     static_cast<std::int64_t>(n) * base.r);
    res.algorithm_rounds = i + 1;
    if (ctx.record_iterates) res.iterates.push_back(u.matrix());
  }

  res.factors = FactorPair{std::move(u), std::move(b)};
  return res;
}

FederatedRunResult fed_altmin_private(const FedContext& ctx) {
  const AltGDminConfig& base = ctx.cfg->base;
  const int T = base.iterations;
  const int n = ctx.y->mask.n;
  const int gamma = ctx.topo->gamma;
  SubsetSchedule sched{ctx.split, T};

  FederatedRunResult res;
  double t0 = now_seconds();
  FedInit fi = fed_init_phase(ctx);
  res.ledger = std::move(fi.ledger);
  res.algorithm_round_begin = fi.algorithm_round_begin;
  OrthonormalBasis u = fi.initial.u;

  const double p_init = ctx.split->subset(0).mask.density();
  res.sigma_max_est =
      base.sigma_max_hint.value_or(p_init > 0 ? fi.initial.sigma_top_y / p_init : 0.0);
  const double p_step = sched.u_subset(1).mask.density();
  res.eta = p_step / (fi.initial.sigma_top_y * fi.initial.sigma_top_y);
  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(base.r));

  if (ctx.record_iterates) res.iterates.push_back(u.matrix());

  for (int i = 0; i <= T; ++i) {
    const SparseObservation& yb = sched.b_subset(std::min(i + 1, T));
    BUpdateResult bu = update_B(u.matrix(), yb, base.underdetermined_policy);
    if (!bu.b.allFinite() || bu.b.norm() > diverge_cap) {
      res.status = RunStatus::diverged;
      res.factors = FactorPair{std::move(u), std::move(bu.b)};
      return res;
    }

    TraceRow row = ctx.gt ? diagnostics_step(u, bu.b, *ctx.gt) : diagnostics_step_blind(u, bu.b);
    row.iter = i;
    row.underdetermined_columns = bu.underdetermined;
    row.grad_frob = gradient_U(u.matrix(), bu.b, yb).norm();
    row.wall_seconds = now_seconds() - t0;
    t0 = now_seconds();
    res.trace.rows.push_back(row);

    if (i == T || (ctx.gt && base.stop_se_f && row.se_f <= *base.stop_se_f)) {
      if (i < T) res.status = RunStatus::stopped_early;
      res.factors = FactorPair{std::move(u), std::move(bu.b)};
      return res;
    }

    // Inner GD solves of the U least-squares problem: one gradient exchange
    // per inner step, all logged under this outer round.
    const SparseObservation& yg = sched.u_subset(i + 1);
    const std::vector<std::int64_t> nnz = node_observation_counts(yg, *ctx.topo);
    const int round = res.algorithm_round_begin + i;
    Matrix u_tilde = u.matrix();
    for (int inner = 0; inner < ctx.cfg->inner_iters; ++inner) {
      std::vector<Matrix> partials(gamma);
      for (int l = 0; l < gamma; ++l) {
        partials[l] = Matrix::Zero(n, base.r);
        accumulate_residual_gradient(yg, ctx.topo->partition[l], u_tilde, bu.b, partials[l]);
        res.ledger.log(round, Direction::up, l, PayloadKind::partial_gradient,
                       partial_scalars(n, nnz[l], base.r));
      }
      Matrix grad = std::move(partials[0]);
      for (int l = 1; l < gamma; ++l) grad += partials[l];
      u_tilde -= (0.5 * res.eta) * grad;
      // The last inner broadcast carries the re-orthonormalized U.
      for (int l = 0; l < gamma; ++l)
        res.ledger.log(round, Direction::down, l, PayloadKind::broadcast_u,
                       static_cast<std::int64_t>(n) * base.r);
    }
    try {
      u = thin_qr(u_tilde).q;
    } catch (const RankDeficient&) {
      res.status = RunStatus::diverged;
      res.factors = FactorPair{std::move(u), std::move(bu.b)};
      return res;
    }
    res.algorithm_rounds = i + 1;
    if (ctx.record_iterates) res.iterates.push_back(u.matrix());
  }
  return res;  // unreachable
}

FederatedRunResult fed_factgd(const FedContext& ctx) {
  const AltGDminConfig& base = ctx.cfg->base;
  const int T = base.iterations;
  const int n = ctx.y->mask.n;
  const int gamma = ctx.topo->gamma;
  SubsetSchedule sched{ctx.split, T};

  FederatedRunResult res;
  double t0 = now_seconds();
  FedInit fi = fed_init_phase(ctx);
  res.ledger = std::move(fi.ledger);
  res.algorithm_round_begin = fi.algorithm_round_begin;

  const double p_init = ctx.split->subset(0).mask.density();
  res.sigma_max_est =
      base.sigma_max_hint.value_or(p_init > 0 ? fi.initial.sigma_top_y / p_init : 0.0);
  const double diverge_cap =
      1e6 * std::max(res.sigma_max_est, 1e-300) * std::sqrt(static_cast<double>(base.r));

  // Balanced factor split; the one-time scalar exchanges (||B0||, radii) are
  // not modeled in the ledger.
  BUpdateResult b_fit =
      update_B(fi.initial.u.matrix(), sched.b_subset(1), base.underdetermined_policy);
  const double scale = std::sqrt(std::max(singular_extremes(b_fit.b).max, 1e-300));
  Matrix u_raw = fi.initial.u.matrix() * scale;
  Matrix b_raw = b_fit.b / scale;
  const double radius_u = ctx.cfg->clip_slack * u_raw.rowwise().norm().maxCoeff();
  const double radius_b = ctx.cfg->clip_slack * b_raw.colwise().norm().maxCoeff();
  const double p_step = sched.u_subset(1).mask.density();
  res.eta = ctx.cfg->c_step * p_step / std::max(fi.initial.sigma_top_y, 1e-300);
  const double lambda = ctx.cfg->lambda_balance;

  for (int i = 0; i <= T; ++i) {
    if (!u_raw.allFinite() || !b_raw.allFinite()) {
      res.status = RunStatus::diverged;
      break;
    }
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
    if (ctx.record_iterates) res.iterates.push_back(u_raw);

    TraceRow row =
        ctx.gt ? diagnostics_step(qr.q, b_equiv, *ctx.gt) : diagnostics_step_blind(qr.q, b_equiv);
    row.iter = i;

    const SparseObservation& yg = sched.u_subset(std::min(i + 1, T));
    {
      const std::vector<int> cols = all_columns(yg.mask.q);
      Matrix g = Matrix::Zero(n, base.r);
      accumulate_residual_gradient(yg, cols, u_raw, b_raw, g);
      g += lambda * u_raw * (u_raw.transpose() * u_raw - column_gram(b_raw, cols));
      row.grad_frob = g.norm();
    }
    row.wall_seconds = now_seconds() - t0;
    t0 = now_seconds();
    res.trace.rows.push_back(row);

    if (i == T || (ctx.gt && base.stop_se_f && row.se_f <= *base.stop_se_f)) {
      if (i < T) res.status = RunStatus::stopped_early;
      res.factors = FactorPair{qr.q, std::move(b_equiv)};
      return res;
    }

    const std::vector<std::int64_t> nnz = node_observation_counts(yg, *ctx.topo);
    const int round = res.algorithm_round_begin + i;
    const std::int64_t r2 = static_cast<std::int64_t>(base.r) * base.r;

    // Exchange 1: per-node B Gram partials up, (B B^T, U^T U) down.
    std::vector<Matrix> grams(gamma);
    for (int l = 0; l < gamma; ++l) {
      grams[l] = column_gram(b_raw, ctx.topo->partition[l]);
      res.ledger.log(round, Direction::up, l, PayloadKind::partial_gradient, r2);
    }
    Matrix bbt = std::move(grams[0]);
    for (int l = 1; l < gamma; ++l) bbt += grams[l];
    const Matrix s = u_raw.transpose() * u_raw - bbt;
    for (int l = 0; l < gamma; ++l)
      res.ledger.log(round, Direction::down, l, PayloadKind::broadcast_u, 2 * r2);

    // Exchange 2: nodes update their B columns locally, push U-gradient
    // partials; the center takes the U step, clips, broadcasts.
    const double eta_step = 0.5 * res.eta;
    std::vector<Matrix> u_partials(gamma);
    Matrix b_next = b_raw;
    for (int l = 0; l < gamma; ++l) {
      u_partials[l] = Matrix::Zero(n, base.r);
      accumulate_residual_gradient(yg, ctx.topo->partition[l], u_raw, b_raw, u_partials[l]);
      Matrix gb = Matrix::Zero(base.r, ctx.y->mask.q);
      accumulate_residual_gradient_b(yg, ctx.topo->partition[l], u_raw, b_raw, gb);
      for (int k : ctx.topo->partition[l]) {
        Vector col = b_raw.col(k) - eta_step * (gb.col(k) - lambda * (s * b_raw.col(k)));
        const double norm = col.norm();
        if (norm > radius_b) col *= radius_b / norm;
        b_next.col(k) = col;
      }
      res.ledger.log(round, Direction::up, l, PayloadKind::partial_gradient,
                     partial_scalars(n, nnz[l], base.r));
    }
    Matrix grad_u = std::move(u_partials[0]);
    for (int l = 1; l < gamma; ++l) grad_u += u_partials[l];
    grad_u += lambda * u_raw * s;
    u_raw = project_row_incoherent(u_raw - eta_step * grad_u, radius_u);
    b_raw = std::move(b_next);
    for (int l = 0; l < gamma; ++l)
      res.ledger.log(round, Direction::down, l, PayloadKind::broadcast_u,
                     static_cast<std::int64_t>(n) * base.r);
    res.algorithm_rounds = i + 1;
  }

  res.factors = FactorPair{fi.initial.u, Matrix::Zero(base.r, ctx.y->mask.q)};
  return res;
}

}  // namespace

FederatedRunResult federated_run(const BaselineConfig& cfg, const SparseObservation& y,
                                 const SampleSplit& split, const Topology& topo,
                                 const GroundTruth* gt_for_diag, std::uint64_t seed,
                                 bool record_iterates) {
  topo.validate(y.mask.q);
  FedContext ctx{&cfg, &y, &split, &topo, gt_for_diag, seed, record_iterates};
  switch (cfg.algorithm) {
    case Algorithm::altgdmin:
      return fed_altgdmin(ctx);
    case Algorithm::altmin_private:
      return fed_altmin_private(ctx);
    case Algorithm::factgd:
      return fed_factgd(ctx);
    case Algorithm::altmin:
      throw UnsupportedFederation("altmin (non-private) runs centralized only");
    case Algorithm::projgd:
      throw UnsupportedFederation("projgd runs centralized only");
  }
  throw std::invalid_argument("federated_run: unknown algorithm");
}

}  // namespace fedlrmc
