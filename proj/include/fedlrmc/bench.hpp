#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedlrmc/fedsim.hpp"

namespace fedlrmc {

enum class ExperimentKind { convergence, timing, noisy_floor, phase_transition, fed_equivalence };

const char* experiment_kind_name(ExperimentKind k);
ExperimentKind experiment_kind_from_name(const std::string& name);

/// Declarative experiment description, parseable from a flat key = value file
/// (see README for the key list) and canonically serializable, so a config
/// hash identifies the experiment and any run can be replayed from its
/// metadata alone.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::convergence;
  int n = 200, q = 200, r = 5;
  SpectrumSpec spectrum;
  std::vector<double> p_grid{0.3};
  std::vector<double> eps_noise_grid{0.0};
  NoiseShape noise_shape = NoiseShape::rademacher;
  std::vector<Algorithm> algorithms{Algorithm::altgdmin};
  std::vector<int> gamma_list{1, 2, 5, 10};
  int trials = 1;
  std::uint64_t master_seed = 1;
  double success_threshold = 1e-10;
  std::string output_dir = "out";

  int iterations = 300;
  int power_iters = 15;
  EtaRule eta_rule = EtaRule::theory;
  double eta_c = 0.5;
  SplitMode split_mode = SplitMode::reuse;
  std::optional<double> mu_threshold;
  int inner_iters = 10;
  double c_step = 0.75;
  double lambda_balance = 0.5;
  std::optional<double> stop_se_f;
  int threads = 1;

  /// Solver config for one algorithm under these settings.
  BaselineConfig solver_config(Algorithm alg) const;

  std::string canonical_text() const;
  std::uint64_t config_hash() const;
  void set_key(const std::string& key, const std::string& value);
};

ExperimentConfig parse_config_text(std::istream& in);
ExperimentConfig load_config(const std::string& path);  // flat text or summary.json

/// One solver execution inside an experiment.
struct TrialCell {
  Algorithm algorithm = Algorithm::altgdmin;
  double p = 1.0;
  double eps_noise = 0.0;
  int gamma = 0;  // 0: centralized
  int trial = 0;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::ok;
  IterationTrace trace;
  double final_se_f = 0;
  double plateau_se_f = 0;
  bool success = false;
  double wall_total = 0;
  // fed_equivalence extras
  double max_iterate_deviation = 0;
  std::int64_t up_scalars_alg = 0;
  std::int64_t down_scalars_alg = 0;
  double up_messages_per_round = 0;
  int algorithm_rounds = 0;
  std::string ledger_csv;
};

struct CurvePoint {
  int iter = 0;
  double mean_se_f = 0, median_se_f = 0, min_se_f = 0, max_se_f = 0;
  double mean_rel_err = 0;
  double mean_wall = 0;  // mean cumulative seconds at this iteration
};

struct AggregateCurve {
  Algorithm algorithm;
  double p = 1.0;
  double eps_noise = 0.0;
  std::vector<CurvePoint> points;
};

struct PhasePoint {
  Algorithm algorithm;
  double p = 1.0;
  double success_prob = 0;
  int trials = 0;
};

struct FloorPoint {
  Algorithm algorithm;
  double eps_noise = 0;
  double median_plateau = 0;
};

/// Everything an experiment produced: raw per-trial cells plus aggregates
/// recomputable from them. numeric_hash covers every numeric output except
/// wall-clock times.
struct RunRecord {
  ExperimentConfig config;
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::vector<TrialCell> cells;
  std::vector<AggregateCurve> curves;
  std::vector<PhasePoint> phase;
  std::vector<FloorPoint> floors;
  double total_wall_seconds = 0;

  std::uint64_t numeric_hash() const;
};

RunRecord run_convergence(const ExperimentConfig& cfg);
RunRecord run_noisy_floor(const ExperimentConfig& cfg);
RunRecord run_phase_transition(const ExperimentConfig& cfg);
RunRecord run_fed_equivalence(const ExperimentConfig& cfg);
RunRecord run_timing(const ExperimentConfig& cfg);

/// Dispatch on cfg.kind.
RunRecord run_experiment(const ExperimentConfig& cfg);

/// Writes <out>/<config-hash>/{trace_*.csv, curve_*.csv, phase_grid.csv,
/// ledger_*.csv, summary.json, plot.script} as applicable; returns the
/// directory path.
std::string emit_report(const RunRecord& record);

/// Plateau detection: first index where se_f changed by < 1% over the last 10
/// iterations; returns the median se_f over the following window (or the
/// final value when no plateau is reached).
double plateau_level(const IterationTrace& trace);

std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace fedlrmc
