#include "fedlrmc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#ifndef FEDLRMC_BUILD_ID
#define FEDLRMC_BUILD_ID "unknown"
#endif

namespace fedlrmc {

namespace fs = std::filesystem;

const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::timing: return "timing";
    case ExperimentKind::noisy_floor: return "noisy_floor";
    case ExperimentKind::phase_transition: return "phase_transition";
    case ExperimentKind::fed_equivalence: return "fed_equivalence";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_name(const std::string& name) {
  if (name == "convergence") return ExperimentKind::convergence;
  if (name == "timing") return ExperimentKind::timing;
  if (name == "noisy_floor" || name == "noisy-floor") return ExperimentKind::noisy_floor;
  if (name == "phase_transition" || name == "phase") return ExperimentKind::phase_transition;
  if (name == "fed_equivalence" || name == "fed-equiv") return ExperimentKind::fed_equivalence;
  throw std::invalid_argument("unknown experiment kind: " + name);
}

std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_doubles(const std::vector<double>& vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ',';
    out += fmt_double(vs[i]);
  }
  return out;
}

std::string join_ints(const std::vector<int>& vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(vs[i]);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty numeric list");
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty integer list");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void hash_bits(std::uint64_t& h, double v) { h = fnv1a64(&v, sizeof(v), h); }
void hash_bits(std::uint64_t& h, std::int64_t v) { h = fnv1a64(&v, sizeof(v), h); }
void hash_bits(std::uint64_t& h, int v) { h = fnv1a64(&v, sizeof(v), h); }

}  // namespace

BaselineConfig ExperimentConfig::solver_config(Algorithm alg) const {
  BaselineConfig cfg;
  cfg.algorithm = alg;
  cfg.base.r = r;
  cfg.base.eta_rule = eta_rule;
  cfg.base.eta_c = eta_c;
  cfg.base.iterations = iterations;
  cfg.base.power_iters = power_iters;
  cfg.base.mu_threshold = mu_threshold;
  cfg.base.split_mode = split_mode;
  cfg.base.stop_se_f = stop_se_f;
  cfg.inner_iters = inner_iters;
  cfg.c_step = c_step;
  cfg.lambda_balance = lambda_balance;
  return cfg;
}

std::string ExperimentConfig::canonical_text() const {
  // threads and output_dir are execution parameters, not experiment identity;
  // they stay out of the canonical form so replays hash identically.
  std::ostringstream os;
  os << "kind = " << experiment_kind_name(kind) << '\n';
  os << "n = " << n << '\n';
  os << "q = " << q << '\n';
  os << "r = " << r << '\n';
  os << "spectrum = "
     << (spectrum.kind == SpectrumKind::gaussian ? std::string("gaussian")
                                                 : "linear:" + fmt_double(spectrum.kappa_target))
     << '\n';
  os << "p = " << join_doubles(p_grid) << '\n';
  os << "eps_noise = " << join_doubles(eps_noise_grid) << '\n';
  os << "noise_shape = "
     << (noise_shape == NoiseShape::rademacher ? "rademacher" : "signed_uniform") << '\n';
  os << "algorithms = ";
  for (std::size_t i = 0; i < algorithms.size(); ++i)
    os << (i ? "," : "") << algorithm_name(algorithms[i]);
  os << '\n';
  os << "gammas = " << join_ints(gamma_list) << '\n';
  os << "trials = " << trials << '\n';
  os << "master_seed = " << master_seed << '\n';
  os << "success_threshold = " << fmt_double(success_threshold) << '\n';
  os << "iterations = " << iterations << '\n';
  os << "power_iters = " << power_iters << '\n';
  os << "eta_rule = " << (eta_rule == EtaRule::theory ? "theory:" : "empirical:")
     << fmt_double(eta_c) << '\n';
  os << "split_mode = " << (split_mode == SplitMode::reuse ? "reuse" : "split") << '\n';
  os << "mu_threshold = " << (mu_threshold ? fmt_double(*mu_threshold) : "estimate") << '\n';
  os << "inner_iters = " << inner_iters << '\n';
  os << "c_step = " << fmt_double(c_step) << '\n';
  os << "lambda_balance = " << fmt_double(lambda_balance) << '\n';
  os << "stop_se_f = " << (stop_se_f ? fmt_double(*stop_se_f) : "none") << '\n';
  return os.str();
}

std::uint64_t ExperimentConfig::config_hash() const {
  const std::string text = canonical_text();
  return fnv1a64(text.data(), text.size());
}

void ExperimentConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "kind") kind = experiment_kind_from_name(value);
  else if (key == "n") n = std::stoi(value);
  else if (key == "q") q = std::stoi(value);
  else if (key == "r") r = std::stoi(value);
  else if (key == "spectrum") {
    if (value == "gaussian") {
      spectrum = {SpectrumKind::gaussian, 1.0};
    } else if (value.rfind("linear:", 0) == 0) {
      spectrum = {SpectrumKind::linear, std::stod(value.substr(7))};
    } else {
      throw std::invalid_argument("spectrum must be gaussian or linear:<kappa>");
    }
  } else if (key == "p") p_grid = parse_double_list(value);
  else if (key == "eps_noise") eps_noise_grid = parse_double_list(value);
  else if (key == "noise_shape") {
    if (value == "rademacher") noise_shape = NoiseShape::rademacher;
    else if (value == "signed_uniform") noise_shape = NoiseShape::signed_uniform;
    else throw std::invalid_argument("noise_shape must be rademacher or signed_uniform");
  } else if (key == "algorithms") {
    algorithms.clear();
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) algorithms.push_back(algorithm_from_name(trim(tok)));
    if (algorithms.empty()) throw std::invalid_argument("algorithms list is empty");
  } else if (key == "gammas") gamma_list = parse_int_list(value);
  else if (key == "trials") trials = std::stoi(value);
  else if (key == "master_seed") master_seed = std::stoull(value);
  else if (key == "success_threshold") success_threshold = std::stod(value);
  else if (key == "out" || key == "output_dir") output_dir = value;
  else if (key == "iterations" || key == "T") iterations = std::stoi(value);
  else if (key == "power_iters") power_iters = std::stoi(value);
  else if (key == "eta_rule") {
    if (value.rfind("theory", 0) == 0) {
      eta_rule = EtaRule::theory;
      eta_c = value.size() > 7 ? std::stod(value.substr(7)) : 0.5;
    } else if (value.rfind("empirical", 0) == 0) {
      eta_rule = EtaRule::empirical;
      eta_c = value.size() > 10 ? std::stod(value.substr(10)) : 1.0;
    } else {
      throw std::invalid_argument("eta_rule must be theory[:c] or empirical[:c]");
    }
  } else if (key == "split_mode") {
    if (value == "reuse") split_mode = SplitMode::reuse;
    else if (value == "split") split_mode = SplitMode::split;
    else throw std::invalid_argument("split_mode must be reuse or split");
  } else if (key == "mu_threshold") {
    mu_threshold = (value == "estimate") ? std::nullopt : std::optional<double>(std::stod(value));
  } else if (key == "inner_iters") inner_iters = std::stoi(value);
  else if (key == "c_step") c_step = std::stod(value);
  else if (key == "lambda_balance") lambda_balance = std::stod(value);
  else if (key == "stop_se_f") {
    stop_se_f = (value == "none") ? std::nullopt : std::optional<double>(std::stod(value));
  } else if (key == "threads") threads = std::stoi(value);
  else throw std::invalid_argument("unknown config key: " + key);
}

ExperimentConfig parse_config_text(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    nlohmann::json j;
    in >> j;
    std::istringstream text(j.at("config_text").get<std::string>());
    return parse_config_text(text);
  }
  return parse_config_text(in);
}

std::uint64_t RunRecord::numeric_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const TrialCell& c : cells) {
    hash_bits(h, static_cast<int>(c.algorithm));
    hash_bits(h, c.p);
    hash_bits(h, c.eps_noise);
    hash_bits(h, c.gamma);
    hash_bits(h, c.trial);
    hash_bits(h, static_cast<int>(c.status));
    hash_bits(h, c.final_se_f);
    hash_bits(h, c.plateau_se_f);
    hash_bits(h, static_cast<int>(c.success));
    hash_bits(h, c.max_iterate_deviation);
    hash_bits(h, c.up_scalars_alg);
    hash_bits(h, c.down_scalars_alg);
    hash_bits(h, c.up_messages_per_round);
    hash_bits(h, c.algorithm_rounds);
    h = fnv1a64(c.ledger_csv.data(), c.ledger_csv.size(), h);
    for (const TraceRow& row : c.trace.rows) {
      hash_bits(h, row.iter);
      hash_bits(h, row.se_f);
      hash_bits(h, row.se_2);
      hash_bits(h, row.rel_frob_err);
      hash_bits(h, row.b_minus_g);
      hash_bits(h, row.sigma_min_b);
      hash_bits(h, row.sigma_max_b);
      hash_bits(h, row.max_row_u);
      hash_bits(h, row.max_col_b);
      hash_bits(h, row.grad_frob);  // wall_seconds deliberately excluded
      hash_bits(h, row.underdetermined_columns);
    }
  }
  return h;
}

double plateau_level(const IterationTrace& trace) {
  const auto& rows = trace.rows;
  if (rows.empty()) return 0.0;
  const int window = 10;
  for (std::size_t t = window; t < rows.size(); ++t) {
    const double prev = rows[t - window].se_f;
    if (!(prev > 0)) continue;
    if (std::abs(rows[t].se_f - prev) / prev < 0.01) {
      std::vector<double> tail;
      for (std::size_t i = t; i < std::min(rows.size(), t + window); ++i)
        tail.push_back(rows[i].se_f);
      return median_of(std::move(tail));
    }
  }
  return rows.back().se_f;
}

namespace {

struct CellPlan {
  std::size_t grid_index;
  int trial;
  std::size_t first_cell;  // index of the first algorithm cell for this unit
};

// Runs units in parallel; each unit owns disjoint cells, and aggregation later
// walks cells in index order, so results do not depend on the thread count.
void run_units(int threads, std::size_t count, const std::function<void(std::size_t)>& unit) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) unit(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        unit(i);
      }
    });
  for (auto& t : pool) t.join();
}

std::uint64_t cell_seed(const ExperimentConfig& cfg, std::size_t grid_index, int trial) {
  return trial_seed(cfg.master_seed,
                    (static_cast<std::uint64_t>(cfg.kind) << 16) ^ grid_index,
                    static_cast<std::uint64_t>(trial));
}

int split_parts(const ExperimentConfig& cfg) { return 2 * cfg.iterations + 1; }

// Shared driver for the centralized sweep kinds. One unit = one (grid point,
// trial): the mask is drawn once and every algorithm runs on it, so all
// algorithms share the initialization seed.
RunRecord run_grid_sweep(const ExperimentConfig& cfg, bool grid_is_noise, bool force_serial) {
  RunRecord rec;
  rec.config = cfg;
  rec.config_text = cfg.canonical_text();
  rec.config_hash = cfg.config_hash();

  const GroundTruth gt =
      gen_ground_truth(cfg.n, cfg.q, cfg.r, cfg.spectrum, cfg.master_seed);

  const std::vector<double>& grid = grid_is_noise ? cfg.eps_noise_grid : cfg.p_grid;
  const double fixed_p = cfg.p_grid.front();
  const double fixed_eps = cfg.eps_noise_grid.front();

  const std::size_t units = grid.size() * static_cast<std::size_t>(cfg.trials);
  rec.cells.resize(units * cfg.algorithms.size());

  const double t_start = now_seconds();
  run_units(force_serial ? 1 : cfg.threads, units, [&](std::size_t unit) {
    const std::size_t gi = unit / cfg.trials;
    const int trial = static_cast<int>(unit % cfg.trials);
    const double p = grid_is_noise ? fixed_p : grid[gi];
    const double eps = grid_is_noise ? grid[gi] : fixed_eps;
    const std::uint64_t seed = cell_seed(cfg, gi, trial);

    const ObservationMask mask = sample_mask(cfg.n, cfg.q, p, seed);
    const SparseObservation y = observe(gt, mask, eps, cfg.noise_shape, seed);
    const SampleSplit split = split_mask(y, split_parts(cfg), cfg.split_mode, seed);

    for (std::size_t ai = 0; ai < cfg.algorithms.size(); ++ai) {
      TrialCell& cell = rec.cells[unit * cfg.algorithms.size() + ai];
      cell.algorithm = cfg.algorithms[ai];
      cell.p = p;
      cell.eps_noise = eps;
      cell.trial = trial;
      cell.seed = seed;
      const double t0 = now_seconds();
      RunResult run = run_algorithm(y, split, &gt, cfg.solver_config(cell.algorithm), seed);
      cell.wall_total = now_seconds() - t0;
      cell.status = run.status;
      cell.trace = std::move(run.trace);
      cell.final_se_f = cell.trace.rows.empty() ? std::numeric_limits<double>::infinity()
                                                : cell.trace.rows.back().se_f;
      cell.plateau_se_f = plateau_level(cell.trace);
      cell.success =
          run.status != RunStatus::diverged && cell.final_se_f <= cfg.success_threshold;
    }
  });
  rec.total_wall_seconds = now_seconds() - t_start;

  // Aggregate mean/median curves per (algorithm, grid point).
  for (std::size_t ai = 0; ai < cfg.algorithms.size(); ++ai) {
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      AggregateCurve curve;
      curve.algorithm = cfg.algorithms[ai];
      curve.p = grid_is_noise ? fixed_p : grid[gi];
      curve.eps_noise = grid_is_noise ? grid[gi] : fixed_eps;
      std::size_t longest = 0;
      for (int trial = 0; trial < cfg.trials; ++trial) {
        const TrialCell& c =
            rec.cells[(gi * cfg.trials + trial) * cfg.algorithms.size() + ai];
        longest = std::max(longest, c.trace.rows.size());
      }
      for (std::size_t it = 0; it < longest; ++it) {
        CurvePoint pt;
        pt.iter = static_cast<int>(it);
        std::vector<double> ses;
        double rel_sum = 0, wall_sum = 0;
        int count = 0;
        for (int trial = 0; trial < cfg.trials; ++trial) {
          const TrialCell& c =
              rec.cells[(gi * cfg.trials + trial) * cfg.algorithms.size() + ai];
          if (it >= c.trace.rows.size()) continue;
          const TraceRow& row = c.trace.rows[it];
          ses.push_back(row.se_f);
          rel_sum += row.rel_frob_err;
          double cum = 0;
          for (std::size_t k = 0; k <= it; ++k) cum += c.trace.rows[k].wall_seconds;
          wall_sum += cum;
          ++count;
        }
        if (count == 0) break;
        pt.mean_se_f = 0;
        for (double s : ses) pt.mean_se_f += s;
        pt.mean_se_f /= count;
        pt.median_se_f = median_of(ses);
        pt.min_se_f = *std::min_element(ses.begin(), ses.end());
        pt.max_se_f = *std::max_element(ses.begin(), ses.end());
        pt.mean_rel_err = rel_sum / count;
        pt.mean_wall = wall_sum / count;
        curve.points.push_back(pt);
      }
      rec.curves.push_back(std::move(curve));
    }
  }
  return rec;
}

}  // namespace

RunRecord run_convergence(const ExperimentConfig& cfg) {
  return run_grid_sweep(cfg, /*grid_is_noise=*/false, /*force_serial=*/false);
}

RunRecord run_timing(const ExperimentConfig& cfg) {
  // Single-threaded for fair wall-clock comparison.
  return run_grid_sweep(cfg, /*grid_is_noise=*/false, /*force_serial=*/true);
}

RunRecord run_noisy_floor(const ExperimentConfig& cfg) {
  RunRecord rec = run_grid_sweep(cfg, /*grid_is_noise=*/true, /*force_serial=*/false);
  for (Algorithm alg : cfg.algorithms) {
    for (double eps : cfg.eps_noise_grid) {
      std::vector<double> plateaus;
      for (const TrialCell& c : rec.cells)
        if (c.algorithm == alg && c.eps_noise == eps) plateaus.push_back(c.plateau_se_f);
      rec.floors.push_back({alg, eps, median_of(std::move(plateaus))});
    }
  }
  return rec;
}

RunRecord run_phase_transition(const ExperimentConfig& cfg) {
  ExperimentConfig run_cfg = cfg;
  if (!std::is_sorted(run_cfg.p_grid.begin(), run_cfg.p_grid.end()))
    throw std::invalid_argument("phase_transition: p grid must be sorted");
  // Stop a trial as soon as it crosses the success threshold.
  if (!run_cfg.stop_se_f) run_cfg.stop_se_f = run_cfg.success_threshold;
  RunRecord rec = run_grid_sweep(run_cfg, /*grid_is_noise=*/false, /*force_serial=*/false);
  for (Algorithm alg : run_cfg.algorithms) {
    for (double p : run_cfg.p_grid) {
      int wins = 0, total = 0;
      for (const TrialCell& c : rec.cells)
        if (c.algorithm == alg && c.p == p) {
          ++total;
          wins += c.success ? 1 : 0;
        }
      rec.phase.push_back({alg, p, total ? static_cast<double>(wins) / total : 0.0, total});
    }
  }
  return rec;
}

RunRecord run_fed_equivalence(const ExperimentConfig& cfg) {
  RunRecord rec;
  rec.config = cfg;
  rec.config_text = cfg.canonical_text();
  rec.config_hash = cfg.config_hash();

  const GroundTruth gt =
      gen_ground_truth(cfg.n, cfg.q, cfg.r, cfg.spectrum, cfg.master_seed);
  const double p = cfg.p_grid.front();
  const double eps = cfg.eps_noise_grid.front();

  const double t_start = now_seconds();
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t seed = cell_seed(cfg, 0, trial);
    const ObservationMask mask = sample_mask(cfg.n, cfg.q, p, seed);
    const SparseObservation y = observe(gt, mask, eps, cfg.noise_shape, seed);
    const SampleSplit split = split_mask(y, split_parts(cfg), cfg.split_mode, seed);

    for (Algorithm alg : cfg.algorithms) {
      const BaselineConfig solver = cfg.solver_config(alg);
      RunResult central = run_algorithm(y, split, &gt, solver, seed, /*record_iterates=*/true);
      for (int gamma : cfg.gamma_list) {
        const Topology topo = Topology::uniform(cfg.q, gamma);
        FederatedRunResult fed =
            federated_run(solver, y, split, topo, &gt, seed, /*record_iterates=*/true);

        TrialCell cell;
        cell.algorithm = alg;
        cell.p = p;
        cell.eps_noise = eps;
        cell.gamma = gamma;
        cell.trial = trial;
        cell.seed = seed;
        cell.status = fed.status;
        cell.trace = fed.trace;
        cell.final_se_f =
            cell.trace.rows.empty() ? 0.0 : cell.trace.rows.back().se_f;
        const std::size_t common = std::min(central.iterates.size(), fed.iterates.size());
        double dev = 0.0;
        for (std::size_t i = 0; i < common; ++i)
          dev = std::max(dev, (central.iterates[i] - fed.iterates[i]).cwiseAbs().maxCoeff());
        cell.max_iterate_deviation = dev;
        const int begin = fed.algorithm_round_begin;
        const int end = begin + fed.algorithm_rounds;
        cell.up_scalars_alg = fed.ledger.scalars_in_rounds(Direction::up, begin, end);
        cell.down_scalars_alg = fed.ledger.scalars_in_rounds(Direction::down, begin, end);
        cell.up_messages_per_round =
            fed.ledger.up_messages_per_round_per_node(begin, end, gamma);
        cell.algorithm_rounds = fed.algorithm_rounds;
        cell.ledger_csv = fed.ledger.to_csv();
        rec.cells.push_back(std::move(cell));
      }
    }
  }
  rec.total_wall_seconds = now_seconds() - t_start;
  return rec;
}

RunRecord run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::convergence: return run_convergence(cfg);
    case ExperimentKind::timing: return run_timing(cfg);
    case ExperimentKind::noisy_floor: return run_noisy_floor(cfg);
    case ExperimentKind::phase_transition: return run_phase_transition(cfg);
    case ExperimentKind::fed_equivalence: return run_fed_equivalence(cfg);
  }
  throw std::invalid_argument("run_experiment: unknown kind");
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string emit_report(const RunRecord& record) {
  const ExperimentConfig& cfg = record.config;
  const fs::path dir = fs::path(cfg.output_dir) / hash_hex(record.config_hash);
  fs::create_directories(dir);

  std::vector<std::string> emitted_csvs;

  // Per-trial traces (skipped for phase sweeps, which emit the grid instead).
  if (cfg.kind != ExperimentKind::phase_transition) {
    for (const TrialCell& c : record.cells) {
      std::ostringstream name;
      name << "trace_" << algorithm_name(c.algorithm);
      if (cfg.kind == ExperimentKind::noisy_floor) name << "_eps" << c.eps_noise;
      if (c.gamma > 0) name << "_gamma" << c.gamma;
      name << "_trial" << c.trial << ".csv";
      c.trace.write_csv((dir / name.str()).string());
      emitted_csvs.push_back(name.str());
    }
  }

  for (std::size_t ci = 0; ci < record.curves.size(); ++ci) {
    const AggregateCurve& curve = record.curves[ci];
    std::ostringstream name;
    name << "curve_" << algorithm_name(curve.algorithm) << "_g" << ci << ".csv";
    std::ofstream os(dir / name.str());
    os.precision(17);
    os << "iter,mean_se_f,median_se_f,min_se_f,max_se_f,mean_rel_err,mean_wall_s\n";
    for (const CurvePoint& pt : curve.points)
      os << pt.iter << ',' << pt.mean_se_f << ',' << pt.median_se_f << ',' << pt.min_se_f << ','
         << pt.max_se_f << ',' << pt.mean_rel_err << ',' << pt.mean_wall << '\n';
    emitted_csvs.push_back(name.str());
  }

  if (!record.phase.empty()) {
    std::ofstream os(dir / "phase_grid.csv");
    os.precision(17);
    os << "algorithm,p,success_prob,trials\n";
    for (const PhasePoint& pt : record.phase)
      os << algorithm_name(pt.algorithm) << ',' << pt.p << ',' << pt.success_prob << ','
         << pt.trials << '\n';
    emitted_csvs.push_back("phase_grid.csv");
  }

  if (!record.floors.empty()) {
    std::ofstream os(dir / "noise_floor.csv");
    os.precision(17);
    os << "algorithm,eps_noise,median_plateau\n";
    for (const FloorPoint& pt : record.floors)
      os << algorithm_name(pt.algorithm) << ',' << pt.eps_noise << ',' << pt.median_plateau
         << '\n';
    emitted_csvs.push_back("noise_floor.csv");
  }

  if (cfg.kind == ExperimentKind::fed_equivalence) {
    std::ofstream os(dir / "fed_summary.csv");
    os.precision(17);
    os << "algorithm,gamma,trial,max_iterate_deviation,up_scalars,down_scalars,"
          "up_messages_per_round,rounds\n";
    for (const TrialCell& c : record.cells) {
      os << algorithm_name(c.algorithm) << ',' << c.gamma << ',' << c.trial << ','
         << c.max_iterate_deviation << ',' << c.up_scalars_alg << ',' << c.down_scalars_alg << ','
         << c.up_messages_per_round << ',' << c.algorithm_rounds << '\n';
      std::ostringstream name;
      name << "ledger_" << algorithm_name(c.algorithm) << "_gamma" << c.gamma << "_trial"
           << c.trial << ".csv";
      std::ofstream ledger(dir / name.str());
      ledger << c.ledger_csv;
      emitted_csvs.push_back(name.str());
    }
    emitted_csvs.push_back("fed_summary.csv");
  }

  // Metadata sidecar: enough to replay the experiment bit for bit.
  nlohmann::json j;
  j["kind"] = experiment_kind_name(cfg.kind);
  j["config_text"] = record.config_text;
  j["config_hash"] = hash_hex(record.config_hash);
  j["numeric_hash"] = hash_hex(record.numeric_hash());
  j["master_seed"] = cfg.master_seed;
  j["build_id"] = FEDLRMC_BUILD_ID;
  j["total_wall_seconds"] = record.total_wall_seconds;
  j["cells"] = record.cells.size();
  {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : emitted_csvs) files.push_back(f);
    j["files"] = files;
  }
  std::ofstream(dir / "summary.json") << j.dump(2) << '\n';

  // Plot script (gnuplot) reproducing the error-vs-iteration and
  // error-vs-time panels from the emitted curve files.
  if (!record.curves.empty()) {
    std::ofstream os(dir / "plot.script");
    os << "set datafile separator ','\n";
    os << "set logscale y\n";
    os << "set xlabel 'iteration'\nset ylabel 'SE_F'\n";
    os << "set terminal pngcairo size 900,600\n";
    os << "set output 'error_vs_iteration.png'\n";
    os << "plot ";
    for (std::size_t ci = 0; ci < record.curves.size(); ++ci) {
      if (ci) os << ", \\\n     ";
      os << "'curve_" << algorithm_name(record.curves[ci].algorithm) << "_g" << ci
         << ".csv' using 1:2 with lines title '" << algorithm_name(record.curves[ci].algorithm)
         << " g" << ci << "'";
    }
    os << "\n";
    os << "set xlabel 'seconds'\n";
    os << "set output 'error_vs_time.png'\n";
    os << "plot ";
    for (std::size_t ci = 0; ci < record.curves.size(); ++ci) {
      if (ci) os << ", \\\n     ";
      os << "'curve_" << algorithm_name(record.curves[ci].algorithm) << "_g" << ci
         << ".csv' using 7:2 with lines title '" << algorithm_name(record.curves[ci].algorithm)
         << " g" << ci << "'";
    }
    os << "\n";
  }

  return dir.string();
}

}  // namespace fedlrmc
