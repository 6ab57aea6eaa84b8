// Batch front-end: simulate, optimize, sweep and analyze runs from one YAML config.

#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "bathent/analysis.hpp"
#include "bathent/config.hpp"
#include "bathent/control.hpp"
#include "bathent/errors.hpp"
#include "bathent/io.hpp"
#include "bathent/propagation.hpp"

namespace fs = std::filesystem;
using namespace bathent;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kPropagation = 3, kParse = 4, kUsage = 5 };

std::mutex log_mutex;

template <typename... Args>
void log(fmt::format_string<Args...> f, Args&&... args) {
  std::lock_guard lock(log_mutex);
  fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
}

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.optimizer.seed = *c.seed;
  if (c.workers) {
    if (*c.workers < 1) throw ConfigError("--workers must be >= 1");
    cfg.optimizer.workers = *c.workers;
  }
  return cfg;
}

// Writes an artifact, then reads it back through its own parser and checks that
// re-serializing gives the same bytes.
void write_csv_artifact(const fs::path& path, const CsvTable& table) {
  const std::string text = write_csv(table);
  write_text_file(path, text);
  if (write_csv(read_csv(read_text_file(path))) != text) {
    throw IoError(fmt::format("'{}' did not round-trip", path.string()));
  }
}

void write_json_artifact(const fs::path& path, const Json& j) {
  const std::string text = dump_json(j);
  write_text_file(path, text);
  if (dump_json(parse_json(read_text_file(path))) != text) {
    throw IoError(fmt::format("'{}' did not round-trip", path.string()));
  }
}

void write_config_artifact(const fs::path& dir, const RunConfig& cfg) {
  const fs::path path = dir / "effective_config.yaml";
  const std::string text = effective_config_yaml(cfg);
  write_text_file(path, text);
  if (effective_config_yaml(parse_config(read_text_file(path), path.string())) != text) {
    throw IoError(fmt::format("'{}' did not round-trip", path.string()));
  }
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir, ec.message()));
  return fs::path(dir);
}

ControlPulse initial_pulse(const RunConfig& cfg) {
  switch (cfg.source) {
    case PulseSource::zero: return cfg.pulse.zero();
    case PulseSource::resonance: return cfg.pulse.resonance_seed(cfg.resonance_amplitude);
    case PulseSource::file: {
      const ControlPulse p = pulse_from_table(read_csv(read_text_file(cfg.pulse_file)), cfg.pulse.mode, cfg.pulse.bound);
      if (std::abs(p.t_final() - cfg.pulse.t_final) > 1e-9 * cfg.pulse.t_final) {
        throw ConfigError(fmt::format("pulse file '{}' ends at t = {}, config has pulse.t_final = {}", cfg.pulse_file,
                                      p.t_final(), cfg.pulse.t_final));
      }
      return p;
    }
  }
  return cfg.pulse.zero();
}

std::size_t index_of_time(const PropagationResult& r, double t) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (std::abs(r.times[i] - t) < std::abs(r.times[best] - t)) best = i;
  }
  return best;
}

// Wigner grids of the (Q_+, P_+) and (Q_-, P_-) marginals.
void write_normal_mode_wigner(const fs::path& dir, const Eigen::Matrix4d& root, const PhaseSpaceGrid& grid) {
  const NormalModeState nm = to_normal_modes_from_root(root);
  const Eigen::Vector2d zero = Eigen::Vector2d::Zero();
  write_csv_artifact(dir / "wigner_plus.csv", wigner_table(wigner_grid_from_root(nm.marginal_root(0), zero, grid), grid));
  write_csv_artifact(dir / "wigner_minus.csv",
                     wigner_table(wigner_grid_from_root(nm.marginal_root(1), zero, grid), grid));
}

double horizon(const RunConfig& cfg) { return cfg.pulse.t_final + cfg.continuation; }

void write_state_files(const fs::path& dir, const RunConfig& cfg, PropagationResult result) {
  const std::size_t at_tf = index_of_time(result, cfg.pulse.t_final);
  write_csv_artifact(dir / "timeseries.csv", timeseries_table(result));
  write_json_artifact(dir / "snapshot.json", snapshot_to_json(result, at_tf, cfg.bath.beta, cfg.thresholds));
  if (cfg.continuation > 0.0) {
    write_json_artifact(dir / "snapshot_end.json",
                        snapshot_to_json(result, result.size() - 1, cfg.bath.beta, cfg.thresholds));
  }
  write_csv_artifact(dir / "bar.csv", bar_table(result.covariance(at_tf)));
  write_normal_mode_wigner(dir, result.roots[at_tf], cfg.wigner);
}

PropagationResult trajectory(const RunConfig& cfg, const ControlPulse& pulse, const DiscretizedBath& bath,
                             const CovarianceMatrix& initial) {
  IntegrationSettings s = cfg.integration;
  s.retain_full_state = cfg.continuation > 0.0;
  PropagationResult r = propagate(initial, pulse, bath, s, uniform_samples(pulse.t_final(), cfg.samples));
  if (cfg.continuation > 0.0) r = continue_free(r, bath, cfg.continuation, cfg.continuation_samples);
  return r;
}

int run_simulate(const Common& common) {
  const RunConfig cfg = resolve(common);
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_config_artifact(dir, cfg);
  const DiscretizedBath bath = discretize(cfg.bath, horizon(cfg));
  const CovarianceMatrix initial = thermal_initial_covariance(bath, cfg.bath.beta);
  const ControlPulse pulse = initial_pulse(cfg);
  log("simulate: {} bath modes, t_f = {}, {} samples", bath.n_modes(), pulse.t_final(), cfg.samples);
  const PropagationResult result = trajectory(cfg, pulse, bath, initial);
  write_csv_artifact(dir / "bath.csv", bath_table(bath));
  write_csv_artifact(dir / "pulse.csv", pulse_table(pulse));
  write_state_files(dir, cfg, result);
  const std::size_t at_tf = index_of_time(result, cfg.pulse.t_final);
  log("E_N(t_f) = {:.6f}, symplectic residual {:.2e}, {} steps", result.log_negativity(at_tf),
      result.symplectic_residual, result.steps);
  return kOk;
}

struct OptimizeOutcome {
  double log_negativity = 0.0;
  double neg_log_nu = 0.0;
  double wall_seconds = 0.0;
};

OptimizeOutcome optimize_into(const RunConfig& cfg, const fs::path& dir) {
  write_config_artifact(dir, cfg);
  auto bath = std::make_shared<const DiscretizedBath>(discretize(cfg.bath, horizon(cfg)));
  auto initial = std::make_shared<const CovarianceMatrix>(thermal_initial_covariance(*bath, cfg.bath.beta));
  const Objective objective(cfg.pulse, bath, initial, cfg.lambda, cfg.integration);
  OptimizerSettings os = cfg.optimizer;
  os.samples = cfg.samples;
  log("optimize [{}]: {} mode, budget {}, {} starts, seed {}", dir.string(), to_string(cfg.pulse.mode), os.budget,
      os.multistart, os.seed);
  const OptimizationReport report = optimize(objective, cfg.bath, os);

  write_json_artifact(dir / "report.json", report_to_json(report));
  write_csv_artifact(dir / "pulse.csv", pulse_table(report.best_pulse));
  if (cfg.continuation > 0.0) {
    write_state_files(dir, cfg, trajectory(cfg, report.best_pulse, *bath, *initial));
  } else {
    write_state_files(dir, cfg, report.final_result);
  }
  log("optimize [{}]: E_N(t_f) = {:.6f} after {} evaluations ({:.1f} s)", dir.string(), report.best.log_negativity,
      report.evaluations, report.wall_seconds);
  return {report.best.log_negativity, report.best.neg_log_nu, report.wall_seconds};
}

int run_optimize(const Common& common) {
  const RunConfig cfg = resolve(common);
  optimize_into(cfg, prepare_dir(cfg.output_dir));
  return kOk;
}

int run_sweep(const Common& common, std::optional<std::string> axis, std::vector<double> values) {
  RunConfig cfg = resolve(common);
  if (axis) cfg.sweep_axis = *axis;
  if (!values.empty()) cfg.sweep_values = values;
  if (cfg.sweep_axis.empty()) throw ConfigError("sweep needs an axis (sweep.axis or --axis)");
  if (cfg.sweep_values.empty()) throw ConfigError("sweep needs values (sweep.values or --values)");
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_config_artifact(dir, cfg);

  const int n = static_cast<int>(cfg.sweep_values.size());
  std::vector<RunConfig> points;
  for (double v : cfg.sweep_values) {
    RunConfig p = with_sweep_value(cfg, cfg.sweep_axis, v);
    p.output_dir = (dir / fmt::format("{}_{:03d}", cfg.sweep_axis, points.size())).string();
    points.push_back(std::move(p));
  }
  // Points run concurrently; each optimizer then stays single-threaded.
  const int workers = std::max(1, std::min(cfg.optimizer.workers, n));
  if (workers > 1) {
    for (auto& p : points) p.optimizer.workers = 1;
  }
  std::vector<OptimizeOutcome> outcomes(n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          outcomes[i] = optimize_into(points[i], prepare_dir(points[i].output_dir));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  CsvTable summary{{"value", "best_E_N", "neg_log_nu", "wall_seconds"}, {}};
  for (int i = 0; i < n; ++i) {
    summary.rows.push_back({cfg.sweep_values[i], outcomes[i].log_negativity, outcomes[i].neg_log_nu,
                            outcomes[i].wall_seconds});
    log("sweep {} = {}: E_N = {:.6f}", cfg.sweep_axis, cfg.sweep_values[i], outcomes[i].log_negativity);
  }
  write_csv_artifact(dir / "summary.csv", summary);
  return kOk;
}

int run_analyze(const Common& common, const std::string& snapshot, std::optional<double> beta) {
  const RunConfig cfg = resolve(common);
  const Json j = parse_json(read_text_file(snapshot));
  const CovarianceMatrix sigma = covariance_from_json(j);
  if (sigma.dim() != 4) {
    throw ParseError(fmt::format("snapshot must hold a 4x4 covariance, got {}x{}", sigma.dim(), sigma.dim()), 0);
  }
  const std::optional<Eigen::Matrix4d> root = snapshot_root(j, sigma);
  if (!root) sigma.require_positive_definite();
  const fs::path dir = prepare_dir(cfg.output_dir);
  const Json d = diagnostics_to_json(sigma, beta.value_or(cfg.bath.beta), cfg.thresholds, root);
  write_json_artifact(dir / "diagnostics.json", d);
  log("analyze: label {}, E_N = {:.6f}", d["semi_epr"]["label"].get<std::string>(),
      d["log_negativity"].get<double>());
  return kOk;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "YAML run configuration")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory (overrides output.dir)");
  app->add_option("--seed", c.seed, "Random seed (overrides optimizer.seed)");
  app->add_option("--workers", c.workers, "Worker threads");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bath-assisted entanglement of two driven oscillators"};
  app.require_subcommand(1);

  Common common;
  auto* simulate = app.add_subcommand("simulate", "Propagate one pulse and write the trajectory");
  add_common(simulate, common);

  auto* optimize_cmd = app.add_subcommand("optimize", "Search for the pulse maximizing E_N(t_f)");
  add_common(optimize_cmd, common);

  std::optional<std::string> axis;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "Optimize once per value of one parameter");
  add_common(sweep, common);
  sweep->add_option("--axis", axis, "beta, eta, t_f or n_segments (overrides sweep.axis)");
  sweep->add_option("--values", values, "Values (overrides sweep.values)")->delimiter(',');

  std::string snapshot;
  std::optional<double> beta;
  auto* analyze = app.add_subcommand("analyze", "Diagnostics of a covariance snapshot");
  add_common(analyze, common);
  analyze->add_option("snapshot", snapshot, "Snapshot JSON ({dim, entries})")->required();
  analyze->add_option("--beta", beta, "Inverse temperature for the bound check (default bath.beta)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(common);
    if (optimize_cmd->parsed()) return run_optimize(common);
    if (sweep->parsed()) return run_sweep(common, axis, values);
    if (analyze->parsed()) return run_analyze(common, snapshot, beta);
  } catch (const ConfigError& e) {
    log("config error: {}", e.what());
    return kConfig;
  } catch (const PropagationError& e) {
    log("propagation error at t = {}: {}", e.time(), e.what());
    return kPropagation;
  } catch (const ParseError& e) {
    log("parse error at byte {}: {}", e.offset(), e.what());
    return kParse;
  } catch (const InvalidStateError& e) {
    log("invalid state: {}", e.what());
    return kParse;
  } catch (const IoError& e) {
    log("I/O error: {}", e.what());
    return kUsage;
  } catch (const UsageError& e) {
    log("usage error: {}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    log("error: {}", e.what());
    return kFailure;
  }
  return kUsage;
}
