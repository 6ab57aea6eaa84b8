#include "bathent/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "bathent/errors.hpp"

namespace bathent {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kBacktrack = 0.25;
constexpr int kMaxBacktracks = 10;
constexpr int kMaxTrajectoryRejections = 4;

double channel_roughness(const std::vector<double>& v) {
  double r = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) r += (v[i + 1] - v[i]) * (v[i + 1] - v[i]);
  return r;
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

void PulseTemplate::validate() const {
  if (!(t_final > 0.0)) throw ConfigError(fmt::format("pulse.t_final must be > 0, got {}", t_final));
  if (n_segments < 1) throw ConfigError(fmt::format("pulse.n_segments must be >= 1, got {}", n_segments));
  if (!(bound >= 0.0)) throw ConfigError(fmt::format("pulse.bound must be >= 0, got {}", bound));
}

bool PulseTemplate::matches(const ControlPulse& pulse) const {
  return pulse.t_final() == t_final && pulse.n_segments() == n_segments && pulse.mode() == mode &&
         pulse.bound() == bound;
}

ControlPulse PulseTemplate::make(std::span<const double> params) const {
  return ControlPulse::from_parameters(t_final, n_segments, mode, bound, params);
}

ControlPulse PulseTemplate::zero() const { return ControlPulse::zero(t_final, n_segments, mode, bound); }

ControlPulse PulseTemplate::resonance_seed(double amplitude) const {
  return ControlPulse::parametric_resonance(t_final, n_segments, mode, bound, amplitude);
}

Objective::Objective(PulseTemplate pulse_template, std::shared_ptr<const DiscretizedBath> bath,
                     std::shared_ptr<const CovarianceMatrix> initial, double lambda, IntegrationSettings settings)
    : template_(pulse_template),
      bath_(std::move(bath)),
      initial_(std::move(initial)),
      lambda_(lambda),
      settings_(settings) {
  template_.validate();
  if (!(lambda_ >= 0.0)) throw ConfigError(fmt::format("optimizer.lambda must be >= 0, got {}", lambda_));
  if (!bath_ || !initial_) throw ConfigError("objective needs a bath and an initial state");
  if (initial_->dim() != 4 + 2 * bath_->n_modes()) {
    throw ConfigError("objective: initial covariance does not match the bath");
  }
}

void Objective::check(const ControlPulse& pulse) const {
  if (!template_.matches(pulse)) {
    throw ConfigError(fmt::format("pulse (t_f = {}, {} segments, mode {}, bound {}) does not match the objective template",
                                  pulse.t_final(), pulse.n_segments(), to_string(pulse.mode()), pulse.bound()));
  }
}

double Objective::regularization(const ControlPulse& pulse) const {
  // Roughness of the independent channels only.
  double r = channel_roughness(pulse.values_a());
  if (pulse.mode() == DriveMode::free) r += channel_roughness(pulse.values_b());
  return r;
}

ObjectiveValue Objective::evaluate_full(const ControlPulse& pulse) const {
  check(pulse);
  const Eigen::Matrix4d root = final_reduced_root(*initial_, pulse, *bath_, settings_);
  check_reduced_state(root, pulse.t_final(), settings_);
  ObjectiveValue v;
  v.neg_log_nu = neg_log_nu_gradient_from_root(root).value;
  v.log_negativity = std::max(0.0, v.neg_log_nu);
  v.roughness = regularization(pulse);
  v.value = v.log_negativity - lambda_ * v.roughness;
  v.surrogate = v.neg_log_nu - lambda_ * v.roughness;
  v.sigma = 0.5 * (root.transpose() * root + (root.transpose() * root).transpose());
  return v;
}

double Objective::evaluate(const ControlPulse& pulse) const { return evaluate_full(pulse).value; }

ObjectiveGradient Objective::gradient(const ControlPulse& pulse) const {
  check(pulse);
  auto cotangent = [](const Eigen::Matrix4d& root) {
    const auto g = neg_log_nu_gradient_from_root(root);
    return std::tuple<double, Eigen::Matrix4d, bool>{g.value, g.gradient, g.degenerate};
  };
  const FinalStateGradient fg = final_state_gradient(*initial_, pulse, *bath_, settings_, cotangent);
  check_reduced_state(fg.root, pulse.t_final(), settings_);

  ObjectiveGradient out;
  out.degenerate = fg.degenerate;
  out.at.neg_log_nu = fg.value;
  out.at.log_negativity = std::max(0.0, fg.value);
  out.at.roughness = regularization(pulse);
  out.at.value = out.at.log_negativity - lambda_ * out.at.roughness;
  out.at.surrogate = fg.value - lambda_ * out.at.roughness;
  out.at.sigma = fg.sigma;

  const int n = pulse.n_segments();
  const auto rough_a = roughness_gradient(pulse.values_a());
  out.gradient.assign(pulse.n_parameters(), 0.0);
  for (int i = 0; i < n; ++i) {
    switch (pulse.mode()) {
      case DriveMode::symmetric: out.gradient[i] = fg.d_u_a[i] + fg.d_u_b[i]; break;
      case DriveMode::single_site: out.gradient[i] = fg.d_u_a[i]; break;
      case DriveMode::free:
        out.gradient[i] = fg.d_u_a[i];
        out.gradient[n + i] = fg.d_u_b[i];
        break;
    }
    out.gradient[i] -= lambda_ * rough_a[i];
  }
  if (pulse.mode() == DriveMode::free) {
    const auto rough_b = roughness_gradient(pulse.values_b());
    for (int i = 0; i < n; ++i) out.gradient[n + i] -= lambda_ * rough_b[i];
  }
  return out;
}

Objective make_objective(const BathSpec& spec, const PulseTemplate& pulse_template, double lambda,
                         const IntegrationSettings& settings) {
  auto bath = std::make_shared<const DiscretizedBath>(discretize(spec, pulse_template.t_final));
  auto initial = std::make_shared<const CovarianceMatrix>(thermal_initial_covariance(*bath, spec.beta));
  return Objective(pulse_template, std::move(bath), std::move(initial), lambda, settings);
}

GradientCheck check_gradient(const Objective& objective, const ControlPulse& pulse, double step,
                             int max_parameters) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  GradientCheck out;
  out.step = step;
  out.adjoint = objective.gradient(pulse).gradient;
  const std::vector<double> x = pulse.parameters();
  const std::size_t n = max_parameters < 0 ? x.size() : std::min<std::size_t>(max_parameters, x.size());
  out.adjoint.resize(n);
  const PulseTemplate& t = objective.pulse_template();
  PulseTemplate wide = t;
  wide.bound = t.bound + 2.0 * step;
  const Objective shifted(wide, std::shared_ptr<const DiscretizedBath>(&objective.bath(), [](auto*) {}),
                          std::shared_ptr<const CovarianceMatrix>(&objective.initial(), [](auto*) {}),
                          objective.lambda(), objective.settings());
  out.finite_difference.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    const double fp = shifted.evaluate_full(wide.make(xp)).surrogate;
    const double fm = shifted.evaluate_full(wide.make(xm)).surrogate;
    out.finite_difference[i] = (fp - fm) / (2.0 * step);
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(out.adjoint[i] - out.finite_difference[i]));
  const double scale = inf_norm(out.finite_difference);
  out.max_relative_error = scale > 0.0 ? diff / scale : diff;
  return out;
}

namespace {

struct Candidate {
  std::vector<double> x;
  ObjectiveGradient eval;
  bool ok = false;
};

struct AscentResult {
  Candidate best;
  /// Every successfully evaluated point, for fallback when the best one fails the trajectory guard.
  std::vector<std::pair<std::vector<double>, ObjectiveValue>> evaluated;
  std::vector<TraceEntry> trace;
  int evaluations = 0;
  int degenerate = 0;
  int failed = 0;
};

std::vector<double> project(std::vector<double> x, double bound) {
  for (double& v : x) v = std::clamp(v, -bound, bound);
  return x;
}

// Projected gradient ascent on the surrogate with BB steps and Armijo backtracking.
AscentResult ascend(const Objective& objective, const std::vector<double>& x0, int budget, double initial_step,
                    int start, const std::string& model) {
  AscentResult res;
  const double bound = objective.pulse_template().bound;

  auto run = [&](const std::vector<double>& x) {
    Candidate c;
    c.x = x;
    ++res.evaluations;
    try {
      c.eval = objective.gradient(objective.pulse_template().make(x));
      c.ok = std::isfinite(c.eval.at.surrogate);
    } catch (const PropagationError&) {
      c.ok = false;
    } catch (const InvalidStateError&) {
      c.ok = false;
    }
    if (!c.ok) ++res.failed;
    if (c.ok) res.evaluated.emplace_back(x, c.eval.at);
    if (c.ok && c.eval.degenerate) ++res.degenerate;
    return c;
  };
  auto record = [&](const Candidate& c, bool accepted) {
    TraceEntry e;
    e.start = start;
    e.model = model;
    e.accepted = accepted;
    if (c.ok) {
      e.value = c.eval.at.value;
      e.surrogate = c.eval.at.surrogate;
      e.log_negativity = c.eval.at.log_negativity;
    } else {
      e.value = e.surrogate = e.log_negativity = std::numeric_limits<double>::quiet_NaN();
    }
    res.trace.push_back(e);
  };
  auto better = [](const Candidate& a, const Candidate& b) {
    return a.ok && (!b.ok || a.eval.at.value > b.eval.at.value);
  };

  if (budget < 1) return res;
  Candidate cur = run(project(x0, bound));
  record(cur, cur.ok);
  res.best = cur;
  if (!cur.ok) return res;

  double g_max = inf_norm(cur.eval.gradient);
  double alpha = g_max > 0.0 ? initial_step / g_max : 0.0;
  while (res.evaluations < budget && g_max > 0.0) {
    // Projected-gradient stationarity.
    double pg = 0.0;
    for (std::size_t i = 0; i < cur.x.size(); ++i) {
      pg = std::max(pg, std::abs(std::clamp(cur.x[i] + cur.eval.gradient[i], -bound, bound) - cur.x[i]));
    }
    if (pg < 1e-9) break;

    Candidate next;
    bool accepted = false;
    for (int bt = 0; bt <= kMaxBacktracks && res.evaluations < budget; ++bt) {
      std::vector<double> trial(cur.x.size());
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = cur.x[i] + alpha * cur.eval.gradient[i];
      trial = project(std::move(trial), bound);
      double predicted = 0.0;
      double moved = 0.0;
      for (std::size_t i = 0; i < trial.size(); ++i) {
        predicted += cur.eval.gradient[i] * (trial[i] - cur.x[i]);
        moved = std::max(moved, std::abs(trial[i] - cur.x[i]));
      }
      if (moved < 1e-12) break;
      next = run(trial);
      accepted = next.ok && next.eval.at.surrogate >= cur.eval.at.surrogate + kArmijo * predicted;
      record(next, accepted);
      if (better(next, res.best)) res.best = next;
      if (accepted) break;
      alpha *= kBacktrack;
    }
    if (!accepted) break;

    // Barzilai-Borwein step for ascent: alpha = s.s / (-s.y).
    double ss = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < cur.x.size(); ++i) {
      const double s = next.x[i] - cur.x[i];
      const double y = next.eval.gradient[i] - cur.eval.gradient[i];
      ss += s * s;
      sy += s * y;
    }
    cur = std::move(next);
    g_max = inf_norm(cur.eval.gradient);
    if (sy < 0.0) {
      alpha = ss / -sy;
    } else {
      alpha *= 2.0;
    }
    if (g_max > 0.0) alpha = std::clamp(alpha, 1e-12 / g_max, 2.0 * bound / g_max);
  }
  return res;
}

std::vector<std::vector<double>> starting_points(const PulseTemplate& t, const OptimizerSettings& settings) {
  std::vector<std::vector<double>> starts;
  starts.push_back(t.resonance_seed(settings.resonance_fraction * t.bound).parameters());
  std::mt19937_64 rng(settings.seed);
  std::uniform_real_distribution<double> scale(0.1, 0.5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int s = 1; s < settings.multistart; ++s) {
    const double a = scale(rng) * t.bound;
    std::vector<double> x(t.n_parameters());
    for (double& v : x) v = a * unit(rng);
    starts.push_back(std::move(x));
  }
  return starts;
}

// Runs `task(i)` for i in [0, n) on up to `workers` threads.
template <typename Task>
void parallel_for(int n, int workers, Task task) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) task(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

OptimizationReport optimize(const Objective& objective, const BathSpec& spec, const OptimizerSettings& settings) {
  if (settings.budget < 1) throw ConfigError(fmt::format("optimizer.budget must be >= 1, got {}", settings.budget));
  if (settings.multistart < 1) {
    throw ConfigError(fmt::format("optimizer.multistart must be >= 1, got {}", settings.multistart));
  }
  if (settings.samples < 1) throw ConfigError("integration.samples must be >= 1");
  const auto wall_start = std::chrono::steady_clock::now();
  const PulseTemplate& t = objective.pulse_template();
  const auto starts = starting_points(t, settings);

  OptimizationReport report{t.zero(), {}, {}, std::nullopt, {}, 0, 0, 0.0, settings.seed, false, 0, 0};

  if (!(settings.trace_headroom > 0.0 && settings.trace_headroom <= 1.0)) {
    throw ConfigError(fmt::format("optimizer.trace_headroom must be in (0, 1], got {}", settings.trace_headroom));
  }
  IntegrationSettings guarded = objective.settings();
  guarded.max_variance_trace *= settings.trace_headroom;
  const Objective full = objective.with_settings(guarded);

  const bool fast = settings.fast_inner_loop && settings.budget > 1;
  std::optional<Objective> inner;
  if (fast) {
    BathSpec reduced = spec;
    reduced.n_modes = settings.reduced_modes;
    reduced.omega_max = std::min(settings.reduced_omega_max, spec.omega_max);
    reduced.grid_kind = GridKind::linear;
    reduced.n_linear = 0;
    auto bath = std::make_shared<const DiscretizedBath>(discretize(reduced, t.t_final));
    auto initial = std::make_shared<const CovarianceMatrix>(thermal_initial_covariance(*bath, spec.beta));
    IntegrationSettings s = guarded;
    s.dt = 0.0;
    inner.emplace(t, std::move(bath), std::move(initial), objective.lambda(), s);
  }
  const Objective& search = fast ? *inner : full;

  if (settings.gradient_check_parameters > 0 && settings.budget > 1) {
    // Checked on the search model at the resonance seed.
    report.gradient_check =
        check_gradient(search, t.make(starts.front()), 1e-5, settings.gradient_check_parameters);
  }

  // Budget split: the full-model polish gets its reserve, the starts share the rest.
  const int full_reserve = fast ? std::clamp(settings.polish_budget, 1, std::max(1, settings.budget / 2)) : 0;
  const int search_budget = settings.budget - full_reserve;
  const int n_starts = std::min<int>(static_cast<int>(starts.size()), std::max(1, search_budget));
  std::vector<int> per_start(n_starts, search_budget / n_starts);
  for (int i = 0; i < search_budget % n_starts; ++i) ++per_start[i];

  std::vector<AscentResult> results(n_starts);
  if (settings.budget == 1) {
    results.resize(1);
    results[0] = ascend(full, starts.front(), 1, settings.initial_step, 0, "full");
  } else {
    parallel_for(n_starts, settings.workers, [&](int i) {
      results[i] = ascend(search, starts[i], per_start[i], settings.initial_step, i, fast ? "inner" : "full");
    });
  }

  auto append = [&](const AscentResult& r) {
    for (TraceEntry e : r.trace) {
      e.evaluation = static_cast<int>(report.trace.size());
      report.trace.push_back(e);
    }
    report.evaluations += r.evaluations;
    report.degenerate_gradients += r.degenerate;
    report.failed_evaluations += r.failed;
  };
  const AscentResult* best_search = nullptr;
  for (const auto& r : results) {
    append(r);
    if (r.best.ok && (!best_search || r.best.eval.at.value > best_search->best.eval.at.value)) best_search = &r;
  }

  // Full-model points, best first. The objective only guards tr sigma at t_f.
  std::vector<std::pair<std::vector<double>, ObjectiveValue>> ranked;
  if (fast) {
    const std::vector<double> x0 = best_search ? best_search->best.x : starts.front();
    const AscentResult polished = ascend(full, x0, full_reserve, settings.initial_step * 0.1, -1, "full");
    append(polished);
    ranked = polished.evaluated;
  } else {
    for (const auto& r : results) ranked.insert(ranked.end(), r.evaluated.begin(), r.evaluated.end());
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second.value > b.second.value; });

  // Running best per model.
  double best_inner = -std::numeric_limits<double>::infinity();
  double best_full = -std::numeric_limits<double>::infinity();
  for (auto& e : report.trace) {
    double& b = e.model == "full" ? best_full : best_inner;
    if (std::isfinite(e.value)) b = std::max(b, e.value);
    e.best_value = b;
    if (e.model == "full") ++report.full_evaluations;
  }

  const IntegrationSettings s = objective.settings();
  const auto samples = uniform_samples(t.t_final, settings.samples);
  bool found = false;
  for (const auto& [x, at] : ranked) {
    if (report.trajectory_rejections >= kMaxTrajectoryRejections) break;
    try {
      ControlPulse pulse = t.make(x);
      report.final_result = propagate(objective.initial(), pulse, objective.bath(), s, samples);
      report.best_pulse = std::move(pulse);
      report.best = at;
      found = true;
      break;
    } catch (const PropagationError&) {
      ++report.trajectory_rejections;
    }
  }
  if (!found) {
    report.best_pulse = t.zero();
    report.best = objective.evaluate_full(report.best_pulse);
    report.final_result = propagate(objective.initial(), report.best_pulse, objective.bath(), s, samples);
  }
  report.no_entanglement_found = !(report.best.log_negativity > 0.0);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

}  // namespace bathent
