// Acceptance report: one PASS/FAIL line per criterion. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bathent/analysis.hpp"
#include "bathent/bath.hpp"
#include "bathent/control.hpp"
#include "bathent/gaussian.hpp"
#include "bathent/propagation.hpp"
#include "random_states.hpp"

using namespace bathent;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTf = 6.0 * kPi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_norm(const Eigen::Matrix4d& m) { return m.cwiseAbs().maxCoeff(); }

PulseTemplate default_template(DriveMode mode) { return {kTf, 48, mode, 4.0}; }

BathSpec default_spec(double beta = 1.0) {
  BathSpec spec;
  spec.beta = beta;
  return spec;
}

/// Optimizer runs shared between criteria, keyed by (mode, beta).
class Runs {
 public:
  const OptimizationReport& get(DriveMode mode, double beta) {
    const auto key = std::make_pair(static_cast<int>(mode), beta);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    const BathSpec spec = default_spec(beta);
    const Objective objective = make_objective(spec, default_template(mode), 1e-3);
    OptimizationReport report = optimize(objective, spec, OptimizerSettings{});
    fmt::print("  optimize {} beta={}: E_N(t_f) = {:.6f} in {:.0f} s\n", to_string(mode), beta,
               report.best.log_negativity, seconds_since(t0));
    return cache_.emplace(key, std::move(report)).first->second;
  }

 private:
  std::map<std::pair<int, double>, OptimizationReport> cache_;
};

CovarianceMatrix tmsv(double r) {
  const double c = std::cosh(2.0 * r) / 2.0, s = std::sinh(2.0 * r) / 2.0;
  Eigen::Matrix4d m;
  m << c, 0, s, 0, 0, c, 0, -s, s, 0, c, 0, 0, -s, 0, c;
  return CovarianceMatrix(m);
}

Outcome criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  double tmsv_err = 0.0;
  for (double r : {0.1, 0.5, 1.0, 2.0}) tmsv_err = std::max(tmsv_err, std::abs(log_negativity(tmsv(r)) - 2.0 * r));
  std::mt19937_64 rng(1);
  double oracle_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const CovarianceMatrix s = testing::random_physical_state(rng, 2);
    const double a = smallest_pt_symplectic_eigenvalue(s), b = two_mode_nu_oracle(s);
    oracle_err = std::max(oracle_err, std::abs(a - b) / std::max(std::abs(b), 1e-300));
  }
  const double elapsed = seconds_since(t0);
  return {tmsv_err <= 1e-9 && oracle_err <= 1e-9 && elapsed < 10.0,
          fmt::format("TMSV max |E_N - 2r| = {:.2e}; solver vs oracle max rel = {:.2e} on 1000 states; {:.2f} s",
                      tmsv_err, oracle_err, elapsed)};
}

Outcome criterion_2() {
  const double t_end = 200.0;
  BathSpec spec = default_spec();
  // The linear grid must resolve 2 pi / dw >= 2 t_end.
  spec.n_modes = 1500;
  spec.n_linear = 1300;
  const DiscretizedBath bath = discretize(spec, t_end);
  const auto samples = uniform_samples(t_end, 2000);
  const auto result = propagate(thermal_initial_covariance(bath, spec.beta),
                                ControlPulse::zero(t_end, 1, DriveMode::symmetric, 4.0), bath, {}, samples);
  double max_en = 0.0, t_max = 0.0, last_positive = -1.0;
  int positive = 0;
  for (std::size_t i = 0; i < result.size(); ++i) {
    const double e = result.log_negativity(i);
    if (e > 0.0) {
      ++positive;
      last_positive = result.times[i];
    }
    if (e > max_en) {
      max_en = e;
      t_max = result.times[i];
    }
  }
  const Eigen::Matrix4d final_sigma = result.reduced.back();
  double drift = 0.0;
  for (std::size_t i = 0; i < result.size(); ++i) {
    if (result.times[i] >= 0.9 * t_end) drift = std::max(drift, max_norm(result.reduced[i] - final_sigma));
  }
  drift /= max_norm(final_sigma);
  std::string detail = fmt::format("{} samples on [0, {}], N = {}; drift over final 10% = {:.2e}; ", result.size(),
                                   t_end, bath.n_modes(), drift);
  if (positive == 0) {
    detail += "E_N = 0 at every sample";
  } else {
    detail += fmt::format("E_N > 0 at {} samples (max {:.4f} at t = {:.3f}, last at t = {:.3f})",
                          positive, max_en, t_max, last_positive);
  }
  return {positive == 0 && drift <= 0.01, detail};
}

Outcome criterion_3(Runs& runs) {
  const auto& report = runs.get(DriveMode::symmetric, 1.0);
  const ControlPulse& pulse = report.best_pulse;
  const BathSpec spec = default_spec();
  const DiscretizedBath bath = discretize(spec);
  const CovarianceMatrix initial = thermal_initial_covariance(bath, spec.beta);
  const std::vector<double> end{kTf};

  const auto base = propagate(initial, pulse, bath, {}, end);
  IntegrationSettings half;
  half.dt = base.dt / 2.0;
  const auto halved = propagate(initial, pulse, bath, half, end);
  const double dstep = std::abs(base.log_negativity(0) - halved.log_negativity(0));

  double refine = 0.0;
  std::string refine_detail;
  BathSpec doubled = spec;
  doubled.n_modes = 2 * spec.n_modes;
  doubled.n_linear = 2 * spec.resolved_n_linear();
  BathSpec wider = spec;
  wider.omega_max = 1.5 * spec.omega_max;
  for (const auto& [name, s] : {std::pair{"2N", doubled}, std::pair{"1.5 omega_max", wider}}) {
    const DiscretizedBath b = discretize(s);
    const Eigen::Matrix4d sigma =
        final_reduced_covariance(thermal_initial_covariance(b, s.beta), pulse, b, IntegrationSettings{});
    const double rel = max_norm(sigma - base.reduced[0]) / max_norm(base.reduced[0]);
    refine = std::max(refine, rel);
    refine_detail += fmt::format(" {} {:.2e};", name, rel);
  }
  // The working point must be a strongly entangling pulse, not a trivially converged one.
  return {base.log_negativity(0) >= 1.0 && base.symplectic_residual <= 1e-7 && dstep < 1e-4 && refine < 0.01,
          fmt::format("optimized symmetric pulse (E_N = {:.4f}): symplectic residual {:.2e}; step-halving dE_N {:.2e}; "
                      "refinement max-norm rel:{}",
                      base.log_negativity(0), base.symplectic_residual, dstep, refine_detail)};
}

Outcome criterion_4() {
  // Reduced bath so that 20 full central-difference sweeps stay affordable.
  BathSpec spec = default_spec();
  spec.n_modes = 200;
  spec.omega_max = 20.0;
  spec.grid_kind = GridKind::linear;
  std::mt19937_64 rng(4);
  double worst = 0.0;
  int count = 0;
  for (DriveMode mode : {DriveMode::symmetric, DriveMode::single_site, DriveMode::free}) {
    const Objective objective = make_objective(spec, default_template(mode), 1e-3);
    const int n = mode == DriveMode::free ? 6 : 7;
    for (int i = 0; i < n; ++i, ++count) {
      std::uniform_real_distribution<double> u(-4.0, 4.0);
      std::vector<double> x(objective.pulse_template().n_parameters());
      for (double& v : x) v = u(rng);
      worst = std::max(worst, check_gradient(objective, objective.pulse_template().make(x)).max_relative_error);
    }
  }
  return {worst < 1e-4, fmt::format("{} random pulses within the bound (N = 200, omega_max = 20, all parameters): "
                                    "max relative error {:.2e}",
                                    count, worst)};
}

Outcome criterion_5(Runs& runs) {
  const double sym = runs.get(DriveMode::symmetric, 1.0).best.log_negativity;
  const double single = runs.get(DriveMode::single_site, 1.0).best.log_negativity;
  return {sym >= 1.0 && single >= 0.5 && single <= sym,
          fmt::format("symmetric E_N(t_f) = {:.4f} (>= 1); single-site E_N(t_f) = {:.4f} (>= 0.5, <= symmetric)", sym,
                      single)};
}

double max_log_negativity(const PropagationResult& r) {
  double m = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) m = std::max(m, r.log_negativity(i));
  return m;
}

Outcome criterion_6() {
  const auto samples = uniform_samples(kTf, 200);
  BathSpec closed_spec = default_spec();
  closed_spec.eta = 0.0;
  const DiscretizedBath closed = discretize(closed_spec);
  const CovarianceMatrix closed_initial = thermal_initial_covariance(closed, 1.0);
  // Without damping large |u| overflows the trace guard, so pulses stay within |u| <= 1.
  std::vector<ControlPulse> pulses{ControlPulse::parametric_resonance(kTf, 48, DriveMode::symmetric, 4.0, 1.0)};
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> x(48);
    for (double& v : x) v = u(rng);
    pulses.push_back(ControlPulse::from_parameters(kTf, 48, DriveMode::symmetric, 4.0, x));
  }
  double closed_max = 0.0, closed_ratio = 0.0;
  for (const auto& p : pulses) {
    const auto r = propagate(closed_initial, p, closed, {}, samples);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double e = r.log_negativity(i);
      closed_max = std::max(closed_max, e);
      closed_ratio = std::max(closed_ratio, e / (1e-12 + 64.0 * std::numeric_limits<double>::epsilon() * r.reduced[i].trace()));
    }
  }

  const BathSpec spec = default_spec();
  const DiscretizedBath bath = discretize(spec);
  const auto undriven = propagate(thermal_initial_covariance(bath, spec.beta),
                                  ControlPulse::zero(kTf, 48, DriveMode::symmetric, 4.0), bath, {}, samples);
  const double undriven_max = max_log_negativity(undriven);
  const double undriven_end = undriven.log_negativity(undriven.size() - 1);
  // Exact zero for the closed system is limited by rounding in nu_min, which grows with tr sigma.
  return {closed_ratio <= 1.0 && undriven_max == 0.0,
          fmt::format("eta = 0, {} symmetric pulses, {} samples each: max E_N {:.2e} ({:.2g} of rounding floor); undriven with bath: max E_N over "
                      "trajectory {:.4f}, E_N(t_f) = {:.1f}",
                      pulses.size(), samples.size(), closed_max, closed_ratio, undriven_max, undriven_end)};
}

Outcome criterion_7() {
  int disagreements = 0, points = 0;
  double crossing = 0.0;
  for (double beta : {0.1, 0.5, 1.0, 2.0, 10.0}) {
    const double c = 1.0 / std::tanh(beta / 2.0);
    auto state = [&](double r) {
      NormalModeState nm;
      nm.transform = normal_mode_transform();
      nm.sigma.topLeftCorner<2, 2>() = 0.5 * c * Eigen::Matrix2d::Identity();
      nm.sigma.bottomRightCorner<2, 2>() = SqueezingParams{r, 0.0, 1.0}.reconstruct();
      return CovarianceMatrix(nm.to_local());
    };
    for (int i = 0; i <= 10; ++i, ++points) {
      const double r = 0.2 * i;
      const auto b = temperature_bound_check(r, beta);
      if (b.satisfied != (det_gamma(state(r)) < 0.0)) ++disagreements;
    }
    // Bisect the sign change of det gamma in r.
    double lo = 0.0, hi = 3.0;
    for (int k = 0; k < 200; ++k) {
      const double mid = 0.5 * (lo + hi);
      (det_gamma(state(mid)) < 0.0 ? hi : lo) = mid;
    }
    crossing = std::max(crossing, std::abs(0.5 * (lo + hi) - temperature_threshold(beta)));
  }
  return {disagreements == 0 && crossing <= 1e-9,
          fmt::format("{} grid points, {} sign disagreements; max |zero crossing - threshold| = {:.2e}", points,
                      disagreements, crossing)};
}

Outcome criterion_8(Runs& runs) {
  const double beta = 0.1;
  const auto& report = runs.get(DriveMode::symmetric, beta);
  const BathSpec spec = default_spec(beta);
  const DiscretizedBath bath = discretize(spec);
  IntegrationSettings s;
  s.retain_full_state = true;
  const std::vector<double> end{kTf};
  const auto r = continue_free(propagate(thermal_initial_covariance(bath, beta), report.best_pulse, bath, s, end),
                               bath, 2.0 * kPi, 200);
  double min_en = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.times[i] >= kTf) min_en = std::min(min_en, r.log_negativity(i));
  }
  return {min_en > 0.0, fmt::format("beta = 0.1, E_N(t_f) = {:.4f}; min E_N on [t_f, t_f + 2 pi] ({} samples) = {:.4f}",
                                    report.best.log_negativity, r.size(), min_en)};
}

Outcome criterion_9(Runs& runs) {
  std::vector<double> e;
  for (double beta : {1.0, 0.5, 0.1}) e.push_back(runs.get(DriveMode::symmetric, beta).best.log_negativity);
  const bool ok = e[1] <= 1.1 * e[0] && e[2] <= 1.1 * e[1];
  return {ok, fmt::format("best symmetric E_N(t_f): beta 1 -> {:.4f}, 0.5 -> {:.4f}, 0.1 -> {:.4f}", e[0], e[1], e[2])};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  Runs runs;
  const std::vector<std::function<Outcome()>> criteria{
      criterion_1, criterion_2, [&] { return criterion_3(runs); }, criterion_4, [&] { return criterion_5(runs); },
      criterion_6, criterion_7, [&] { return criterion_8(runs); },
      [&] { return criterion_9(runs); }};
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k]();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    if (!o.pass) ++failures;
    fmt::print("criterion {}: {} ({:.1f} s) {}\n", id, o.pass ? "PASS" : "FAIL", seconds_since(t0), o.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
