#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bathent/bath.hpp"
#include "bathent/gaussian.hpp"
#include "bathent/propagation.hpp"
#include "bathent/pulse.hpp"

namespace bathent {

/// Shape of the pulses an objective accepts.
struct PulseTemplate {
  double t_final = 0.0;
  int n_segments = 48;
  DriveMode mode = DriveMode::symmetric;
  double bound = 4.0;

  void validate() const;
  bool matches(const ControlPulse& pulse) const;
  int n_parameters() const { return mode == DriveMode::free ? 2 * n_segments : n_segments; }
  ControlPulse make(std::span<const double> params) const;
  ControlPulse zero() const;
  ControlPulse resonance_seed(double amplitude) const;
};

/// One objective evaluation at the final time.
struct ObjectiveValue {
  /// E_N(t_f) - lambda * roughness.
  double value = 0.0;
  /// -ln nu(t_f) - lambda * roughness; the quantity the optimizer ascends.
  double surrogate = 0.0;
  double log_negativity = 0.0;
  double neg_log_nu = 0.0;
  double roughness = 0.0;
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Zero();
};

struct ObjectiveGradient {
  ObjectiveValue at;
  /// d surrogate / d parameter, ordered as `ControlPulse::parameters`.
  std::vector<double> gradient;
  /// The smallest symplectic eigenvalue was degenerate; the gradient is a one-sided choice.
  bool degenerate = false;
};

/// End-time entanglement of the full model as a function of the pulse.
class Objective {
 public:
  Objective(PulseTemplate pulse_template, std::shared_ptr<const DiscretizedBath> bath,
            std::shared_ptr<const CovarianceMatrix> initial, double lambda = 1e-3, IntegrationSettings settings = {});

  const PulseTemplate& pulse_template() const { return template_; }
  const DiscretizedBath& bath() const { return *bath_; }
  const CovarianceMatrix& initial() const { return *initial_; }
  double lambda() const { return lambda_; }
  const IntegrationSettings& settings() const { return settings_; }
  /// Same model and initial state with different integration settings.
  Objective with_settings(IntegrationSettings settings) const {
    return Objective(template_, bath_, initial_, lambda_, settings);
  }

  /// E_N(sigma(t_f)) - lambda * roughness.
  double evaluate(const ControlPulse& pulse) const;
  ObjectiveValue evaluate_full(const ControlPulse& pulse) const;
  ObjectiveGradient gradient(const ControlPulse& pulse) const;

 private:
  void check(const ControlPulse& pulse) const;
  double regularization(const ControlPulse& pulse) const;

  PulseTemplate template_;
  std::shared_ptr<const DiscretizedBath> bath_;
  std::shared_ptr<const CovarianceMatrix> initial_;
  double lambda_;
  IntegrationSettings settings_;
};

/// Builds the standard objective: factorized initial state (system vacuum, bath thermal at spec.beta).
Objective make_objective(const BathSpec& spec, const PulseTemplate& pulse_template, double lambda,
                         const IntegrationSettings& settings = {});

struct GradientCheck {
  /// max_i |g_i - fd_i| / max_i |fd_i|.
  double max_relative_error = 0.0;
  double step = 1e-5;
  std::vector<double> adjoint;
  std::vector<double> finite_difference;
};

/// Central finite differences of the surrogate, one parameter at a time (the first
/// `max_parameters`, all when negative). Evaluation points may leave the bound by `step`.
GradientCheck check_gradient(const Objective& objective, const ControlPulse& pulse, double step = 1e-5,
                             int max_parameters = -1);

struct OptimizerSettings {
  std::uint64_t seed = 1;
  /// Cap on objective evaluations (a value-and-gradient evaluation counts once).
  int budget = 2000;
  int multistart = 8;
  int workers = 1;
  /// Amplitude of the parametric-resonance seed, as a fraction of the bound.
  double resonance_fraction = 0.25;
  /// Largest per-parameter change of the first step of every start.
  double initial_step = 0.25;
  /// Run the starts on a reduced bath and polish the best one on the full model.
  bool fast_inner_loop = true;
  int reduced_modes = 200;
  double reduced_omega_max = 20.0;
  /// Evaluations reserved for the full-model polish when the fast inner loop is on.
  int polish_budget = 24;
  /// Search evaluations reject tr sigma(t_f) above this fraction of max_variance_trace, so the
  /// sampled trajectory of the result, which may peak before t_f, stays within the full guard.
  double trace_headroom = 0.1;
  /// Parameters checked against finite differences at the start of the run (0 disables).
  int gradient_check_parameters = 8;
  /// Samples of the final trajectory (uniform on [0, t_f], plus t_f).
  int samples = 200;
};

struct TraceEntry {
  int evaluation = 0;
  int start = 0;
  /// "inner" (reduced bath) or "full".
  std::string model;
  double value = 0.0;
  double surrogate = 0.0;
  double log_negativity = 0.0;
  /// Best full-model value so far; inner-loop entries carry the last full-model value.
  double best_value = 0.0;
  bool accepted = false;
};

struct OptimizationReport {
  ControlPulse best_pulse;
  ObjectiveValue best;
  std::vector<TraceEntry> trace;
  std::optional<GradientCheck> gradient_check;
  PropagationResult final_result;
  int evaluations = 0;
  int full_evaluations = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  bool no_entanglement_found = false;
  int degenerate_gradients = 0;
  int failed_evaluations = 0;
  /// Better full-model points skipped because their sampled trajectory exceeded the trace guard.
  int trajectory_rejections = 0;
};

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo backtracking from
/// several starts (parametric-resonance seed first, then random pulses drawn from `seed`).
OptimizationReport optimize(const Objective& objective, const BathSpec& spec, const OptimizerSettings& settings);

}  // namespace bathent
