#pragma once

#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "bathent/analysis.hpp"
#include "bathent/bath.hpp"
#include "bathent/control.hpp"
#include "bathent/gaussian.hpp"
#include "bathent/propagation.hpp"

namespace bathent {

enum class PulseSource { zero, resonance, file };

/// Everything one CLI run needs, with defaults for every field.
struct RunConfig {
  std::string scenario = "default";
  BathSpec bath;
  PulseTemplate pulse{6.0 * std::numbers::pi, 48, DriveMode::symmetric, 4.0};
  /// Pulse used by `simulate`.
  PulseSource source = PulseSource::zero;
  double resonance_amplitude = 1.0;
  std::string pulse_file;

  IntegrationSettings integration;
  /// Uniform samples on [0, t_f] (plus t_f).
  int samples = 200;

  OptimizerSettings optimizer;
  double lambda = 1e-3;

  /// Undriven evolution after t_f (0 disables) and its sample count.
  double continuation = 0.0;
  int continuation_samples = 50;

  PhaseSpaceGrid wigner;
  SemiEprThresholds thresholds;

  std::string sweep_axis;
  std::vector<double> sweep_values;

  std::string output_dir = "out";

  /// Checks cross-field invariants; throws ConfigError.
  void validate() const;
};

/// Parses YAML text. Errors name the source, line and column of the offending key.
RunConfig parse_config(const std::string& text, const std::string& source_name = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration as YAML; parse_config of the output reproduces the input config.
std::string effective_config_yaml(const RunConfig& config);

/// Applies one sweep value to a copy of `base`. Axis: beta, eta, t_f or n_segments.
RunConfig with_sweep_value(const RunConfig& base, const std::string& axis, double value);

std::string to_string(PulseSource source);

}  // namespace bathent
