#pragma once

#include <span>
#include <string>
#include <vector>

namespace bathent {

enum class DriveMode { symmetric, single_site, free };

std::string to_string(DriveMode mode);
DriveMode drive_mode_from_string(const std::string& name);

/// Piecewise-constant local drives u_A(t), u_B(t) on [0, t_f] with |u| <= bound.
///
/// Symmetric pulses keep u_B == u_A and single-site pulses keep u_B == 0; the
/// invariants are enforced on construction and by `from_parameters`.
class ControlPulse {
 public:
  ControlPulse(double t_final, DriveMode mode, double bound, std::vector<double> values_a,
               std::vector<double> values_b);

  static ControlPulse zero(double t_final, int n_segments, DriveMode mode, double bound);
  /// Square wave of amplitude `amplitude` and period pi (twice the bare frequency).
  static ControlPulse parametric_resonance(double t_final, int n_segments, DriveMode mode, double bound,
                                           double amplitude);
  /// Builds a pulse from the optimizer's free parameters (see `parameters`).
  static ControlPulse from_parameters(double t_final, int n_segments, DriveMode mode, double bound,
                                      std::span<const double> params);

  double t_final() const { return t_final_; }
  int n_segments() const { return static_cast<int>(values_a_.size()); }
  double segment_length() const { return t_final_ / n_segments(); }
  double segment_start(int i) const { return i * segment_length(); }
  double segment_end(int i) const { return i + 1 == n_segments() ? t_final_ : (i + 1) * segment_length(); }
  DriveMode mode() const { return mode_; }
  double bound() const { return bound_; }
  const std::vector<double>& values_a() const { return values_a_; }
  const std::vector<double>& values_b() const { return values_b_; }

  int segment_at(double t) const;
  double u_a(double t) const { return values_a_[segment_at(t)]; }
  double u_b(double t) const { return values_b_[segment_at(t)]; }

  /// Independent amplitudes: values_a for symmetric and single-site, values_a then values_b for free.
  std::vector<double> parameters() const;
  int n_parameters() const;

  /// Sum over independent channels of (u_{i+1} - u_i)^2.
  double roughness() const;

  /// Pulse with u_A and u_B exchanged (mode becomes free unless symmetric).
  ControlPulse swapped() const;

  bool operator==(const ControlPulse& other) const = default;

 private:
  double t_final_;
  DriveMode mode_;
  double bound_;
  std::vector<double> values_a_;
  std::vector<double> values_b_;
};

/// Gradient of `ControlPulse::roughness` with respect to one channel's amplitudes.
std::vector<double> roughness_gradient(std::span<const double> values);

}  // namespace bathent
