#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bathent/gaussian.hpp"

namespace bathent {

enum class GridKind { linear, composite };

std::string to_string(GridKind kind);
GridKind grid_kind_from_string(const std::string& name);

/// Ohmic reservoir J(w) = eta w / (1 + w^2/wc^2)^2 at inverse temperature beta.
///
/// Frequencies are in units of the bare oscillator frequency. The composite
/// grid places `n_linear` modes uniformly on (0, linear_cutoff] and the rest
/// log-uniformly on (linear_cutoff, omega_max]; `n_linear = 0` means 5/6 of n_modes.
struct BathSpec {
  double eta = 0.1;
  double omega_c = 50.0;
  double beta = 1.0;
  int n_modes = 1200;
  double omega_max = 200.0;
  GridKind grid_kind = GridKind::composite;
  double linear_cutoff = 20.0;
  int n_linear = 0;

  void validate() const;
  int resolved_n_linear() const;
};

double spectral_density(const BathSpec& spec, double omega);

/// Harmonic bath modes with unit masses realizing J(w) on the chosen grid.
struct DiscretizedBath {
  std::vector<double> omegas;
  std::vector<double> couplings;
  std::vector<double> masses;
  std::vector<double> cell_widths;
  /// sum_k c_k^2 / (2 m_k w_k^2), evaluated on the discrete modes.
  double counterterm_sum = 0.0;

  int n_modes() const { return static_cast<int>(omegas.size()); }
  double omega_max() const { return omegas.empty() ? 0.0 : omegas.back(); }
  double min_cell_width() const;
  /// Longest run that stays clear of the discrete-spectrum recurrence at 2 pi / min cell width.
  double recurrence_horizon() const;
};

/// Places modes on the grid with c_k^2 = (2/pi) m_k w_k J(w_k) dw_k. When `horizon`
/// is given, throws ConfigError if 2 pi / min dw_k < 2 * horizon.
DiscretizedBath discretize(const BathSpec& spec, std::optional<double> horizon = std::nullopt);

/// A hand-built bath (frequencies and cell widths supplied by the caller).
DiscretizedBath discretize_on(const BathSpec& spec, std::vector<double> omegas, std::vector<double> cell_widths);

/// Bath with no modes (closed two-oscillator system).
DiscretizedBath empty_bath();

/// Both oscillators in the ground state, every bath mode thermal, no correlations.
CovarianceMatrix thermal_initial_covariance(const DiscretizedBath& bath, double beta);

}  // namespace bathent
