#include "bathent/bath.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "bathent/errors.hpp"

namespace bathent {

std::string to_string(GridKind kind) { return kind == GridKind::linear ? "linear" : "composite"; }

GridKind grid_kind_from_string(const std::string& name) {
  if (name == "linear") return GridKind::linear;
  if (name == "composite") return GridKind::composite;
  throw ConfigError(fmt::format("unknown grid kind '{}' (expected linear or composite)", name));
}

void BathSpec::validate() const {
  if (!(eta >= 0.0)) throw ConfigError(fmt::format("bath.eta must be >= 0, got {}", eta));
  if (!(omega_c > 0.0)) throw ConfigError(fmt::format("bath.omega_c must be > 0, got {}", omega_c));
  if (!(beta > 0.0)) throw ConfigError(fmt::format("bath.beta must be > 0, got {}", beta));
  if (n_modes < 1) throw ConfigError(fmt::format("bath.n_modes must be >= 1, got {}", n_modes));
  if (!(omega_max > 0.0)) throw ConfigError(fmt::format("bath.omega_max must be > 0, got {}", omega_max));
  if (grid_kind == GridKind::composite) {
    if (!(linear_cutoff > 0.0 && linear_cutoff < omega_max)) {
      throw ConfigError(fmt::format("bath.linear_cutoff must lie in (0, omega_max={}), got {}", omega_max,
                                    linear_cutoff));
    }
    const int nl = resolved_n_linear();
    if (nl < 1 || nl >= n_modes) {
      throw ConfigError(fmt::format("bath.n_linear must lie in [1, n_modes-1], got {}", nl));
    }
  }
}

int BathSpec::resolved_n_linear() const { return n_linear > 0 ? n_linear : n_modes - n_modes / 6; }

double spectral_density(const BathSpec& spec, double omega) {
  const double x = omega / spec.omega_c;
  const double d = 1.0 + x * x;
  return spec.eta * omega / (d * d);
}

double DiscretizedBath::min_cell_width() const {
  double m = std::numeric_limits<double>::infinity();
  for (double w : cell_widths) m = std::min(m, w);
  return m;
}

double DiscretizedBath::recurrence_horizon() const {
  if (omegas.empty()) return std::numeric_limits<double>::infinity();
  return std::numbers::pi / min_cell_width();
}

DiscretizedBath discretize_on(const BathSpec& spec, std::vector<double> omegas, std::vector<double> cell_widths) {
  if (omegas.size() != cell_widths.size()) {
    throw ConfigError("bath grid: frequency and cell-width lists differ in length");
  }
  DiscretizedBath bath;
  bath.omegas = std::move(omegas);
  bath.cell_widths = std::move(cell_widths);
  const std::size_t n = bath.omegas.size();
  bath.couplings.resize(n);
  bath.masses.assign(n, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = bath.omegas[k];
    if (!(w > 0.0) || (k > 0 && !(w > bath.omegas[k - 1]))) {
      throw ConfigError("bath grid: frequencies must be positive and strictly increasing");
    }
    if (!(bath.cell_widths[k] > 0.0)) throw ConfigError("bath grid: cell widths must be positive");
    const double c2 = 2.0 / std::numbers::pi * bath.masses[k] * w * spectral_density(spec, w) * bath.cell_widths[k];
    bath.couplings[k] = std::sqrt(c2);
    bath.counterterm_sum += c2 / (2.0 * bath.masses[k] * w * w);
  }
  return bath;
}

DiscretizedBath discretize(const BathSpec& spec, std::optional<double> horizon) {
  spec.validate();
  std::vector<double> omegas;
  std::vector<double> widths;
  omegas.reserve(spec.n_modes);
  widths.reserve(spec.n_modes);

  auto add_linear = [&](double upper, int count) {
    const double dw = upper / count;
    for (int k = 1; k <= count; ++k) {
      omegas.push_back(k * dw);
      widths.push_back(dw);
    }
  };

  if (spec.grid_kind == GridKind::linear) {
    add_linear(spec.omega_max, spec.n_modes);
  } else {
    const int n_lin = spec.resolved_n_linear();
    const int n_log = spec.n_modes - n_lin;
    add_linear(spec.linear_cutoff, n_lin);
    const double ratio = std::log(spec.omega_max / spec.linear_cutoff);
    double previous = spec.linear_cutoff;
    for (int j = 1; j <= n_log; ++j) {
      const double w = j == n_log ? spec.omega_max : spec.linear_cutoff * std::exp(ratio * j / n_log);
      omegas.push_back(w);
      widths.push_back(w - previous);
      previous = w;
    }
  }

  DiscretizedBath bath = discretize_on(spec, std::move(omegas), std::move(widths));
  if (horizon && *horizon > bath.recurrence_horizon()) {
    const double needed = 2.0 * std::numbers::pi / (2.0 * *horizon);
    throw ConfigError(fmt::format(
        "bath grid too coarse for a run of length {:.4g}: recurrence time 2*pi/dw = {:.4g} must be at least "
        "twice the run length; reduce the finest cell width to <= {:.4g} (raise n_modes or n_linear)",
        *horizon, 2.0 * std::numbers::pi / bath.min_cell_width(), needed));
  }
  return bath;
}

DiscretizedBath empty_bath() { return DiscretizedBath{}; }

CovarianceMatrix thermal_initial_covariance(const DiscretizedBath& bath, double beta) {
  if (!(beta > 0.0)) throw ConfigError(fmt::format("beta must be > 0, got {}", beta));
  const int n = 4 + 2 * bath.n_modes();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < 4; ++i) s(i, i) = 0.5;
  for (int k = 0; k < bath.n_modes(); ++k) {
    const double w = bath.omegas[k];
    const double m = bath.masses[k];
    const double c = 1.0 / std::tanh(0.5 * beta * w);
    s(4 + 2 * k, 4 + 2 * k) = c / (2.0 * m * w);
    s(5 + 2 * k, 5 + 2 * k) = m * w * c / 2.0;
  }
  return CovarianceMatrix(std::move(s));
}

}  // namespace bathent
