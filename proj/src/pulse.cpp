#include "bathent/pulse.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "bathent/errors.hpp"

namespace bathent {

std::string to_string(DriveMode mode) {
  switch (mode) {
    case DriveMode::symmetric: return "symmetric";
    case DriveMode::single_site: return "single_site";
    case DriveMode::free: return "free";
  }
  return "free";
}

DriveMode drive_mode_from_string(const std::string& name) {
  if (name == "symmetric") return DriveMode::symmetric;
  if (name == "single_site") return DriveMode::single_site;
  if (name == "free") return DriveMode::free;
  throw ConfigError(fmt::format("unknown drive mode '{}' (expected symmetric, single_site or free)", name));
}

ControlPulse::ControlPulse(double t_final, DriveMode mode, double bound, std::vector<double> values_a,
                           std::vector<double> values_b)
    : t_final_(t_final), mode_(mode), bound_(bound), values_a_(std::move(values_a)), values_b_(std::move(values_b)) {
  if (!(t_final_ > 0.0)) throw ConfigError(fmt::format("pulse t_f must be > 0, got {}", t_final_));
  if (!(bound_ >= 0.0)) throw ConfigError(fmt::format("pulse bound must be >= 0, got {}", bound_));
  if (values_a_.empty()) throw ConfigError("pulse needs at least one segment");
  if (values_b_.size() != values_a_.size()) {
    throw ConfigError(fmt::format("pulse channels differ in length ({} vs {})", values_a_.size(), values_b_.size()));
  }
  for (std::size_t i = 0; i < values_a_.size(); ++i) {
    const double a = values_a_[i];
    const double b = values_b_[i];
    if (!std::isfinite(a) || !std::isfinite(b) || std::abs(a) > bound_ || std::abs(b) > bound_) {
      throw ConfigError(fmt::format("pulse segment {} amplitude ({}, {}) violates bound {}", i, a, b, bound_));
    }
    if (mode_ == DriveMode::symmetric && a != b) {
      throw ConfigError(fmt::format("symmetric pulse has u_A != u_B on segment {}", i));
    }
    if (mode_ == DriveMode::single_site && b != 0.0) {
      throw ConfigError(fmt::format("single-site pulse has u_B != 0 on segment {}", i));
    }
  }
}

ControlPulse ControlPulse::zero(double t_final, int n_segments, DriveMode mode, double bound) {
  if (n_segments < 1) throw ConfigError(fmt::format("pulse needs at least one segment, got {}", n_segments));
  std::vector<double> z(n_segments, 0.0);
  return ControlPulse(t_final, mode, bound, z, z);
}

ControlPulse ControlPulse::parametric_resonance(double t_final, int n_segments, DriveMode mode, double bound,
                                                double amplitude) {
  if (n_segments < 1) throw ConfigError(fmt::format("pulse needs at least one segment, got {}", n_segments));
  const double a = std::min(std::abs(amplitude), bound);
  std::vector<double> params(mode == DriveMode::free ? 2 * n_segments : n_segments);
  const double len = t_final / n_segments;
  for (int i = 0; i < n_segments; ++i) {
    const double mid = (i + 0.5) * len;
    const auto half_period = static_cast<long>(std::floor(mid / (0.5 * std::numbers::pi)));
    params[i] = half_period % 2 == 0 ? a : -a;
    if (mode == DriveMode::free) params[n_segments + i] = params[i];
  }
  return from_parameters(t_final, n_segments, mode, bound, params);
}

ControlPulse ControlPulse::from_parameters(double t_final, int n_segments, DriveMode mode, double bound,
                                           std::span<const double> params) {
  const std::size_t n = static_cast<std::size_t>(n_segments);
  const std::size_t expected = mode == DriveMode::free ? 2 * n : n;
  if (params.size() != expected) {
    throw ConfigError(fmt::format("pulse expects {} parameters, got {}", expected, params.size()));
  }
  std::vector<double> a(params.begin(), params.begin() + n);
  std::vector<double> b;
  switch (mode) {
    case DriveMode::symmetric: b = a; break;
    case DriveMode::single_site: b.assign(n, 0.0); break;
    case DriveMode::free: b.assign(params.begin() + n, params.end()); break;
  }
  return ControlPulse(t_final, mode, bound, std::move(a), std::move(b));
}

int ControlPulse::segment_at(double t) const {
  const int i = static_cast<int>(std::floor(t / segment_length()));
  return std::clamp(i, 0, n_segments() - 1);
}

std::vector<double> ControlPulse::parameters() const {
  std::vector<double> p = values_a_;
  if (mode_ == DriveMode::free) p.insert(p.end(), values_b_.begin(), values_b_.end());
  return p;
}

int ControlPulse::n_parameters() const { return mode_ == DriveMode::free ? 2 * n_segments() : n_segments(); }

namespace {
double channel_roughness(const std::vector<double>& v) {
  double r = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) r += (v[i + 1] - v[i]) * (v[i + 1] - v[i]);
  return r;
}
}  // namespace

double ControlPulse::roughness() const {
  double r = channel_roughness(values_a_);
  if (mode_ == DriveMode::free) r += channel_roughness(values_b_);
  return r;
}

ControlPulse ControlPulse::swapped() const {
  const DriveMode mode = mode_ == DriveMode::symmetric ? DriveMode::symmetric : DriveMode::free;
  return ControlPulse(t_final_, mode, bound_, values_b_, values_a_);
}

std::vector<double> roughness_gradient(std::span<const double> values) {
  std::vector<double> g(values.size(), 0.0);
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    const double d = 2.0 * (values[i + 1] - values[i]);
    g[i] -= d;
    g[i + 1] += d;
  }
  return g;
}

}  // namespace bathent
