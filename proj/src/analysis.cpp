#include "bathent/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "bathent/errors.hpp"

namespace bathent {

namespace {

constexpr double kCrossTolerance = 1e-9;

double axis_distance(double phi_a, double phi_b) {
  // Angles are defined mod pi.
  double d = std::fmod(std::abs(phi_a - phi_b), std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

}  // namespace

Eigen::Matrix4d normal_mode_transform() {
  const double s = std::numbers::sqrt2 / 2.0;
  Eigen::Matrix4d t;
  t << s, 0, s, 0,
       0, s, 0, s,
       s, 0, -s, 0,
       0, s, 0, -s;
  return t;
}

NormalModeState to_normal_modes(const CovarianceMatrix& sigma) {
  if (sigma.dim() != 4) throw InvalidStateError(fmt::format("normal modes need a 4x4 covariance, got {}", sigma.dim()));
  NormalModeState nm;
  nm.transform = normal_mode_transform();
  nm.sigma = nm.transform * sigma.matrix() * nm.transform.transpose();
  return nm;
}

NormalModeState to_normal_modes_from_root(const Eigen::Matrix4d& f) {
  NormalModeState nm;
  nm.transform = normal_mode_transform();
  const Eigen::Matrix4d g = f * nm.transform.transpose();
  nm.sigma = g.transpose() * g;
  nm.root = covariance_root(g.transpose());
  return nm;
}

Eigen::Matrix2d NormalModeState::marginal_root(int k) const {
  if (!root) throw InvalidStateError("normal-mode state carries no root");
  if (k == 0) return root->topLeftCorner<2, 2>();
  if (k == 1) return covariance_root(root->rightCols<2>().transpose());
  throw std::out_of_range(fmt::format("normal-mode marginal {} out of range", k));
}

Eigen::Matrix2d SqueezingParams::reconstruct() const {
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(phi).toRotationMatrix();
  const Eigen::Vector2d d(std::exp(2.0 * r), std::exp(-2.0 * r));
  return 0.5 * a * rot * d.asDiagonal() * rot.transpose();
}

namespace {

SqueezingParams decompose(const Eigen::Matrix2d& sigma, double det) {
  const double tr = sigma(0, 0) + sigma(1, 1);
  if (!(det > 0.0) || !(tr > 0.0)) {
    throw InvalidStateError(fmt::format("squeezing decomposition needs a positive definite matrix (det {:.3e})", det));
  }
  SqueezingParams out;
  const double root_det = std::sqrt(det);
  out.a = 2.0 * root_det;
  // cosh 2r = tr / (2 sqrt det); sinh 2r from the eigenvalue gap keeps small r accurate.
  const double half_gap = std::hypot(0.5 * (sigma(0, 0) - sigma(1, 1)), sigma(0, 1));
  out.r = 0.5 * std::asinh(half_gap / root_det);
  if (half_gap > 0.0) {
    double phi = 0.5 * std::atan2(2.0 * sigma(0, 1), sigma(0, 0) - sigma(1, 1));
    if (phi < 0.0) phi += std::numbers::pi;
    if (phi >= std::numbers::pi) phi -= std::numbers::pi;
    out.phi = phi;
  }
  return out;
}

}  // namespace

SqueezingParams squeezing_decomposition(const Eigen::Matrix2d& sigma) {
  if (!sigma.allFinite() || std::abs(sigma(0, 1) - sigma(1, 0)) > 1e-12 * sigma.cwiseAbs().maxCoeff()) {
    throw InvalidStateError("squeezing decomposition needs a symmetric 2x2 matrix");
  }
  return decompose(sigma, sigma(0, 0) * sigma(1, 1) - sigma(0, 1) * sigma(0, 1));
}

SqueezingParams squeezing_decomposition_from_root(const Eigen::Matrix2d& r) {
  if (!r.allFinite()) throw InvalidStateError("squeezing decomposition: non-finite root");
  const double d = r(0, 0) * r(1, 1) - r(0, 1) * r(1, 0);
  return decompose(r.transpose() * r, d * d);
}

DetGammaDecomposition det_gamma_decomposition(const NormalModeState& nm, double cross_tolerance) {
  DetGammaDecomposition d;
  const Eigen::Matrix2d p = nm.plus();
  const Eigen::Matrix2d m = nm.minus();
  d.delta_q = p(0, 0) - m(0, 0);
  d.delta_p = p(1, 1) - m(1, 1);
  d.cross = p(0, 1) - m(0, 1);
  d.four_det_gamma = d.delta_p * d.delta_q - d.cross * d.cross;
  d.cross_block_norm = nm.cross().cwiseAbs().maxCoeff();
  d.cross_correlated = d.cross_block_norm > cross_tolerance;
  return d;
}

TemperatureBound temperature_bound_check(double r_minus, double beta) {
  if (!(beta > 0.0)) throw ConfigError(fmt::format("beta must be positive, got {}", beta));
  TemperatureBound b;
  b.margin = std::cosh(2.0 * r_minus) - 1.0 / std::tanh(beta);
  b.satisfied = b.margin > 0.0;
  return b;
}

double temperature_threshold(double beta) {
  if (!(beta > 0.0)) throw ConfigError(fmt::format("beta must be positive, got {}", beta));
  return 0.5 * std::acosh(1.0 / std::tanh(beta));
}

double mode_count_estimate(double e_n) {
  if (!(e_n >= 0.0)) throw ConfigError(fmt::format("E_N must be non-negative, got {}", e_n));
  return 0.5 * std::exp(e_n);
}

std::string to_string(EprLabel label) {
  switch (label) {
    case EprLabel::epr: return "EPR";
    case EprLabel::semi_epr: return "semi-EPR";
    case EprLabel::neither: return "neither";
  }
  return "neither";
}

SemiEprReport semi_epr_report(const NormalModeState& nm, const SemiEprThresholds& th) {
  SemiEprReport rep;
  if (nm.root) {
    rep.plus = squeezing_decomposition_from_root(nm.marginal_root(0));
    rep.minus = squeezing_decomposition_from_root(nm.marginal_root(1));
  } else {
    rep.plus = squeezing_decomposition(nm.plus());
    rep.minus = squeezing_decomposition(nm.minus());
  }
  const Eigen::Matrix2d p = nm.plus();
  const double mean = 0.5 * p.trace();
  rep.plus_thermal_distance = std::max(std::abs(p(0, 0) - p(1, 1)) / 2.0, std::abs(p(0, 1))) / mean;
  rep.cross_block_norm = nm.cross().cwiseAbs().maxCoeff();
  rep.cross_correlated = rep.cross_block_norm > kCrossTolerance;
  if (rep.cross_correlated) rep.normal_mode_sigma = nm.sigma;

  const bool squeezed_minus = rep.minus.r >= th.min_minus_squeezing;
  // EPR: equal and opposite squeezing of + and -, i.e. equal r on orthogonal axes, both pure.
  const bool epr = squeezed_minus && !rep.cross_correlated &&
                   std::abs(rep.plus.r - rep.minus.r) < th.epr_tolerance &&
                   std::abs(axis_distance(rep.plus.phi, rep.minus.phi) - std::numbers::pi / 2.0) < th.epr_tolerance &&
                   std::abs(rep.plus.a - 1.0) < th.epr_tolerance && std::abs(rep.minus.a - 1.0) < th.epr_tolerance;
  const bool semi = squeezed_minus && rep.plus.r < th.max_plus_squeezing &&
                    rep.plus_thermal_distance <= th.thermal_tolerance;
  rep.label = epr ? EprLabel::epr : semi ? EprLabel::semi_epr : EprLabel::neither;
  return rep;
}

}  // namespace bathent
