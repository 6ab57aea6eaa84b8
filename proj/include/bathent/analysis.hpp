#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "bathent/gaussian.hpp"

namespace bathent {

/// Two-mode state in the (Q_+, P_+, Q_-, P_-) basis, X_+- = (x_A +- x_B) / sqrt 2.
struct NormalModeState {
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Zero();
  /// Orthogonal symplectic T with sigma_normal = T sigma_local T^T.
  Eigen::Matrix4d transform = Eigen::Matrix4d::Zero();
  /// Upper-triangular root of `sigma` when the state came with one (sigma = root^T root).
  std::optional<Eigen::Matrix4d> root;

  Eigen::Matrix2d plus() const { return sigma.topLeftCorner<2, 2>(); }
  Eigen::Matrix2d minus() const { return sigma.bottomRightCorner<2, 2>(); }
  Eigen::Matrix2d cross() const { return sigma.topRightCorner<2, 2>(); }
  /// Back to (q_A, p_A, q_B, p_B).
  Eigen::Matrix4d to_local() const { return transform.transpose() * sigma * transform; }
  /// 2x2 root of the + (k = 0) or - (k = 1) marginal; requires `root`.
  Eigen::Matrix2d marginal_root(int k) const;
};

Eigen::Matrix4d normal_mode_transform();
NormalModeState to_normal_modes(const CovarianceMatrix& sigma);
/// From a local-basis root F (sigma = F^T F); keeps strongly squeezed marginals accurate.
NormalModeState to_normal_modes_from_root(const Eigen::Matrix4d& f);

/// sigma = (a/2) R(phi) diag(e^{2r}, e^{-2r}) R(phi)^T with r >= 0 and phi in [0, pi).
struct SqueezingParams {
  double r = 0.0;
  double phi = 0.0;
  double a = 1.0;

  Eigen::Matrix2d reconstruct() const;
};

/// Throws InvalidStateError unless `sigma` is symmetric positive definite. phi = 0 when r = 0.
SqueezingParams squeezing_decomposition(const Eigen::Matrix2d& sigma);
/// Same for sigma = R^T R, with det sigma taken from R.
SqueezingParams squeezing_decomposition_from_root(const Eigen::Matrix2d& r);

struct DetGammaDecomposition {
  double delta_q = 0.0;
  double delta_p = 0.0;
  /// <Q_+ P_+> - <Q_- P_->.
  double cross = 0.0;
  /// delta_p * delta_q - cross^2; equals 4 det gamma when the +- cross block vanishes.
  double four_det_gamma = 0.0;
  /// The +- cross block exceeded the tolerance, so the identity with det gamma does not hold.
  bool cross_correlated = false;
  double cross_block_norm = 0.0;
};

DetGammaDecomposition det_gamma_decomposition(const NormalModeState& nm, double cross_tolerance = 1e-9);

struct TemperatureBound {
  bool satisfied = false;
  /// cosh 2 r_- - coth beta.
  double margin = 0.0;
};

/// Entanglement condition cosh 2 r_- > coth beta for a thermal Q_+ mode and aligned squeezed Q_-.
TemperatureBound temperature_bound_check(double r_minus, double beta);
/// Smallest r_- meeting the bound: arccosh(coth beta) / 2.
double temperature_threshold(double beta);

/// Number of two-mode states needed to carry E_N: exp(E_N) / 2.
double mode_count_estimate(double e_n);

struct SemiEprThresholds {
  /// EPR: | r_+ - r_- | below this, squeezing axes orthogonal within it (radians), a_+- within it of 1.
  double epr_tolerance = 0.05;
  /// Minimum r_- for either label.
  double min_minus_squeezing = 0.2;
  /// Semi-EPR: r_+ below this.
  double max_plus_squeezing = 0.1;
  /// Semi-EPR: + marginal within this relative max-norm distance of a thermal state.
  double thermal_tolerance = 0.1;
};

enum class EprLabel { epr, semi_epr, neither };
std::string to_string(EprLabel label);

struct SemiEprReport {
  SqueezingParams plus;
  SqueezingParams minus;
  /// max-norm distance of the + marginal from (tr/2) I, relative to tr/2.
  double plus_thermal_distance = 0.0;
  EprLabel label = EprLabel::neither;
  /// Norm of the +- cross block; when above 1e-9 the +- description is incomplete.
  double cross_block_norm = 0.0;
  bool cross_correlated = false;
  /// Full normal-mode covariance, for states with +- correlations.
  Eigen::Matrix4d normal_mode_sigma = Eigen::Matrix4d::Zero();
};

SemiEprReport semi_epr_report(const NormalModeState& nm, const SemiEprThresholds& thresholds = {});

}  // namespace bathent
