#pragma once

#include <vector>

#include <Eigen/Dense>

namespace bathent {

/// Second cumulants of a Gaussian state over modes ordered (q_1, p_1, q_2, p_2, ...).
///
/// Units are dimensionless with vacuum variance 1/2 per quadrature. The
/// constructor checks shape and symmetry only; positive definiteness and the
/// uncertainty principle are checked by `require_positive_definite` and
/// `is_physical`, which cost an eigen-decomposition.
class CovarianceMatrix {
 public:
  explicit CovarianceMatrix(Eigen::MatrixXd entries);

  static CovarianceMatrix vacuum(int n_modes);
  /// Every mode thermal at unit frequency: variance coth(beta/2)/2 per quadrature.
  static CovarianceMatrix thermal(int n_modes, double beta);
  static CovarianceMatrix two_mode_squeezed_vacuum(double r);

  int dim() const { return static_cast<int>(entries_.rows()); }
  int n_modes() const { return dim() / 2; }
  const Eigen::MatrixXd& matrix() const { return entries_; }
  double operator()(int i, int j) const { return entries_(i, j); }

  /// 2x2 block coupling mode `i` (rows) to mode `j` (columns).
  Eigen::Matrix2d block(int i, int j) const;
  /// Two-mode blocks: alpha = mode A, block_b = mode B, gamma = A-B cross block.
  Eigen::Matrix2d alpha() const { return block(0, 0); }
  Eigen::Matrix2d block_b() const { return block(1, 1); }
  Eigen::Matrix2d gamma() const { return block(0, 1); }

  /// Throws InvalidStateError unless the smallest eigenvalue exceeds 1e-12 of the largest.
  void require_positive_definite() const;
  /// All vacuum-normalized symplectic eigenvalues >= 1 - tol.
  bool is_physical(double tol = 1e-9) const;

  bool operator==(const CovarianceMatrix& other) const { return entries_ == other.entries_; }

 private:
  Eigen::MatrixXd entries_;
};

/// Block-diagonal [[0, 1], [-1, 0]] per mode.
Eigen::MatrixXd symplectic_form(int dim);

/// Vacuum-normalized symplectic eigenvalues (vacuum -> 1), ascending, one per mode.
std::vector<double> symplectic_eigenvalues(const CovarianceMatrix& sigma);

/// Flips the sign of the momentum of `mode_index` (row and column).
CovarianceMatrix partial_transpose(const CovarianceMatrix& sigma, int mode_index);

/// Smallest symplectic eigenvalue of the state partially transposed on mode B.
double smallest_pt_symplectic_eigenvalue(const CovarianceMatrix& sigma);

/// max{0, -ln nu}, nu = smallest_pt_symplectic_eigenvalue. Requires a 4x4 state.
double log_negativity(const CovarianceMatrix& sigma);

/// -ln nu without the clamp at zero; negative for separable states.
double neg_log_nu(const CovarianceMatrix& sigma);

/// Closed-form nu from the determinant invariants of the 2x2 blocks.
double two_mode_nu_oracle(const CovarianceMatrix& sigma);

double det_gamma(const CovarianceMatrix& sigma);

/// -ln nu and its derivative with respect to the (symmetric) 4x4 covariance entries.
struct NegLogNuGradient {
  double value = 0.0;
  Eigen::Matrix4d gradient = Eigen::Matrix4d::Zero();
  /// nu_- and nu_+ coincide to 1e-9; the gradient belongs to a perturbed branch.
  bool degenerate = false;
};
NegLogNuGradient neg_log_nu_gradient(const Eigen::Matrix4d& sigma);

// Square-root representation sigma = F^T F. Strongly squeezed states lose about
// half their significant digits when the symplectic spectrum is taken from sigma
// itself; working on F keeps the error at machine precision relative to nu.

/// Upper-triangular F with F^T F = M M^T, for any dim x k factor M.
Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& m);

/// Vacuum-normalized symplectic eigenvalues of F^T F, ascending.
std::vector<double> symplectic_eigenvalues_from_root(const Eigen::MatrixXd& f);

/// -ln nu of the two-mode state F^T F with the gradient taken with respect to sigma.
NegLogNuGradient neg_log_nu_gradient_from_root(const Eigen::Matrix4d& f);

struct PhaseSpaceGrid {
  double q_min = -5.0;
  double q_max = 5.0;
  double p_min = -5.0;
  double p_max = 5.0;
  int nq = 101;
  int np = 101;

  double q(int i) const;
  double p(int j) const;
};

/// Gaussian Wigner density of a single mode sampled on `grid`; rows index Q, columns P.
Eigen::MatrixXd wigner_grid(const CovarianceMatrix& sigma, const Eigen::Vector2d& means,
                            const PhaseSpaceGrid& grid);
/// Same for sigma = R^T R; stays accurate for strongly squeezed modes.
Eigen::MatrixXd wigner_grid_from_root(const Eigen::Matrix2d& r, const Eigen::Vector2d& means,
                                      const PhaseSpaceGrid& grid);

}  // namespace bathent
