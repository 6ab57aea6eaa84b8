#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bathent/bath.hpp"
#include "bathent/gaussian.hpp"
#include "bathent/pulse.hpp"

namespace bathent {

enum class SplittingOrder { second = 2, fourth = 4 };

/// Step-size and bookkeeping options shared by every propagation entry point.
struct IntegrationSettings {
  /// Target step; 0 selects min(0.2 / omega_max, segment length / 8).
  double dt = 0.0;
  SplittingOrder order = SplittingOrder::fourth;
  /// Include the mu (q_A + q_B)^2 stiffness. Turning it off is only useful for diagnostics.
  bool counterterm = true;
  /// Keep what `continue_free` needs (initial state and drive history).
  bool retain_full_state = false;
  /// Random probe rows added to the symplectic residual check (in addition to the system rows).
  int symplectic_probes = 4;
  /// Throw PropagationError when a sample violates the uncertainty principle by more than this.
  double heisenberg_tolerance = 1e-7;
  /// Throw PropagationError when tr sigma of the reduced state exceeds this. Beyond it rounding
  /// in the propagator dominates the smallest symplectic eigenvalue and E_N stops being reliable.
  double max_variance_trace = 1e9;
};

/// Resolved step for a given pulse/bath; throws ConfigError when dt > 0.4 / omega_max.
double resolve_step(const IntegrationSettings& settings, const DiscretizedBath& bath, double segment_length);

/// Constant-drive stretch of a trajectory; `segment` is the pulse segment it belongs to (-1 for free evolution).
struct DriveInterval {
  double t_start = 0.0;
  double t_end = 0.0;
  double u_a = 0.0;
  double u_b = 0.0;
  int segment = -1;
};

std::vector<DriveInterval> drive_schedule(const ControlPulse& pulse);

/// Phase-space generator A = Omega H of the full system+bath model at fixed drive.
///
/// Coordinates are (q_A, p_A, q_B, p_B, x_1, p_1, ..., x_N, p_N). The stiffness
/// matrix is diag(1 + u_A, 1 + u_B, w_k^2) plus the counterterm 2 mu on the
/// (q_A, q_B) block and c_k between each system coordinate and x_k.
class Generator {
 public:
  Generator(const DiscretizedBath& bath, double u_a, double u_b, bool counterterm = true);

  int dim() const { return 4 + 2 * n_bath_; }
  double u_a() const { return u_a_; }
  double u_b() const { return u_b_; }
  /// (N+2) x (N+2) stiffness matrix over (q_A, q_B, x_1, ..., x_N).
  Eigen::MatrixXd stiffness() const;
  /// Symmetric Hamiltonian matrix H in interleaved ordering.
  Eigen::MatrixXd hamiltonian() const;
  /// A = Omega H.
  Eigen::MatrixXd dense() const;

 private:
  int n_bath_;
  std::vector<double> omegas_;
  std::vector<double> couplings_;
  double mu_;
  double u_a_;
  double u_b_;
};

Generator assemble_generator(const ControlPulse& pulse, const DiscretizedBath& bath, double t,
                             bool counterterm = true);

struct TrajectoryRecord;

/// Reduced 4x4 system covariances at the sample times, plus run diagnostics.
struct PropagationResult {
  std::vector<double> times;
  std::vector<Eigen::Matrix4d> reduced;
  /// Upper-triangular square roots, reduced[i] = roots[i]^T roots[i].
  std::vector<Eigen::Matrix4d> roots;
  /// Harmonic system energy sum_j (<p_j^2> + (1 + u_j) <q_j^2>) / 2 at each sample.
  std::vector<double> system_energy;
  /// max |R Omega R^T - Omega| over system and probe rows of the accumulated propagator at the last sample.
  double symplectic_residual = 0.0;
  std::size_t steps = 0;
  double dt = 0.0;
  std::shared_ptr<const TrajectoryRecord> retained;

  std::size_t size() const { return times.size(); }
  CovarianceMatrix covariance(std::size_t i) const;
  double log_negativity(std::size_t i) const;
  double neg_log_nu(std::size_t i) const;
  double det_gamma(std::size_t i) const;
  /// Vacuum-normalized symplectic eigenvalues of the reduced state (from the root).
  std::vector<double> symplectic_eigenvalues(std::size_t i) const;
};

/// Drive history and initial state retained for `continue_free`.
struct TrajectoryRecord {
  CovarianceMatrix initial;
  std::vector<DriveInterval> schedule;
  IntegrationSettings settings;
  double dt = 0.0;
  int n_bath = 0;
  double counterterm_sum = 0.0;
};

/// `n` uniform samples on [0, t_f] plus t_f itself (n + 1 points).
std::vector<double> uniform_samples(double t_final, int n);

/// Propagates sigma' = A sigma + sigma A^T for the full model and returns the reduced
/// system covariances at `samples` (sorted, within [0, t_f]).
PropagationResult propagate(const CovarianceMatrix& initial, const ControlPulse& pulse, const DiscretizedBath& bath,
                            const IntegrationSettings& settings, std::span<const double> samples);

/// Same as `propagate` for an explicit drive schedule.
PropagationResult propagate_schedule(const CovarianceMatrix& initial, const std::vector<DriveInterval>& schedule,
                                     const DiscretizedBath& bath, const IntegrationSettings& settings, double dt,
                                     std::span<const double> samples);

/// Undriven continuation for `extra_time` after the last sample; appends `n_samples` uniform samples.
/// Requires a result produced with `retain_full_state`.
PropagationResult continue_free(const PropagationResult& result, const DiscretizedBath& bath, double extra_time,
                                int n_samples = 50);

/// Root F (sigma = F^T F) of the reduced system covariance at t_f.
Eigen::Matrix4d final_reduced_root(const CovarianceMatrix& initial, const ControlPulse& pulse,
                                   const DiscretizedBath& bath, const IntegrationSettings& settings);

/// Throws PropagationError when the state with root F breaks nu_min >= 1 by more than
/// `heisenberg_tolerance` plus the rounding floor of F, or exceeds `max_variance_trace`.
void check_reduced_state(const Eigen::Matrix4d& root, double t, const IntegrationSettings& settings);

/// Reduced system covariance at t_f only.
Eigen::Matrix4d final_reduced_covariance(const CovarianceMatrix& initial, const ControlPulse& pulse,
                                         const DiscretizedBath& bath, const IntegrationSettings& settings);

/// Derivative of a scalar function of the final reduced covariance with respect to the pulse amplitudes.
struct FinalStateGradient {
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d root = Eigen::Matrix4d::Zero();
  double value = 0.0;
  /// d value / d u_A and d u_B per pulse segment.
  std::vector<double> d_u_a;
  std::vector<double> d_u_b;
  bool degenerate = false;
};

/// Maps the final covariance root F (sigma = F^T F) to (value, d value / d sigma, degenerate flag).
using CovarianceCotangent = std::function<std::tuple<double, Eigen::Matrix4d, bool>(const Eigen::Matrix4d&)>;

/// Exact gradient of the discretized dynamics: backward pass for the system rows of the
/// propagator, forward adjoint pass for the sensitivity of every drive amplitude.
FinalStateGradient final_state_gradient(const CovarianceMatrix& initial, const ControlPulse& pulse,
                                        const DiscretizedBath& bath, const IntegrationSettings& settings,
                                        const CovarianceCotangent& objective);

/// Full accumulated propagator S(t_f, 0). Cost grows as dim^2 per step; meant for small baths.
Eigen::MatrixXd accumulated_propagator(const ControlPulse& pulse, const DiscretizedBath& bath,
                                       const IntegrationSettings& settings);

/// Tabulated solutions of phi'' + (1 + u(t)) phi = 0 with phi_1 = (1, 0), phi_2 = (0, 1) at t = 0.
struct FundamentalSolutions {
  std::vector<double> times;
  std::vector<double> phi1;
  std::vector<double> dphi1;
  std::vector<double> phi2;
  std::vector<double> dphi2;

  double wronskian(std::size_t i) const { return phi1[i] * dphi2[i] - dphi1[i] * phi2[i]; }
  Eigen::Matrix2d propagator(std::size_t i) const;
};

struct NormalModeTrajectory {
  std::vector<double> times;
  /// Covariance of (Q_-, P_-) at each sample.
  std::vector<Eigen::Matrix2d> sigma_minus;
  FundamentalSolutions fundamentals;
};

/// Antisymmetric-mode evolution for symmetric drives from the fundamental solutions.
/// `substep` bounds the RK4 step used to integrate the fundamental solutions.
NormalModeTrajectory propagate_normal_mode_semianalytic(const ControlPulse& pulse, const Eigen::Matrix2d& initial_minus,
                                                        std::span<const double> samples, double substep = 1e-3);

/// Same, starting from a thermal antisymmetric mode at inverse temperature `beta`.
NormalModeTrajectory propagate_normal_mode_semianalytic(const ControlPulse& pulse, double beta,
                                                        std::span<const double> samples, double substep = 1e-3);

}  // namespace bathent
