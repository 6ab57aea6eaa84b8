#pragma once

// Symplectic splitting of the full system+bath flow.
//
// H = H_free + H_kick with H_free the uncoupled oscillators (stiffness 1 + u_j for
// the system, w_k^2 for the bath) and H_kick = mu Q^2 + Q sum_k c_k x_k,
// Q = q_A + q_B. The free flow is applied exactly and H_kick only depends on
// positions, so every sub-operation is an exact symplectic map. H_kick acts
// identically on q_A and q_B, hence the antisymmetric mode sees the exact flow
// of the free part.
//
// Linear maps act on blocks of row vectors from the right (R <- R O), or with
// `transposed` on row-stored column vectors (x^T <- x^T O^T, i.e. x <- O x).

#include <vector>

#include "bathent/bath.hpp"
#include "bathent/propagation.hpp"

namespace bathent::detail {

/// Exact flow of q'' = -k q over tau: q <- c q + s p, p <- -ks q + c p.
struct OscillatorFlow {
  double c = 1.0;
  double s = 0.0;
  double ks = 0.0;
};

OscillatorFlow oscillator_flow(double k, double tau);
/// Derivatives of (c, s, ks) with respect to k.
OscillatorFlow oscillator_flow_dk(double k, double tau);

/// Shear factors of an OscillatorFlow (see `rotate_pair`).
struct Shears {
  double a = 0.0;
  double b = 0.0;
};

enum class OpKind { kick, rotate };

struct SubOp {
  OpKind kind;
  double tau;
};

/// Palindromic sequence of sub-operations making one step of length h.
std::vector<SubOp> step_ops(double h, SplittingOrder order);

/// A block of `rows` rows inside a column-major matrix with leading dimension `ld`.
///
/// With `lo` set, the four system columns carry a low-order part (value = hi + lo) and
/// every update to them is accumulated with an error-free sum. System entries grow with
/// the squeezing while each update is small, so plain rounding of hi + increment would
/// dominate the symplectic defect.
struct RowBlock {
  double* data = nullptr;
  int rows = 0;
  int ld = 0;
  double* lo = nullptr;
  int lo_ld = 0;

  double* col(int j) const { return data + static_cast<std::ptrdiff_t>(j) * ld; }
  double* lo_col(int j) const { return lo + static_cast<std::ptrdiff_t>(j) * lo_ld; }
};

/// `lo`, when given, is the rows x 4 low-order part of the system columns of `m`.
RowBlock row_block(Eigen::MatrixXd& m, int first_row, int rows, Eigen::MatrixXd* lo = nullptr);

/// Folds the low-order part into the system columns and clears it.
void fold_low_part(Eigen::MatrixXd& m, Eigen::MatrixXd& lo);

class SplitEngine {
 public:
  SplitEngine(const DiscretizedBath& bath, bool counterterm);

  int dim() const { return dim_; }
  int n_bath() const { return n_bath_; }

  void kick(const RowBlock& r, double tau, bool transposed) const;
  void rotate(const RowBlock& r, double tau, double u_a, double u_b, bool transposed) const;
  void apply(const RowBlock& r, const SubOp& op, double u_a, double u_b, bool transposed) const;
  /// R <- R P where P is the step built from `ops` (ops are palindromic, so order is immaterial).
  void step(const RowBlock& r, const std::vector<SubOp>& ops, double u_a, double u_b) const;
  /// x <- P x on row-stored vectors.
  void step_transposed(const RowBlock& r, const std::vector<SubOp>& ops, double u_a, double u_b) const;

 private:
  struct BathFlow {
    double tau;
    std::vector<OscillatorFlow> flow;
    std::vector<Shears> shears;
  };
  const BathFlow& bath_flow(double tau) const;

  int n_bath_;
  int dim_;
  std::vector<double> omegas_;
  std::vector<double> couplings_;
  double two_mu_;
  mutable std::vector<BathFlow> cache_;
};

}  // namespace bathent::detail
