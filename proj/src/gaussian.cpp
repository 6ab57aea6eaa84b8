#include "bathent/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "bathent/errors.hpp"

namespace bathent {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kPositivityTol = 1e-12;
constexpr double kDegenerateTol = 1e-9;

void require_two_mode(const CovarianceMatrix& sigma) {
  if (sigma.dim() != 4) {
    throw InvalidStateError(
        fmt::format("expected a two-mode (4x4) covariance, got {}x{}", sigma.dim(), sigma.dim()));
  }
}

double det2(const Eigen::Matrix2d& m) { return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0); }

// d det(m) / d m_ij
Eigen::Matrix2d det2_gradient(const Eigen::Matrix2d& m) {
  Eigen::Matrix2d g;
  g << m(1, 1), -m(1, 0), -m(0, 1), m(0, 0);
  return g;
}

}  // namespace

CovarianceMatrix::CovarianceMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols() || entries_.rows() == 0 || entries_.rows() % 2 != 0) {
    throw InvalidStateError(fmt::format("covariance must be square with positive even dimension, got {}x{}",
                                        entries_.rows(), entries_.cols()));
  }
  if (!entries_.allFinite()) {
    throw InvalidStateError("covariance has non-finite entries");
  }
  const double scale = std::max(1.0, entries_.cwiseAbs().maxCoeff());
  const double asym = (entries_ - entries_.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTol * scale) {
    throw InvalidStateError(fmt::format("covariance is not symmetric (max asymmetry {:.3e})", asym));
  }
}

CovarianceMatrix CovarianceMatrix::vacuum(int n_modes) {
  return CovarianceMatrix(0.5 * Eigen::MatrixXd::Identity(2 * n_modes, 2 * n_modes));
}

CovarianceMatrix CovarianceMatrix::thermal(int n_modes, double beta) {
  const double c = 1.0 / std::tanh(0.5 * beta);
  return CovarianceMatrix(0.5 * c * Eigen::MatrixXd::Identity(2 * n_modes, 2 * n_modes));
}

CovarianceMatrix CovarianceMatrix::two_mode_squeezed_vacuum(double r) {
  const double ch = std::cosh(2.0 * r);
  const double sh = std::sinh(2.0 * r);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 4);
  s(0, 0) = s(1, 1) = s(2, 2) = s(3, 3) = 0.5 * ch;
  s(0, 2) = s(2, 0) = 0.5 * sh;
  s(1, 3) = s(3, 1) = -0.5 * sh;
  return CovarianceMatrix(std::move(s));
}

Eigen::Matrix2d CovarianceMatrix::block(int i, int j) const {
  if (i < 0 || j < 0 || i >= n_modes() || j >= n_modes()) {
    throw std::out_of_range(fmt::format("mode block ({}, {}) out of range for {} modes", i, j, n_modes()));
  }
  return entries_.block<2, 2>(2 * i, 2 * j);
}

void CovarianceMatrix::require_positive_definite() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries_, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  if (!(ev(0) > kPositivityTol * std::abs(ev(ev.size() - 1)))) {
    throw InvalidStateError(fmt::format("covariance is not positive definite (smallest eigenvalue {:.3e})", ev(0)));
  }
}

bool CovarianceMatrix::is_physical(double tol) const {
  try {
    const auto nu = symplectic_eigenvalues(*this);
    return nu.front() >= 1.0 - tol;
  } catch (const InvalidStateError&) {
    return false;
  }
}

Eigen::MatrixXd symplectic_form(int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw std::invalid_argument(fmt::format("symplectic form needs a positive even dimension, got {}", dim));
  }
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(dim, dim);
  for (int k = 0; k < dim; k += 2) {
    omega(k, k + 1) = 1.0;
    omega(k + 1, k) = -1.0;
  }
  return omega;
}

// Williamson route: M = s^{1/2} Omega s^{1/2} is antisymmetric with eigenvalues +-i nu,
// so M^T M has each nu^2 twice.
std::vector<double> symplectic_eigenvalues(const CovarianceMatrix& sigma) {
  const Eigen::MatrixXd& s = sigma.matrix();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd& lambda = es.eigenvalues();
  if (!(lambda(0) > kPositivityTol * std::abs(lambda(lambda.size() - 1)))) {
    throw InvalidStateError(
        fmt::format("covariance is not positive definite (smallest eigenvalue {:.3e})", lambda(0)));
  }
  const Eigen::MatrixXd root =
      es.eigenvectors() * lambda.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd m = root * symplectic_form(sigma.dim()) * root;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ms(m.transpose() * m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& nu2 = ms.eigenvalues();

  std::vector<double> nu(sigma.n_modes());
  for (int k = 0; k < sigma.n_modes(); ++k) {
    const double pair = 0.5 * (nu2(2 * k) + nu2(2 * k + 1));
    nu[k] = 2.0 * std::sqrt(std::max(pair, 0.0));
  }
  return nu;
}

CovarianceMatrix partial_transpose(const CovarianceMatrix& sigma, int mode_index) {
  if (mode_index < 0 || mode_index >= sigma.n_modes()) {
    throw std::out_of_range(
        fmt::format("partial transpose mode {} out of range for {} modes", mode_index, sigma.n_modes()));
  }
  Eigen::MatrixXd s = sigma.matrix();
  const int p = 2 * mode_index + 1;
  s.row(p) *= -1.0;
  s.col(p) *= -1.0;
  return CovarianceMatrix(std::move(s));
}

double smallest_pt_symplectic_eigenvalue(const CovarianceMatrix& sigma) {
  require_two_mode(sigma);
  return symplectic_eigenvalues(partial_transpose(sigma, 1)).front();
}

double log_negativity(const CovarianceMatrix& sigma) { return std::max(0.0, neg_log_nu(sigma)); }

double neg_log_nu(const CovarianceMatrix& sigma) {
  return -std::log(smallest_pt_symplectic_eigenvalue(sigma));
}

double two_mode_nu_oracle(const CovarianceMatrix& sigma) {
  require_two_mode(sigma);
  sigma.require_positive_definite();
  const double det_sigma = sigma.matrix().determinant();
  const double delta = det2(sigma.alpha()) + det2(sigma.block_b()) - 2.0 * det2(sigma.gamma());
  const double disc = std::max(delta * delta - 4.0 * det_sigma, 0.0);
  // 2 (delta - sqrt(disc)) rewritten without cancellation.
  const double nu2 = 8.0 * det_sigma / (delta + std::sqrt(disc));
  return std::sqrt(nu2);
}

double det_gamma(const CovarianceMatrix& sigma) {
  require_two_mode(sigma);
  return det2(sigma.gamma());
}

NegLogNuGradient neg_log_nu_gradient(const Eigen::Matrix4d& sigma) {
  // Work on the transposed state sp = P sigma P, P = diag(1, 1, 1, -1).
  const Eigen::Vector4d flip(1.0, 1.0, 1.0, -1.0);
  const Eigen::Matrix4d sp = flip.asDiagonal() * sigma * flip.asDiagonal();

  const Eigen::Matrix2d a = sp.block<2, 2>(0, 0);
  const Eigen::Matrix2d b = sp.block<2, 2>(2, 2);
  const Eigen::Matrix2d g = sp.block<2, 2>(0, 2);
  const double det_s = sp.determinant();
  if (!(det_s > 0.0)) {
    throw InvalidStateError(fmt::format("covariance determinant {:.3e} is not positive", det_s));
  }
  const double delta = det2(a) + det2(b) + 2.0 * det2(g);

  Eigen::Matrix4d d_delta = Eigen::Matrix4d::Zero();
  d_delta.block<2, 2>(0, 0) = det2_gradient(a);
  d_delta.block<2, 2>(2, 2) = det2_gradient(b);
  d_delta.block<2, 2>(0, 2) = 2.0 * det2_gradient(g);
  const Eigen::Matrix4d d_det = det_s * sp.inverse().transpose();

  NegLogNuGradient out;
  const double disc = delta * delta - 4.0 * det_s;
  double root = std::sqrt(std::max(disc, 0.0));
  if (root < kDegenerateTol * delta) {
    root = std::sqrt(std::max(disc, 0.0) + kDegenerateTol * kDegenerateTol * delta * delta);
    out.degenerate = true;
  }
  const double denom = delta + root;
  const double nu2 = 8.0 * det_s / denom;
  out.value = -0.5 * std::log(nu2);

  const Eigen::Matrix4d d_root = (2.0 * delta * d_delta - 4.0 * d_det) / (2.0 * root);
  const Eigen::Matrix4d d_log_nu2 = d_det / det_s - (d_delta + d_root) / denom;
  Eigen::Matrix4d grad_sp = -0.5 * d_log_nu2;
  grad_sp = 0.5 * (grad_sp + grad_sp.transpose()).eval();
  out.gradient = flip.asDiagonal() * grad_sp * flip.asDiagonal();
  return out;
}

namespace {

Eigen::MatrixXd root_form(const Eigen::MatrixXd& f) {
  if (f.rows() != f.cols() || f.rows() == 0 || f.rows() % 2 != 0 || !f.allFinite()) {
    throw InvalidStateError("covariance root must be square, finite and of positive even dimension");
  }
  return f * symplectic_form(static_cast<int>(f.rows())) * f.transpose();
}

// Unnormalized symplectic eigenvalues of F^T F, ascending: K = F Omega F^T has
// eigenvalues +-i nu_k, each accurate to eps * nu_max. For one and two modes the
// smallest value is recovered from |det F| = prod nu_k, which keeps it accurate
// relative to itself however strongly the state is squeezed.
std::vector<double> root_spectrum(const Eigen::MatrixXd& f) {
  const int modes = static_cast<int>(f.rows()) / 2;
  std::vector<double> nu;
  if (modes == 1) {
    if (f.rows() != 2 || f.cols() != 2 || !f.allFinite()) throw InvalidStateError("covariance root must be 2x2");
    nu.push_back(std::abs(f(0, 0) * f(1, 1) - f(0, 1) * f(1, 0)));
    if (!(nu.front() > 0.0)) throw InvalidStateError("covariance is singular");
    return nu;
  }
  const Eigen::MatrixXd k = root_form(f);
  Eigen::EigenSolver<Eigen::MatrixXd> es(k, false);
  std::vector<double> im;
  for (int i = 0; i < es.eigenvalues().size(); ++i) im.push_back(std::abs(es.eigenvalues()(i).imag()));
  std::sort(im.begin(), im.end());
  for (int i = 0; i < modes; ++i) nu.push_back(0.5 * (im[2 * i] + im[2 * i + 1]));
  if (modes == 2 && nu[1] > 0.0) nu[0] = std::abs(f.determinant()) / nu[1];
  // The two-mode value comes from the determinant and stays meaningful far below eps * nu_max.
  const double floor = modes == 2 ? 0.0 : kPositivityTol * nu.back();
  if (!(nu.front() > floor) || !std::isfinite(nu.back())) {
    throw InvalidStateError(fmt::format("covariance is singular (symplectic eigenvalue {:.3e})", 2.0 * nu.front()));
  }
  return nu;
}

}  // namespace

Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.cols() < m.rows()) {
    throw InvalidStateError(fmt::format("covariance factor must be dim x k with k >= dim, got {}x{}", m.rows(),
                                        m.cols()));
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m.transpose());
  const int n = static_cast<int>(m.rows());
  Eigen::MatrixXd f = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  return f;
}

std::vector<double> symplectic_eigenvalues_from_root(const Eigen::MatrixXd& f) {
  std::vector<double> nu = root_spectrum(f);
  for (double& v : nu) v *= 2.0;
  return nu;
}

NegLogNuGradient neg_log_nu_gradient_from_root(const Eigen::Matrix4d& f) {
  // Partial transpose on mode B: F -> F P.
  Eigen::Matrix4d fp = f;
  fp.col(3) *= -1.0;
  const std::vector<double> nus = root_spectrum(fp);
  const double nu = nus[0];
  const double nu2_min = nu * nu;

  NegLogNuGradient out;
  out.value = -std::log(2.0 * nu);
  out.degenerate = nus[1] - nu <= kDegenerateTol * nu;
  // d nu = tr(G' d sigma') / nu with G' = (F Omega)^T Pi (F Omega) / 2, Pi the projector on the nu_min pair of K^T K.
  const Eigen::Matrix4d k = root_form(fp);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(k.transpose() * k);
  const Eigen::Matrix4d fo = fp * symplectic_form(4);
  const Eigen::Matrix<double, 4, 2> basis = es.eigenvectors().leftCols(2);
  const Eigen::Matrix<double, 4, 2> u = fo.transpose() * basis;
  Eigen::Matrix4d g = -(u * u.transpose()) / (2.0 * nu2_min);
  g.col(3) *= -1.0;
  g.row(3) *= -1.0;
  out.gradient = 0.5 * (g + g.transpose());
  return out;
}

double PhaseSpaceGrid::q(int i) const {
  return nq == 1 ? q_min : q_min + (q_max - q_min) * static_cast<double>(i) / (nq - 1);
}

double PhaseSpaceGrid::p(int j) const {
  return np == 1 ? p_min : p_min + (p_max - p_min) * static_cast<double>(j) / (np - 1);
}

Eigen::MatrixXd wigner_grid(const CovarianceMatrix& sigma, const Eigen::Vector2d& means,
                            const PhaseSpaceGrid& grid) {
  if (sigma.dim() != 2) {
    throw InvalidStateError(fmt::format("Wigner grid needs a single-mode covariance, got dim {}", sigma.dim()));
  }
  if (grid.nq < 1 || grid.np < 1) {
    throw std::invalid_argument("Wigner grid needs at least one point per axis");
  }
  const Eigen::Matrix2d s = sigma.matrix();
  const double det = s.determinant();
  if (!(det > kPositivityTol * s.squaredNorm()) || !(s(0, 0) > 0.0)) {
    throw InvalidStateError(fmt::format("Wigner grid: singular covariance (det {:.3e})", det));
  }
  const Eigen::Matrix2d inv = s.inverse();
  const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(det));

  Eigen::MatrixXd w(grid.nq, grid.np);
  for (int i = 0; i < grid.nq; ++i) {
    for (int j = 0; j < grid.np; ++j) {
      const Eigen::Vector2d x(grid.q(i) - means(0), grid.p(j) - means(1));
      w(i, j) = norm * std::exp(-0.5 * x.dot(inv * x));
    }
  }
  return w;
}

Eigen::MatrixXd wigner_grid_from_root(const Eigen::Matrix2d& r, const Eigen::Vector2d& means,
                                      const PhaseSpaceGrid& grid) {
  if (grid.nq < 1 || grid.np < 1) {
    throw std::invalid_argument("Wigner grid needs at least one point per axis");
  }
  const Eigen::Matrix2d f = covariance_root(r.transpose());
  const double root_det = std::abs(f(0, 0) * f(1, 1));
  if (!(root_det > 0.0) || !f.allFinite()) throw InvalidStateError("Wigner grid: singular covariance root");
  const double norm = 1.0 / (2.0 * std::numbers::pi * root_det);
  // x^T (F^T F)^{-1} x = |F^{-T} x|^2 with F upper triangular.
  const auto lower = f.transpose().triangularView<Eigen::Lower>();
  Eigen::MatrixXd w(grid.nq, grid.np);
  for (int i = 0; i < grid.nq; ++i) {
    for (int j = 0; j < grid.np; ++j) {
      const Eigen::Vector2d y = lower.solve(Eigen::Vector2d(grid.q(i) - means(0), grid.p(j) - means(1)));
      w(i, j) = norm * std::exp(-0.5 * y.squaredNorm());
    }
  }
  return w;
}

}  // namespace bathent
