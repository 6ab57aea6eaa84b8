#include "split_engine.hpp"

#include <cmath>

#include "bathent/errors.hpp"

namespace bathent::detail {

namespace {

// Series in x = k tau^2 below this; closed forms above.
constexpr double kSeriesLimit = 1e-2;

// c = sum (-x)^j / (2j)!, s = tau sum (-x)^j / (2j+1)!, ds/dk = tau^3 sum_{j>=1} j (-1)^j x^{j-1} / (2j+1)!
void flow_series(double x, double tau, double& c, double& s, double& ds_dk) {
  c = 0.0;
  double sf = 0.0;
  double dsf = 0.0;
  double term_c = 1.0;  // (-x)^j / (2j)!
  double term_s = 1.0;  // (-x)^j / (2j+1)!
  double power = 1.0;   // (-1)^j x^(j-1) for the derivative, starting at j = 1
  double fact = 1.0;    // (2j+1)!
  for (int j = 0; j < 10; ++j) {
    c += term_c;
    sf += term_s;
    if (j >= 1) {
      dsf += j * power / fact;
      power *= -x;
    } else {
      power = -1.0;
    }
    term_c *= -x / ((2.0 * j + 1.0) * (2.0 * j + 2.0));
    term_s *= -x / ((2.0 * j + 2.0) * (2.0 * j + 3.0));
    fact *= (2.0 * j + 2.0) * (2.0 * j + 3.0);
  }
  s = tau * sf;
  ds_dk = tau * tau * tau * dsf;
}

// hi + lo += d with the rounding error of hi + d kept in lo (two-sum, then renormalized).
inline void add_compensated(double& hi, double& lo, double d) {
  const double s = hi + d;
  const double bp = s - hi;
  const double err = (hi - (s - bp)) + (d - bp);
  const double l = lo + err;
  hi = s + l;
  lo = l - (hi - s);
}

// The flow [[c, s], [-ks, c]] as three shears p += a q, q += b p, p += a q (a = s / (1 + c),
// b = -ks). Each shear has unit determinant whatever the rounding of a and b, so the
// symplectic defect does not build up coherently over many steps.
inline Shears shears_of(const OscillatorFlow& f) { return {f.s / (1.0 + f.c), -f.ks}; }

}  // namespace

OscillatorFlow oscillator_flow(double k, double tau) {
  const double x = k * tau * tau;
  OscillatorFlow f;
  if (std::abs(x) < kSeriesLimit) {
    double ds;
    flow_series(x, tau, f.c, f.s, ds);
  } else if (k > 0.0) {
    const double w = std::sqrt(k);
    f.c = std::cos(w * tau);
    f.s = std::sin(w * tau) / w;
  } else {
    const double w = std::sqrt(-k);
    f.c = std::cosh(w * tau);
    f.s = std::sinh(w * tau) / w;
  }
  f.ks = k * f.s;
  return f;
}

OscillatorFlow oscillator_flow_dk(double k, double tau) {
  const double x = k * tau * tau;
  double c, s, ds;
  if (std::abs(x) < kSeriesLimit) {
    flow_series(x, tau, c, s, ds);
  } else {
    const OscillatorFlow f = oscillator_flow(k, tau);
    c = f.c;
    s = f.s;
    ds = (tau * c - s) / (2.0 * k);
  }
  OscillatorFlow d;
  d.c = -0.5 * tau * s;
  d.s = ds;
  d.ks = s + k * ds;
  return d;
}

std::vector<SubOp> step_ops(double h, SplittingOrder order) {
  if (order == SplittingOrder::second) {
    return {{OpKind::kick, 0.5 * h}, {OpKind::rotate, h}, {OpKind::kick, 0.5 * h}};
  }
  // Triple-jump composition of the second-order step.
  const double w1 = 1.0 / (2.0 - std::cbrt(2.0));
  const double w0 = 1.0 - 2.0 * w1;
  return {{OpKind::kick, 0.5 * w1 * h},       {OpKind::rotate, w1 * h}, {OpKind::kick, 0.5 * (w1 + w0) * h},
          {OpKind::rotate, w0 * h},           {OpKind::kick, 0.5 * (w0 + w1) * h},
          {OpKind::rotate, w1 * h},           {OpKind::kick, 0.5 * w1 * h}};
}

RowBlock row_block(Eigen::MatrixXd& m, int first_row, int rows, Eigen::MatrixXd* lo) {
  RowBlock b{m.data() + first_row, rows, static_cast<int>(m.rows())};
  if (lo) {
    b.lo = lo->data() + first_row;
    b.lo_ld = static_cast<int>(lo->rows());
  }
  return b;
}

void fold_low_part(Eigen::MatrixXd& m, Eigen::MatrixXd& lo) {
  m.leftCols(4) += lo;
  lo.setZero();
}

SplitEngine::SplitEngine(const DiscretizedBath& bath, bool counterterm)
    : n_bath_(bath.n_modes()),
      dim_(4 + 2 * bath.n_modes()),
      omegas_(bath.omegas),
      couplings_(bath.couplings),
      two_mu_(counterterm ? 2.0 * bath.counterterm_sum : 0.0) {
  for (double m : bath.masses) {
    if (m != 1.0) throw ConfigError("propagation assumes unit bath masses");
  }
}

const SplitEngine::BathFlow& SplitEngine::bath_flow(double tau) const {
  for (const auto& f : cache_) {
    if (f.tau == tau) return f;
  }
  if (cache_.size() >= 32) cache_.clear();
  BathFlow f;
  f.tau = tau;
  f.flow.resize(n_bath_);
  f.shears.resize(n_bath_);
  for (int k = 0; k < n_bath_; ++k) {
    f.flow[k] = oscillator_flow(omegas_[k] * omegas_[k], tau);
    f.shears[k] = shears_of(f.flow[k]);
  }
  cache_.push_back(std::move(f));
  return cache_.back();
}

void SplitEngine::kick(const RowBlock& r, double tau, bool transposed) const {
  const int n = r.rows;
  if (n == 0) return;
  // Right action updates positions from momenta; transposed action updates momenta from positions.
  const int src = transposed ? 0 : 1;
  const int dst = transposed ? 1 : 0;
  const double* a_src = r.col(0 + src);
  const double* b_src = r.col(2 + src);
  double* a_dst = r.col(0 + dst);
  double* b_dst = r.col(2 + dst);

  std::vector<double> sum(n), force(n);
  for (int i = 0; i < n; ++i) {
    sum[i] = r.lo ? (a_src[i] + r.lo_col(src)[i]) + (b_src[i] + r.lo_col(2 + src)[i]) : a_src[i] + b_src[i];
    force[i] = two_mu_ * sum[i];
  }
  for (int k = 0; k < n_bath_; ++k) {
    const double ck = couplings_[k];
    const double* x = r.col(4 + 2 * k + src);
    for (int i = 0; i < n; ++i) force[i] += ck * x[i];
  }
  for (int k = 0; k < n_bath_; ++k) {
    const double f = tau * couplings_[k];
    double* x = r.col(4 + 2 * k + dst);
    for (int i = 0; i < n; ++i) x[i] -= f * sum[i];
  }
  if (r.lo) {
    double* a_lo = r.lo_col(dst);
    double* b_lo = r.lo_col(2 + dst);
    for (int i = 0; i < n; ++i) {
      add_compensated(a_dst[i], a_lo[i], -tau * force[i]);
      add_compensated(b_dst[i], b_lo[i], -tau * force[i]);
    }
    return;
  }
  for (int i = 0; i < n; ++i) {
    a_dst[i] -= tau * force[i];
    b_dst[i] -= tau * force[i];
  }
}

namespace {

inline void rotate_pair(double* q, double* p, int n, const OscillatorFlow& f, const Shears& sh, bool transposed) {
  if (f.c <= 0.0) {
    // Half-turn or beyond: a = s / (1 + c) loses accuracy, apply the matrix directly.
    for (int i = 0; i < n; ++i) {
      const double qi = q[i];
      const double pi = p[i];
      if (transposed) {
        q[i] = f.c * qi + f.s * pi;
        p[i] = -f.ks * qi + f.c * pi;
      } else {
        q[i] = f.c * qi - f.ks * pi;
        p[i] = f.s * qi + f.c * pi;
      }
    }
    return;
  }
  if (transposed) {
    for (int i = 0; i < n; ++i) {
      double qi = q[i] + sh.a * p[i];
      const double pi = p[i] + sh.b * qi;
      q[i] = qi + sh.a * pi;
      p[i] = pi;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      double pi = p[i] + sh.a * q[i];
      const double qi = q[i] + sh.b * pi;
      p[i] = pi + sh.a * qi;
      q[i] = qi;
    }
  }
}

// rotate_pair on a system pair whose value is hi + lo.
void rotate_system_pair(double* q, double* p, double* q_lo, double* p_lo, int n, const OscillatorFlow& f,
                        const Shears& sh, bool transposed) {
  if (f.c <= 0.0) {
    for (int i = 0; i < n; ++i) {
      q[i] += q_lo[i];
      p[i] += p_lo[i];
      q_lo[i] = p_lo[i] = 0.0;
    }
    rotate_pair(q, p, n, f, sh, transposed);
    return;
  }
  if (transposed) {
    for (int i = 0; i < n; ++i) {
      add_compensated(q[i], q_lo[i], sh.a * (p[i] + p_lo[i]));
      add_compensated(p[i], p_lo[i], sh.b * (q[i] + q_lo[i]));
      add_compensated(q[i], q_lo[i], sh.a * (p[i] + p_lo[i]));
    }
  } else {
    for (int i = 0; i < n; ++i) {
      add_compensated(p[i], p_lo[i], sh.a * (q[i] + q_lo[i]));
      add_compensated(q[i], q_lo[i], sh.b * (p[i] + p_lo[i]));
      add_compensated(p[i], p_lo[i], sh.a * (q[i] + q_lo[i]));
    }
  }
}

}  // namespace

void SplitEngine::rotate(const RowBlock& r, double tau, double u_a, double u_b, bool transposed) const {
  const int n = r.rows;
  if (n == 0) return;
  const OscillatorFlow fa = oscillator_flow(1.0 + u_a, tau);
  const OscillatorFlow fb = u_b == u_a ? fa : oscillator_flow(1.0 + u_b, tau);
  if (r.lo) {
    rotate_system_pair(r.col(0), r.col(1), r.lo_col(0), r.lo_col(1), n, fa, shears_of(fa), transposed);
    rotate_system_pair(r.col(2), r.col(3), r.lo_col(2), r.lo_col(3), n, fb, shears_of(fb), transposed);
  } else {
    rotate_pair(r.col(0), r.col(1), n, fa, shears_of(fa), transposed);
    rotate_pair(r.col(2), r.col(3), n, fb, shears_of(fb), transposed);
  }
  if (n_bath_ == 0) return;
  const BathFlow& f = bath_flow(tau);
  for (int k = 0; k < n_bath_; ++k) {
    rotate_pair(r.col(4 + 2 * k), r.col(5 + 2 * k), n, f.flow[k], f.shears[k], transposed);
  }
}

void SplitEngine::apply(const RowBlock& r, const SubOp& op, double u_a, double u_b, bool transposed) const {
  if (op.kind == OpKind::kick) {
    kick(r, op.tau, transposed);
  } else {
    rotate(r, op.tau, u_a, u_b, transposed);
  }
}

void SplitEngine::step(const RowBlock& r, const std::vector<SubOp>& ops, double u_a, double u_b) const {
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) apply(r, *it, u_a, u_b, false);
}

void SplitEngine::step_transposed(const RowBlock& r, const std::vector<SubOp>& ops, double u_a, double u_b) const {
  for (const SubOp& op : ops) apply(r, op, u_a, u_b, true);
}

}  // namespace bathent::detail
