#include "bathent/propagation.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "bathent/errors.hpp"
#include "split_engine.hpp"

namespace bathent {

void check_reduced_state(const Eigen::Matrix4d& root, double t, const IntegrationSettings& settings) {
  const double trace = root.squaredNorm();
  if (!(trace <= settings.max_variance_trace)) {
    throw PropagationError(
        fmt::format("reduced state at t = {} is squeezed beyond double precision (tr sigma = {:.3e} > {:.3e})", t,
                    trace, settings.max_variance_trace),
        t);
  }
  std::vector<double> nu;
  try {
    nu = symplectic_eigenvalues_from_root(root);
  } catch (const InvalidStateError& e) {
    throw PropagationError(fmt::format("degenerate reduced state at t = {}: {}", t, e.what()), t);
  }
  // Forming F Omega F^T loses about eps * |F|^2 in absolute terms.
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * trace;
  if (nu.front() < 1.0 - settings.heisenberg_tolerance - floor) {
    throw PropagationError(
        fmt::format("reduced state violates the uncertainty principle at t = {} (nu_min = {:.12g})", t, nu.front()),
        t);
  }
}

using detail::OpKind;
using detail::RowBlock;
using detail::SplitEngine;
using detail::SubOp;

namespace {

constexpr double kTimeEps = 1e-12;
constexpr std::uint64_t kProbeSeed = 0x5eed5eedULL;

int steps_for(double length, double dt) {
  return std::max(1, static_cast<int>(std::ceil(length / dt - 1e-9)));
}

// sigma_0 with a fast path for the usual block-diagonal preparation.
class InitialCovariance {
 public:
  explicit InitialCovariance(const CovarianceMatrix& sigma) : sigma_(sigma.matrix()) {
    const int n = sigma.dim();
    block_diagonal_ = true;
    for (int j = 0; j < n && block_diagonal_; ++j) {
      for (int i = 0; i < n; ++i) {
        if (i / 2 != j / 2 && sigma_(i, j) != 0.0) {
          block_diagonal_ = false;
          break;
        }
      }
    }
    if (block_diagonal_) {
      // Lower Cholesky factor of each 2x2 block.
      root_blocks_.resize(3, n / 2);
      for (int m = 0; m < n / 2; ++m) {
        const double a = sigma_(2 * m, 2 * m), b = sigma_(2 * m + 1, 2 * m), d = sigma_(2 * m + 1, 2 * m + 1);
        if (!(a > 0.0) || !(a * d - b * b > 0.0)) throw InvalidStateError("initial covariance is not positive definite");
        const double l00 = std::sqrt(a);
        const double l10 = b / l00;
        root_blocks_.col(m) << l00, l10, std::sqrt(d - l10 * l10);
      }
    } else {
      Eigen::LLT<Eigen::MatrixXd> llt(sigma_);
      if (llt.info() != Eigen::Success) throw InvalidStateError("initial covariance is not positive definite");
      dense_root_ = llt.matrixL();
    }
  }

  // (R L) L^T = R sigma_0
  Eigen::MatrixXd sigma_multiply(const Eigen::MatrixXd& rl) const {
    if (!block_diagonal_) return rl * dense_root_.transpose();
    Eigen::MatrixXd out(rl.rows(), rl.cols());
    for (int m = 0; m < rl.cols() / 2; ++m) {
      const double l00 = root_blocks_(0, m), l10 = root_blocks_(1, m), l11 = root_blocks_(2, m);
      out.col(2 * m) = l00 * rl.col(2 * m);
      out.col(2 * m + 1) = l10 * rl.col(2 * m) + l11 * rl.col(2 * m + 1);
    }
    return out;
  }

  // R L with sigma_0 = L L^T, for a 4-row block starting at `first_row`.
  Eigen::MatrixXd root_multiply(const Eigen::MatrixXd& r, int first_row) const {
    const int n = static_cast<int>(sigma_.rows());
    if (!block_diagonal_) return r.middleRows(first_row, 4) * dense_root_;
    Eigen::MatrixXd out(4, n);
    for (int m = 0; m < n / 2; ++m) {
      const double l00 = root_blocks_(0, m), l10 = root_blocks_(1, m), l11 = root_blocks_(2, m);
      out.col(2 * m) = l00 * r.col(2 * m).segment(first_row, 4) + l10 * r.col(2 * m + 1).segment(first_row, 4);
      out.col(2 * m + 1) = l11 * r.col(2 * m + 1).segment(first_row, 4);
    }
    return out;
  }


 private:
  const Eigen::MatrixXd& sigma_;
  bool block_diagonal_ = false;
  Eigen::Matrix3Xd root_blocks_;
  Eigen::MatrixXd dense_root_;
};

Eigen::Matrix4d symmetrized(const Eigen::Matrix4d& m) { return 0.5 * (m + m.transpose()); }

Eigen::Matrix4d root_of_group(const InitialCovariance& sigma0, const Eigen::MatrixXd& rows, int first_row) {
  return covariance_root(sigma0.root_multiply(rows, first_row));
}

Eigen::Matrix4d sigma_from_root(const Eigen::Matrix4d& f) { return symmetrized(f.transpose() * f); }

Eigen::MatrixXd probe_rows(int count, int dim) {
  std::mt19937_64 rng(kProbeSeed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd p(count, dim);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < dim; ++j) p(i, j) = normal(rng);
    p.row(i).normalize();
  }
  return p;
}

// max |X Omega X^T - Y Omega Y^T|
double symplectic_defect(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  auto form = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd mo(m.rows(), m.cols());
    for (int j = 0; j < m.cols(); j += 2) {
      mo.col(j) = -m.col(j + 1);
      mo.col(j + 1) = m.col(j);
    }
    return Eigen::MatrixXd(mo * m.transpose());
  };
  return (form(x) - form(y)).cwiseAbs().maxCoeff();
}

struct StepPlan {
  std::vector<int> n_steps;
  std::vector<double> h;
};

StepPlan plan_steps(const std::vector<DriveInterval>& schedule, double dt) {
  StepPlan plan;
  for (const auto& iv : schedule) {
    const int n = steps_for(iv.t_end - iv.t_start, dt);
    plan.n_steps.push_back(n);
    plan.h.push_back((iv.t_end - iv.t_start) / n);
  }
  return plan;
}

void check_schedule(const std::vector<DriveInterval>& schedule) {
  if (schedule.empty()) throw ConfigError("empty drive schedule");
  double t = 0.0;
  for (const auto& iv : schedule) {
    if (std::abs(iv.t_start - t) > kTimeEps * std::max(1.0, t) || !(iv.t_end > iv.t_start)) {
      throw ConfigError("drive schedule must tile [0, t_end] with increasing intervals");
    }
    t = iv.t_end;
  }
}

struct RowGroup {
  double time;
  int first_row;
  int rows;
};

// Backward pass: for each group, rows E S(t_group, 0) (identity rows plus, for the
// first group, `extra`). Groups must be sorted by decreasing time.
void backward_rows(const SplitEngine& engine, const std::vector<DriveInterval>& schedule, const StepPlan& plan,
                   SplittingOrder order, const std::vector<RowGroup>& groups, Eigen::MatrixXd& rows,
                   std::size_t* steps_taken) {
  std::size_t next = 0;
  int active = 0;
  const double t_end = schedule.back().t_end;
  Eigen::MatrixXd lo = Eigen::MatrixXd::Zero(rows.rows(), 4);
  auto join_scale = [](double t) { return kTimeEps * std::max(1.0, std::abs(t)); };
  while (next < groups.size() && groups[next].time > t_end + join_scale(t_end)) {
    throw ConfigError(fmt::format("sample time {} lies beyond the end of the drive ({})", groups[next].time, t_end));
  }
  for (int iv = static_cast<int>(schedule.size()) - 1; iv >= 0; --iv) {
    const DriveInterval& d = schedule[iv];
    const auto ops = detail::step_ops(plan.h[iv], order);
    for (int j = plan.n_steps[iv] - 1; j >= 0; --j) {
      const double a = d.t_start + j * plan.h[iv];
      const double b = j + 1 == plan.n_steps[iv] ? d.t_end : a + plan.h[iv];
      while (next < groups.size() && groups[next].time >= b - join_scale(b)) {
        active += groups[next].rows;
        ++next;
      }
      int pending = 0;
      while (next + pending < groups.size() && groups[next + pending].time > a + join_scale(a)) {
        const RowGroup& g = groups[next + pending];
        const auto partial = detail::step_ops(g.time - a, order);
        engine.step(detail::row_block(rows, g.first_row, g.rows, &lo), partial, d.u_a, d.u_b);
        ++pending;
      }
      if (active > 0) {
        engine.step(detail::row_block(rows, 0, active, &lo), ops, d.u_a, d.u_b);
        if (steps_taken) ++*steps_taken;
      }
      for (int p = 0; p < pending; ++p) active += groups[next + p].rows;
      next += pending;
    }
  }
  while (next < groups.size()) {
    active += groups[next].rows;
    ++next;
  }
  detail::fold_low_part(rows, lo);
}

// Forward pass for a time-invariant generator: E S(t) = E P^j, so rows advance from the right.
void forward_rows(const SplitEngine& engine, const DriveInterval& d, double h, int n_steps, SplittingOrder order,
                  const std::vector<RowGroup>& groups_desc, Eigen::MatrixXd& rows, int base_rows,
                  std::size_t* steps_taken) {
  // rows.topRows(base_rows) carry the running product; each group gets a copy at its time.
  const auto ops = detail::step_ops(h, order);
  std::vector<RowGroup> groups(groups_desc.rbegin(), groups_desc.rend());
  std::size_t next = 0;
  Eigen::MatrixXd current = rows.topRows(base_rows);
  Eigen::MatrixXd current_lo = Eigen::MatrixXd::Zero(base_rows, 4);
  auto emit = [&](const RowGroup& g, const Eigen::MatrixXd& src, const Eigen::MatrixXd& src_lo) {
    rows.middleRows(g.first_row, g.rows) = src.topRows(g.rows);
    rows.block(g.first_row, 0, g.rows, 4) += src_lo.topRows(g.rows);
  };
  for (int j = 0; j <= n_steps; ++j) {
    const double t = j == n_steps ? d.t_end : d.t_start + j * h;
    const double t_next = j == n_steps ? std::numeric_limits<double>::infinity() : d.t_start + (j + 1) * h;
    const double eps = kTimeEps * std::max(1.0, std::abs(t));
    while (next < groups.size() && groups[next].time <= t + eps) {
      emit(groups[next], current, current_lo);
      ++next;
    }
    while (next < groups.size() && groups[next].time < t_next - eps && j < n_steps) {
      Eigen::MatrixXd partial = current;
      Eigen::MatrixXd partial_lo = current_lo;
      engine.step(detail::row_block(partial, 0, base_rows, &partial_lo), detail::step_ops(groups[next].time - t, order),
                  d.u_a, d.u_b);
      emit(groups[next], partial, partial_lo);
      ++next;
    }
    if (j < n_steps) {
      engine.step(detail::row_block(current, 0, base_rows, &current_lo), ops, d.u_a, d.u_b);
      if (steps_taken) ++*steps_taken;
    }
  }
}

bool time_invariant(const std::vector<DriveInterval>& schedule) {
  return std::all_of(schedule.begin(), schedule.end(), [&](const DriveInterval& d) {
    return d.u_a == schedule.front().u_a && d.u_b == schedule.front().u_b;
  });
}

double drive_at(const std::vector<DriveInterval>& schedule, double t, bool channel_b) {
  for (const auto& d : schedule) {
    if (t < d.t_end) return channel_b ? d.u_b : d.u_a;
  }
  return channel_b ? schedule.back().u_b : schedule.back().u_a;
}

void validate_initial(const CovarianceMatrix& initial, const DiscretizedBath& bath) {
  const int expected = 4 + 2 * bath.n_modes();
  if (initial.dim() != expected) {
    throw ConfigError(fmt::format("initial covariance has dimension {}, expected 2 (2 + N) = {}", initial.dim(),
                                  expected));
  }
}

}  // namespace

double resolve_step(const IntegrationSettings& settings, const DiscretizedBath& bath, double segment_length) {
  const double w_max = bath.omega_max();
  if (settings.dt < 0.0) throw ConfigError(fmt::format("integration.dt must be >= 0, got {}", settings.dt));
  if (settings.dt > 0.0) {
    if (w_max > 0.0 && settings.dt > 0.4 / w_max) {
      throw ConfigError(fmt::format("integration.dt = {} is too large for stability; need dt <= 0.4 / omega_max = {}",
                                    settings.dt, 0.4 / w_max));
    }
    return settings.dt;
  }
  double dt = segment_length / 8.0;
  if (w_max > 0.0) dt = std::min(dt, 0.2 / w_max);
  return dt;
}

std::vector<DriveInterval> drive_schedule(const ControlPulse& pulse) {
  std::vector<DriveInterval> s;
  s.reserve(pulse.n_segments());
  for (int i = 0; i < pulse.n_segments(); ++i) {
    s.push_back({pulse.segment_start(i), pulse.segment_end(i), pulse.values_a()[i], pulse.values_b()[i], i});
  }
  return s;
}

Generator::Generator(const DiscretizedBath& bath, double u_a, double u_b, bool counterterm)
    : n_bath_(bath.n_modes()),
      omegas_(bath.omegas),
      couplings_(bath.couplings),
      mu_(counterterm ? bath.counterterm_sum : 0.0),
      u_a_(u_a),
      u_b_(u_b) {}

Eigen::MatrixXd Generator::stiffness() const {
  const int m = 2 + n_bath_;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m, m);
  k(0, 0) = 1.0 + u_a_ + 2.0 * mu_;
  k(1, 1) = 1.0 + u_b_ + 2.0 * mu_;
  k(0, 1) = k(1, 0) = 2.0 * mu_;
  for (int j = 0; j < n_bath_; ++j) {
    k(2 + j, 2 + j) = omegas_[j] * omegas_[j];
    k(0, 2 + j) = k(2 + j, 0) = couplings_[j];
    k(1, 2 + j) = k(2 + j, 1) = couplings_[j];
  }
  return k;
}

Eigen::MatrixXd Generator::hamiltonian() const {
  const Eigen::MatrixXd k = stiffness();
  const int m = static_cast<int>(k.rows());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * m, 2 * m);
  for (int i = 0; i < m; ++i) {
    h(2 * i + 1, 2 * i + 1) = 1.0;
    for (int j = 0; j < m; ++j) h(2 * i, 2 * j) = k(i, j);
  }
  return h;
}

Eigen::MatrixXd Generator::dense() const { return symplectic_form(dim()) * hamiltonian(); }

Generator assemble_generator(const ControlPulse& pulse, const DiscretizedBath& bath, double t, bool counterterm) {
  if (t < 0.0 || t > pulse.t_final()) {
    throw std::out_of_range(fmt::format("generator time {} outside [0, {}]", t, pulse.t_final()));
  }
  return Generator(bath, pulse.u_a(t), pulse.u_b(t), counterterm);
}

CovarianceMatrix PropagationResult::covariance(std::size_t i) const { return CovarianceMatrix(reduced.at(i)); }
double PropagationResult::log_negativity(std::size_t i) const { return std::max(0.0, neg_log_nu(i)); }
double PropagationResult::neg_log_nu(std::size_t i) const {
  if (i < roots.size()) return neg_log_nu_gradient_from_root(roots[i]).value;
  return bathent::neg_log_nu(covariance(i));
}
std::vector<double> PropagationResult::symplectic_eigenvalues(std::size_t i) const {
  if (i < roots.size()) return symplectic_eigenvalues_from_root(roots[i]);
  return bathent::symplectic_eigenvalues(covariance(i));
}
double PropagationResult::det_gamma(std::size_t i) const { return bathent::det_gamma(covariance(i)); }

std::vector<double> uniform_samples(double t_final, int n) {
  if (n < 1) throw ConfigError(fmt::format("sample count must be >= 1, got {}", n));
  std::vector<double> t(n + 1);
  for (int i = 0; i < n; ++i) t[i] = t_final * i / n;
  t[n] = t_final;
  return t;
}

PropagationResult propagate_schedule(const CovarianceMatrix& initial, const std::vector<DriveInterval>& schedule,
                                     const DiscretizedBath& bath, const IntegrationSettings& settings, double dt,
                                     std::span<const double> samples) {
  validate_initial(initial, bath);
  check_schedule(schedule);
  if (samples.empty()) throw ConfigError("propagation needs at least one sample time");
  if (!std::is_sorted(samples.begin(), samples.end()) || samples.front() < 0.0) {
    throw ConfigError("sample times must be sorted and non-negative");
  }
  if (!(dt > 0.0)) throw ConfigError("integration step must be positive");

  const SplitEngine engine(bath, settings.counterterm);
  const int n = engine.dim();
  const int k_samples = static_cast<int>(samples.size());
  const int n_probe = std::max(0, settings.symplectic_probes);
  const Eigen::MatrixXd probes = probe_rows(n_probe, n);

  // Group layout: latest sample first (rows 0..3 plus probes), then decreasing time.
  std::vector<int> order_desc(k_samples);
  std::iota(order_desc.begin(), order_desc.end(), 0);
  std::stable_sort(order_desc.begin(), order_desc.end(), [&](int a, int b) { return samples[a] > samples[b]; });
  std::vector<RowGroup> groups;
  std::vector<int> first_row_of(k_samples);
  int row = 0;
  for (int g = 0; g < k_samples; ++g) {
    const int rows = g == 0 ? 4 + n_probe : 4;
    groups.push_back({samples[order_desc[g]], row, rows});
    first_row_of[order_desc[g]] = row;
    row += rows;
  }
  Eigen::MatrixXd rows(row, n);
  rows.setZero();
  for (const auto& g : groups) {
    for (int i = 0; i < 4; ++i) rows(g.first_row + i, i) = 1.0;
  }
  if (n_probe > 0) rows.middleRows(4, n_probe) = probes;

  PropagationResult result;
  result.dt = dt;
  if (time_invariant(schedule)) {
    DriveInterval whole = schedule.front();
    whole.t_end = schedule.back().t_end;
    const int n_steps = steps_for(whole.t_end - whole.t_start, dt);
    forward_rows(engine, whole, (whole.t_end - whole.t_start) / n_steps, n_steps, settings.order, groups, rows,
                 4 + n_probe, &result.steps);
  } else {
    backward_rows(engine, schedule, plan_steps(schedule, dt), settings.order, groups, rows, &result.steps);
  }

  {
    Eigen::MatrixXd start(4 + n_probe, n);
    start.setZero();
    for (int i = 0; i < 4; ++i) start(i, i) = 1.0;
    if (n_probe > 0) start.bottomRows(n_probe) = probes;
    result.symplectic_residual = symplectic_defect(rows.topRows(4 + n_probe), start);
  }

  const InitialCovariance sigma0(initial);
  result.times.assign(samples.begin(), samples.end());
  result.reduced.resize(k_samples);
  result.roots.resize(k_samples);
  result.system_energy.resize(k_samples);
  for (int s = 0; s < k_samples; ++s) {
    const double t = samples[s];
    if (!rows.middleRows(first_row_of[s], 4).allFinite()) {
      throw PropagationError(fmt::format("non-finite propagator at t = {}", t), t);
    }
    const Eigen::Matrix4d root = root_of_group(sigma0, rows, first_row_of[s]);
    const Eigen::Matrix4d sig = sigma_from_root(root);
    check_reduced_state(root, t, settings);
    result.reduced[s] = sig;
    result.roots[s] = root;
    const double ua = drive_at(schedule, t, false);
    const double ub = drive_at(schedule, t, true);
    result.system_energy[s] = 0.5 * (sig(1, 1) + (1.0 + ua) * sig(0, 0) + sig(3, 3) + (1.0 + ub) * sig(2, 2));
  }

  if (settings.retain_full_state) {
    auto record = std::make_shared<TrajectoryRecord>(TrajectoryRecord{
        initial, schedule, settings, dt, bath.n_modes(), bath.counterterm_sum});
    result.retained = std::move(record);
  }
  return result;
}

PropagationResult propagate(const CovarianceMatrix& initial, const ControlPulse& pulse, const DiscretizedBath& bath,
                            const IntegrationSettings& settings, std::span<const double> samples) {
  const double dt = resolve_step(settings, bath, pulse.segment_length());
  if (!samples.empty() && samples.back() > pulse.t_final() * (1.0 + kTimeEps)) {
    throw ConfigError(fmt::format("sample time {} lies beyond t_f = {}", samples.back(), pulse.t_final()));
  }
  return propagate_schedule(initial, drive_schedule(pulse), bath, settings, dt, samples);
}

PropagationResult continue_free(const PropagationResult& result, const DiscretizedBath& bath, double extra_time,
                                int n_samples) {
  if (!result.retained) {
    throw UsageError("continue_free needs a result propagated with retain_full_state = true");
  }
  const TrajectoryRecord& rec = *result.retained;
  if (rec.n_bath != bath.n_modes() || rec.counterterm_sum != bath.counterterm_sum) {
    throw UsageError("continue_free called with a bath different from the one used for the trajectory");
  }
  if (!(extra_time > 0.0)) throw ConfigError(fmt::format("continuation time must be > 0, got {}", extra_time));
  if (n_samples < 1) throw ConfigError("continuation needs at least one sample");

  std::vector<DriveInterval> schedule = rec.schedule;
  const double t0 = schedule.back().t_end;
  schedule.push_back({t0, t0 + extra_time, 0.0, 0.0, -1});
  std::vector<double> samples(n_samples);
  for (int i = 0; i < n_samples; ++i) samples[i] = i + 1 == n_samples ? t0 + extra_time : t0 + extra_time * (i + 1) / n_samples;

  IntegrationSettings settings = rec.settings;
  settings.retain_full_state = true;
  PropagationResult tail = propagate_schedule(rec.initial, schedule, bath, settings, rec.dt, samples);

  PropagationResult out = result;
  out.times.insert(out.times.end(), tail.times.begin(), tail.times.end());
  out.reduced.insert(out.reduced.end(), tail.reduced.begin(), tail.reduced.end());
  out.roots.insert(out.roots.end(), tail.roots.begin(), tail.roots.end());
  out.system_energy.insert(out.system_energy.end(), tail.system_energy.begin(), tail.system_energy.end());
  out.symplectic_residual = tail.symplectic_residual;
  out.steps += tail.steps;
  out.retained = tail.retained;
  return out;
}

Eigen::Matrix4d final_reduced_covariance(const CovarianceMatrix& initial, const ControlPulse& pulse,
                                         const DiscretizedBath& bath, const IntegrationSettings& settings) {
  return sigma_from_root(final_reduced_root(initial, pulse, bath, settings));
}

Eigen::Matrix4d final_reduced_root(const CovarianceMatrix& initial, const ControlPulse& pulse,
                                   const DiscretizedBath& bath, const IntegrationSettings& settings) {
  validate_initial(initial, bath);
  const double dt = resolve_step(settings, bath, pulse.segment_length());
  const auto schedule = drive_schedule(pulse);
  const SplitEngine engine(bath, settings.counterterm);
  Eigen::MatrixXd rows = Eigen::MatrixXd::Identity(4, engine.dim());
  backward_rows(engine, schedule, plan_steps(schedule, dt), settings.order, {{pulse.t_final(), 0, 4}}, rows, nullptr);
  return root_of_group(InitialCovariance(initial), rows, 0);
}

FinalStateGradient final_state_gradient(const CovarianceMatrix& initial, const ControlPulse& pulse,
                                        const DiscretizedBath& bath, const IntegrationSettings& settings,
                                        const CovarianceCotangent& objective) {
  validate_initial(initial, bath);
  const double dt = resolve_step(settings, bath, pulse.segment_length());
  const auto schedule = drive_schedule(pulse);
  const StepPlan plan = plan_steps(schedule, dt);
  const SplitEngine engine(bath, settings.counterterm);
  const int n = engine.dim();

  // Backward pass with a checkpoint of the rows at the start of every interval.
  std::vector<Eigen::MatrixXd> checkpoints(schedule.size());
  Eigen::MatrixXd rows = Eigen::MatrixXd::Identity(4, n);
  Eigen::MatrixXd lo = Eigen::MatrixXd::Zero(4, 4);
  for (int iv = static_cast<int>(schedule.size()) - 1; iv >= 0; --iv) {
    const auto ops = detail::step_ops(plan.h[iv], settings.order);
    const RowBlock block = detail::row_block(rows, 0, 4, &lo);
    for (int j = 0; j < plan.n_steps[iv]; ++j) engine.step(block, ops, schedule[iv].u_a, schedule[iv].u_b);
    detail::fold_low_part(rows, lo);
    checkpoints[iv] = rows;
  }

  const InitialCovariance sigma0(initial);
  const Eigen::MatrixXd rl = sigma0.root_multiply(rows, 0);
  FinalStateGradient out;
  out.root = covariance_root(rl);
  out.sigma = sigma_from_root(out.root);
  const auto [value, d_sigma, degenerate] = objective(out.root);
  out.value = value;
  out.degenerate = degenerate;
  out.d_u_a.assign(pulse.n_segments(), 0.0);
  out.d_u_b.assign(pulse.n_segments(), 0.0);

  // W^T = G_hat R sigma_0 with G_hat = G + G^T; W advances forward while R sheds each op.
  const Eigen::Matrix4d g_hat = d_sigma + d_sigma.transpose();
  Eigen::MatrixXd w = g_hat * sigma0.sigma_multiply(rl);
  const RowBlock wb = detail::row_block(w, 0, 4);

  auto contraction = [&](const Eigen::MatrixXd& r, int osc, const detail::OscillatorFlow& d) {
    const int q = 2 * osc, p = 2 * osc + 1;
    const double qq = r.col(q).dot(w.col(q));
    const double qp = r.col(q).dot(w.col(p));
    const double pq = r.col(p).dot(w.col(q));
    const double pp = r.col(p).dot(w.col(p));
    return d.c * (qq + pp) + d.s * qp - d.ks * pq;
  };

  for (std::size_t iv = 0; iv < schedule.size(); ++iv) {
    const DriveInterval& d = schedule[iv];
    rows = checkpoints[iv];
    const RowBlock rb = detail::row_block(rows, 0, 4);
    const auto ops = detail::step_ops(plan.h[iv], settings.order);
    double acc_a = 0.0, acc_b = 0.0;
    for (int j = 0; j < plan.n_steps[iv]; ++j) {
      for (const SubOp& op : ops) {
        engine.apply(rb, SubOp{op.kind, -op.tau}, d.u_a, d.u_b, false);
        if (op.kind == OpKind::rotate) {
          acc_a += contraction(rows, 0, detail::oscillator_flow_dk(1.0 + d.u_a, op.tau));
          acc_b += contraction(rows, 1, detail::oscillator_flow_dk(1.0 + d.u_b, op.tau));
        }
        engine.apply(wb, op, d.u_a, d.u_b, true);
      }
    }
    out.d_u_a[d.segment] += acc_a;
    out.d_u_b[d.segment] += acc_b;
  }
  return out;
}

Eigen::MatrixXd accumulated_propagator(const ControlPulse& pulse, const DiscretizedBath& bath,
                                       const IntegrationSettings& settings) {
  const double dt = resolve_step(settings, bath, pulse.segment_length());
  const auto schedule = drive_schedule(pulse);
  const SplitEngine engine(bath, settings.counterterm);
  Eigen::MatrixXd rows = Eigen::MatrixXd::Identity(engine.dim(), engine.dim());
  backward_rows(engine, schedule, plan_steps(schedule, dt), settings.order, {{pulse.t_final(), 0, engine.dim()}},
                rows, nullptr);
  return rows;
}

Eigen::Matrix2d FundamentalSolutions::propagator(std::size_t i) const {
  Eigen::Matrix2d s;
  s << phi1[i], phi2[i], dphi1[i], dphi2[i];
  return s;
}

NormalModeTrajectory propagate_normal_mode_semianalytic(const ControlPulse& pulse, const Eigen::Matrix2d& initial_minus,
                                                        std::span<const double> samples, double substep) {
  if (pulse.mode() != DriveMode::symmetric) {
    throw ConfigError("the fundamental-solution backend requires a symmetric pulse");
  }
  if (!(substep > 0.0)) throw ConfigError("semi-analytic substep must be positive");
  if (!std::is_sorted(samples.begin(), samples.end())) throw ConfigError("sample times must be sorted");

  // Breakpoints: segment boundaries and samples.
  std::vector<double> marks;
  for (int i = 0; i <= pulse.n_segments(); ++i) marks.push_back(i == pulse.n_segments() ? pulse.t_final() : pulse.segment_start(i));
  for (double t : samples) {
    if (t < 0.0 || t > pulse.t_final() * (1.0 + kTimeEps)) {
      throw ConfigError(fmt::format("sample time {} outside [0, {}]", t, pulse.t_final()));
    }
    marks.push_back(std::min(t, pulse.t_final()));
  }
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());

  NormalModeTrajectory out;
  FundamentalSolutions& fs = out.fundamentals;
  Eigen::Vector4d y(1.0, 0.0, 0.0, 1.0);  // phi1, dphi1, phi2, dphi2
  auto record = [&](double t) {
    fs.times.push_back(t);
    fs.phi1.push_back(y(0));
    fs.dphi1.push_back(y(1));
    fs.phi2.push_back(y(2));
    fs.dphi2.push_back(y(3));
  };
  std::size_t next_sample = 0;
  auto emit_samples = [&](double t) {
    while (next_sample < samples.size() && std::abs(std::min(samples[next_sample], pulse.t_final()) - t) <= kTimeEps * std::max(1.0, t)) {
      const Eigen::Matrix2d s = fs.propagator(fs.times.size() - 1);
      out.times.push_back(samples[next_sample]);
      out.sigma_minus.push_back(s * initial_minus * s.transpose());
      ++next_sample;
    }
  };
  record(marks.front());
  emit_samples(marks.front());
  for (std::size_t m = 0; m + 1 < marks.size(); ++m) {
    const double a = marks[m], b = marks[m + 1];
    const double stiffness = 1.0 + pulse.u_a(0.5 * (a + b));
    auto rhs = [&](const Eigen::Vector4d& v) {
      return Eigen::Vector4d(v(1), -stiffness * v(0), v(3), -stiffness * v(2));
    };
    const int n = steps_for(b - a, substep);
    const double h = (b - a) / n;
    for (int j = 0; j < n; ++j) {
      const Eigen::Vector4d k1 = rhs(y);
      const Eigen::Vector4d k2 = rhs(y + 0.5 * h * k1);
      const Eigen::Vector4d k3 = rhs(y + 0.5 * h * k2);
      const Eigen::Vector4d k4 = rhs(y + h * k3);
      y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    record(b);
    emit_samples(b);
  }
  return out;
}

NormalModeTrajectory propagate_normal_mode_semianalytic(const ControlPulse& pulse, double beta,
                                                        std::span<const double> samples, double substep) {
  if (!(beta > 0.0)) throw ConfigError(fmt::format("beta must be > 0, got {}", beta));
  const Eigen::Matrix2d thermal = 0.5 / std::tanh(0.5 * beta) * Eigen::Matrix2d::Identity();
  return propagate_normal_mode_semianalytic(pulse, thermal, samples, substep);
}

}  // namespace bathent
