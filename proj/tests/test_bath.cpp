#include <cmath>
#include <numbers>

#include "bathent/bath.hpp"
#include "bathent/errors.hpp"
#include "doctest.h"

using namespace bathent;

namespace {

// Composite Simpson oracle for (1/pi) int_0^w_max J(w)/w dw.
double counterterm_quadrature(const BathSpec& spec, double w_max) {
  const int n = 200000;
  const double h = w_max / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = i * h;
    const double x = w / spec.omega_c;
    const double f = spec.eta / ((1 + x * x) * (1 + x * x));  // J(w)/w, finite at w = 0
    sum += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return sum * h / 3.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("spectral density") {
  BathSpec spec;
  CHECK(spectral_density(spec, 0.0) == 0.0);
  CHECK(spectral_density(spec, 1.0) == doctest::Approx(0.1 / std::pow(1.0 + 1.0 / 2500.0, 2)).epsilon(1e-15));
  CHECK(spectral_density(spec, 1.0) == doctest::Approx(0.0999200).epsilon(1e-6));
  CHECK(spectral_density(spec, 50.0) == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("single-mode coupling") {
  BathSpec spec;
  const auto bath = discretize_on(spec, {1.0}, {1.0});
  CHECK(bath.couplings[0] * bath.couplings[0] == doctest::Approx(0.063611).epsilon(1e-5));
  CHECK(bath.counterterm_sum == doctest::Approx(0.5 * bath.couplings[0] * bath.couplings[0]));
}

TEST_CASE("default grid") {
  BathSpec spec;
  const auto bath = discretize(spec);
  REQUIRE(bath.n_modes() == 1200);
  CHECK(bath.omegas[999] == doctest::Approx(20.0));
  CHECK(bath.omegas.back() == doctest::Approx(200.0));
  for (int k = 1; k < bath.n_modes(); ++k) CHECK(bath.omegas[k] > bath.omegas[k - 1]);
  for (double c : bath.couplings) CHECK(c >= 0.0);
  for (double m : bath.masses) CHECK(m == 1.0);
  CHECK(std::abs(bath.counterterm_sum / counterterm_quadrature(spec, 200.0) - 1.0) < 0.01);
}

TEST_CASE("counterterm matches quadrature and is refinement stable") {
  BathSpec spec;
  spec.n_modes = 2000;
  const auto bath = discretize(spec);
  const double quad = counterterm_quadrature(spec, 200.0);
  CHECK(std::abs(bath.counterterm_sum / quad - 1.0) < 0.01);
  // Truncation at 4 w_c removes a small tail of the analytic eta w_c / 4.
  CHECK(quad < 1.25);
  CHECK(quad > 1.2);

  spec.n_modes = 4000;
  const auto fine = discretize(spec);
  CHECK(std::abs(fine.counterterm_sum / bath.counterterm_sum - 1.0) < 0.005);

  spec.grid_kind = GridKind::linear;
  const auto lin = discretize(spec);
  CHECK(std::abs(lin.counterterm_sum / quad - 1.0) < 0.01);
}

TEST_CASE("spec validation and recurrence guard") {
  BathSpec spec;
  spec.eta = -1.0;
  CHECK_THROWS_AS(discretize(spec), ConfigError);
  spec = BathSpec{};
  spec.beta = 0.0;
  CHECK_THROWS_AS(discretize(spec), ConfigError);
  spec = BathSpec{};
  spec.n_linear = 5000;
  CHECK_THROWS_AS(discretize(spec), ConfigError);
  spec = BathSpec{};
  CHECK_NOTHROW(discretize(spec, 6.0 * std::numbers::pi));
  CHECK_THROWS_WITH_AS(discretize(spec, 200.0), doctest::Contains("recurrence"), ConfigError);
  CHECK_THROWS_AS(grid_kind_from_string("cubic"), ConfigError);
}

TEST_CASE("thermal initial covariance") {
  BathSpec spec;
  const auto bath = discretize_on(spec, {0.5, 1.0, 2.0}, {0.5, 0.5, 1.0});
  const auto s = thermal_initial_covariance(bath, 1.0);
  REQUIRE(s.dim() == 10);
  for (int i = 0; i < 4; ++i) CHECK(s(i, i) == 0.5);
  CHECK(s(6, 6) == doctest::Approx(1.0819767).epsilon(1e-7));
  CHECK(s(7, 7) == doctest::Approx(1.0819767).epsilon(1e-7));
  Eigen::MatrixXd off = s.matrix();
  for (int i = 0; i < 10; i += 2) off.block(i, i, 2, 2).setZero();
  CHECK(off.cwiseAbs().maxCoeff() == 0.0);

  const auto cold = thermal_initial_covariance(bath, 1e6);
  for (int k = 0; k < 3; ++k) {
    CHECK(cold(4 + 2 * k, 4 + 2 * k) == doctest::Approx(1.0 / (2.0 * bath.omegas[k])));
    CHECK(cold(5 + 2 * k, 5 + 2 * k) == doctest::Approx(bath.omegas[k] / 2.0));
  }
}
