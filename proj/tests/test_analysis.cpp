#include <cmath>
#include <numbers>
#include <random>

#include "bathent/analysis.hpp"
#include "bathent/errors.hpp"
#include "doctest.h"
#include "random_states.hpp"

using namespace bathent;

namespace {

// Q_+ thermal with variance c/2, Q_- squeezed vacuum along Q (phi_- = 0), no +- correlations.
CovarianceMatrix thermal_plus_squeezed_minus(double beta, double r) {
  const double c = 1.0 / std::tanh(beta / 2.0);
  NormalModeState nm;
  nm.transform = normal_mode_transform();
  nm.sigma.topLeftCorner<2, 2>() = 0.5 * c * Eigen::Matrix2d::Identity();
  nm.sigma.bottomRightCorner<2, 2>() = SqueezingParams{r, 0.0, 1.0}.reconstruct();
  return CovarianceMatrix(nm.to_local());
}

}  // namespace

TEST_CASE("normal-mode transform is orthogonal and symplectic") {
  const Eigen::Matrix4d t = normal_mode_transform();
  const Eigen::MatrixXd om = symplectic_form(4);
  CHECK((t * t.transpose() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((t * om * t.transpose() - om).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("normal modes of simple states") {
  const auto vac = to_normal_modes(CovarianceMatrix::vacuum(2));
  CHECK((vac.sigma - 0.5 * Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-15);

  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    const auto s = testing::random_physical_state(rng, 2);
    const auto nm = to_normal_modes(s);
    CHECK((nm.to_local() - s.matrix()).cwiseAbs().maxCoeff() < 1e-12 * s.matrix().cwiseAbs().maxCoeff());
  }
  CHECK_THROWS_AS(to_normal_modes(CovarianceMatrix::vacuum(1)), InvalidStateError);
}

TEST_CASE("two-mode squeezed vacuum factorizes into opposite single-mode squeezers") {
  for (double r : {0.1, 0.5, 1.0, 2.0}) {
    const auto nm = to_normal_modes(CovarianceMatrix::two_mode_squeezed_vacuum(r));
    CHECK(nm.cross().cwiseAbs().maxCoeff() < 1e-12);
    const auto p = squeezing_decomposition(nm.plus());
    const auto m = squeezing_decomposition(nm.minus());
    CHECK(p.r == doctest::Approx(r).epsilon(1e-12));
    CHECK(m.r == doctest::Approx(r).epsilon(1e-12));
    CHECK(p.a == doctest::Approx(1.0));
    CHECK(m.a == doctest::Approx(1.0));
    // Opposite signs: the stretched axes are orthogonal.
    CHECK(std::abs(std::abs(p.phi - m.phi) - std::numbers::pi / 2.0) < 1e-12);
    const auto report = semi_epr_report(nm);
    CHECK(report.label == (r >= 0.2 ? EprLabel::epr : EprLabel::neither));
  }
}

TEST_CASE("squeezing decomposition examples") {
  const auto vac = squeezing_decomposition(0.5 * Eigen::Matrix2d::Identity());
  CHECK(vac.r == 0.0);
  CHECK(vac.a == doctest::Approx(1.0));
  CHECK(vac.phi == 0.0);

  const auto th = squeezing_decomposition(CovarianceMatrix::thermal(1, 1.0).matrix());
  CHECK(th.r == doctest::Approx(0.0));
  CHECK(th.a == doctest::Approx(2.1639534137).epsilon(1e-10));

  Eigen::Matrix2d sq = Eigen::Vector2d(std::exp(2.0) / 2.0, std::exp(-2.0) / 2.0).asDiagonal();
  const auto s = squeezing_decomposition(sq);
  CHECK(s.r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.a == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.phi == 0.0);

  Eigen::Matrix2d bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(squeezing_decomposition(bad), InvalidStateError);
}

TEST_CASE("squeezing decomposition round trip on random positive matrices") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ang(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> lg(-3.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    const Eigen::Matrix2d rot = Eigen::Rotation2Dd(ang(rng)).toRotationMatrix();
    const Eigen::Vector2d d(std::exp(lg(rng)), std::exp(lg(rng)));
    const Eigen::Matrix2d m = rot * d.asDiagonal() * rot.transpose();
    const auto p = squeezing_decomposition(m);
    CHECK(p.r >= 0.0);
    CHECK(p.phi >= 0.0);
    CHECK(p.phi < std::numbers::pi);
    CHECK((p.reconstruct() - m).cwiseAbs().maxCoeff() < 1e-9 * m.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("det gamma decomposition") {
  SUBCASE("degenerate normal modes") {
    const auto d = det_gamma_decomposition(to_normal_modes(CovarianceMatrix::thermal(2, 1.0)));
    CHECK(d.four_det_gamma == 0.0);
    CHECK_FALSE(d.cross_correlated);
  }
  SUBCASE("thermal plus, aligned squeezed minus") {
    for (double beta : {0.1, 1.0, 3.0}) {
      for (double r : {0.0, 0.3, 1.2}) {
        const double c = 1.0 / std::tanh(beta / 2.0);
        const auto s = thermal_plus_squeezed_minus(beta, r);
        const auto d = det_gamma_decomposition(to_normal_modes(s));
        CHECK(d.four_det_gamma == doctest::Approx((c * c + 1.0 - 2.0 * c * std::cosh(2.0 * r)) / 4.0).epsilon(1e-12));
        CHECK(d.four_det_gamma == doctest::Approx(4.0 * det_gamma(s)).epsilon(1e-9));
      }
    }
  }
  SUBCASE("two-mode squeezed vacuum") {
    for (double r : {0.2, 1.0}) {
      const auto s = CovarianceMatrix::two_mode_squeezed_vacuum(r);
      const auto d = det_gamma_decomposition(to_normal_modes(s));
      CHECK(d.four_det_gamma == doctest::Approx(-std::pow(std::sinh(2.0 * r), 2)).epsilon(1e-12));
      CHECK(d.four_det_gamma == doctest::Approx(4.0 * det_gamma(s)).epsilon(1e-9));
    }
  }
  SUBCASE("random states without +- correlations") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 100; ++k) {
      const auto a = testing::random_physical_state(rng, 1).matrix();
      const auto b = testing::random_physical_state(rng, 1).matrix();
      NormalModeState nm;
      nm.transform = normal_mode_transform();
      nm.sigma.topLeftCorner<2, 2>() = a;
      nm.sigma.bottomRightCorner<2, 2>() = b;
      const auto d = det_gamma_decomposition(nm);
      CHECK(std::abs(d.four_det_gamma - 4.0 * det_gamma(CovarianceMatrix(nm.to_local()))) <
            1e-9 * std::max(1.0, std::abs(d.four_det_gamma)));
    }
  }
  SUBCASE("cross-correlated states are flagged") {
    NormalModeState nm = to_normal_modes(CovarianceMatrix::vacuum(2));
    nm.sigma(0, 2) = nm.sigma(2, 0) = 0.1;
    CHECK(det_gamma_decomposition(nm).cross_correlated);
  }
}

TEST_CASE("temperature bound") {
  CHECK(temperature_threshold(1.0) == doctest::Approx(0.5 * std::acosh(1.3130352855)).epsilon(1e-9));
  CHECK(temperature_threshold(1.0) == doctest::Approx(0.5 * std::log(2.1639534137)).epsilon(1e-9));
  CHECK(temperature_threshold(50.0) < 1e-10);
  CHECK(temperature_bound_check(0.39, 1.0).satisfied);
  CHECK_FALSE(temperature_bound_check(0.38, 1.0).satisfied);
  CHECK(temperature_bound_check(0.5, 1.0).margin == doctest::Approx(std::cosh(1.0) - 1.0 / std::tanh(1.0)));
  CHECK_THROWS_AS(temperature_bound_check(0.5, 0.0), ConfigError);
}

TEST_CASE("temperature bound agrees with the sign of det gamma on the grid") {
  for (double beta : {0.1, 0.5, 1.0, 2.0, 10.0}) {
    for (int i = 0; i <= 10; ++i) {
      const double r = 0.2 * i;
      const double dg = det_gamma(thermal_plus_squeezed_minus(beta, r));
      const auto b = temperature_bound_check(r, beta);
      CAPTURE(beta);
      CAPTURE(r);
      if (std::abs(b.margin) > 1e-12) CHECK(b.satisfied == (dg < 0.0));
    }
    // The zero crossing of det gamma sits on the analytic threshold.
    const double r0 = temperature_threshold(beta);
    const double c = 1.0 / std::tanh(beta / 2.0);
    CHECK(std::abs(c * c + 1.0 - 2.0 * c * std::cosh(2.0 * r0)) < 1e-9);
  }
}

TEST_CASE("mode count estimate") {
  CHECK(mode_count_estimate(0.0) == 0.5);
  CHECK(mode_count_estimate(4.37) == doctest::Approx(39.5).epsilon(2e-3));
  CHECK(mode_count_estimate(2.33) == doctest::Approx(5.14).epsilon(2e-3));
  CHECK_THROWS_AS(mode_count_estimate(-1.0), ConfigError);
}

TEST_CASE("semi-EPR classification") {
  CHECK(semi_epr_report(to_normal_modes(CovarianceMatrix::vacuum(2))).label == EprLabel::neither);
  CHECK(semi_epr_report(to_normal_modes(thermal_plus_squeezed_minus(1.0, 0.8))).label == EprLabel::semi_epr);
  CHECK(semi_epr_report(to_normal_modes(thermal_plus_squeezed_minus(1.0, 0.1))).label == EprLabel::neither);

  SemiEprThresholds loose;
  loose.min_minus_squeezing = 0.05;
  CHECK(semi_epr_report(to_normal_modes(thermal_plus_squeezed_minus(1.0, 0.1)), loose).label == EprLabel::semi_epr);

  NormalModeState nm = to_normal_modes(thermal_plus_squeezed_minus(1.0, 0.8));
  nm.sigma(1, 2) = nm.sigma(2, 1) = 0.05;
  const auto rep = semi_epr_report(nm);
  CHECK(rep.cross_correlated);
  CHECK(rep.normal_mode_sigma == nm.sigma);
}

TEST_CASE("root-based normal modes agree with the covariance path") {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 50; ++k) {
    const auto s = testing::random_physical_state(rng, 2);
    const Eigen::Matrix4d f = covariance_root(Eigen::LLT<Eigen::MatrixXd>(s.matrix()).matrixL());
    const auto a = to_normal_modes(s);
    const auto b = to_normal_modes_from_root(f);
    CHECK((a.sigma - b.sigma).cwiseAbs().maxCoeff() < 1e-12 * s.matrix().cwiseAbs().maxCoeff());
    for (int m = 0; m < 2; ++m) {
      const Eigen::Matrix2d r = b.marginal_root(m);
      const Eigen::Matrix2d marginal = m == 0 ? a.plus() : a.minus();
      CHECK((r.transpose() * r - marginal).cwiseAbs().maxCoeff() < 1e-12 * marginal.cwiseAbs().maxCoeff());
      const auto p = squeezing_decomposition(marginal);
      const auto q = squeezing_decomposition_from_root(r);
      CHECK(q.r == doctest::Approx(p.r).epsilon(1e-9));
      CHECK(q.a == doctest::Approx(p.a).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(to_normal_modes(CovarianceMatrix::vacuum(2)).marginal_root(0), InvalidStateError);
}

TEST_CASE("squeezing from a root survives extreme squeezing") {
  // r = 10: the covariance alone has det = e^{40}/4 * e^{-40} computed from entries near 1e17.
  const double r = 10.0, phi = 0.3;
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(phi).toRotationMatrix();
  const Eigen::Matrix2d root = Eigen::Vector2d(std::exp(r), std::exp(-r)).asDiagonal() * rot.transpose() /
                               std::numbers::sqrt2;
  const auto p = squeezing_decomposition_from_root(root);
  CHECK(p.r == doctest::Approx(r).epsilon(1e-12));
  CHECK(p.a == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.phi == doctest::Approx(phi).epsilon(1e-12));
}
