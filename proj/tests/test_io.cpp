#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "bathent/errors.hpp"
#include "bathent/io.hpp"
#include "doctest.h"
#include "random_states.hpp"

using namespace bathent;

namespace {

template <typename Table>
void check_csv_round_trip(const Table& table) {
  const std::string once = write_csv(table);
  const CsvTable back = read_csv(once);
  CHECK(back.header == table.header);
  CHECK(back.rows == table.rows);
  CHECK(write_csv(back) == once);
}

std::size_t parse_offset(std::string_view text) {
  try {
    read_csv(text);
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("no ParseError");
  return 0;
}

}  // namespace

TEST_CASE("csv round trip is exact") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1e3);
  CsvTable t{{"a", "b,c", "quoted \"x\""}, {}};
  for (int i = 0; i < 50; ++i) t.rows.push_back({n(rng), std::ldexp(n(rng), -900), 1.0 / 3.0});
  t.rows.push_back({std::numeric_limits<double>::quiet_NaN(), INFINITY, -INFINITY});
  const std::string once = write_csv(t);
  const CsvTable back = read_csv(once);
  CHECK(back.header == t.header);
  for (std::size_t i = 0; i + 1 < t.rows.size(); ++i) CHECK(back.rows[i] == t.rows[i]);
  CHECK(std::isnan(back.rows.back()[0]));
  CHECK(write_csv(back) == once);
}

TEST_CASE("csv errors carry byte offsets") {
  CHECK(parse_offset("a,b\n1,2\n3\n") == 8);
  CHECK(parse_offset("a,b\n1,x2\n") == 6);
  CHECK(parse_offset("a,b\n\"1,2\n") == 4);
  CHECK_THROWS_AS(read_csv(""), ParseError);
  // CRLF and a missing final newline are accepted.
  const auto t = read_csv("x,y\r\n1,2\r\n3,4");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][1] == 4.0);
}

TEST_CASE("covariance json round trip") {
  std::mt19937_64 rng(7);
  const auto s = testing::random_physical_state(rng, 2);
  const std::string once = dump_json(covariance_to_json(s));
  const auto back = covariance_from_json(parse_json(once));
  CHECK(back == s);
  CHECK(dump_json(covariance_to_json(back)) == once);
}

TEST_CASE("covariance json errors") {
  try {
    parse_json("{\"dim\": 2,\n \"entries\": [1, 2,, 3]}");
    FAIL("no ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 29);
  }
  CHECK_THROWS_AS(covariance_from_json(parse_json("{\"dim\": 2, \"entries\": [1, 0, 0]}")), ParseError);
  CHECK_THROWS_AS(covariance_from_json(parse_json("{\"entries\": [1]}")), ParseError);
  CHECK_THROWS_AS(covariance_from_json(parse_json("{\"dim\": 1, \"entries\": [\"x\"]}")), ParseError);
  CHECK_THROWS_AS(covariance_from_json(parse_json("{\"dim\": 2, \"entries\": [1, 2, 3, 4]}")), InvalidStateError);
}

TEST_CASE("table exports round trip") {
  BathSpec spec;
  spec.n_modes = 30;
  spec.omega_max = 10.0;
  spec.grid_kind = GridKind::linear;
  const auto bath = discretize(spec);
  check_csv_round_trip(bath_table(bath));

  const PhaseSpaceGrid grid{-3, 3, -2, 2, 7, 5};
  const auto w = wigner_grid(CovarianceMatrix::vacuum(1), Eigen::Vector2d::Zero(), grid);
  const auto wt = wigner_table(w, grid);
  CHECK(wt.rows.size() == 35);
  CHECK(wt.header == std::vector<std::string>{"Q", "P", "W"});
  check_csv_round_trip(wt);

  const auto pulse = ControlPulse::parametric_resonance(2.0 * std::numbers::pi, 8, DriveMode::symmetric, 4.0, 1.0);
  const auto r = propagate(thermal_initial_covariance(bath, 1.0), pulse, bath, {}, uniform_samples(pulse.t_final(), 4));
  const auto ts = timeseries_table(r);
  CHECK(ts.header.size() == 14);
  CHECK(ts.rows.size() == r.size());
  check_csv_round_trip(ts);
  check_csv_round_trip(bar_table(r.covariance(r.size() - 1)));

  const auto pt = pulse_table(pulse);
  check_csv_round_trip(pt);
  CHECK(pulse_from_table(read_csv(write_csv(pt)), DriveMode::symmetric, 4.0) == pulse);
  CHECK_THROWS_AS(pulse_from_table(read_csv(write_csv(pt)), DriveMode::single_site, 4.0), ConfigError);
  CHECK_THROWS_AS(pulse_from_table(read_csv("t_start,u_A\n0,1\n"), DriveMode::free, 4.0), ParseError);
}

TEST_CASE("snapshot carries diagnostics") {
  const auto tmsv = CovarianceMatrix::two_mode_squeezed_vacuum(1.0);
  const Json d = diagnostics_to_json(tmsv, 1.0);
  CHECK(d["semi_epr"]["label"] == "EPR");
  CHECK(d["log_negativity"].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(d["mode_count_estimate"].get<double>() == doctest::Approx(std::exp(2.0) / 2.0).epsilon(1e-12));
  CHECK(d["det_gamma_decomposition"]["four_det_gamma"].get<double>() ==
        doctest::Approx(d["det_gamma_decomposition"]["four_det_gamma_direct"].get<double>()).epsilon(1e-9));
  const Json v = diagnostics_to_json(CovarianceMatrix::vacuum(2), 1.0);
  CHECK(v["semi_epr"]["label"] == "neither");
  CHECK(v["log_negativity"].get<double>() == 0.0);
}

TEST_CASE("report json round trip") {
  BathSpec spec;
  spec.n_modes = 20;
  spec.omega_max = 6.0;
  spec.grid_kind = GridKind::linear;
  const auto obj = make_objective(spec, PulseTemplate{2.0 * std::numbers::pi, 6, DriveMode::symmetric, 2.0}, 1e-3);
  OptimizerSettings s;
  s.budget = 8;
  s.multistart = 2;
  s.fast_inner_loop = false;
  s.samples = 3;
  const auto rep = optimize(obj, spec, s);
  const std::string once = dump_json(report_to_json(rep));
  CHECK(dump_json(parse_json(once)) == once);
  const Json j = parse_json(once);
  CHECK(j["seed"] == 1);
  CHECK(j["trace"].size() == rep.trace.size());
  CHECK(j.contains("timing"));
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "bathent_io_test";
  std::filesystem::create_directories(dir);
  write_text_file(dir / "x.txt", "hello\n");
  CHECK(read_text_file(dir / "x.txt") == "hello\n");
  CHECK_THROWS_AS(read_text_file(dir / "missing.txt"), IoError);
  CHECK_THROWS_AS(write_text_file(dir / "no" / "such" / "dir.txt", "x"), IoError);
  std::filesystem::remove_all(dir);
}
