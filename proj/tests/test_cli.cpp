#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <fmt/format.h>

#include "bathent/io.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace bathent;

namespace {

const fs::path kWork = fs::temp_directory_path() / "bathent_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(BATHENT_CLI) + " " + args + " 2>" + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string stderr_text() { return read_text_file(kWork / "stderr.txt"); }

fs::path write(const std::string& name, const std::string& text) {
  write_text_file(kWork / name, text);
  return kWork / name;
}

const char* kSmall = R"(scenario: cli
bath:
  n_modes: 60
  omega_max: 10
  grid: linear
pulse:
  t_final: 2pi
  n_segments: 8
  source: resonance
  amplitude: 1
integration:
  samples: 8
wigner:
  nq: 5
  np: 4
optimizer:
  budget: 8
  multistart: 2
  fast_inner_loop: false
)";

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  ~Workspace() { fs::remove_all(kWork); }
};

}  // namespace

TEST_CASE("simulate writes validated artifacts") {
  Workspace ws;
  const auto cfg = write("small.yaml", kSmall);
  REQUIRE(run(fmt::format("simulate --config {} --out {}", cfg.string(), (kWork / "sim").string())) == 0);
  for (const char* f : {"timeseries.csv", "snapshot.json", "wigner_plus.csv", "wigner_minus.csv", "bar.csv",
                        "bath.csv", "pulse.csv", "effective_config.yaml"}) {
    CAPTURE(f);
    CHECK(fs::exists(kWork / "sim" / f));
  }
  const CsvTable ts = read_csv(read_text_file(kWork / "sim" / "timeseries.csv"));
  CHECK(ts.rows.size() == 9);
  CHECK(read_csv(read_text_file(kWork / "sim" / "wigner_plus.csv")).rows.size() == 20);
  CHECK(ts.rows.back()[ts.column("E_N")] > 0.0);

  // A stored pulse file reproduces the run.
  auto with_file = std::string(kSmall);
  with_file.replace(with_file.find("source: resonance"), 17, "source: file\n  file: sim/pulse.csv");
  const auto cfg2 = write("from_file.yaml", with_file);
  REQUIRE(run(fmt::format("simulate --config {} --out {}", cfg2.string(), (kWork / "sim2").string())) == 0);
  CHECK(read_text_file(kWork / "sim2" / "timeseries.csv") == read_text_file(kWork / "sim" / "timeseries.csv"));

  // Analyze the snapshot it wrote.
  REQUIRE(run(fmt::format("analyze {} --out {}", (kWork / "sim" / "snapshot.json").string(),
                          (kWork / "an").string())) == 0);
  const Json d = parse_json(read_text_file(kWork / "an" / "diagnostics.json"));
  CHECK(d["log_negativity"].get<double>() == doctest::Approx(ts.rows.back()[ts.column("E_N")]).epsilon(1e-9));
}

TEST_CASE("zero pulse without a bath gives identically zero E_N") {
  Workspace ws;
  auto text = std::string(kSmall);
  text.replace(text.find("source: resonance"), 17, "source: zero");
  text.replace(text.find("bath:\n"), 6, "bath:\n  eta: 0\n");
  const auto cfg = write("zero.yaml", text);
  REQUIRE(run(fmt::format("simulate --config {} --out {}", cfg.string(), (kWork / "z").string())) == 0);
  const CsvTable ts = read_csv(read_text_file(kWork / "z" / "timeseries.csv"));
  for (const auto& row : ts.rows) CHECK(row[ts.column("E_N")] == 0.0);
}

TEST_CASE("zero pulse with the bath ends separable") {
  Workspace ws;
  auto text = std::string(kSmall);
  text.replace(text.find("source: resonance"), 17, "source: zero");
  const auto cfg = write("zero.yaml", text);
  REQUIRE(run(fmt::format("simulate --config {} --out {}", cfg.string(), (kWork / "z").string())) == 0);
  const CsvTable ts = read_csv(read_text_file(kWork / "z" / "timeseries.csv"));
  CHECK(ts.rows.back()[ts.column("E_N")] == 0.0);
}

TEST_CASE("optimize is reproducible for a seed") {
  Workspace ws;
  const auto cfg = write("small.yaml", kSmall);
  REQUIRE(run(fmt::format("optimize --config {} --out {} --seed 3", cfg.string(), (kWork / "a").string())) == 0);
  REQUIRE(run(fmt::format("optimize --config {} --out {} --seed 3 --workers 2", cfg.string(),
                          (kWork / "b").string())) == 0);
  Json a = parse_json(read_text_file(kWork / "a" / "report.json"));
  Json b = parse_json(read_text_file(kWork / "b" / "report.json"));
  CHECK(a["seed"] == 3);
  a.erase("timing");
  b.erase("timing");
  CHECK(a == b);
  CHECK(read_text_file(kWork / "a" / "pulse.csv") == read_text_file(kWork / "b" / "pulse.csv"));
  const CsvTable traj = read_csv(read_text_file(kWork / "a" / "timeseries.csv"));
  CHECK(traj.column("neg_log_nu") >= 0);
}

TEST_CASE("sweep writes one summary row per value") {
  Workspace ws;
  const auto cfg = write("small.yaml", kSmall);
  REQUIRE(run(fmt::format("sweep --config {} --out {} --axis eta --values 0.05,0.1", cfg.string(),
                          (kWork / "s").string())) == 0);
  const CsvTable t = read_csv(read_text_file(kWork / "s" / "summary.csv"));
  REQUIRE(t.rows.size() == 2);
  CHECK(t.header == std::vector<std::string>{"value", "best_E_N", "neg_log_nu", "wall_seconds"});
  CHECK(t.rows[0][0] == 0.05);
  CHECK(fs::exists(kWork / "s" / "eta_000" / "report.json"));
  CHECK(fs::exists(kWork / "s" / "eta_001" / "report.json"));
}

TEST_CASE("exit codes") {
  Workspace ws;
  CHECK(run("") == 5);
  CHECK(run("simulate --bogus") == 5);
  CHECK(run("simulate --config /no/such/file.yaml") == 5);

  const auto bad = write("bad.yaml", "bath:\n  eta: -1\n");
  CHECK(run(fmt::format("simulate --config {}", bad.string())) == 2);
  CHECK(stderr_text().find("bad.yaml:2:8") != std::string::npos);

  const auto coarse = write("coarse.yaml", "bath: {n_modes: 60, omega_max: 10, grid: linear}\npulse: {t_final: 200}\n");
  CHECK(run(fmt::format("simulate --config {}", coarse.string())) == 2);
  CHECK(stderr_text().find("recurrence") != std::string::npos);

  const auto squeezed = write("squeezed.yaml", R"(bath: {n_modes: 60, omega_max: 10, grid: linear}
pulse: {t_final: 6, n_segments: 4, source: resonance, amplitude: 4}
integration: {samples: 4, max_variance_trace: 100}
)");
  CHECK(run(fmt::format("simulate --config {} --out {}", squeezed.string(), (kWork / "q").string())) == 3);

  const auto snap = write("bad.json", "{\"dim\": 4, \"entries\": [1, 2");
  CHECK(run(fmt::format("analyze {} --out {}", snap.string(), (kWork / "x").string())) == 4);
  CHECK(stderr_text().find("byte") != std::string::npos);

  const auto tmsv = write("tmsv.json", dump_json(covariance_to_json(CovarianceMatrix::two_mode_squeezed_vacuum(1.0))));
  REQUIRE(run(fmt::format("analyze {} --out {}", tmsv.string(), (kWork / "t").string())) == 0);
  const Json d = parse_json(read_text_file(kWork / "t" / "diagnostics.json"));
  CHECK(d["semi_epr"]["label"] == "EPR");
  CHECK(d["log_negativity"].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(d["mode_count_estimate"].get<double>() == doctest::Approx(3.6945280494).epsilon(1e-9));

  const auto vac = write("vac.json", dump_json(covariance_to_json(CovarianceMatrix::vacuum(2))));
  REQUIRE(run(fmt::format("analyze {} --out {}", vac.string(), (kWork / "v").string())) == 0);
  const Json v = parse_json(read_text_file(kWork / "v" / "diagnostics.json"));
  CHECK(v["semi_epr"]["label"] == "neither");
  CHECK(v["log_negativity"].get<double>() == 0.0);
}
