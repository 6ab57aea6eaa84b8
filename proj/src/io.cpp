#include "bathent/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "bathent/errors.hpp"

namespace bathent {

namespace {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  return fmt::format("{:.17g}", v);
}

bool needs_quotes(std::string_view s) { return s.find_first_of(",\"\r\n") != std::string_view::npos; }

std::string quote(std::string_view s) {
  if (!needs_quotes(s)) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits one record starting at `pos`; advances `pos` past the line terminator.
std::vector<std::pair<std::string, std::size_t>> read_record(std::string_view text, std::size_t& pos) {
  std::vector<std::pair<std::string, std::size_t>> fields;
  while (true) {
    const std::size_t start = pos;
    std::string field;
    if (pos < text.size() && text[pos] == '"') {
      ++pos;
      while (true) {
        if (pos >= text.size()) throw ParseError("unterminated quoted field", start);
        if (text[pos] == '"') {
          if (pos + 1 < text.size() && text[pos + 1] == '"') {
            field += '"';
            pos += 2;
            continue;
          }
          ++pos;
          break;
        }
        field += text[pos++];
      }
      if (pos < text.size() && text[pos] != ',' && text[pos] != '\n' && text[pos] != '\r') {
        throw ParseError("unexpected character after quoted field", pos);
      }
    } else {
      while (pos < text.size() && text[pos] != ',' && text[pos] != '\n' && text[pos] != '\r') {
        if (text[pos] == '"') throw ParseError("quote inside unquoted field", pos);
        field += text[pos++];
      }
    }
    fields.emplace_back(std::move(field), start);
    if (pos < text.size() && text[pos] == ',') {
      ++pos;
      continue;
    }
    if (pos < text.size() && text[pos] == '\r') ++pos;
    if (pos < text.size() && text[pos] == '\n') ++pos;
    return fields;
  }
}

double parse_number(const std::string& s, std::size_t offset) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw ParseError(fmt::format("expected a number, got '{}'", s), offset);
  }
  return v;
}

const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(fmt::format("missing field '{}'", key), 0);
  return j.at(key);
}

}  // namespace

int CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::string write_csv(const CsvTable& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    out += quote(table.header[i]);
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_number(row[i]);
    }
    out += '\n';
  }
  return out;
}

CsvTable read_csv(std::string_view text) {
  CsvTable table;
  std::size_t pos = 0;
  if (text.empty()) throw ParseError("empty CSV (missing header row)", 0);
  for (auto& [name, offset] : read_record(text, pos)) table.header.push_back(std::move(name));
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    auto fields = read_record(text, pos);
    if (fields.size() == 1 && fields.front().first.empty()) continue;
    if (fields.size() != table.header.size()) {
      throw ParseError(fmt::format("expected {} fields, got {}", table.header.size(), fields.size()), line_start);
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& [s, offset] : fields) row.push_back(parse_number(s, offset));
    table.rows.push_back(std::move(row));
  }
  return table;
}

Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json entries = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) entries.push_back(m(i, j));
  }
  return Json{{"dim", m.rows()}, {"entries", entries}};
}

Json covariance_to_json(const CovarianceMatrix& sigma) { return matrix_to_json(sigma.matrix()); }

CovarianceMatrix covariance_from_json(const Json& j) {
  const Json& dim_node = require(j, "dim");
  const Json& entries = require(j, "entries");
  if (!dim_node.is_number_integer() || dim_node.get<long long>() <= 0) {
    throw ParseError("'dim' must be a positive integer", 0);
  }
  const int dim = dim_node.get<int>();
  if (!entries.is_array() || entries.size() != static_cast<std::size_t>(dim) * dim) {
    throw ParseError(fmt::format("'entries' must hold dim^2 = {} numbers", dim * dim), 0);
  }
  Eigen::MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int k = 0; k < dim; ++k) {
      const Json& v = entries[static_cast<std::size_t>(i) * dim + k];
      if (!v.is_number()) throw ParseError(fmt::format("entry {} is not a number", i * dim + k), 0);
      m(i, k) = v.get<double>();
    }
  }
  return CovarianceMatrix(std::move(m));
}

std::optional<Eigen::Matrix4d> snapshot_root(const Json& j, const CovarianceMatrix& sigma) {
  if (!j.is_object() || !j.contains("root")) return std::nullopt;
  const Json& r = j.at("root");
  const Json& dim = require(r, "dim");
  const Json& entries = require(r, "entries");
  if (!dim.is_number_integer() || dim.get<long long>() != 4 || !entries.is_array() || entries.size() != 16) {
    throw ParseError("'root' must be a 4x4 {dim, entries} object", 0);
  }
  Eigen::Matrix4d f;
  for (int i = 0; i < 16; ++i) {
    if (!entries[i].is_number()) throw ParseError(fmt::format("root entry {} is not a number", i), 0);
    f(i / 4, i % 4) = entries[i].get<double>();
  }
  if (sigma.dim() != 4) throw ParseError("'root' given for a covariance that is not 4x4", 0);
  const Eigen::Matrix4d s = f.transpose() * f;
  if ((s - sigma.matrix()).cwiseAbs().maxCoeff() > 1e-12 * sigma.matrix().cwiseAbs().maxCoeff()) {
    throw ParseError("'root' does not reproduce the covariance (root^T root != entries)", 0);
  }
  return f;
}

CsvTable wigner_table(const Eigen::MatrixXd& w, const PhaseSpaceGrid& grid) {
  CsvTable t{{"Q", "P", "W"}, {}};
  t.rows.reserve(static_cast<std::size_t>(grid.nq) * grid.np);
  for (int i = 0; i < grid.nq; ++i) {
    for (int j = 0; j < grid.np; ++j) t.rows.push_back({grid.q(i), grid.p(j), w(i, j)});
  }
  return t;
}

CsvTable bath_table(const DiscretizedBath& bath) {
  CsvTable t{{"omega", "coupling", "mass", "cell_width"}, {}};
  for (int k = 0; k < bath.n_modes(); ++k) {
    t.rows.push_back({bath.omegas[k], bath.couplings[k], bath.masses[k], bath.cell_widths[k]});
  }
  return t;
}

CsvTable timeseries_table(const PropagationResult& result) {
  CsvTable t{{"t", "E_N", "neg_log_nu", "det_gamma"}, {}};
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) t.header.push_back(fmt::format("s{}{}", i, j));
  }
  for (std::size_t s = 0; s < result.size(); ++s) {
    std::vector<double> row = {result.times[s], result.log_negativity(s), result.neg_log_nu(s), result.det_gamma(s)};
    for (int i = 0; i < 4; ++i) {
      for (int j = i; j < 4; ++j) row.push_back(result.reduced[s](i, j));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable bar_table(const CovarianceMatrix& sigma) {
  CsvTable t{{"i", "j", "sigma_ij"}, {}};
  for (int i = 0; i < sigma.dim(); ++i) {
    for (int j = 0; j < sigma.dim(); ++j) t.rows.push_back({double(i), double(j), sigma(i, j)});
  }
  return t;
}

CsvTable pulse_table(const ControlPulse& pulse) {
  CsvTable t{{"t_start", "t_end", "u_A", "u_B"}, {}};
  for (int i = 0; i < pulse.n_segments(); ++i) {
    t.rows.push_back({pulse.segment_start(i), pulse.segment_end(i), pulse.values_a()[i], pulse.values_b()[i]});
  }
  return t;
}

ControlPulse pulse_from_table(const CsvTable& table, DriveMode mode, double bound) {
  const int c0 = table.column("t_start"), c1 = table.column("t_end"), ca = table.column("u_A"), cb = table.column("u_B");
  if (c0 < 0 || c1 < 0 || ca < 0 || cb < 0) {
    throw ParseError("pulse CSV needs columns t_start, t_end, u_A, u_B", 0);
  }
  if (table.rows.empty()) throw ParseError("pulse CSV has no segments", 0);
  const double t_final = table.rows.back()[c1];
  const double width = t_final / static_cast<double>(table.rows.size());
  std::vector<double> a, b;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (std::abs(row[c0] - i * width) > 1e-9 * t_final || std::abs(row[c1] - (i + 1) * width) > 1e-9 * t_final) {
      throw ConfigError(fmt::format("pulse segment {} is not on a uniform grid over [0, {}]", i, t_final));
    }
    a.push_back(row[ca]);
    b.push_back(row[cb]);
  }
  return ControlPulse(t_final, mode, bound, std::move(a), std::move(b));
}

Json squeezing_to_json(const SqueezingParams& s) { return Json{{"r", s.r}, {"phi", s.phi}, {"a", s.a}}; }

Json diagnostics_to_json(const CovarianceMatrix& sigma, double beta, const SemiEprThresholds& thresholds,
                         const std::optional<Eigen::Matrix4d>& root) {
  const NormalModeState nm = root ? to_normal_modes_from_root(*root) : to_normal_modes(sigma);
  const SemiEprReport epr = semi_epr_report(nm, thresholds);
  const DetGammaDecomposition dg = det_gamma_decomposition(nm);
  const TemperatureBound bound = temperature_bound_check(epr.minus.r, beta);
  const double nln = root ? neg_log_nu_gradient_from_root(*root).value : neg_log_nu(sigma);
  const double e_n = std::max(0.0, nln);

  Json nm_sigma = Json::array();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) nm_sigma.push_back(nm.sigma(i, j));
  }
  Json j;
  j["log_negativity"] = e_n;
  j["neg_log_nu"] = nln;
  j["semi_epr"] = Json{{"label", to_string(epr.label)},
                       {"plus", squeezing_to_json(epr.plus)},
                       {"minus", squeezing_to_json(epr.minus)},
                       {"plus_thermal_distance", epr.plus_thermal_distance},
                       {"cross_block_norm", epr.cross_block_norm},
                       {"cross_correlated", epr.cross_correlated}};
  if (epr.cross_correlated) j["semi_epr"]["normal_mode_covariance"] = Json{{"dim", 4}, {"entries", nm_sigma}};
  j["det_gamma_decomposition"] = Json{{"delta_q", dg.delta_q},
                                      {"delta_p", dg.delta_p},
                                      {"cross", dg.cross},
                                      {"four_det_gamma", dg.four_det_gamma},
                                      {"four_det_gamma_direct", 4.0 * det_gamma(sigma)},
                                      {"cross_correlated", dg.cross_correlated}};
  j["temperature_bound"] = Json{{"beta", beta},
                                {"r_minus", epr.minus.r},
                                {"threshold", temperature_threshold(beta)},
                                {"satisfied", bound.satisfied},
                                {"margin", bound.margin}};
  j["mode_count_estimate"] = mode_count_estimate(e_n);
  return j;
}

Json snapshot_to_json(const PropagationResult& result, std::size_t index, double beta,
                      const SemiEprThresholds& thresholds) {
  const CovarianceMatrix sigma = result.covariance(index);
  const Eigen::Matrix4d& f = result.roots[index];
  Json j = covariance_to_json(sigma);
  j["root"] = matrix_to_json(f);
  j["t"] = result.times[index];
  j["symplectic_eigenvalues"] = result.symplectic_eigenvalues(index);
  j["diagnostics"] = diagnostics_to_json(sigma, beta, thresholds, f);
  return j;
}

Json gradient_check_to_json(const GradientCheck& check) {
  return Json{{"step", check.step},
              {"max_relative_error", check.max_relative_error},
              {"adjoint", check.adjoint},
              {"finite_difference", check.finite_difference}};
}

Json report_to_json(const OptimizationReport& report) {
  Json trace = Json::array();
  for (const auto& e : report.trace) {
    trace.push_back(Json{{"evaluation", e.evaluation},
                         {"start", e.start},
                         {"model", e.model},
                         {"value", e.value},
                         {"surrogate", e.surrogate},
                         {"log_negativity", e.log_negativity},
                         {"best_value", e.best_value},
                         {"accepted", e.accepted}});
  }
  const ControlPulse& p = report.best_pulse;
  Json j;
  j["seed"] = report.seed;
  j["best"] = Json{{"value", report.best.value},
                   {"log_negativity", report.best.log_negativity},
                   {"neg_log_nu", report.best.neg_log_nu},
                   {"roughness", report.best.roughness},
                   {"mode_count_estimate", mode_count_estimate(report.best.log_negativity)}};
  j["best_pulse"] = Json{{"t_final", p.t_final()},
                         {"mode", to_string(p.mode())},
                         {"bound", p.bound()},
                         {"values_A", p.values_a()},
                         {"values_B", p.values_b()}};
  j["no_entanglement_found"] = report.no_entanglement_found;
  j["evaluations"] = report.evaluations;
  j["full_evaluations"] = report.full_evaluations;
  j["failed_evaluations"] = report.failed_evaluations;
  j["trajectory_rejections"] = report.trajectory_rejections;
  j["degenerate_gradients"] = report.degenerate_gradients;
  j["gradient_check"] = report.gradient_check ? gradient_check_to_json(*report.gradient_check) : Json();
  j["final_state"] = Json{{"symplectic_residual", report.final_result.symplectic_residual},
                          {"steps", report.final_result.steps},
                          {"dt", report.final_result.dt}};
  j["trace"] = std::move(trace);
  j["timing"] = Json{{"wall_seconds", report.wall_seconds}};
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(fmt::format("error reading '{}'", path.string()));
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.close();
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

}  // namespace bathent
