#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "bathent/analysis.hpp"
#include "bathent/bath.hpp"
#include "bathent/control.hpp"
#include "bathent/gaussian.hpp"
#include "bathent/propagation.hpp"
#include "bathent/pulse.hpp"

namespace bathent {

using Json = nlohmann::ordered_json;

/// Numeric CSV with a header row. Doubles are written with 17 significant digits so
/// that write -> read -> write is byte-identical.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(std::string_view name) const;
};

std::string write_csv(const CsvTable& table);
/// Throws ParseError (with the byte offset of the failure) on malformed input.
CsvTable read_csv(std::string_view text);

/// Parses JSON, mapping syntax errors to ParseError with the byte offset.
Json parse_json(std::string_view text);
std::string dump_json(const Json& j);

// Covariance matrices: {"dim": n, "entries": [row-major]}.
Json matrix_to_json(const Eigen::MatrixXd& m);
Json covariance_to_json(const CovarianceMatrix& sigma);
CovarianceMatrix covariance_from_json(const Json& j);
/// The optional "root" field of a snapshot ({dim, entries}); checked against the covariance.
std::optional<Eigen::Matrix4d> snapshot_root(const Json& j, const CovarianceMatrix& sigma);

/// Q, P, W triples, Q outermost.
CsvTable wigner_table(const Eigen::MatrixXd& w, const PhaseSpaceGrid& grid);

/// omega, coupling, mass, cell_width per bath mode.
CsvTable bath_table(const DiscretizedBath& bath);

/// t, E_N, neg_log_nu, det_gamma and the 10 upper-triangle entries s_ij of the reduced covariance.
CsvTable timeseries_table(const PropagationResult& result);

/// i, j, sigma_ij for every entry.
CsvTable bar_table(const CovarianceMatrix& sigma);

/// t_start, t_end, u_A, u_B per segment.
CsvTable pulse_table(const ControlPulse& pulse);
/// Rebuilds a pulse from `pulse_table` output; the mode and bound come from the caller.
ControlPulse pulse_from_table(const CsvTable& table, DriveMode mode, double bound);

Json squeezing_to_json(const SqueezingParams& s);
/// Diagnostics of a two-mode state; pass the root when there is one, it keeps E_N and the
/// squeezing parameters accurate for strongly squeezed states.
Json diagnostics_to_json(const CovarianceMatrix& sigma, double beta, const SemiEprThresholds& thresholds = {},
                         const std::optional<Eigen::Matrix4d>& root = std::nullopt);

/// Snapshot at sample `index`: time, covariance, its root, symplectic eigenvalues and diagnostics.
Json snapshot_to_json(const PropagationResult& result, std::size_t index, double beta,
                      const SemiEprThresholds& thresholds = {});

Json gradient_check_to_json(const GradientCheck& check);
/// Wall-clock fields sit under "timing"; everything else is deterministic for a given seed.
Json report_to_json(const OptimizationReport& report);

std::string read_text_file(const std::filesystem::path& path);
/// Both throw IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace bathent
