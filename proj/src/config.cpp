#include "bathent/config.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "bathent/errors.hpp"
#include "bathent/io.hpp"

namespace bathent {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Mark& mark, const std::string& msg) const {
    if (mark.is_null()) throw ConfigError(fmt::format("{}: {}", source_, msg));
    throw ConfigError(fmt::format("{}:{}:{}: {}", source_, mark.line + 1, mark.column + 1, msg));
  }

  // Rejects keys outside `allowed` so that typos do not silently fall back to defaults.
  void check_keys(const YAML::Node& map, const std::string& section, const std::set<std::string>& allowed) const {
    if (!map.IsMap()) fail(map.Mark(), fmt::format("'{}' must be a mapping", section));
    for (const auto& kv : map) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed.count(key)) {
        const std::string where = section.empty() ? key : section + "." + key;
        fail(kv.first.Mark(), fmt::format("unknown key '{}'", where));
      }
    }
  }

  template <typename T>
  void read(const YAML::Node& map, const std::string& section, const char* key, T& out,
            const std::function<bool(const T&)>& ok = {}, const char* requirement = nullptr) const {
    const YAML::Node n = map[key];
    if (!n) return;
    const std::string name = section + "." + key;
    T value{};
    try {
      if constexpr (std::is_same_v<T, double>) {
        value = number(n, name);
      } else {
        value = n.as<T>();
      }
    } catch (const YAML::Exception&) {
      fail(n.Mark(), fmt::format("{}: expected {}", name, type_name<T>()));
    }
    if (ok && !ok(value)) fail(n.Mark(), fmt::format("{} must be {}", name, requirement));
    out = value;
  }

  // Numbers, plus multiples of pi written as "6pi", "6*pi" or "pi".
  double number(const YAML::Node& n, const std::string& name) const {
    if (!n.IsScalar()) fail(n.Mark(), fmt::format("{}: expected a number", name));
    const std::string s = n.Scalar();
    static const std::regex pi_form(R"(^\s*([-+]?[0-9]*\.?[0-9]*(?:[eE][-+]?[0-9]+)?)\s*\*?\s*pi\s*$)");
    std::smatch m;
    if (std::regex_match(s, m, pi_form)) {
      const std::string f = m[1].str();
      const double factor = f.empty() || f == "+" ? 1.0 : f == "-" ? -1.0 : std::stod(f);
      return factor * std::numbers::pi;
    }
    return n.as<double>();
  }

  const std::string& source() const { return source_; }

 private:
  template <typename T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "true or false";
    if constexpr (std::is_integral_v<T>) return "an integer";
    if constexpr (std::is_floating_point_v<T>) return "a number";
    return "a string";
  }

  std::string source_;
};

bool positive(const double& v) { return v > 0.0; }
bool non_negative(const double& v) { return v >= 0.0; }
bool at_least_one(const int& v) { return v >= 1; }
bool non_negative_int(const int& v) { return v >= 0; }

// Runs a module-level validate(), attributing failures to the section.
template <typename F>
void validate_section(const Reader& r, const YAML::Node& node, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    r.fail(node ? node.Mark() : YAML::Mark::null_mark(), e.what());
  }
}

const std::set<std::string> kSweepAxes = {"beta", "eta", "t_f", "n_segments"};

// Shortest text that parses back to the same double.
std::string shortest(double v) { return fmt::format("{}", v); }

std::vector<std::string> shortest(const std::vector<double>& v) {
  std::vector<std::string> out;
  for (double x : v) out.push_back(shortest(x));
  return out;
}

}  // namespace

std::string to_string(PulseSource source) {
  switch (source) {
    case PulseSource::zero: return "zero";
    case PulseSource::resonance: return "resonance";
    case PulseSource::file: return "file";
  }
  return "zero";
}

void RunConfig::validate() const {
  bath.validate();
  pulse.validate();
  if (samples < 1) throw ConfigError("integration.samples must be >= 1");
  if (source == PulseSource::file && pulse_file.empty()) throw ConfigError("pulse.file is required for source 'file'");
  if (!(continuation >= 0.0)) throw ConfigError("continuation.duration must be >= 0");
  if (!sweep_axis.empty() && !kSweepAxes.count(sweep_axis)) {
    throw ConfigError(fmt::format("sweep.axis must be one of beta, eta, t_f, n_segments, got '{}'", sweep_axis));
  }
  if (!(wigner.q_max > wigner.q_min) || !(wigner.p_max > wigner.p_min) || wigner.nq < 2 || wigner.np < 2) {
    throw ConfigError("wigner grid needs q_max > q_min, p_max > p_min and at least 2 points per axis");
  }
}

RunConfig parse_config(const std::string& text, const std::string& source_name) {
  Reader r(source_name);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    r.fail(e.mark, e.msg);
  }
  RunConfig c;
  if (!root || root.IsNull()) return c;
  r.check_keys(root, "", {"scenario", "bath", "pulse", "integration", "optimizer", "continuation", "wigner",
                          "analysis", "sweep", "output"});
  if (root["scenario"]) {
    if (!root["scenario"].IsScalar()) r.fail(root["scenario"].Mark(), "scenario must be a string");
    c.scenario = root["scenario"].Scalar();
  }

  if (const YAML::Node b = root["bath"]) {
    r.check_keys(b, "bath", {"eta", "omega_c", "beta", "n_modes", "omega_max", "grid", "linear_cutoff", "n_linear"});
    r.read<double>(b, "bath", "eta", c.bath.eta, non_negative, ">= 0");
    r.read<double>(b, "bath", "omega_c", c.bath.omega_c, positive, "> 0");
    r.read<double>(b, "bath", "beta", c.bath.beta, positive, "> 0");
    r.read<int>(b, "bath", "n_modes", c.bath.n_modes, at_least_one, ">= 1");
    r.read<double>(b, "bath", "omega_max", c.bath.omega_max, positive, "> 0");
    r.read<double>(b, "bath", "linear_cutoff", c.bath.linear_cutoff, positive, "> 0");
    r.read<int>(b, "bath", "n_linear", c.bath.n_linear, non_negative_int, ">= 0");
    std::string grid = to_string(c.bath.grid_kind);
    r.read<std::string>(b, "bath", "grid", grid);
    try {
      c.bath.grid_kind = grid_kind_from_string(grid);
    } catch (const ConfigError& e) {
      r.fail(b["grid"].Mark(), e.what());
    }
    validate_section(r, b, [&] { c.bath.validate(); });
  }

  if (const YAML::Node p = root["pulse"]) {
    r.check_keys(p, "pulse", {"t_final", "n_segments", "mode", "bound", "source", "amplitude", "file"});
    r.read<double>(p, "pulse", "t_final", c.pulse.t_final, positive, "> 0");
    r.read<int>(p, "pulse", "n_segments", c.pulse.n_segments, at_least_one, ">= 1");
    r.read<double>(p, "pulse", "bound", c.pulse.bound, non_negative, ">= 0");
    r.read<double>(p, "pulse", "amplitude", c.resonance_amplitude);
    r.read<std::string>(p, "pulse", "file", c.pulse_file);
    std::string mode = to_string(c.pulse.mode);
    r.read<std::string>(p, "pulse", "mode", mode);
    try {
      c.pulse.mode = drive_mode_from_string(mode);
    } catch (const ConfigError& e) {
      r.fail(p["mode"].Mark(), e.what());
    }
    std::string source = to_string(c.source);
    r.read<std::string>(p, "pulse", "source", source);
    if (source == "zero") {
      c.source = PulseSource::zero;
    } else if (source == "resonance") {
      c.source = PulseSource::resonance;
    } else if (source == "file") {
      c.source = PulseSource::file;
    } else {
      r.fail(p["source"].Mark(), fmt::format("pulse.source must be zero, resonance or file, got '{}'", source));
    }
    if (std::abs(c.resonance_amplitude) > c.pulse.bound) {
      r.fail(p["amplitude"] ? p["amplitude"].Mark() : p.Mark(),
             fmt::format("pulse.amplitude {} exceeds pulse.bound {}", c.resonance_amplitude, c.pulse.bound));
    }
    if (c.source == PulseSource::file && c.pulse_file.empty()) r.fail(p.Mark(), "pulse.file is required for source 'file'");
  }

  if (const YAML::Node in = root["integration"]) {
    r.check_keys(in, "integration", {"dt", "order", "samples", "counterterm", "symplectic_probes",
                                     "heisenberg_tolerance", "max_variance_trace"});
    r.read<double>(in, "integration", "dt", c.integration.dt, non_negative, ">= 0 (0 selects the default)");
    int order = static_cast<int>(c.integration.order);
    r.read<int>(in, "integration", "order", order, [](const int& v) { return v == 2 || v == 4; }, "2 or 4");
    c.integration.order = static_cast<SplittingOrder>(order);
    r.read<int>(in, "integration", "samples", c.samples, at_least_one, ">= 1");
    r.read<bool>(in, "integration", "counterterm", c.integration.counterterm);
    r.read<int>(in, "integration", "symplectic_probes", c.integration.symplectic_probes, non_negative_int, ">= 0");
    r.read<double>(in, "integration", "heisenberg_tolerance", c.integration.heisenberg_tolerance, positive, "> 0");
    r.read<double>(in, "integration", "max_variance_trace", c.integration.max_variance_trace, positive, "> 0");
  }

  if (const YAML::Node o = root["optimizer"]) {
    r.check_keys(o, "optimizer", {"seed", "budget", "multistart", "workers", "lambda", "resonance_fraction",
                                  "initial_step", "fast_inner_loop", "reduced_modes", "reduced_omega_max",
                                  "polish_budget", "gradient_check_parameters", "trace_headroom"});
    r.read<std::uint64_t>(o, "optimizer", "seed", c.optimizer.seed);
    r.read<int>(o, "optimizer", "budget", c.optimizer.budget, at_least_one, ">= 1");
    r.read<int>(o, "optimizer", "multistart", c.optimizer.multistart, at_least_one, ">= 1");
    r.read<int>(o, "optimizer", "workers", c.optimizer.workers, at_least_one, ">= 1");
    r.read<double>(o, "optimizer", "lambda", c.lambda, non_negative, ">= 0");
    r.read<double>(o, "optimizer", "resonance_fraction", c.optimizer.resonance_fraction,
                   [](const double& v) { return v >= 0.0 && v <= 1.0; }, "in [0, 1]");
    r.read<double>(o, "optimizer", "initial_step", c.optimizer.initial_step, positive, "> 0");
    r.read<bool>(o, "optimizer", "fast_inner_loop", c.optimizer.fast_inner_loop);
    r.read<int>(o, "optimizer", "reduced_modes", c.optimizer.reduced_modes, at_least_one, ">= 1");
    r.read<double>(o, "optimizer", "reduced_omega_max", c.optimizer.reduced_omega_max, positive, "> 0");
    r.read<int>(o, "optimizer", "polish_budget", c.optimizer.polish_budget, at_least_one, ">= 1");
    r.read<int>(o, "optimizer", "gradient_check_parameters", c.optimizer.gradient_check_parameters,
                non_negative_int, ">= 0");
    r.read<double>(o, "optimizer", "trace_headroom", c.optimizer.trace_headroom,
                   [](const double& v) { return v > 0.0 && v <= 1.0; }, "in (0, 1]");
  }

  if (const YAML::Node k = root["continuation"]) {
    r.check_keys(k, "continuation", {"duration", "samples"});
    r.read<double>(k, "continuation", "duration", c.continuation, non_negative, ">= 0");
    r.read<int>(k, "continuation", "samples", c.continuation_samples, at_least_one, ">= 1");
  }

  if (const YAML::Node w = root["wigner"]) {
    r.check_keys(w, "wigner", {"q_min", "q_max", "p_min", "p_max", "nq", "np"});
    r.read<double>(w, "wigner", "q_min", c.wigner.q_min);
    r.read<double>(w, "wigner", "q_max", c.wigner.q_max);
    r.read<double>(w, "wigner", "p_min", c.wigner.p_min);
    r.read<double>(w, "wigner", "p_max", c.wigner.p_max);
    r.read<int>(w, "wigner", "nq", c.wigner.nq, [](const int& v) { return v >= 2; }, ">= 2");
    r.read<int>(w, "wigner", "np", c.wigner.np, [](const int& v) { return v >= 2; }, ">= 2");
    if (!(c.wigner.q_max > c.wigner.q_min) || !(c.wigner.p_max > c.wigner.p_min)) {
      r.fail(w.Mark(), "wigner grid needs q_max > q_min and p_max > p_min");
    }
  }

  if (const YAML::Node a = root["analysis"]) {
    r.check_keys(a, "analysis", {"epr_tolerance", "min_minus_squeezing", "max_plus_squeezing", "thermal_tolerance"});
    r.read<double>(a, "analysis", "epr_tolerance", c.thresholds.epr_tolerance, positive, "> 0");
    r.read<double>(a, "analysis", "min_minus_squeezing", c.thresholds.min_minus_squeezing, non_negative, ">= 0");
    r.read<double>(a, "analysis", "max_plus_squeezing", c.thresholds.max_plus_squeezing, non_negative, ">= 0");
    r.read<double>(a, "analysis", "thermal_tolerance", c.thresholds.thermal_tolerance, non_negative, ">= 0");
  }

  if (const YAML::Node s = root["sweep"]) {
    r.check_keys(s, "sweep", {"axis", "values"});
    r.read<std::string>(s, "sweep", "axis", c.sweep_axis);
    if (!c.sweep_axis.empty() && !kSweepAxes.count(c.sweep_axis)) {
      r.fail(s["axis"].Mark(),
             fmt::format("sweep.axis must be one of beta, eta, t_f, n_segments, got '{}'", c.sweep_axis));
    }
    if (const YAML::Node v = s["values"]) {
      if (!v.IsSequence()) r.fail(v.Mark(), "sweep.values must be a list of numbers");
      for (const auto& item : v) c.sweep_values.push_back(r.number(item, "sweep.values"));
    }
  }

  if (const YAML::Node out = root["output"]) {
    r.check_keys(out, "output", {"dir"});
    r.read<std::string>(out, "output", "dir", c.output_dir);
  }

  validate_section(r, YAML::Node(), [&] { c.validate(); });
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c = parse_config(read_text_file(path), path.string());
  if (!c.pulse_file.empty() && std::filesystem::path(c.pulse_file).is_relative()) {
    c.pulse_file = (path.parent_path() / c.pulse_file).lexically_normal().string();
  }
  return c;
}

std::string effective_config_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "scenario" << YAML::Value << c.scenario;
  e << YAML::Key << "bath" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "eta" << YAML::Value << shortest(c.bath.eta);
  e << YAML::Key << "omega_c" << YAML::Value << shortest(c.bath.omega_c);
  e << YAML::Key << "beta" << YAML::Value << shortest(c.bath.beta);
  e << YAML::Key << "n_modes" << YAML::Value << c.bath.n_modes;
  e << YAML::Key << "omega_max" << YAML::Value << shortest(c.bath.omega_max);
  e << YAML::Key << "grid" << YAML::Value << to_string(c.bath.grid_kind);
  e << YAML::Key << "linear_cutoff" << YAML::Value << shortest(c.bath.linear_cutoff);
  e << YAML::Key << "n_linear" << YAML::Value << c.bath.resolved_n_linear();
  e << YAML::EndMap;
  e << YAML::Key << "pulse" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "t_final" << YAML::Value << shortest(c.pulse.t_final);
  e << YAML::Key << "n_segments" << YAML::Value << c.pulse.n_segments;
  e << YAML::Key << "mode" << YAML::Value << to_string(c.pulse.mode);
  e << YAML::Key << "bound" << YAML::Value << shortest(c.pulse.bound);
  e << YAML::Key << "source" << YAML::Value << to_string(c.source);
  e << YAML::Key << "amplitude" << YAML::Value << shortest(c.resonance_amplitude);
  if (!c.pulse_file.empty()) e << YAML::Key << "file" << YAML::Value << c.pulse_file;
  e << YAML::EndMap;
  e << YAML::Key << "integration" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "dt" << YAML::Value << shortest(c.integration.dt);
  e << YAML::Key << "order" << YAML::Value << static_cast<int>(c.integration.order);
  e << YAML::Key << "samples" << YAML::Value << c.samples;
  e << YAML::Key << "counterterm" << YAML::Value << c.integration.counterterm;
  e << YAML::Key << "symplectic_probes" << YAML::Value << c.integration.symplectic_probes;
  e << YAML::Key << "heisenberg_tolerance" << YAML::Value << shortest(c.integration.heisenberg_tolerance);
  e << YAML::Key << "max_variance_trace" << YAML::Value << shortest(c.integration.max_variance_trace);
  e << YAML::EndMap;
  const OptimizerSettings& o = c.optimizer;
  e << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << o.seed;
  e << YAML::Key << "budget" << YAML::Value << o.budget;
  e << YAML::Key << "multistart" << YAML::Value << o.multistart;
  e << YAML::Key << "workers" << YAML::Value << o.workers;
  e << YAML::Key << "lambda" << YAML::Value << shortest(c.lambda);
  e << YAML::Key << "resonance_fraction" << YAML::Value << shortest(o.resonance_fraction);
  e << YAML::Key << "initial_step" << YAML::Value << shortest(o.initial_step);
  e << YAML::Key << "fast_inner_loop" << YAML::Value << o.fast_inner_loop;
  e << YAML::Key << "reduced_modes" << YAML::Value << o.reduced_modes;
  e << YAML::Key << "reduced_omega_max" << YAML::Value << shortest(o.reduced_omega_max);
  e << YAML::Key << "polish_budget" << YAML::Value << o.polish_budget;
  e << YAML::Key << "gradient_check_parameters" << YAML::Value << o.gradient_check_parameters;
  e << YAML::Key << "trace_headroom" << YAML::Value << shortest(o.trace_headroom);
  e << YAML::EndMap;
  e << YAML::Key << "continuation" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "duration" << YAML::Value << shortest(c.continuation);
  e << YAML::Key << "samples" << YAML::Value << c.continuation_samples;
  e << YAML::EndMap;
  e << YAML::Key << "wigner" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "q_min" << YAML::Value << shortest(c.wigner.q_min);
  e << YAML::Key << "q_max" << YAML::Value << shortest(c.wigner.q_max);
  e << YAML::Key << "p_min" << YAML::Value << shortest(c.wigner.p_min);
  e << YAML::Key << "p_max" << YAML::Value << shortest(c.wigner.p_max);
  e << YAML::Key << "nq" << YAML::Value << c.wigner.nq;
  e << YAML::Key << "np" << YAML::Value << c.wigner.np;
  e << YAML::EndMap;
  e << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "epr_tolerance" << YAML::Value << shortest(c.thresholds.epr_tolerance);
  e << YAML::Key << "min_minus_squeezing" << YAML::Value << shortest(c.thresholds.min_minus_squeezing);
  e << YAML::Key << "max_plus_squeezing" << YAML::Value << shortest(c.thresholds.max_plus_squeezing);
  e << YAML::Key << "thermal_tolerance" << YAML::Value << shortest(c.thresholds.thermal_tolerance);
  e << YAML::EndMap;
  if (!c.sweep_axis.empty()) {
    e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "axis" << YAML::Value << c.sweep_axis;
    e << YAML::Key << "values" << YAML::Value << YAML::Flow << shortest(c.sweep_values);
    e << YAML::EndMap;
  }
  e << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "dir" << YAML::Value << c.output_dir;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

RunConfig with_sweep_value(const RunConfig& base, const std::string& axis, double value) {
  RunConfig c = base;
  if (axis == "beta") {
    c.bath.beta = value;
  } else if (axis == "eta") {
    c.bath.eta = value;
  } else if (axis == "t_f") {
    c.pulse.t_final = value;
  } else if (axis == "n_segments") {
    if (value != std::round(value)) throw ConfigError(fmt::format("sweep value {} for n_segments is not an integer", value));
    c.pulse.n_segments = static_cast<int>(value);
  } else {
    throw ConfigError(fmt::format("sweep.axis must be one of beta, eta, t_f, n_segments, got '{}'", axis));
  }
  c.validate();
  return c;
}

}  // namespace bathent
