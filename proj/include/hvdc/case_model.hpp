#pragma once

// Hybrid AC/DC network description and the text formats it is read from.
//
// All quantities held by NetworkCase are per-unit on the case power base
// (s_nominal, MVA). Angles are radians. Conversion from the physical units
// used in case files happens once, in parse_case.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace hvdc::grid {

inline constexpr double kDefaultDcVmin = 0.9;
inline constexpr double kDefaultDcVmax = 1.1;
inline constexpr double kDefaultKMin = 0.001;
inline constexpr double kDefaultKMax = 0.5;

struct AcBus {
  int id = 0;
  double voltage_setpoint = 1.0;
  double angle = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
  double angle_min = -1.5707963267948966;
  double angle_max = 1.5707963267948966;
  double load_p = 0.0;
  double load_q = 0.0;
  double shunt_g = 0.0;
  double shunt_b = 0.0;

  bool operator==(const AcBus&) const = default;
};

struct Generator {
  /// 1-based position in the case file; stable across outages.
  int id = 0;
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double cost_alpha = 0.0;
  double cost_beta = 0.0;
  double cost_gamma = 0.0;

  double cost(double p) const { return (cost_alpha * p + cost_beta) * p + cost_gamma; }

  bool operator==(const Generator&) const = default;
};

/// Pi-model branch. The series admittance is derived from r + jx.
struct AcBranch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double charging_b = 0.0;
  double tap_ratio = 1.0;

  double series_g() const { return r / (r * r + x * x); }
  double series_b() const { return -x / (r * r + x * x); }

  bool operator==(const AcBranch&) const = default;
};

struct DcBus {
  int id = 0;
  double v_nominal = 1.0;
  double v_min = kDefaultDcVmin;
  double v_max = kDefaultDcVmax;

  bool operator==(const DcBus&) const = default;
};

struct DcBranch {
  int from = 0;
  int to = 0;
  double resistance = 0.0;

  double admittance() const { return 1.0 / resistance; }

  bool operator==(const DcBranch&) const = default;
};

enum class ControlMode { PControl, VControl, Droop };

std::string_view to_string(ControlMode mode);
ControlMode control_mode_from_string(std::string_view text);

struct ConverterControl {
  ControlMode mode = ControlMode::PControl;
  double p_ref = 0.0;
  double u_ref = 1.0;
  double k_droop = 0.05;
  double k_min = kDefaultKMin;
  double k_max = kDefaultKMax;

  bool operator==(const ConverterControl&) const = default;
};

/// P_loss = a + b * I + c * I^2, all per-unit.
struct LossCoefficients {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  bool operator==(const LossCoefficients&) const = default;
};

enum class FlowDirection { Rectifier, Inverter };

struct ConverterStation {
  int id = 0;
  int ac_bus = 0;
  int dc_bus = 0;
  LossCoefficients rectifier_loss;
  LossCoefficients inverter_loss;
  double p_dc_min = 0.0;
  double p_dc_max = 0.0;
  double i_max = 0.0;
  ConverterControl control;

  /// Positive DC power means AC -> DC transfer; zero counts as rectifier.
  static FlowDirection direction_for(double p_dc) {
    return p_dc >= 0.0 ? FlowDirection::Rectifier : FlowDirection::Inverter;
  }
  const LossCoefficients& loss(FlowDirection dir) const {
    return dir == FlowDirection::Rectifier ? rectifier_loss : inverter_loss;
  }

  bool operator==(const ConverterStation&) const = default;
};

/// Immutable network description. Lookup helpers return positions into the
/// element vectors; ids are the numbers used in files.
struct NetworkCase {
  std::string name;
  double s_nominal = 100.0;
  double v_dc_nominal = 200.0;
  std::vector<AcBus> ac_buses;
  std::vector<Generator> generators;
  std::vector<AcBranch> ac_branches;
  std::vector<DcBus> dc_buses;
  std::vector<DcBranch> dc_branches;
  std::vector<ConverterStation> converters;
  /// Elements removed by apply_scenario; re-applying them is a no-op.
  std::set<int> outaged_generators;
  std::set<int> outaged_converters;

  std::optional<std::size_t> ac_bus_index(int id) const;
  std::optional<std::size_t> dc_bus_index(int id) const;
  std::optional<std::size_t> generator_index(int id) const;
  std::optional<std::size_t> converter_index(int id) const;

  bool operator==(const NetworkCase&) const;
};

struct Scenario {
  std::string name;
  std::set<int> generator_outages;
  std::set<int> converter_outages;
};

/// Non-fatal findings from validate_case.
struct CaseDiagnostics {
  std::vector<std::string> warnings;
};

NetworkCase parse_case(const std::filesystem::path& path);
NetworkCase parse_case_text(std::string_view text, const std::string& source = "<text>");

/// Canonical text form. parse_case_text(serialize_case(c)) reproduces c.
std::string serialize_case(const NetworkCase& network);

/// Throws ReferenceError / InvariantError; returns warnings otherwise.
CaseDiagnostics validate_case(const NetworkCase& network);

Scenario parse_scenario(const std::filesystem::path& path);
Scenario parse_scenario_text(std::string_view text, const std::string& source = "<text>");
std::string serialize_scenario(const Scenario& scenario);

/// Returns a copy with the listed generators and converters removed. Buses
/// stay in place. Elements already outaged in `network` are skipped.
NetworkCase apply_scenario(const NetworkCase& network, const Scenario& scenario);

/// Index of the angle reference: the first AC bus hosting a generator.
std::size_t reference_bus_index(const NetworkCase& network);

}  // namespace hvdc::grid
