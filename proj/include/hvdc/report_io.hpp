#pragma once

// Machine-readable run reports. One file per (scenario, mode) run; the file
// embeds the canonical base case so that `validate` can rebuild every stage
// without the original inputs.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hvdc/droop_strategy.hpp"
#include "hvdc/validation.hpp"

namespace hvdc::report {

inline constexpr const char* kReportSchema = "hvdc-opf-report";
inline constexpr int kReportSchemaVersion = 1;

struct RunRecord {
  /// serialize_case of the base network.
  std::string case_text;
  strategy::StrategyReport report;
  /// Set when run_strategy gave up; `report` then holds the partial stages.
  bool failed = false;
  std::string error;
  /// Parallel to report.stages; empty entries for stages that did not converge.
  std::vector<std::optional<validation::Verdict>> verdicts;
};

std::string serialize_run(const RunRecord& run);

struct LoadedStage {
  int stage = 0;
  std::string network_label;
  ObjectiveKind objective = ObjectiveKind::Cost;
  std::string status;
  std::shared_ptr<const grid::NetworkCase> network;
  std::vector<eq::ConverterFormulation> formulation;
  std::vector<double> x;
  double cost = 0.0;
  double vdev = 0.0;
  std::vector<strategy::ConverterSetting> controls;

  bool converged() const { return status == "converged"; }
};

struct LoadedReport {
  std::string case_name;
  grid::Scenario scenario;
  strategy::ControlMode mode = strategy::ControlMode::ProposedDroop;
  bool failed = false;
  std::string error;
  bool fallback_triggered = false;
  double final_cost = 0.0;
  double final_vdev = 0.0;
  std::vector<LoadedStage> stages;
};

/// Throws Error on malformed content, wrong schema or unknown variables.
LoadedReport parse_run(const std::string& text, const std::string& source = "<report>");
LoadedReport load_run(const std::filesystem::path& path);

/// "<scenario>__<mode>.json", with characters outside [A-Za-z0-9._-] replaced.
std::string report_file_name(const std::string& scenario, strategy::ControlMode mode);

}  // namespace hvdc::report
