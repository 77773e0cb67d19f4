#pragma once

// Command implementations behind the hvdc-opf executable. Each returns the
// process exit code and writes diagnostics to the given streams, so tests can
// drive them without spawning processes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hvdc/droop_strategy.hpp"
#include "hvdc/validation.hpp"

namespace hvdc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitFallback = 2;

/// Default output directory comes from this variable when --out is absent.
inline constexpr const char* kOutDirEnv = "HVDC_OPF_OUT";
inline constexpr const char* kDefaultOutDir = "hvdc-opf-out";

struct OutputFormats {
  bool table = true;  // human-readable tables on stdout
  bool csv = true;
  bool json = false;
};

/// Parses "csv,json,table" style lists. Throws Error on unknown names.
OutputFormats parse_formats(const std::string& text);

struct RunConfig {
  std::filesystem::path case_path;
  std::vector<std::filesystem::path> scenario_paths;
  std::vector<strategy::ControlMode> modes;
  strategy::StrategyOptions options;
  std::filesystem::path out_dir;
  OutputFormats formats;
  /// Recorded in the metadata sidecar. The pipeline draws no random numbers.
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Names of the aggregate artifacts, without extension.
inline constexpr const char* kAggregateNames[] = {"droop_coefficients", "objective", "voltage_deviation",
                                                  "dc_voltage_setpoints"};

/// Runs every (scenario, mode) pair and writes reports/, the aggregate tables
/// and run_metadata.json into config.out_dir. Exit 0 when every run converged
/// without fallback, 2 when some run needed the fallback, 1 on any failure.
int cmd_solve(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Re-verifies every converged stage stored under out_dir/reports.
int cmd_validate(const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err,
                 const validation::VerifyTolerances& tol = {});

int cmd_check_case(const std::filesystem::path& path, std::ostream& out, std::ostream& err);

/// Full command-line front end.
int run(int argc, char** argv);

}  // namespace hvdc::cli
