#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "config_io.hpp"
#include "dataset_io.hpp"

namespace ctcalib::cli {

enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitValidation = 2, kExitNumerical = 3 };

/// Command-line overrides, applied on top of the config file.
struct Overrides {
  std::optional<fs::path> config;
  std::optional<int> iterations;
  std::optional<std::string> profile;  // indoor or outdoor
  std::optional<std::string> odometry;  // oracle or icp
};

ToolConfig resolve_config(const Overrides& o);

/// Sensor noise from the manifest, unless the config file set it.
void apply_manifest_noise(const SensorInfo& sensors, ToolConfig& config);

/// Cell size of a named environment profile: indoor 0.5 m, outdoor 1.0 m.
double profile_cell_size(const std::string& profile);

/// Writes imu.csv, scans/, odometry.csv, truth.json, truth_trajectory.json,
/// config.json and manifest.json into out_dir, creating it if needed.
/// Returns the dataset as written (points rounded to float).
Dataset cmd_simulate(const ToolConfig& config, std::uint64_t seed, const fs::path& out_dir,
                     ScanFormat format = ScanFormat::kBinary);

/// Calibrates the manifest's dataset, writes the JSON report and a plain-text
/// summary next to it (extension .txt), and prints the summary to out.
CalibReport cmd_calibrate(const fs::path& manifest, ToolConfig config, const fs::path& report, std::ostream& out);

/// Writes stats.json and convergence.csv into out_dir and prints a mean and SD table.
MonteCarloResult cmd_montecarlo(const ToolConfig& config, int n_trials, std::uint64_t seed, int threads,
                                const fs::path& out_dir, std::ostream& out);

int exit_code_for(const std::exception& e);

/// Full command line: parses, runs, reports errors to err and returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ctcalib::cli
