#pragma once

// JSON configuration. A config file is an object with optional "calibration"
// and "simulation" members; absent keys keep their defaults and unknown keys
// are rejected. default_config_json() prints the full schema with defaults.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ctcalib/pipeline.hpp"
#include "ctcalib/sim.hpp"

namespace ctcalib::cli {

struct ToolConfig {
  CalibConfig calib;
  SimConfig sim;
  /// Calibration noise keys that the config file set explicitly; those win
  /// over a manifest's sensor metadata.
  bool noise_accel_set = false;
  bool noise_gyro_set = false;
  bool noise_lidar_set = false;
};

nlohmann::json calib_to_json(const CalibConfig& c);
nlohmann::json sim_to_json(const SimConfig& s);
nlohmann::json default_config_json();

/// Overlays the keys present in j. Throws ValidationError naming the key path.
void apply_config_json(const nlohmann::json& j, ToolConfig& config);
ToolConfig read_config(const std::filesystem::path& path);

}  // namespace ctcalib::cli
