#pragma once

// On-disk dataset formats.
//
//   IMU      CSV rows t,wx,wy,wz,ax,ay,az in seconds and SI units; '#' starts a comment line.
//   scans    per scan a binary file of little-endian (f64 t, f32 x, f32 y, f32 z) records
//            plus a JSON sidecar {t_ref, count, format, file}; format "csv" points at t,x,y,z rows.
//   odometry CSV rows t,qw,qx,qy,qz,x,y,z, LiDAR poses L_k -> L_0.
//   truth    extrinsics/biases JSON and the spline control points as JSON.
//
// Readers throw ValidationError with file:line context on malformed input.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctcalib/odometry.hpp"
#include "ctcalib/rot_init.hpp"
#include "ctcalib/sim.hpp"

namespace ctcalib::cli {

namespace fs = std::filesystem;

enum class ScanFormat { kBinary, kCsv };

void write_imu_csv(const fs::path& path, const std::vector<ImuSample>& imu);
/// Times are multiplied by time_scale.
std::vector<ImuSample> read_imu_csv(const fs::path& path, double time_scale = 1.0);

/// Writes <stem>.bin or <stem>.csv plus <stem>.json into dir.
void write_scan(const fs::path& dir, const std::string& stem, const Scan& scan, ScanFormat format);
Scan read_scan(const fs::path& sidecar, double time_scale = 1.0);
/// Every *.json sidecar in dir, in file name order.
std::vector<Scan> read_scan_directory(const fs::path& dir, double time_scale = 1.0);

void write_odometry_csv(const fs::path& path, const std::vector<ScanPose>& poses);
std::vector<ScanPose> read_odometry_csv(const fs::path& path, double time_scale = 1.0);

struct Truth {
  Extrinsics ext;
  Vec3 bias_g = Vec3::Zero();
  Vec3 bias_a = Vec3::Zero();
};

void write_truth_json(const fs::path& path, const Truth& truth);
Truth read_truth_json(const fs::path& path);

void write_trajectory_json(const fs::path& path, const Trajectory& traj);
Trajectory read_trajectory_json(const fs::path& path);

struct SensorInfo {
  double imu_rate = 0.0;  // Hz, 0 when unknown
  double lidar_rate = 0.0;  // Hz
  std::optional<double> sigma_gyro;  // rad/s
  std::optional<double> sigma_accel;  // m/s^2
  std::optional<double> sigma_range;  // m
};

struct DatasetManifest {
  fs::path imu_file;
  fs::path scan_directory;
  /// "s", "ms", "us" or "ns"; applies to every timestamp in the dataset files.
  std::string time_unit = "s";
  SensorInfo sensors;
  std::optional<fs::path> odometry_file;
  std::optional<fs::path> truth_file;
  std::optional<fs::path> trajectory_file;

  double time_scale() const;
  /// Throws ValidationError on an unknown time unit or a missing file.
  void validate() const;
};

/// Relative paths resolve against the manifest's directory.
DatasetManifest read_manifest(const fs::path& path);
/// Paths are written relative to the manifest's directory when they lie below it.
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

struct LoadedDataset {
  std::vector<ImuSample> imu;
  std::vector<Scan> scans;
  std::vector<ScanPose> odometry;
  std::optional<Truth> truth;
};

/// Reads everything the manifest references and checks timestamp order.
LoadedDataset load_dataset(const DatasetManifest& manifest);

/// Rounds every point coordinate to float so the binary format stores it exactly.
void quantize_points(std::vector<Scan>& scans);

}  // namespace ctcalib::cli
