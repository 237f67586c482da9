#pragma once

// End-to-end calibration: rotation initialization, odometry-seeded surfel map
// and association, batch optimization, then rounds of refinement against a
// map rebuilt through the optimized continuous trajectory.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ctcalib/odometry.hpp"
#include "ctcalib/optimizer.hpp"

namespace ctcalib {

enum class OdometrySource { kOracle, kIcp };

const char* to_string(OdometrySource s);
/// "oracle" or "icp"; throws ValidationError otherwise.
OdometrySource parse_odometry_source(const std::string& s);

struct CalibConfig {
  double knot_dt = 0.02;  // s
  double cell_size = 0.5;  // m
  double planarity_first = 0.6;
  double planarity_later = 0.7;
  /// Association gates. The first round's map only has rotational deskew.
  double reject_first = 0.1;  // m
  double reject_later = 0.03;  // m
  /// Fraction of points per scan used as residuals.
  double downsample_ratio = 0.2;
  NoiseConfig noise;
  int iterations = 8;
  OdometrySource odometry = OdometrySource::kOracle;
  std::uint64_t seed = 0;

  /// Stop refining once consecutive rounds move less than the plateau bounds.
  bool early_exit = false;
  double plateau_trans = 1e-3;  // m
  double plateau_rot_deg = 0.05;

  double min_duration = 2.0;  // s
  /// Mean gyro norm below which the data counts as unexcited.
  double min_mean_rate = 0.1;  // rad/s
  double handeye_threshold = kDefaultHandEyeThreshold;
  /// Second-difference weight of the initial position fit to odometry poses.
  double pose_smoothing = 1.0;
  double ransac_tolerance = 0.02;  // m
  int ransac_iterations = 50;
  int lm_iterations = 30;
  bool huber = false;
  double huber_delta = 0.05;  // m
  bool freeze_gravity = false;
  /// Express the map in the trajectory frame and let it fix the gauge; false
  /// keeps the map in L_0 with the first control point held.
  bool world_map = true;
  IcpOdometryOptions icp;

  /// Throws ValidationError naming the first out-of-range field.
  void validate() const;
};

struct RoundRecord {
  int round = 0;  // 1-based
  Extrinsics ext;
  Vec3 bias_a = Vec3::Zero();
  Vec3 bias_g = Vec3::Zero();
  Vec3 gravity = Vec3::Zero();
  int surfels = 0;
  int correspondences = 0;
  LmReport lm;
  double seconds = 0.0;
};

struct CalibReport {
  Quat q_init = Quat::Identity();  // hand-eye rotation
  int handeye_pairs = 0;
  double mean_rate = 0.0;  // rad/s
  int scans_used = 0;
  int imu_used = 0;
  std::vector<RoundRecord> rounds;

  Extrinsics ext;
  Vec3 bias_a = Vec3::Zero();
  Vec3 bias_g = Vec3::Zero();
  Vec3 gravity = Vec3::Zero();  // in I0, the IMU frame at the map time
  Trajectory traj;

  /// Wall-clock seconds per stage; excluded from the JSON so reports compare equal.
  std::vector<std::pair<std::string, double>> timing;
};

/// Runs the full calibration. `odometry` supplies L_k -> L_0 poses at the
/// scan reference times when the source is kOracle and is ignored otherwise.
/// Failures are rethrown as StageError naming the stage.
CalibReport calibrate(std::span<const ImuSample> imu, std::span<const Scan> scans, const CalibConfig& config,
                      std::span<const ScanPose> odometry = {});

enum class DeskewMode { kRotation, kFull };

/// Re-expresses every point in the LiDAR frame at scan.t_ref.
Scan deskew_scan(const Scan& scan, const Trajectory& traj, const Extrinsics& ext, DeskewMode mode);

struct ExtrinsicError {
  double rot_deg = 0.0;
  double trans_m = 0.0;
};

ExtrinsicError extrinsic_error(const Extrinsics& est, const Extrinsics& truth);

void write_report_json(std::ostream& os, const CalibReport& report);
/// Quaternion, roll/pitch/yaw in degrees and translation in meters.
void write_report_summary(std::ostream& os, const CalibReport& report, const Extrinsics* truth = nullptr);

}  // namespace ctcalib
