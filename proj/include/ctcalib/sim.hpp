#pragma once

// Synthetic LiDAR-IMU datasets: a bounded plane scene, a sinusoidal IMU
// trajectory, a spinning multi-beam LiDAR that fires sequentially while the
// rig moves, a noisy biased IMU, and a Monte Carlo harness over the pipeline.

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctcalib/odometry.hpp"
#include "ctcalib/pipeline.hpp"

namespace ctcalib {

/// n^T x + d = 0, limited to the axis-aligned box [lo, hi].
struct Plane {
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;
  Vec3 lo = Vec3::Constant(-5.0);
  Vec3 hi = Vec3::Constant(5.0);
};

struct PlaneScene {
  std::vector<Plane> planes;

  /// Walls x = 4 and y = 4 and floor z = -2, each a 10 m square.
  static PlaneScene corner();
  /// Range to the nearest in-extent plane along a unit ray, if any.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
};

struct LidarModel {
  int beams = 16;
  double max_elevation_deg = 15.0;
  double rate = 10.0;  // revolutions per second
  int azimuth_steps = 360;
  double range_noise = 0.01;  // m
  double max_range = 50.0;  // m

  /// Uniform over [-max, max]; 0 for a single beam.
  double elevation(int beam) const;
  /// Time between consecutive firings.
  double firing_period() const { return 1.0 / (rate * azimuth_steps * beams); }
  void validate() const;
};

struct ImuModel {
  double rate = 400.0;  // Hz
  double sigma_gyro = 0.005;  // rad/s
  double sigma_accel = 0.02;  // m/s^2
  Vec3 bias_g = Vec3(0.002, -0.001, 0.0015);
  Vec3 bias_a = Vec3(0.05, -0.04, 0.03);
  void validate() const;
};

/// x_i(t) = amp_i sin(2 pi freq_i t + phase_i) for position and for the
/// rotation vector of the orientation.
struct SinusoidParams {
  Vec3 pos_amp = Vec3(0.1, 0.1, 0.05);  // m
  Vec3 pos_freq = Vec3(0.5, 0.4, 0.6);  // Hz
  Vec3 pos_phase = Vec3(0.0, 1.0, 2.0);
  Vec3 rot_amp = Vec3(2.0, 2.0, 2.4);  // rad
  Vec3 rot_freq = Vec3(0.15, 0.18, 0.07);  // Hz
  Vec3 rot_phase = Vec3(0.5, 1.5, 2.5);
  double duration = 10.0;  // s
  double knot_dt = 0.02;  // s
  double sample_rate = 200.0;  // Hz, dense samples for the fit
};

Pose sinusoid_pose(const SinusoidParams& params, double t);

struct SinusoidFit {
  Trajectory traj;
  double max_pos_error = 0.0;  // m, over a dense check grid
  double max_rot_error = 0.0;  // rad
  /// Highest frequency exceeds a tenth of the knot rate.
  bool bandwidth_warning = false;
};

/// Spline on [0, duration) with floor(duration / knot_dt) + 3 control points
/// fitted to dense analytic samples. Gravity is -z in the world frame.
SinusoidFit make_sinusoid_trajectory(const SinusoidParams& params);

/// Samples at multiples of 1 / rate across the trajectory domain.
std::vector<ImuSample> simulate_imu(const Trajectory& traj, const ImuModel& model, std::uint64_t seed);

/// One revolution starting at scan_start; each firing uses the LiDAR pose at
/// its own timestamp, so motion distortion is built in.
Scan simulate_scan(const Trajectory& traj, const Extrinsics& ext, const PlaneScene& scene, const LidarModel& model,
                   double scan_start, std::uint64_t seed);

struct SimConfig {
  PlaneScene scene = PlaneScene::corner();
  LidarModel lidar;
  ImuModel imu;
  SinusoidParams motion;
  /// Draw fresh sinusoid phases per dataset seed.
  bool random_phases = true;
  Extrinsics truth_ext = default_truth_extrinsics();
  double odom_sigma_rot = 0.2 * M_PI / 180.0;  // rad
  double odom_sigma_trans = 0.01;  // m

  /// 10 degrees about each axis and (0.1, -0.05, 0.15) m.
  static Extrinsics default_truth_extrinsics();
  /// Every noise source and bias set to zero.
  void make_noiseless();
};

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<Scan> scans;
  std::vector<ScanPose> odometry;  // noisy ground truth, L_k -> L_0
  Trajectory truth;  // IMU -> world
  Extrinsics truth_ext;
  Vec3 bias_g = Vec3::Zero();
  Vec3 bias_a = Vec3::Zero();
  double fit_pos_error = 0.0;
  double fit_rot_error = 0.0;
};

Dataset simulate_dataset(const SimConfig& config, std::uint64_t seed);

struct TrialOutcome {
  int trial = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  ExtrinsicError final_error;
  std::vector<ExtrinsicError> round_errors;
  std::vector<Extrinsics> round_ext;
  Vec3 bias_g = Vec3::Zero();
  Vec3 bias_a = Vec3::Zero();
  Vec3 truth_bias_g = Vec3::Zero();
  Vec3 truth_bias_a = Vec3::Zero();
  double seconds = 0.0;  // wall clock; not written to the outputs
};

struct MonteCarloResult {
  std::vector<TrialOutcome> trials;
  int succeeded = 0;
  double rot_mean = 0.0, rot_sd = 0.0;  // deg; sd is NaN with fewer than two successes
  double trans_mean = 0.0, trans_sd = 0.0;  // m
};

/// Trial seeds derive from (seed, trial index). Failures are recorded per
/// trial. Results do not depend on the thread count.
MonteCarloResult monte_carlo(int n_trials, const SimConfig& sim, const CalibConfig& config, std::uint64_t seed,
                             int threads = 1);

std::uint64_t trial_seed(std::uint64_t seed, int trial);

/// Mean and SD of the errors; SD is "n/a" below two successful trials.
void write_stats_json(std::ostream& os, const MonteCarloResult& result);
/// One row per trial and round: trial,round,rot_deg,trans_m.
void write_convergence_csv(std::ostream& os, const MonteCarloResult& result);

}  // namespace ctcalib
