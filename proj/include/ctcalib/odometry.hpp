#pragma once

// LiDAR pose sources. Poses are L_k -> L_0, where L_0 is the LiDAR frame at
// the first scan's reference time.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ctcalib/surfel_map.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

using ScanPose = TimedPose;

inline Pose as_pose(const ScanPose& s) { return {s.q, s.p}; }

/// Ground-truth LiDAR poses with Gaussian axis-angle and translation noise.
/// The first pose defines L_0 and stays exact.
std::vector<ScanPose> oracle_odometry(const Trajectory& truth, const Extrinsics& ext,
                                      std::span<const double> scan_times, double sigma_rot,
                                      double sigma_trans, std::uint64_t seed);

struct IcpOptions {
  int max_iterations = 30;
  double reject_dist = 0.3;
  int min_correspondences = 20;
  double converge_step = 1e-6;
  /// Smallest-to-largest Hessian eigenvalue ratio below which the
  /// registration counts as degenerate.
  double degeneracy_ratio = 1e-6;
};

struct IcpResult {
  ScanPose pose;
  int iterations = 0;
  int correspondences = 0;
  double mean_residual = 0.0;
  bool converged = false;
  std::vector<double> costs;  // per accepted step, on that step's correspondences
};

/// Gauss-Newton point-to-plane registration of scan points (in the scan's
/// LiDAR frame) against the map's surfels, with step halving.
IcpResult icp_point_to_plane(const Scan& scan, const SurfelMap& map, const ScanPose& initial,
                             const IcpOptions& options = {});

/// (q_a^-1 q_b, R_a^T (p_b - p_a)).
Pose relative_pose(const ScanPose& a, const ScanPose& b);

struct IcpOdometryOptions {
  IcpOptions icp;
  double cell_size = 0.5;
  SurfelOptions surfels;
  int rebuild_every = 5;
};

/// Sequential scan-to-map odometry over deskewed scans. `rotation_prior`, if
/// set, predicts the L_k -> L_0 rotation of scan k for the initial guess;
/// otherwise the last two poses are extrapolated at constant velocity.
/// A scan that fails to register keeps its predicted pose and stays out of the
/// map (counted in `low_confidence`); RegistrationError once more than half fail.
std::vector<ScanPose> icp_odometry(std::span<const Scan> scans,
                                   const std::function<Quat(int)>& rotation_prior,
                                   const IcpOdometryOptions& options, int* low_confidence = nullptr);

/// CSV `t,qw,qx,qy,qz,px,py,pz` with a header row.
void write_pose_csv(std::ostream& os, std::span<const ScanPose> poses);
std::vector<ScanPose> read_pose_csv(std::istream& is, const std::string& name);

}  // namespace ctcalib
