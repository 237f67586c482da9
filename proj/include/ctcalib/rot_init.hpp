#pragma once

// Extrinsic rotation initialization: fit an orientation spline to raw gyro
// readings, then align its relative rotations with LiDAR odometry rotations
// through the quaternion form of the hand-eye equation
//   dq_imu ⊗ q_LI = q_LI ⊗ dq_lidar.

#include <span>
#include <vector>

#include "ctcalib/splines.hpp"

namespace ctcalib {

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2
};

struct RotPair {
  Quat dq_imu = Quat::Identity();
  Quat dq_lidar = Quat::Identity();
  double weight = 1.0;
};

inline constexpr double kDefaultHandEyeThreshold = 0.02;  // rad

/// Orientation spline whose body angular velocity best matches the gyro
/// readings in the least-squares sense. The first control point is held at
/// the identity. Throws InsufficientDataError with fewer than two samples per
/// knot interval on average.
SplineSO3 fit_gyro_spline(std::span<const ImuSample> samples, const KnotGrid& grid);

/// q(t_a)^-1 ⊗ q(t_b).
Quat relative_rotation(const SplineSO3& spline, double t_a, double t_b);

/// Outlier weight: 1 while the rotation angles of the pair differ by less
/// than `threshold`, threshold / r beyond.
double handeye_weight(const Quat& dq_imu, const Quat& dq_lidar, double threshold);

/// Smallest right singular vector of the stacked, weighted
/// ([dq_imu]_L - [dq_lidar]_R) system; real part non-negative.
/// Throws ObservabilityError when the rotation axes do not span two directions.
Quat solve_handeye(std::span<const RotPair> pairs);

/// Pairs consecutive LiDAR rotations (L_k -> L_0 at times t_k) with the
/// spline's relative rotations over the same intervals and weights them.
std::vector<RotPair> make_rot_pairs(const SplineSO3& gyro_spline, std::span<const double> times,
                                    std::span<const Quat> lidar_orientations, double threshold);

}  // namespace ctcalib
