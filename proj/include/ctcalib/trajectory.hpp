#pragma once

// Continuous IMU trajectory: orientation and position splines sharing one
// knot grid, plus gravity, all expressed in the trajectory reference frame I0.

#include <span>
#include <vector>

#include "ctcalib/splines.hpp"

namespace ctcalib {

inline constexpr double kGravityMagnitude = 9.81;

/// Rigid transform x -> q x + p.
struct Pose {
  Quat q = Quat::Identity();
  Vec3 p = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return q * x + p; }
  Pose operator*(const Pose& o) const { return {q * o.q, q * o.p + p}; }
  Pose inverse() const {
    const Quat qi = q.conjugate();
    return {qi, -(qi * p)};
  }
};

/// LiDAR -> IMU transform: x_I = q_LI x_L + p_LI.
struct Extrinsics {
  Quat q_LI = Quat::Identity();
  Vec3 p_LI = Vec3::Zero();

  Pose as_pose() const { return {q_LI, p_LI}; }
};

struct TimedPose {
  double t = 0.0;
  Quat q = Quat::Identity();
  Vec3 p = Vec3::Zero();
};

class Trajectory {
 public:
  Trajectory() = default;
  /// Throws ValidationError if the grids differ or gravity is zero. Gravity
  /// is rescaled to kGravityMagnitude.
  Trajectory(SplineSO3 rot, SplineR3 pos, const Vec3& gravity);

  const KnotGrid& grid() const { return rot_.grid(); }
  const SplineSO3& rot() const { return rot_; }
  const SplineR3& pos() const { return pos_; }
  SplineSO3& rot() { return rot_; }
  SplineR3& pos() { return pos_; }
  const Vec3& gravity() const { return gravity_; }
  void set_gravity(const Vec3& g);

  /// I(t) -> I0.
  Pose pose(double t) const;

  /// Body-frame specific force R(t)^T (p''(t) - g).
  Vec3 predict_accel(double t) const;
  /// Body-frame angular velocity.
  Vec3 predict_gyro(double t) const;

  /// Same motion expressed in another frame: every pose becomes left * pose.
  Trajectory transformed(const Pose& left) const;
  /// Re-anchors so the first control points are identity / zero.
  Trajectory rebased() const;

  /// Motionless trajectory at a fixed pose.
  static Trajectory constant(const KnotGrid& grid, const Pose& pose, const Vec3& gravity);

 private:
  SplineSO3 rot_;
  SplineR3 pos_;
  Vec3 gravity_ = Vec3(0.0, 0.0, -kGravityMagnitude);
};

/// Pose of the LiDAR frame at time t in I0: T_I0_I(t) * T_I_L.
Pose lidar_pose(const Trajectory& traj, const Extrinsics& ext, double t);

/// Maps a point captured at t_j in L(t_j) into the map frame L(t_0).
Vec3 lidar_point_to_map(const Trajectory& traj, const Extrinsics& ext, const Vec3& p, double t_j,
                        double t_0);

struct PoseFitOptions {
  /// Weight of second-difference penalties on control points; 0 disables
  /// them, in which case the poses alone must determine every control point.
  double smoothing = 0.0;
  int max_iterations = 30;
};

/// Least-squares spline through discrete poses (position error plus log-map
/// orientation error). Throws InsufficientDataError when underdetermined.
Trajectory fit_to_poses(std::span<const TimedPose> poses, const KnotGrid& grid,
                        const PoseFitOptions& options = {});

}  // namespace ctcalib
