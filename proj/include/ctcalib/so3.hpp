#pragma once

// Quaternion and SO(3) helpers.
//
// Convention: Hamilton quaternions, written (w, x, y, z), stored in
// Eigen::Quaterniond. q ⊗ p is Eigen's operator*. A unit quaternion q maps a
// vector v to q v q^-1, i.e. R(q) = q.toRotationMatrix().
//
// quat_exp maps a rotation vector to the unit quaternion rotating by |v|
// about v/|v|. so3_exp/so3_log are the same maps, with so3_log first
// choosing the w >= 0 representative.

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctcalib {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

/// (cos(|v|/2), sin(|v|/2) v/|v|); second-order Taylor branch below |v| = 1e-8.
Quat quat_exp(const Vec3& v);

/// Inverse of quat_exp for unit q. |v| lies in [0, 2 pi]; in [0, pi] when w >= 0.
Vec3 quat_log(const Quat& q);

/// Rotation by angle |phi| about phi/|phi|.
Quat so3_exp(const Vec3& phi);

/// Principal rotation vector of q (angle in [0, pi]); sign of q is irrelevant.
Vec3 so3_log(const Quat& q);

Mat3 hat(const Vec3& v);
Vec3 vee(const Mat3& m);

/// Right Jacobian of SO(3): Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d).
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inv(const Vec3& phi);
/// Left Jacobian: Exp(phi + d) ≈ Exp(Jl(phi) d) Exp(phi).
Mat3 left_jacobian(const Vec3& phi);
Mat3 left_jacobian_inv(const Vec3& phi);

/// Flip q so that w >= 0.
Quat canonical(const Quat& q);

/// Geodesic angle between two rotations, radians.
double angular_distance(const Quat& a, const Quat& b);

/// [p]_L with [p]_L * vec(q) == vec(p ⊗ q); vec() orders (w, x, y, z).
Mat4 left_quat_matrix(const Quat& p);
/// [q]_R with [q]_R * vec(p) == vec(p ⊗ q).
Mat4 right_quat_matrix(const Quat& q);

Eigen::Vector4d quat_to_wxyz(const Quat& q);
Quat quat_from_wxyz(const Eigen::Vector4d& v);

/// Intrinsic Z-Y-X (yaw, pitch, roll) angles of q, returned as (roll, pitch, yaw) in radians.
Vec3 to_euler_rpy(const Quat& q);
Quat from_euler_rpy(double roll, double pitch, double yaw);

}  // namespace ctcalib
