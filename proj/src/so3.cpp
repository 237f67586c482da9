#include "ctcalib/so3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctcalib {

namespace {
constexpr double kTaylorThreshold = 1e-8;
constexpr double kJacobianSmallAngle = 1e-5;
}  // namespace

Quat quat_exp(const Vec3& v) {
  const double n = v.norm();
  if (n < kTaylorThreshold) {
    const double n2 = n * n;
    const Vec3 xyz = v * (0.5 - n2 / 48.0);
    return Quat(1.0 - n2 / 8.0, xyz.x(), xyz.y(), xyz.z());
  }
  const Vec3 xyz = v * (std::sin(0.5 * n) / n);
  return Quat(std::cos(0.5 * n), xyz.x(), xyz.y(), xyz.z());
}

Vec3 quat_log(const Quat& q) {
  const Vec3 xyz = q.vec();
  const double n = xyz.norm();
  const double w = q.w();
  if (n < 0.5 * kTaylorThreshold) {
    if (w > 0.0) {
      // 2 atan(n/w)/n expanded to second order in n
      return xyz * (2.0 / w - 2.0 * n * n / (3.0 * w * w * w));
    }
    if (n == 0.0) return Vec3(2.0 * std::numbers::pi, 0.0, 0.0);
  }
  return xyz * (2.0 * std::atan2(n, w) / n);
}

Quat so3_exp(const Vec3& phi) { return quat_exp(phi); }

Vec3 so3_log(const Quat& q) { return quat_log(canonical(q)); }

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) {
  return Vec3(0.5 * (m(2, 1) - m(1, 2)), 0.5 * (m(0, 2) - m(2, 0)), 0.5 * (m(1, 0) - m(0, 1)));
}

Mat3 right_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kJacobianSmallAngle) {
    return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() - ((1.0 - std::cos(theta)) / t2) * k +
         ((theta - std::sin(theta)) / (t2 * theta)) * k * k;
}

Mat3 right_jacobian_inv(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kJacobianSmallAngle) {
    return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  }
  const double coeff =
      1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + coeff * k * k;
}

Mat3 left_jacobian(const Vec3& phi) { return right_jacobian(-phi); }

Mat3 left_jacobian_inv(const Vec3& phi) { return right_jacobian_inv(-phi); }

Quat canonical(const Quat& q) {
  if (q.w() < 0.0) return Quat(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

double angular_distance(const Quat& a, const Quat& b) {
  return so3_log(a.conjugate() * b).norm();
}

Mat4 left_quat_matrix(const Quat& p) {
  Mat4 m;
  m << p.w(), -p.x(), -p.y(), -p.z(),
       p.x(),  p.w(), -p.z(),  p.y(),
       p.y(),  p.z(),  p.w(), -p.x(),
       p.z(), -p.y(),  p.x(),  p.w();
  return m;
}

Mat4 right_quat_matrix(const Quat& q) {
  Mat4 m;
  m << q.w(), -q.x(), -q.y(), -q.z(),
       q.x(),  q.w(),  q.z(), -q.y(),
       q.y(), -q.z(),  q.w(),  q.x(),
       q.z(),  q.y(), -q.x(),  q.w();
  return m;
}

Eigen::Vector4d quat_to_wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

Quat quat_from_wxyz(const Eigen::Vector4d& v) { return Quat(v[0], v[1], v[2], v[3]); }

Vec3 to_euler_rpy(const Quat& q) {
  const Mat3 r = q.normalized().toRotationMatrix();
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

Quat from_euler_rpy(double roll, double pitch, double yaw) {
  return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
              Eigen::AngleAxisd(roll, Vec3::UnitX()));
}

}  // namespace ctcalib
