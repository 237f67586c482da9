#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ctcalib/splines.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib::testing {

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

/// Control points that wander smoothly: each a bounded random step from the last.
inline std::vector<Quat> random_walk_quats(std::mt19937_64& rng, int n, double step) {
  std::vector<Quat> out;
  Quat q = random_quat(rng);
  for (int k = 0; k < n; ++k) {
    out.push_back(q);
    q = q * so3_exp(random_vec(rng, step));
  }
  return out;
}

inline std::vector<Vec3> random_points(std::mt19937_64& rng, int n, double scale) {
  std::vector<Vec3> out;
  for (int k = 0; k < n; ++k) out.push_back(random_vec(rng, scale));
  return out;
}

inline SplineR3 random_r3(std::mt19937_64& rng, const KnotGrid& grid, double scale = 1.0) {
  return SplineR3(grid, random_points(rng, grid.n(), scale));
}

inline SplineSO3 random_so3(std::mt19937_64& rng, const KnotGrid& grid, double step = 0.3) {
  return SplineSO3(grid, random_walk_quats(rng, grid.n(), step));
}

inline double random_time(std::mt19937_64& rng, const KnotGrid& grid, double margin = 0.0) {
  std::uniform_real_distribution<double> u(grid.begin() + margin, grid.end() - margin);
  double t = u(rng);
  return t < grid.end() ? t : grid.begin();
}

/// Independent rotation matrix from axis-angle, for oracles.
inline Mat3 axis_angle_matrix(const Vec3& phi) {
  const double th = phi.norm();
  if (th == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(th, phi / th).toRotationMatrix();
}

inline Eigen::Matrix4d homogeneous(const Mat3& r, const Vec3& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = p;
  return m;
}

}  // namespace ctcalib::testing
