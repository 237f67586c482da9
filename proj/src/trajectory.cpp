#include "ctcalib/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "ctcalib/errors.hpp"
#include "ctcalib/normal_equations.hpp"

namespace ctcalib {

Trajectory::Trajectory(SplineSO3 rot, SplineR3 pos, const Vec3& gravity)
    : rot_(std::move(rot)), pos_(std::move(pos)) {
  if (!(rot_.grid() == pos_.grid())) {
    throw ValidationError("orientation and position splines must share a knot grid");
  }
  set_gravity(gravity);
}

void Trajectory::set_gravity(const Vec3& g) {
  const double n = g.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("gravity vector must be non-zero");
  gravity_ = g * (kGravityMagnitude / n);
}

Pose Trajectory::pose(double t) const { return {rot_.orientation(t), pos_.position(t)}; }

Vec3 Trajectory::predict_accel(double t) const {
  const Quat q = rot_.orientation(t);
  return q.conjugate() * (pos_.acceleration(t) - gravity_);
}

Vec3 Trajectory::predict_gyro(double t) const { return rot_.angular_velocity(t); }

Trajectory Trajectory::transformed(const Pose& left) const {
  std::vector<Quat> rc(rot_.ctrl().size());
  std::vector<Vec3> pc(pos_.ctrl().size());
  for (std::size_t k = 0; k < rc.size(); ++k) rc[k] = left.q * rot_.ctrl(static_cast<int>(k));
  for (std::size_t k = 0; k < pc.size(); ++k) pc[k] = left * pos_.ctrl(static_cast<int>(k));
  return Trajectory(SplineSO3(grid(), std::move(rc)), SplineR3(grid(), std::move(pc)),
                    left.q * gravity_);
}

Trajectory Trajectory::rebased() const {
  return transformed(Pose{rot_.ctrl(0), pos_.ctrl(0)}.inverse());
}

Trajectory Trajectory::constant(const KnotGrid& grid, const Pose& pose, const Vec3& gravity) {
  return Trajectory(SplineSO3(grid, std::vector<Quat>(grid.n(), pose.q)),
                    SplineR3(grid, std::vector<Vec3>(grid.n(), pose.p)), gravity);
}

Pose lidar_pose(const Trajectory& traj, const Extrinsics& ext, double t) {
  return traj.pose(t) * ext.as_pose();
}

Vec3 lidar_point_to_map(const Trajectory& traj, const Extrinsics& ext, const Vec3& p, double t_j,
                        double t_0) {
  // L_j -> I_j -> I0 -> I(t_0) -> L_0
  const Vec3 in_imu = ext.q_LI * p + ext.p_LI;
  const Vec3 in_ref = traj.rot().orientation(t_j) * in_imu + traj.pos().position(t_j);
  const Quat q0 = traj.rot().orientation(t_0);
  const Vec3 in_imu0 = q0.conjugate() * (in_ref - traj.pos().position(t_0));
  return ext.q_LI.conjugate() * (in_imu0 - ext.p_LI);
}

namespace {

constexpr double kRankTolerance = 1e-10;

Quat slerp_at(std::span<const TimedPose> poses, double t) {
  if (t <= poses.front().t) return poses.front().q;
  if (t >= poses.back().t) return poses.back().q;
  const auto it = std::upper_bound(poses.begin(), poses.end(), t,
                                   [](double v, const TimedPose& p) { return v < p.t; });
  const TimedPose& b = *it;
  const TimedPose& a = *(it - 1);
  const double s = (t - a.t) / (b.t - a.t);
  return a.q.slerp(s, b.q);
}

void throw_if_deficient(const ArrowNormalEquations& ne) {
  if (!ne.deficient_columns(kRankTolerance).empty()) {
    throw InsufficientDataError("poses do not determine every control point; add poses or smoothing");
  }
}

SplineR3 fit_positions(std::span<const TimedPose> poses, const KnotGrid& grid, double smoothing) {
  ArrowNormalEquations ne(grid.n(), 3, {}, {});
  Eigen::Matrix<double, 3, 12> jac;
  std::array<int, 4> ids{};
  for (const TimedPose& pose : poses) {
    const auto [i, u] = grid.locate(pose.t);
    const BasisWeights w = blending_weights(u, grid.dt());
    for (int j = 0; j < 4; ++j) {
      jac.block<3, 3>(0, 3 * j) = w.value[j] * Mat3::Identity();
      ids[j] = i + j;
    }
    const Vec3 r = -pose.p;  // residual at the zero initial guess
    ne.add(ids, jac, r);
  }
  if (smoothing > 0.0) {
    const double s = std::sqrt(smoothing);
    Eigen::Matrix<double, 3, 9> js;
    js << s * Mat3::Identity(), -2.0 * s * Mat3::Identity(), s * Mat3::Identity();
    for (int m = 1; m + 1 < grid.n(); ++m) {
      const std::array<int, 3> sid{m - 1, m, m + 1};
      ne.add(sid, js, Vec3::Zero());
    }
  }
  throw_if_deficient(ne);
  Eigen::VectorXd step;
  if (!ne.solve(0.0, step)) throw InsufficientDataError("position fit is singular");
  std::vector<Vec3> ctrl(grid.n());
  for (int k = 0; k < grid.n(); ++k) ctrl[k] = step.segment<3>(3 * k);
  return SplineR3(grid, std::move(ctrl));
}

// Adds rotation residuals and returns the cost.
double build_rotation_system(const SplineSO3& spline, std::span<const TimedPose> poses,
                             double smoothing, ArrowNormalEquations& ne) {
  ne.clear();
  SO3Evaluation ev;
  Eigen::Matrix<double, 3, 12> jac;
  std::array<int, 4> ids{};
  for (const TimedPose& pose : poses) {
    spline.evaluate(pose.t, ev, true);
    const Vec3 e = so3_log(ev.q.conjugate() * pose.q);
    const Mat3 de = -left_jacobian_inv(e);
    for (int j = 0; j < 4; ++j) {
      jac.block<3, 3>(0, 3 * j) = de * ev.d_orientation[j];
      ids[j] = ev.segment + j;
    }
    ne.add(ids, jac, e);
  }
  if (smoothing > 0.0) {
    const double s = std::sqrt(smoothing);
    const auto& c = spline.ctrl();
    Eigen::Matrix<double, 3, 9> js;
    for (int m = 1; m + 1 < static_cast<int>(c.size()); ++m) {
      const Quat rel_a = c[m - 1].conjugate() * c[m];
      const Quat rel_b = c[m].conjugate() * c[m + 1];
      const Vec3 da = so3_log(rel_a);
      const Vec3 db = so3_log(rel_b);
      const Mat3 ja_inv = right_jacobian_inv(da);
      const Mat3 jb_inv = right_jacobian_inv(db);
      // r = db - da
      js.block<3, 3>(0, 0) = s * ja_inv * rel_a.toRotationMatrix().transpose();
      js.block<3, 3>(0, 3) = s * (-jb_inv * rel_b.toRotationMatrix().transpose() - ja_inv);
      js.block<3, 3>(0, 6) = s * jb_inv;
      const std::array<int, 3> sid{m - 1, m, m + 1};
      ne.add(sid, js, s * (db - da));
    }
  }
  return ne.cost();
}

SplineSO3 fit_orientations(std::span<const TimedPose> poses, const KnotGrid& grid, double smoothing,
                           int max_iterations) {
  std::vector<Quat> init(grid.n());
  for (int k = 0; k < grid.n(); ++k) init[k] = slerp_at(poses, grid.knot(k - 1));
  SplineSO3 spline(grid, std::move(init));

  ArrowNormalEquations ne(grid.n(), 3, {}, {});
  double cost = build_rotation_system(spline, poses, smoothing, ne);
  throw_if_deficient(ne);
  double lambda = 1e-9;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::VectorXd step;
    if (!ne.solve(lambda, step)) {
      lambda *= 10.0;
      continue;
    }
    SplineSO3 trial = spline;
    for (int k = 0; k < grid.n(); ++k) {
      trial.set_ctrl(k, spline.ctrl(k) * so3_exp(step.segment<3>(3 * k)));
    }
    trial.recondition();
    ArrowNormalEquations trial_ne(grid.n(), 3, {}, {});
    const double trial_cost = build_rotation_system(trial, poses, smoothing, trial_ne);
    if (trial_cost <= cost) {
      spline = std::move(trial);
      ne = std::move(trial_ne);
      const bool done = step.lpNorm<Eigen::Infinity>() < 1e-12 || cost - trial_cost <= 1e-15 * cost;
      cost = trial_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (done || cost < 1e-28) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  return spline;
}

}  // namespace

Trajectory fit_to_poses(std::span<const TimedPose> poses, const KnotGrid& grid,
                        const PoseFitOptions& options) {
  if (poses.size() < 4) throw InsufficientDataError("at least 4 poses are needed to fit a spline");
  for (std::size_t k = 1; k < poses.size(); ++k) {
    if (!(poses[k].t > poses[k - 1].t)) throw ValidationError("pose timestamps must strictly increase");
  }
  for (const TimedPose& p : poses) grid.locate(p.t);
  SplineR3 pos = fit_positions(poses, grid, options.smoothing);
  SplineSO3 rot = fit_orientations(poses, grid, options.smoothing, options.max_iterations);
  return Trajectory(std::move(rot), std::move(pos), Vec3(0.0, 0.0, -kGravityMagnitude));
}

}  // namespace ctcalib
