#include "gtest/gtest.h"

#include "ctcalib/errors.hpp"
#include "ctcalib/trajectory.hpp"
#include "test_util.hpp"

namespace ctcalib {
namespace {

using testing::homogeneous;
using testing::random_quat;
using testing::random_r3;
using testing::random_so3;
using testing::random_time;
using testing::random_vec;

Trajectory random_trajectory(std::mt19937_64& rng, const KnotGrid& g) {
  return Trajectory(random_so3(rng, g, 0.2), random_r3(rng, g, 0.5), Vec3(0, 0, -9.81));
}

TEST(Trajectory, StationaryAccelIsMinusGravityInBody) {
  const KnotGrid g(0.0, 0.1, 8);
  const Quat q = so3_exp(Vec3(0.3, -0.2, 0.1));
  const Trajectory traj = Trajectory::constant(g, {q, Vec3(1, 2, 3)}, Vec3(0, 0, -9.81));
  const Vec3 expected = q.conjugate() * Vec3(0, 0, 9.81);
  EXPECT_LT((traj.predict_accel(0.23) - expected).norm(), 1e-12);
  EXPECT_LT(traj.predict_gyro(0.23).norm(), 1e-12);
}

TEST(Trajectory, GravityIsRescaled) {
  const KnotGrid g(0.0, 0.1, 8);
  const Trajectory traj = Trajectory::constant(g, {}, Vec3(0, 1, -1));
  EXPECT_NEAR(traj.gravity().norm(), kGravityMagnitude, 1e-12);
  EXPECT_THROW(Trajectory::constant(g, {}, Vec3::Zero()), ValidationError);
}

TEST(Trajectory, RebasedFixesFirstControlPointAndKeepsMeasurements) {
  std::mt19937_64 rng(21);
  const KnotGrid g(0.0, 0.05, 20);
  const Trajectory traj = random_trajectory(rng, g);
  const Trajectory rb = traj.rebased();
  EXPECT_LT(angular_distance(rb.rot().ctrl(0), Quat::Identity()), 1e-12);
  EXPECT_LT(rb.pos().ctrl(0).norm(), 1e-12);
  const Extrinsics ext{random_quat(rng), random_vec(rng, 0.2)};
  for (int k = 0; k < 50; ++k) {
    const double t = random_time(rng, g);
    const double t0 = random_time(rng, g);
    EXPECT_LT((traj.predict_accel(t) - rb.predict_accel(t)).norm(), 1e-9);
    EXPECT_LT((traj.predict_gyro(t) - rb.predict_gyro(t)).norm(), 1e-9);
    const Vec3 p = random_vec(rng, 5.0);
    EXPECT_LT((lidar_point_to_map(traj, ext, p, t, t0) - lidar_point_to_map(rb, ext, p, t, t0)).norm(),
              1e-9);
  }
}

TEST(LidarPointToMap, MatchesHomogeneousChain) {
  std::mt19937_64 rng(22);
  const KnotGrid g(0.0, 0.05, 20);
  const Trajectory traj = random_trajectory(rng, g);
  const Extrinsics ext{random_quat(rng), random_vec(rng, 0.2)};
  const Eigen::Matrix4d t_il = homogeneous(ext.q_LI.toRotationMatrix(), ext.p_LI);
  for (int k = 0; k < 50; ++k) {
    const double tj = random_time(rng, g);
    const double t0 = random_time(rng, g);
    const Pose pj = traj.pose(tj);
    const Pose p0 = traj.pose(t0);
    const Eigen::Matrix4d chain = t_il.inverse() * homogeneous(p0.q.toRotationMatrix(), p0.p).inverse() *
                                  homogeneous(pj.q.toRotationMatrix(), pj.p) * t_il;
    const Vec3 p = random_vec(rng, 5.0);
    const Vec3 expected = (chain * p.homogeneous()).head<3>();
    EXPECT_LT((lidar_point_to_map(traj, ext, p, tj, t0) - expected).norm(), 1e-10);
  }
}

TEST(LidarPointToMap, IdentityAtReferenceTime) {
  std::mt19937_64 rng(23);
  const KnotGrid g(0.0, 0.05, 20);
  const Trajectory traj = random_trajectory(rng, g);
  const Extrinsics ext{random_quat(rng), random_vec(rng, 0.2)};
  const Vec3 p(1.0, -2.0, 0.5);
  EXPECT_LT((lidar_point_to_map(traj, ext, p, 0.3, 0.3) - p).norm(), 1e-12);
}

TEST(FitToPoses, RecoversSplineFromDenseSamples) {
  std::mt19937_64 rng(24);
  const KnotGrid g(0.0, 0.1, 15);
  const Trajectory truth = random_trajectory(rng, g);
  std::vector<TimedPose> poses;
  for (double t = 0.0; t < g.end(); t += 0.025) {
    const Pose p = truth.pose(t);
    poses.push_back({t, p.q, p.p});
  }
  const Trajectory fit = fit_to_poses(poses, g);
  for (int k = 0; k < 100; ++k) {
    const double t = random_time(rng, g);
    EXPECT_LT((fit.pose(t).p - truth.pose(t).p).norm(), 1e-9);
    EXPECT_LT(angular_distance(fit.pose(t).q, truth.pose(t).q), 1e-9);
  }
}

TEST(FitToPoses, SmoothingBridgesSparsePoses) {
  std::mt19937_64 rng(25);
  const KnotGrid g(0.0, 0.02, 103);
  std::vector<TimedPose> poses;
  for (double t = 0.0; t < g.end(); t += 0.1) {
    poses.push_back({t, so3_exp(Vec3(0.2 * t, 0.1, -0.3 * t)), Vec3(t, 0.5 * t * t, 0.0)});
  }
  EXPECT_THROW(fit_to_poses(poses, g), InsufficientDataError);
  const Trajectory fit = fit_to_poses(poses, g, PoseFitOptions{.smoothing = 1e-2});
  for (const TimedPose& p : poses) {
    EXPECT_LT((fit.pose(p.t).p - p.p).norm(), 1e-2);
    EXPECT_LT(angular_distance(fit.pose(p.t).q, p.q), 1e-2);
  }
}

TEST(FitToPoses, RejectsBadInput) {
  const KnotGrid g(0.0, 0.1, 10);
  std::vector<TimedPose> poses{{0.0, {}, {}}, {0.1, {}, {}}, {0.2, {}, {}}};
  EXPECT_THROW(fit_to_poses(poses, g), InsufficientDataError);
  poses.push_back({0.2, {}, {}});
  EXPECT_THROW(fit_to_poses(poses, g), ValidationError);
  poses.back().t = 5.0;
  EXPECT_THROW(fit_to_poses(poses, g), DomainError);
}

}  // namespace
}  // namespace ctcalib
