#pragma once

// Batch maximum-likelihood refinement of the full calibration state from
// accelerometer, gyroscope and point-to-surfel residuals, solved with
// Levenberg-Marquardt on the sparse normal equations.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctcalib/normal_equations.hpp"
#include "ctcalib/rot_init.hpp"
#include "ctcalib/surfel_map.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

using Vec2 = Eigen::Vector2d;

/// Orthonormal tangent basis (3x2) of the unit sphere at direction `ref`.
Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& ref);

struct CalibState {
  Extrinsics ext;
  /// Rotation/position control points; its gravity is kept equal to gravity().
  Trajectory traj;
  Vec3 bias_a = Vec3::Zero();
  Vec3 bias_g = Vec3::Zero();
  /// Unit direction the gravity chart is centred on.
  Vec3 gravity_ref = -Vec3::UnitZ();
  Vec2 gravity_dof = Vec2::Zero();

  /// kGravityMagnitude * so3_exp(B * dof) * ref, B = tangent_basis(ref).
  Vec3 gravity() const;
  /// Re-centres the chart on `g` with zero dof and syncs the trajectory.
  void set_gravity(const Vec3& g);
  void sync_gravity();
};

struct NoiseConfig {
  double sigma_accel = 0.02;  // m/s^2
  double sigma_gyro = 0.005;  // rad/s
  double sigma_lidar = 0.01;  // m
};

struct Problem {
  std::vector<ImuSample> imu;
  std::vector<Correspondence> correspondences;
  NoiseConfig noise;
  /// Reference time of the map frame L_0.
  double t_map = 0.0;
  /// Map and correspondences live in the trajectory frame instead of L_0.
  /// The fixed map then pins the gauge and no control point is held.
  bool world_map = false;
};

Vec3 residual_accel(const CalibState& state, const ImuSample& sample);
Vec3 residual_gyro(const CalibState& state, const ImuSample& sample);
/// Signed point-to-plane distance in L_0.
double residual_lidar(const CalibState& state, const Correspondence& corr, double t_map);
/// Signed point-to-plane distance in the trajectory frame.
double residual_lidar_world(const CalibState& state, const Correspondence& corr);

struct LmOptions {
  int max_iterations = 50;
  double lambda0 = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double tolerance = 1e-8;  // relative cost change
  double step_tolerance = 1e-9;  // increment norm treated as no change
  bool huber = false;
  double huber_delta = 0.05;  // m
  bool freeze_gravity = false;
  /// Jacobi-scaled LDL^T pivot below which a direction counts as unobservable.
  double observability_tol = 1e-12;
};

/// Parameter layout: one 6-dof block per knot [rotation, position], then
/// extrinsics [rotation, translation], biases [accel, gyro], gravity (2).
struct StateLayout {
  static constexpr int kKnotDim = 6;
  static constexpr int kExtrinsics = 0;
  static constexpr int kBiases = 1;
  static constexpr int kGravity = 2;
};

/// Whitened normal equations at `state`. With an L_0 map the first knot is
/// fixed (gauge) and the knots of the map reference time form the dense border.
ArrowNormalEquations build_normal_equations(const Problem& problem, const CalibState& state,
                                            const LmOptions& options = {});

/// Whitened (robustified if enabled) cost without Jacobians.
double evaluate_cost(const Problem& problem, const CalibState& state, const LmOptions& options = {});

/// Applies an increment in the full layout of build_normal_equations.
CalibState apply_increment(const CalibState& state, const Eigen::VectorXd& step_full);

/// Human-readable name of a block component, e.g. "extrinsic translation y".
std::string describe_parameter(int knot_count, int block, int component);

struct LmIteration {
  int iteration = 0;
  double cost = 0.0;    // after this iteration
  double lambda = 0.0;  // damping used for the accepted step
  double step_norm = 0.0;
  bool accepted = false;
  Extrinsics ext;
};

struct LmReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  std::vector<LmIteration> iterations;
};

/// Convergence report as JSON.
void write_lm_report(std::ostream& os, const LmReport& report);

/// Throws ObservabilityError when the initial normal equations are rank
/// deficient and DivergenceError on a non-finite cost.
CalibState solve_lm(const Problem& problem, const CalibState& init, const LmOptions& options,
                    LmReport* report = nullptr);

}  // namespace ctcalib
