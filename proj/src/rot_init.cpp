#include "ctcalib/rot_init.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SVD>

#include "ctcalib/errors.hpp"
#include "ctcalib/normal_equations.hpp"

namespace ctcalib {

namespace {

double build_gyro_system(const SplineSO3& spline, std::span<const ImuSample> samples,
                         ArrowNormalEquations& ne) {
  ne.clear();
  SO3Evaluation ev;
  Eigen::Matrix<double, 3, 12> jac;
  std::array<int, 4> ids{};
  for (const ImuSample& s : samples) {
    spline.evaluate(s.t, ev, true);
    const Vec3 r = s.gyro - ev.omega;
    for (int j = 0; j < 4; ++j) {
      jac.block<3, 3>(0, 3 * j) = -ev.d_omega[j];
      ids[j] = ev.segment + j;
    }
    ne.add(ids, jac, r);
  }
  return ne.cost();
}

// Integrated gyro orientation at the knot times, as an initial guess.
std::vector<Quat> integrate_to_knots(std::span<const ImuSample> samples, const KnotGrid& grid) {
  std::vector<Quat> at_sample(samples.size());
  at_sample[0] = Quat::Identity();
  for (std::size_t s = 0; s + 1 < samples.size(); ++s) {
    at_sample[s + 1] =
        (at_sample[s] * so3_exp(samples[s].gyro * (samples[s + 1].t - samples[s].t))).normalized();
  }
  std::vector<Quat> ctrl(grid.n(), Quat::Identity());
  std::size_t s = 0;
  for (int k = 1; k < grid.n(); ++k) {
    const double tau = grid.knot(k - 1);
    while (s + 1 < samples.size() && samples[s + 1].t <= tau) ++s;
    ctrl[k] = (at_sample[s] * so3_exp(samples[s].gyro * (tau - samples[s].t))).normalized();
  }
  return ctrl;
}

}  // namespace

SplineSO3 fit_gyro_spline(std::span<const ImuSample> samples, const KnotGrid& grid) {
  if (samples.empty()) throw InsufficientDataError("no gyro samples");
  for (const ImuSample& s : samples) grid.locate(s.t);
  if (static_cast<double>(samples.size()) < 2.0 * grid.segments()) {
    throw InsufficientDataError("fewer than two gyro samples per knot interval; the rotation spline is under-constrained");
  }

  SplineSO3 spline(grid, integrate_to_knots(samples, grid));
  spline.set_ctrl(0, Quat::Identity());
  spline.recondition();

  auto make_system = [&] {
    ArrowNormalEquations ne(grid.n(), 3, {}, {});
    ne.set_fixed(0);
    return ne;
  };
  ArrowNormalEquations ne = make_system();
  double cost = build_gyro_system(spline, samples, ne);
  double lambda = 1e-6;
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd step;
    if (!ne.solve(lambda, step)) {
      lambda *= 10.0;
      if (lambda > 1e8) break;
      continue;
    }
    SplineSO3 trial = spline;
    for (int k = 1; k < grid.n(); ++k) {
      trial.set_ctrl(k, spline.ctrl(k) * so3_exp(step.segment<3>(3 * k)));
    }
    trial.recondition();
    ArrowNormalEquations trial_ne = make_system();
    const double trial_cost = build_gyro_system(trial, samples, trial_ne);
    if (trial_cost <= cost) {
      const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
      spline = std::move(trial);
      ne = std::move(trial_ne);
      cost = trial_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (rel < 1e-12 || step.lpNorm<Eigen::Infinity>() < 1e-12 || cost < 1e-24) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  return spline;
}

Quat relative_rotation(const SplineSO3& spline, double t_a, double t_b) {
  return (spline.orientation(t_a).conjugate() * spline.orientation(t_b)).normalized();
}

double handeye_weight(const Quat& dq_imu, const Quat& dq_lidar, double threshold) {
  const double wi = std::clamp(canonical(dq_imu).w(), -1.0, 1.0);
  const double wl = std::clamp(canonical(dq_lidar).w(), -1.0, 1.0);
  const double r = std::abs(2.0 * (std::acos(wi) - std::acos(wl)));
  if (r < threshold) return 1.0;
  return threshold / r;
}

Quat solve_handeye(std::span<const RotPair> pairs) {
  if (pairs.size() < 2) throw InsufficientDataError("hand-eye alignment needs at least two rotation pairs");
  Eigen::MatrixXd q_stack(4 * pairs.size(), 4);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const RotPair& p = pairs[k];
    q_stack.block<4, 4>(4 * k, 0) =
        p.weight * (left_quat_matrix(canonical(p.dq_imu)) - right_quat_matrix(canonical(p.dq_lidar)));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q_stack, Eigen::ComputeFullV);
  const Eigen::Vector4d sv = svd.singularValues();
  // Rotations about a single axis leave a two-dimensional null space.
  if (sv[2] < 10.0 * sv[3] || sv[2] < 1e-10 * sv[0]) {
    Vec3 axis = Vec3::Zero();
    for (const RotPair& p : pairs) {
      Vec3 a = so3_log(p.dq_lidar);
      if (a.dot(axis) < 0.0) a = -a;
      axis += a;
    }
    if (axis.norm() > 0.0) axis.normalize();
    std::ostringstream os;
    os.precision(3);
    os << "(" << axis.x() << ", " << axis.y() << ", " << axis.z() << ")";
    throw ObservabilityError(
        "hand-eye rotation is unobservable: relative rotations share a single axis " + os.str(),
        {"extrinsic rotation about axis " + os.str()});
  }
  Quat q = quat_from_wxyz(svd.matrixV().col(3));
  return canonical(q.normalized());
}

std::vector<RotPair> make_rot_pairs(const SplineSO3& gyro_spline, std::span<const double> times,
                                    std::span<const Quat> lidar_orientations, double threshold) {
  if (times.size() != lidar_orientations.size()) {
    throw ValidationError("rotation pairs need one LiDAR orientation per time");
  }
  std::vector<RotPair> pairs;
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    RotPair p;
    p.dq_imu = canonical(relative_rotation(gyro_spline, times[k], times[k + 1]));
    p.dq_lidar = canonical((lidar_orientations[k].conjugate() * lidar_orientations[k + 1]).normalized());
    p.weight = handeye_weight(p.dq_imu, p.dq_lidar, threshold);
    pairs.push_back(p);
  }
  return pairs;
}

}  // namespace ctcalib
