#pragma once

// Finite-difference oracle for the optimizer: stacks whitened residuals from
// the public residual functions and differentiates them through
// apply_increment, independently of the analytic Jacobian code.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ctcalib/optimizer.hpp"

namespace ctcalib::testing {

inline Eigen::VectorXd stacked_residuals(const Problem& pb, const CalibState& s) {
  Eigen::VectorXd r(6 * pb.imu.size() + pb.correspondences.size());
  int k = 0;
  for (const ImuSample& m : pb.imu) {
    r.segment<3>(k) = residual_accel(s, m) / pb.noise.sigma_accel;
    r.segment<3>(k + 3) = residual_gyro(s, m) / pb.noise.sigma_gyro;
    k += 6;
  }
  for (const Correspondence& c : pb.correspondences) {
    const double d = pb.world_map ? residual_lidar_world(s, c) : residual_lidar(s, c, pb.t_map);
    r[k++] = d / pb.noise.sigma_lidar;
  }
  return r;
}

/// Central-difference Jacobian over the full parameter layout.
inline Eigen::MatrixXd fd_jacobian(const Problem& pb, const CalibState& s, double h = 1e-6) {
  const int n = 6 * s.traj.grid().n() + 14;
  const Eigen::VectorXd r0 = stacked_residuals(pb, s);
  Eigen::MatrixXd j(r0.size(), n);
  for (int c = 0; c < n; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[c] = h;
    j.col(c) = (stacked_residuals(pb, apply_increment(s, e)) - stacked_residuals(pb, apply_increment(s, -e))) /
               (2 * h);
  }
  return j;
}

struct JacobianCheck {
  double hessian_rel = 0.0;   // worst block, relative
  double gradient_rel = 0.0;  // worst block, relative
};

/// Compares the analytic normal equations with J_fd^T J_fd and J_fd^T r block
/// by block (knot blocks of 6, then 6, 6, 2 globals). Fixed blocks are skipped.
inline JacobianCheck compare_with_fd(const Problem& pb, const CalibState& s, const LmOptions& opts = {}) {
  const ArrowNormalEquations ne = build_normal_equations(pb, s, opts);
  const Eigen::MatrixXd jfd = fd_jacobian(pb, s);
  const Eigen::VectorXd r = stacked_residuals(pb, s);
  const Eigen::MatrixXd hfd = jfd.transpose() * jfd;
  const Eigen::VectorXd gfd = jfd.transpose() * r;

  // Analytic H in full layout.
  const int n = ne.full_size();
  Eigen::MatrixXd han = Eigen::MatrixXd::Zero(n, n);
  const Eigen::SparseMatrix<double> hs = ne.hessian();
  std::vector<int> full_of(ne.dimension());
  for (int c = 0; c < ne.dimension(); ++c) {
    const auto [block, comp] = ne.parameter_of(c);
    full_of[c] = ne.full_offset(block) + comp;
  }
  for (int k = 0; k < hs.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(hs, k); it; ++it) {
      const int a = full_of[it.row()], b = full_of[it.col()];
      han(a, b) = it.value();
      han(b, a) = it.value();
    }
  }
  const Eigen::VectorXd gan = ne.gradient();

  JacobianCheck out;
  const double hscale = hfd.norm();
  const double gscale = gfd.norm();
  for (int a = 0; a < ne.block_count(); ++a) {
    if (ne.fixed(a)) continue;
    const int oa = ne.full_offset(a), sa = ne.block_size(a);
    const double gref = std::max(gfd.segment(oa, sa).norm(), 1e-7 * gscale);
    out.gradient_rel = std::max(out.gradient_rel, (gan.segment(oa, sa) - gfd.segment(oa, sa)).norm() / gref);
    for (int b = 0; b < ne.block_count(); ++b) {
      if (ne.fixed(b)) continue;
      const int ob = ne.full_offset(b), sb = ne.block_size(b);
      const auto blk_fd = hfd.block(oa, ob, sa, sb);
      const double ref = std::max(blk_fd.norm(), 1e-7 * hscale);
      out.hessian_rel = std::max(out.hessian_rel, (han.block(oa, ob, sa, sb) - blk_fd).norm() / ref);
    }
  }
  return out;
}

}  // namespace ctcalib::testing
