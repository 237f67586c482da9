#pragma once

// Uniform cubic B-splines on R^3 and on SO(3).
//
// A spline with n control points on grid (t0, dt) is valid on the half-open
// interval [t0, t0 + (n - 3) dt). Time t in [t0 + i dt, t0 + (i + 1) dt) lies
// in segment i and depends on control points i .. i + 3 only.

#include <array>
#include <vector>

#include <Eigen/Core>

#include "ctcalib/so3.hpp"

namespace ctcalib {

inline constexpr int kSplineOrder = 4;

class KnotGrid {
 public:
  KnotGrid() = default;
  /// Throws ValidationError unless dt > 0 and n >= 4.
  KnotGrid(double t0, double dt, int n);

  /// Smallest grid with spacing dt whose domain contains [t_first, t_last].
  static KnotGrid covering(double t_first, double t_last, double dt);

  double t0() const { return t0_; }
  double dt() const { return dt_; }
  int n() const { return n_; }
  int segments() const { return n_ - 3; }
  double begin() const { return t0_; }
  double end() const { return t0_ + segments() * dt_; }
  double knot(int i) const { return t0_ + i * dt_; }
  bool contains(double t) const { return t >= begin() && t < end(); }

  struct Locus {
    int segment;
    double u;
  };
  /// Segment index and normalized time u in [0, 1); throws DomainError outside the domain.
  Locus locate(double t) const;

  bool operator==(const KnotGrid&) const = default;

 private:
  double t0_ = 0.0;
  double dt_ = 1.0;
  int n_ = 4;
};

/// The constant 4x4 basis matrices of the uniform cubic B-spline. Rows index
/// powers of u, columns index the control point within the segment.
struct SplineMatrices {
  /// Matrix form: p(u) = sum_j [1 u u^2 u^3] * blending().col(j) * p_{i+j}.
  static const Mat4& blending();
  /// Cumulative form: column 0 is the base weight (always 1).
  static const Mat4& cumulative();
};

/// Per-control-point weights of one segment and their first two time derivatives.
struct BasisWeights {
  Eigen::Vector4d value;
  Eigen::Vector4d d1;
  Eigen::Vector4d d2;
};

BasisWeights blending_weights(double u, double dt);
BasisWeights cumulative_weights(double u, double dt);

class SplineR3 {
 public:
  SplineR3() = default;
  /// Throws ValidationError if ctrl.size() != grid.n().
  SplineR3(KnotGrid grid, std::vector<Vec3> ctrl);

  const KnotGrid& grid() const { return grid_; }
  const std::vector<Vec3>& ctrl() const { return ctrl_; }
  const Vec3& ctrl(int k) const { return ctrl_[k]; }
  void set_ctrl(int k, const Vec3& p) { ctrl_[k] = p; }

  /// Matrix form.
  Vec3 position(double t) const;
  /// Cumulative form; agrees with position() to rounding.
  Vec3 position_cumulative(double t) const;
  Vec3 velocity(double t) const;
  Vec3 acceleration(double t) const;

 private:
  KnotGrid grid_;
  std::vector<Vec3> ctrl_;
};

/// Value, body angular velocity and their Jacobians at one time.
///
/// Jacobians are with respect to right perturbations of the four control
/// points of the segment, q_k <- q_k ⊗ so3_exp(delta_k): d_orientation[j] maps
/// delta_{segment+j} to the right perturbation of q(t), d_omega[j] maps it to
/// the change of the body angular velocity.
struct SO3Evaluation {
  int segment = 0;
  Quat q = Quat::Identity();
  Vec3 omega = Vec3::Zero();
  std::array<Mat3, 4> d_orientation;
  std::array<Mat3, 4> d_omega;
};

class SplineSO3 {
 public:
  SplineSO3() = default;
  /// Control points are normalized and sign-conditioned so that adjacent
  /// points have a non-negative inner product.
  SplineSO3(KnotGrid grid, std::vector<Quat> ctrl);

  const KnotGrid& grid() const { return grid_; }
  const std::vector<Quat>& ctrl() const { return ctrl_; }
  const Quat& ctrl(int k) const { return ctrl_[k]; }
  /// Replaces control point k; call recondition() after a batch of updates.
  void set_ctrl(int k, const Quat& q) { ctrl_[k] = q.normalized(); }
  void recondition();

  Quat orientation(double t) const;
  Vec3 angular_velocity(double t) const;

  /// Full evaluation; Jacobians are filled only when requested.
  void evaluate(double t, SO3Evaluation& out, bool with_jacobians) const;

 private:
  KnotGrid grid_;
  std::vector<Quat> ctrl_;
};

/// Flips signs so that <q_k, q_{k+1}> >= 0 along the sequence.
void condition_signs(std::vector<Quat>& ctrl);

}  // namespace ctcalib
