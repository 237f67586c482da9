#include "ctcalib/splines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctcalib/errors.hpp"

namespace ctcalib {

namespace {

std::string domain_message(double t, double begin, double end) {
  std::ostringstream os;
  os.precision(17);
  os << "time " << t << " outside spline domain [" << begin << ", " << end << ")";
  return os.str();
}

BasisWeights weights_from(const Mat4& m, double u, double dt) {
  const Eigen::RowVector4d pw(1.0, u, u * u, u * u * u);
  const Eigen::RowVector4d dpw(0.0, 1.0, 2.0 * u, 3.0 * u * u);
  const Eigen::RowVector4d ddpw(0.0, 0.0, 2.0, 6.0 * u);
  BasisWeights w;
  w.value = (pw * m).transpose();
  w.d1 = (dpw * m).transpose() / dt;
  w.d2 = (ddpw * m).transpose() / (dt * dt);
  return w;
}

}  // namespace

DomainError::DomainError(double t, double begin, double end)
    : CalibError(domain_message(t, begin, end)), t_(t), begin_(begin), end_(end) {}

KnotGrid::KnotGrid(double t0, double dt, int n) : t0_(t0), dt_(dt), n_(n) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("knot spacing must be positive");
  if (n < kSplineOrder) throw ValidationError("a cubic spline needs at least 4 control points");
  if (!std::isfinite(t0)) throw ValidationError("knot grid start must be finite");
}

KnotGrid KnotGrid::covering(double t_first, double t_last, double dt) {
  if (!(t_last >= t_first)) throw ValidationError("time span must be non-empty");
  int segments = static_cast<int>(std::floor((t_last - t_first) / dt)) + 1;
  KnotGrid g(t_first, dt, segments + 3);
  while (!(t_last < g.end())) g = KnotGrid(t_first, dt, g.n() + 1);
  return g;
}

KnotGrid::Locus KnotGrid::locate(double t) const {
  if (!contains(t)) throw DomainError(t, begin(), end());
  const double s = (t - t0_) / dt_;
  int i = static_cast<int>(std::floor(s));
  i = std::clamp(i, 0, segments() - 1);
  double u = std::clamp(s - i, 0.0, 1.0);
  return {i, u};
}

const Mat4& SplineMatrices::blending() {
  static const Mat4 m = [] {
    Mat4 b;
    b << 1.0, 4.0, 1.0, 0.0,
         -3.0, 0.0, 3.0, 0.0,
         3.0, -6.0, 3.0, 0.0,
         -1.0, 3.0, -3.0, 1.0;
    return Mat4(b / 6.0);
  }();
  return m;
}

const Mat4& SplineMatrices::cumulative() {
  static const Mat4 m = [] {
    Mat4 c;
    c << 6.0, 5.0, 1.0, 0.0,
         0.0, 3.0, 3.0, 0.0,
         0.0, -3.0, 3.0, 0.0,
         0.0, 1.0, -2.0, 1.0;
    return Mat4(c / 6.0);
  }();
  return m;
}

BasisWeights blending_weights(double u, double dt) {
  return weights_from(SplineMatrices::blending(), u, dt);
}

BasisWeights cumulative_weights(double u, double dt) {
  return weights_from(SplineMatrices::cumulative(), u, dt);
}

// ---------------------------------------------------------------------------
// R^3

SplineR3::SplineR3(KnotGrid grid, std::vector<Vec3> ctrl) : grid_(grid), ctrl_(std::move(ctrl)) {
  if (static_cast<int>(ctrl_.size()) != grid_.n()) {
    throw ValidationError("control point count does not match knot grid");
  }
}

Vec3 SplineR3::position(double t) const {
  const auto [i, u] = grid_.locate(t);
  const Eigen::RowVector4d pw(1.0, u, u * u, u * u * u);
  const Mat4& m = SplineMatrices::blending();
  Vec3 p = Vec3::Zero();
  for (int j = 0; j < 4; ++j) p += (pw * m.col(j)) * ctrl_[i + j];
  return p;
}

Vec3 SplineR3::position_cumulative(double t) const {
  const auto [i, u] = grid_.locate(t);
  const Eigen::RowVector4d pw(1.0, u, u * u, u * u * u);
  const Mat4& m = SplineMatrices::cumulative();
  Vec3 p = ctrl_[i];
  for (int j = 1; j < 4; ++j) p += (pw * m.col(j)) * (ctrl_[i + j] - ctrl_[i + j - 1]);
  return p;
}

Vec3 SplineR3::velocity(double t) const {
  const auto [i, u] = grid_.locate(t);
  const BasisWeights w = blending_weights(u, grid_.dt());
  Vec3 v = Vec3::Zero();
  for (int j = 0; j < 4; ++j) v += w.d1[j] * ctrl_[i + j];
  return v;
}

Vec3 SplineR3::acceleration(double t) const {
  const auto [i, u] = grid_.locate(t);
  const BasisWeights w = blending_weights(u, grid_.dt());
  Vec3 a = Vec3::Zero();
  for (int j = 0; j < 4; ++j) a += w.d2[j] * ctrl_[i + j];
  return a;
}

// ---------------------------------------------------------------------------
// SO(3)

void condition_signs(std::vector<Quat>& ctrl) {
  for (std::size_t k = 1; k < ctrl.size(); ++k) {
    if (ctrl[k - 1].dot(ctrl[k]) < 0.0) ctrl[k].coeffs() = -ctrl[k].coeffs();
  }
}

SplineSO3::SplineSO3(KnotGrid grid, std::vector<Quat> ctrl) : grid_(grid), ctrl_(std::move(ctrl)) {
  if (static_cast<int>(ctrl_.size()) != grid_.n()) {
    throw ValidationError("control point count does not match knot grid");
  }
  recondition();
}

void SplineSO3::recondition() {
  for (auto& q : ctrl_) q.normalize();
  condition_signs(ctrl_);
}

Quat SplineSO3::orientation(double t) const {
  const auto [i, u] = grid_.locate(t);
  const Eigen::RowVector4d pw(1.0, u, u * u, u * u * u);
  const Mat4& m = SplineMatrices::cumulative();
  Quat q = ctrl_[i];
  for (int j = 1; j < 4; ++j) {
    const Quat rel = ctrl_[i + j - 1].conjugate() * ctrl_[i + j];
    q = q * quat_exp((pw * m.col(j)) * quat_log(rel));
  }
  return q.normalized();
}

Vec3 SplineSO3::angular_velocity(double t) const {
  SO3Evaluation e;
  evaluate(t, e, false);
  return e.omega;
}

void SplineSO3::evaluate(double t, SO3Evaluation& out, bool with_jacobians) const {
  const auto [i, u] = grid_.locate(t);
  const BasisWeights w = cumulative_weights(u, grid_.dt());
  out.segment = i;

  // d[j]: rotation vector between control points i+j-1 and i+j, j = 1..3.
  std::array<Vec3, 4> d;
  std::array<Mat3, 4> rel_rot;
  std::array<Quat, 4> step;
  std::array<Mat3, 4> step_rot;
  std::array<Vec3, 4> omega_before;
  Quat q = ctrl_[i];
  Vec3 omega = Vec3::Zero();
  for (int j = 1; j < 4; ++j) {
    const Quat rel = ctrl_[i + j - 1].conjugate() * ctrl_[i + j];
    d[j] = quat_log(rel);
    step[j] = quat_exp(w.value[j] * quat_log(rel));
    q = q * step[j];
    step_rot[j] = step[j].toRotationMatrix();
    omega_before[j] = omega;
    omega = step_rot[j].transpose() * omega + w.d1[j] * d[j];
    if (with_jacobians) rel_rot[j] = rel.toRotationMatrix();
  }
  out.q = q.normalized();
  out.omega = omega;
  if (!with_jacobians) return;

  // post[j] = A_{j+1} ... A_3, so post[3] = I.
  std::array<Mat3, 4> post;
  post[3] = Mat3::Identity();
  for (int j = 2; j >= 0; --j) post[j] = step_rot[j + 1] * post[j + 1];

  for (int j = 0; j < 4; ++j) {
    out.d_orientation[j].setZero();
    out.d_omega[j].setZero();
  }
  out.d_orientation[0] = post[0].transpose();
  for (int j = 1; j < 4; ++j) {
    const Mat3 jr_step = right_jacobian(w.value[j] * d[j]);
    const Mat3 jr_inv = right_jacobian_inv(d[j]);
    // d(step j)/d(d_j), propagated to the end of the product.
    const Mat3 g_rot = post[j].transpose() * jr_step * w.value[j];
    const Mat3 g_omega =
        post[j].transpose() *
        (hat(step_rot[j].transpose() * omega_before[j]) * jr_step * w.value[j] +
         w.d1[j] * Mat3::Identity());
    const Mat3 dd_next = jr_inv;                                // d d_j / d delta_{i+j}
    const Mat3 dd_prev = -jr_inv * rel_rot[j].transpose();      // d d_j / d delta_{i+j-1}
    out.d_orientation[j] += g_rot * dd_next;
    out.d_orientation[j - 1] += g_rot * dd_prev;
    out.d_omega[j] += g_omega * dd_next;
    out.d_omega[j - 1] += g_omega * dd_prev;
  }
}

}  // namespace ctcalib
