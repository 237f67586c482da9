#include <cmath>
#include <numbers>
#include <thread>

#include "gtest/gtest.h"

#include "ctcalib/errors.hpp"
#include "ctcalib/splines.hpp"
#include "test_util.hpp"

namespace ctcalib {
namespace {

using testing::random_quat;
using testing::random_r3;
using testing::random_so3;
using testing::random_time;
using testing::random_vec;

// Cumulative cubic basis written out as polynomials, independent of the
// library's matrices.
Vec3 cumulative_oracle(const SplineR3& s, double t) {
  const KnotGrid& g = s.grid();
  const int i = std::min(static_cast<int>(std::floor((t - g.t0()) / g.dt())), g.segments() - 1);
  const double u = (t - g.knot(i)) / g.dt();
  const double b1 = (5.0 + 3.0 * u - 3.0 * u * u + u * u * u) / 6.0;
  const double b2 = (1.0 + 3.0 * u + 3.0 * u * u - 2.0 * u * u * u) / 6.0;
  const double b3 = u * u * u / 6.0;
  const auto& c = s.ctrl();
  return c[i] + b1 * (c[i + 1] - c[i]) + b2 * (c[i + 2] - c[i + 1]) + b3 * (c[i + 3] - c[i + 2]);
}

// Quaternion exp/log through axis-angle, independent of so3.cpp.
Quat oracle_exp(const Vec3& v) {
  const double n = v.norm();
  if (n == 0.0) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(2.0 * n, v / n));
}

Vec3 oracle_log(const Quat& q) {
  Eigen::AngleAxisd aa(q);
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > std::numbers::pi) {
    angle = 2.0 * std::numbers::pi - angle;
    axis = -axis;
  }
  return 0.5 * angle * axis;
}

Quat cumulative_so3_oracle(const SplineSO3& s, double t) {
  const KnotGrid& g = s.grid();
  const int i = std::min(static_cast<int>(std::floor((t - g.t0()) / g.dt())), g.segments() - 1);
  const double u = (t - g.knot(i)) / g.dt();
  const double b[4] = {1.0, (5.0 + 3.0 * u - 3.0 * u * u + u * u * u) / 6.0,
                       (1.0 + 3.0 * u + 3.0 * u * u - 2.0 * u * u * u) / 6.0, u * u * u / 6.0};
  const auto& c = s.ctrl();
  Quat q = c[i];
  for (int j = 1; j <= 3; ++j) q = q * oracle_exp(b[j] * oracle_log(c[i + j - 1].inverse() * c[i + j]));
  return q;
}

double quat_sign_free_distance(const Quat& a, const Quat& b) {
  return std::min((a.coeffs() - b.coeffs()).norm(), (a.coeffs() + b.coeffs()).norm());
}

TEST(SplineMatrices, ExactSixths) {
  const Mat4& m = SplineMatrices::blending();
  const Mat4& c = SplineMatrices::cumulative();
  const double expected_m[4][4] = {{1, 4, 1, 0}, {-3, 0, 3, 0}, {3, -6, 3, 0}, {-1, 3, -3, 1}};
  const double expected_c[4][4] = {{6, 5, 1, 0}, {0, 3, 3, 0}, {0, -3, 3, 0}, {0, 1, -2, 1}};
  for (int r = 0; r < 4; ++r) {
    for (int k = 0; k < 4; ++k) {
      EXPECT_EQ(m(r, k), expected_m[r][k] / 6.0);
      EXPECT_EQ(c(r, k), expected_c[r][k] / 6.0);
    }
  }
}

TEST(KnotGrid, RejectsBadGrids) {
  EXPECT_THROW(KnotGrid(0.0, 0.0, 10), ValidationError);
  EXPECT_THROW(KnotGrid(0.0, 0.1, 3), ValidationError);
}

TEST(KnotGrid, CoveringContainsSpan) {
  const KnotGrid g = KnotGrid::covering(0.0, 9.9975, 0.02);
  EXPECT_EQ(g.n(), 503);
  EXPECT_TRUE(g.contains(9.9975));
}

TEST(SplineR3, ConstantControlPointsGiveConstantCurve) {
  const KnotGrid g(0.0, 0.1, 6);
  const SplineR3 s(g, std::vector<Vec3>(6, Vec3(1, 2, 3)));
  for (double t : {0.0, 0.05, 0.1, 0.17, 0.2999}) {
    EXPECT_LT((s.position(t) - Vec3(1, 2, 3)).norm(), 1e-14);
    EXPECT_LT(s.velocity(t).norm(), 1e-12);
    EXPECT_LT(s.acceleration(t).norm(), 1e-10);
  }
}

TEST(SplineR3, SegmentStartWeightsAreOneFourOne) {
  std::mt19937_64 rng(1);
  const KnotGrid g(2.0, 0.5, 4);
  const SplineR3 s = random_r3(rng, g);
  const auto& p = s.ctrl();
  EXPECT_LT((s.position(2.0) - (p[0] + 4.0 * p[1] + p[2]) / 6.0).norm(), 1e-15);
}

TEST(SplineR3, MatrixFormMatchesCumulativeOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const KnotGrid g(random_vec(rng)[0], 0.01 + std::abs(random_vec(rng)[0]), 4 + trial % 7);
    const SplineR3 s = random_r3(rng, g, 5.0);
    const double t = random_time(rng, g);
    const Vec3 expected = cumulative_oracle(s, t);
    EXPECT_LT((s.position(t) - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((s.position_cumulative(t) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SplineR3, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const KnotGrid g(0.0, 0.1, 12);
    const SplineR3 s = random_r3(rng, g);
    const double t = random_time(rng, g, 2 * h);
    const Vec3 fd_v = (s.position(t + h) - s.position(t - h)) / (2 * h);
    const Vec3 fd_a = (s.velocity(t + h) - s.velocity(t - h)) / (2 * h);
    EXPECT_LT((s.velocity(t) - fd_v).norm(), 1e-6 * std::max(1.0, fd_v.norm()));
    EXPECT_LT((s.acceleration(t) - fd_a).norm(), 1e-6 * std::max(1.0, fd_a.norm()));
  }
}

TEST(SplineR3, ReproducesLinearMotion) {
  std::vector<Vec3> ctrl;
  for (int j = 0; j < 8; ++j) ctrl.push_back(j * Vec3::UnitX());
  const SplineR3 s(KnotGrid(0.0, 1.0, 8), ctrl);
  for (double t = 0.0; t < 5.0; t += 0.37) {
    EXPECT_LT((s.velocity(t) - Vec3::UnitX()).norm(), 1e-12);
    const double h = 1e-5;
    if (t > h) EXPECT_NEAR((s.position(t + h) - s.position(t - h)).x() / (2 * h), 1.0, 1e-9);
  }
}

TEST(SplineR3, LocalSupport) {
  std::mt19937_64 rng(4);
  const KnotGrid g(0.0, 0.1, 12);
  const SplineR3 base = random_r3(rng, g);
  const int k = 6;
  SplineR3 bumped = base;
  bumped.set_ctrl(k, base.ctrl(k) + Vec3(0.3, -0.2, 0.1));
  for (double t = 0.0; t < g.end(); t += 0.0037) {
    const bool inside = t >= g.knot(k - 3) && t < g.knot(k + 1);
    const double diff = (bumped.position(t) - base.position(t)).norm();
    if (!inside) {
      EXPECT_EQ(diff, 0.0) << "t=" << t;
    }
  }
  EXPECT_GT((bumped.position(g.knot(k - 1)) - base.position(g.knot(k - 1))).norm(), 0.0);
}

TEST(SplineR3, DomainIsHalfOpen) {
  const KnotGrid g(1.0, 0.1, 5);
  const SplineR3 s(g, std::vector<Vec3>(5, Vec3::Zero()));
  EXPECT_NO_THROW(s.position(1.0));
  EXPECT_THROW(s.position(g.end()), DomainError);
  EXPECT_THROW(s.position(0.999), DomainError);
  try {
    s.position(5.0);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_DOUBLE_EQ(e.begin(), 1.0);
    EXPECT_DOUBLE_EQ(e.end(), g.end());
  }
}

TEST(QuatExpLog, ClosedForms) {
  const Quat id = quat_exp(Vec3::Zero());
  EXPECT_EQ(id.w(), 1.0);
  EXPECT_EQ(id.vec().norm(), 0.0);
  const Quat q = quat_exp(Vec3(0, 0, std::numbers::pi / 2));
  EXPECT_NEAR(q.w(), std::cos(std::numbers::pi / 4), 1e-15);
  EXPECT_NEAR(q.z(), std::sin(std::numbers::pi / 4), 1e-15);
  EXPECT_NEAR(q.x(), 0.0, 1e-15);
}

TEST(QuatExpLog, InversePair) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 200; ++k) {
    Vec3 v = random_vec(rng);
    v.normalize();
    EXPECT_LT((quat_log(quat_exp(v)) - v).norm(), 1e-12);
    const Vec3 w = random_vec(rng, 1.5);
    EXPECT_LT((quat_log(quat_exp(w)) - w).norm(), 1e-12);
    const Vec3 tiny = random_vec(rng, 1e-9);
    EXPECT_LT((quat_log(quat_exp(tiny)) - tiny).norm(), 1e-20);
  }
}

TEST(QuatExpLog, SmallAngleBranchIsContinuous) {
  const Vec3 axis = Vec3(1, 2, 3).normalized();
  const Quat below = quat_exp(0.99e-8 * axis);
  const Quat above = quat_exp(1.01e-8 * axis);
  EXPECT_NEAR((above.vec() - below.vec()).norm(), 0.01e-8, 1e-20);
  EXPECT_LT((quat_log(below) - 0.99e-8 * axis).norm(), 1e-22);
}

TEST(QuatMatrices, MatchQuaternionProduct) {
  std::mt19937_64 rng(6);
  EXPECT_TRUE(left_quat_matrix(Quat::Identity()).isIdentity(0.0));
  for (int k = 0; k < 100; ++k) {
    const Quat p = random_quat(rng);
    const Quat q = random_quat(rng);
    const Eigen::Vector4d pq = quat_to_wxyz(p * q);
    EXPECT_LT((left_quat_matrix(p) * quat_to_wxyz(q) - pq).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((right_quat_matrix(q) * quat_to_wxyz(p) - pq).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(SplineSO3, IdentityAndConstantControlPoints) {
  const KnotGrid g(0.0, 0.1, 7);
  const SplineSO3 id(g, std::vector<Quat>(7, Quat::Identity()));
  std::mt19937_64 rng(7);
  const Quat q = random_quat(rng);
  const SplineSO3 c(g, std::vector<Quat>(7, q));
  for (double t = 0.0; t < g.end(); t += 0.031) {
    EXPECT_LT(quat_sign_free_distance(id.orientation(t), Quat::Identity()), 1e-15);
    EXPECT_LT(quat_sign_free_distance(c.orientation(t), q), 1e-15);
    EXPECT_LT(c.angular_velocity(t).norm(), 1e-12);
  }
}

TEST(SplineSO3, MatchesIndependentCumulativeOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const KnotGrid g(0.0, 0.05, 9);
    const SplineSO3 s = random_so3(rng, g, 0.8);
    const double t = random_time(rng, g);
    EXPECT_LT(quat_sign_free_distance(s.orientation(t), cumulative_so3_oracle(s, t)), 1e-10);
  }
}

TEST(SplineSO3, SignConditioningKeepsRotationsAndShortArcs) {
  std::mt19937_64 rng(9);
  std::vector<Quat> ctrl = testing::random_walk_quats(rng, 8, 0.3);
  std::vector<Quat> flipped = ctrl;
  for (std::size_t k = 1; k < flipped.size(); k += 2) flipped[k].coeffs() *= -1.0;
  const KnotGrid g(0.0, 0.1, 8);
  const SplineSO3 a(g, ctrl);
  const SplineSO3 b(g, flipped);
  for (std::size_t k = 1; k < b.ctrl().size(); ++k) EXPECT_GE(b.ctrl()[k - 1].dot(b.ctrl()[k]), 0.0);
  for (double t = 0.0; t < g.end(); t += 0.043) {
    EXPECT_LT(angular_distance(a.orientation(t), b.orientation(t)), 1e-12);
  }
}

TEST(SplineSO3, UnitNormEverywhere) {
  std::mt19937_64 rng(10);
  const KnotGrid g(0.0, 0.02, 40);
  const SplineSO3 s = random_so3(rng, g, 1.0);
  for (double t = 0.0; t < g.end(); t += 0.0011) {
    EXPECT_NEAR(s.orientation(t).norm(), 1.0, 1e-9);
  }
}

TEST(SplineSO3, AngularVelocityMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const KnotGrid g(0.0, 0.1, 10);
    const SplineSO3 s = random_so3(rng, g, 0.4);
    const double t = random_time(rng, g, 2 * h);
    const Mat3 r = s.orientation(t).toRotationMatrix();
    const Mat3 rdot =
        (s.orientation(t + h).toRotationMatrix() - s.orientation(t - h).toRotationMatrix()) / (2 * h);
    const Vec3 fd = vee(r.transpose() * rdot);
    EXPECT_LT((s.angular_velocity(t) - fd).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(SplineSO3, ConstantRateRotation) {
  const double omega = 0.5;
  const KnotGrid g(0.0, 0.02, 60);
  std::vector<Quat> ctrl;
  for (int k = 0; k < g.n(); ++k) ctrl.push_back(so3_exp(omega * g.knot(k) * Vec3::UnitZ()));
  const SplineSO3 s(g, ctrl);
  for (double t = 0.2; t < 0.9; t += 0.013) {
    EXPECT_LT((s.angular_velocity(t) - Vec3(0, 0, omega)).norm(), 1e-3);
  }
}

TEST(SplineSO3, LocalSupport) {
  std::mt19937_64 rng(12);
  const KnotGrid g(0.0, 0.1, 12);
  const SplineSO3 base = random_so3(rng, g);
  const int k = 5;
  SplineSO3 bumped = base;
  bumped.set_ctrl(k, base.ctrl(k) * so3_exp(Vec3(0.1, 0.2, -0.1)));
  bumped.recondition();
  for (double t = 0.0; t < g.end(); t += 0.0041) {
    const bool inside = t >= g.knot(k - 3) && t < g.knot(k + 1);
    if (!inside) EXPECT_LT(angular_distance(bumped.orientation(t), base.orientation(t)), 1e-15);
  }
}

TEST(SplineSO3, ControlPointJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const KnotGrid g(0.0, 0.1, 8);
    const SplineSO3 s = random_so3(rng, g, 0.5);
    const double t = random_time(rng, g);
    SO3Evaluation ev;
    s.evaluate(t, ev, true);
    for (int j = 0; j < 4; ++j) {
      for (int a = 0; a < 3; ++a) {
        SplineSO3 plus = s, minus = s;
        const int k = ev.segment + j;
        plus.set_ctrl(k, s.ctrl(k) * so3_exp(h * Vec3::Unit(a)));
        minus.set_ctrl(k, s.ctrl(k) * so3_exp(-h * Vec3::Unit(a)));
        const Vec3 fd_rot = (so3_log(ev.q.conjugate() * plus.orientation(t)) -
                             so3_log(ev.q.conjugate() * minus.orientation(t))) /
                            (2 * h);
        const Vec3 fd_omega = (plus.angular_velocity(t) - minus.angular_velocity(t)) / (2 * h);
        const Vec3 an_rot = ev.d_orientation[j].col(a);
        const Vec3 an_omega = ev.d_omega[j].col(a);
        EXPECT_LT((an_rot - fd_rot).norm(), 1e-5 * std::max(1.0, fd_rot.norm()));
        EXPECT_LT((an_omega - fd_omega).norm(), 1e-5 * std::max(1.0, fd_omega.norm()));
      }
    }
  }
}

TEST(SplineSO3, ConcurrentReadsAgree) {
  std::mt19937_64 rng(14);
  const KnotGrid g(0.0, 0.05, 30);
  const SplineSO3 s = random_so3(rng, g);
  std::vector<double> times;
  for (int k = 0; k < 500; ++k) times.push_back(random_time(rng, g));
  std::vector<Vec3> serial;
  for (double t : times) serial.push_back(s.angular_velocity(t));
  std::vector<std::vector<Vec3>> out(4);
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      for (double t : times) out[w].push_back(s.angular_velocity(t));
    });
  }
  for (auto& th : workers) th.join();
  for (const auto& o : out) {
    for (std::size_t k = 0; k < times.size(); ++k) EXPECT_EQ(o[k], serial[k]);
  }
}

}  // namespace
}  // namespace ctcalib
