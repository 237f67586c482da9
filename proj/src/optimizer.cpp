#include "ctcalib/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "ctcalib/errors.hpp"

namespace ctcalib {

Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& ref) {
  const Vec3 r = ref.normalized();
  const Vec3 b1 = r.unitOrthogonal();
  Eigen::Matrix<double, 3, 2> b;
  b.col(0) = b1;
  b.col(1) = r.cross(b1);
  return b;
}

Vec3 CalibState::gravity() const {
  const Vec3 r = gravity_ref.normalized();
  return kGravityMagnitude * (so3_exp(tangent_basis(r) * gravity_dof) * r);
}

void CalibState::set_gravity(const Vec3& g) {
  gravity_ref = g.normalized();
  gravity_dof.setZero();
  sync_gravity();
}

void CalibState::sync_gravity() { traj.set_gravity(gravity()); }

Vec3 residual_accel(const CalibState& state, const ImuSample& sample) {
  return sample.accel - state.traj.predict_accel(sample.t) - state.bias_a;
}

Vec3 residual_gyro(const CalibState& state, const ImuSample& sample) {
  return sample.gyro - state.traj.predict_gyro(sample.t) - state.bias_g;
}

double residual_lidar(const CalibState& state, const Correspondence& corr, double t_map) {
  const Vec3 p = lidar_point_to_map(state.traj, state.ext, corr.point.p, corr.point.t, t_map);
  return corr.n.dot(p) + corr.d;
}

double residual_lidar_world(const CalibState& state, const Correspondence& corr) {
  const Vec3 p = lidar_pose(state.traj, state.ext, corr.point.t) * corr.point.p;
  return corr.n.dot(p) + corr.d;
}

namespace {

constexpr int kGlobalSizes[3] = {6, 6, 2};

// Spline state at one time, with what the Jacobians need.
struct KnotEval {
  int segment = 0;
  SO3Evaluation rot;
  BasisWeights w;
  Vec3 p = Vec3::Zero();
  Vec3 acc = Vec3::Zero();
};

void eval_knots(const Trajectory& traj, double t, bool jacobians, KnotEval& out) {
  traj.rot().evaluate(t, out.rot, jacobians);
  const KnotGrid& g = traj.grid();
  const auto [seg, u] = g.locate(t);
  out.segment = seg;
  out.w = blending_weights(u, g.dt());
  out.p.setZero();
  out.acc.setZero();
  for (int j = 0; j < 4; ++j) {
    const Vec3& c = traj.pos().ctrl(seg + j);
    out.p += out.w.value[j] * c;
    out.acc += out.w.d2[j] * c;
  }
}

double huber_weight(double r, const LmOptions& o) {
  if (!o.huber) return 1.0;
  const double a = std::abs(r);
  return a <= o.huber_delta ? 1.0 : o.huber_delta / a;
}

double huber_rho(double r, const LmOptions& o) {
  const double a = std::abs(r);
  if (!o.huber || a <= o.huber_delta) return r * r;
  return 2.0 * o.huber_delta * a - o.huber_delta * o.huber_delta;
}

struct LidarTerms {
  double r;
  Eigen::Matrix<double, 1, 3> d_eps_j, d_p_j, d_eps_0, d_p_0, d_phi_e, d_t_e;
};

LidarTerms lidar_terms(const CalibState& s, const Correspondence& c, const KnotEval& ej,
                       const KnotEval& e0) {
  const Mat3 re = s.ext.q_LI.toRotationMatrix();
  const Mat3 rj = ej.rot.q.toRotationMatrix();
  const Mat3 r0t = e0.rot.q.toRotationMatrix().transpose();
  const Vec3& p = c.point.p;
  const Vec3 x = re * p + s.ext.p_LI;
  const Vec3 y = rj * x + ej.p - e0.p;
  const Vec3 w = r0t * y;
  const Vec3 z = w - s.ext.p_LI;
  const Vec3 pl = re.transpose() * z;
  const Eigen::Matrix<double, 1, 3> nt = c.n.transpose();
  const Eigen::Matrix<double, 1, 3> nre = nt * re.transpose();
  const Eigen::Matrix<double, 1, 3> nre0 = nre * r0t;
  LidarTerms t;
  t.r = c.n.dot(pl) + c.d;
  t.d_eps_j = -nre0 * rj * hat(x);
  t.d_p_j = nre0;
  t.d_p_0 = -nre0;
  t.d_eps_0 = nre * hat(w);
  t.d_t_e = nre0 * rj - nre;
  t.d_phi_e = -nre0 * rj * re * hat(p) + nt * hat(pl);
  return t;
}

LidarTerms lidar_terms_world(const CalibState& s, const Correspondence& c, const KnotEval& ej) {
  const Mat3 re = s.ext.q_LI.toRotationMatrix();
  const Mat3 rj = ej.rot.q.toRotationMatrix();
  const Vec3& p = c.point.p;
  const Vec3 x = re * p + s.ext.p_LI;
  const Eigen::Matrix<double, 1, 3> nt = c.n.transpose();
  const Eigen::Matrix<double, 1, 3> nrj = nt * rj;
  LidarTerms t;
  t.r = c.n.dot(rj * x + ej.p) + c.d;
  t.d_eps_j = -nrj * hat(x);
  t.d_p_j = nt;
  t.d_eps_0.setZero();
  t.d_p_0.setZero();
  t.d_t_e = nrj;
  t.d_phi_e = -nrj * re * hat(p);
  return t;
}

}  // namespace

ArrowNormalEquations build_normal_equations(const Problem& problem, const CalibState& state,
                                            const LmOptions& options) {
  const Trajectory& traj = state.traj;
  const KnotGrid& grid = traj.grid();
  const int n = grid.n();

  KnotEval e0;
  eval_knots(traj, problem.t_map, true, e0);
  const std::array<int, 4> border{e0.segment, e0.segment + 1, e0.segment + 2, e0.segment + 3};
  ArrowNormalEquations ne(n, StateLayout::kKnotDim, problem.world_map ? std::span<const int>() : border,
                          kGlobalSizes);
  if (!problem.world_map) ne.set_fixed(0);
  if (options.freeze_gravity) ne.set_fixed(ne.global_id(StateLayout::kGravity));
  const int id_ext = ne.global_id(StateLayout::kExtrinsics);
  const int id_bias = ne.global_id(StateLayout::kBiases);
  const int id_grav = ne.global_id(StateLayout::kGravity);

  const Vec3 g = state.gravity();
  const Vec3 r_ref = state.gravity_ref.normalized();
  const Eigen::Matrix<double, 3, 2> dg_ddof =
      -hat(g) * left_jacobian(tangent_basis(r_ref) * state.gravity_dof) * tangent_basis(r_ref);

  KnotEval ev;
  {
    const double wa = 1.0 / problem.noise.sigma_accel;
    const double wg = 1.0 / problem.noise.sigma_gyro;
    Eigen::Matrix<double, 3, 4 * 6 + 6 + 2> ja;
    Eigen::Matrix<double, 3, 4 * 6 + 6> jg;
    std::array<int, 6> ids_a{};
    std::array<int, 5> ids_g{};
    for (const ImuSample& s : problem.imu) {
      eval_knots(traj, s.t, true, ev);
      const Mat3 rt = ev.rot.q.toRotationMatrix().transpose();
      const Vec3 body = rt * (ev.acc - g);
      const Vec3 ra = s.accel - body - state.bias_a;
      const Mat3 dr = -hat(body);
      for (int j = 0; j < 4; ++j) {
        ja.block<3, 3>(0, 6 * j) = dr * ev.rot.d_orientation[j];
        ja.block<3, 3>(0, 6 * j + 3) = -ev.w.d2[j] * rt;
        ids_a[j] = ev.segment + j;
      }
      ja.block<3, 3>(0, 24) = -Mat3::Identity();
      ja.block<3, 3>(0, 27).setZero();
      ja.block<3, 2>(0, 30) = rt * dg_ddof;
      ids_a[4] = id_bias;
      ids_a[5] = id_grav;
      ne.add(ids_a, wa * ja, wa * ra);

      const Vec3 rg = s.gyro - ev.rot.omega - state.bias_g;
      for (int j = 0; j < 4; ++j) {
        jg.block<3, 3>(0, 6 * j) = -ev.rot.d_omega[j];
        jg.block<3, 3>(0, 6 * j + 3).setZero();
        ids_g[j] = ev.segment + j;
      }
      jg.block<3, 3>(0, 24).setZero();
      jg.block<3, 3>(0, 27) = -Mat3::Identity();
      ids_g[4] = id_bias;
      ne.add(ids_g, wg * jg, wg * rg);
    }
  }

  const double wl = 1.0 / problem.noise.sigma_lidar;
  Eigen::Matrix<double, 1, 8 * 6 + 6> jl;
  std::array<int, 9> ids_l{};
  Eigen::Matrix<double, 1, 1> rl;
  if (problem.world_map) {
    Eigen::Matrix<double, 1, 4 * 6 + 6> jw;
    std::array<int, 5> ids_w{};
    for (const Correspondence& c : problem.correspondences) {
      eval_knots(traj, c.point.t, true, ev);
      const LidarTerms t = lidar_terms_world(state, c, ev);
      const double w = wl * std::sqrt(huber_weight(t.r, options));
      for (int j = 0; j < 4; ++j) {
        jw.block<1, 3>(0, 6 * j) = t.d_eps_j * ev.rot.d_orientation[j];
        jw.block<1, 3>(0, 6 * j + 3) = ev.w.value[j] * t.d_p_j;
        ids_w[j] = ev.segment + j;
      }
      jw.block<1, 3>(0, 24) = t.d_phi_e;
      jw.block<1, 3>(0, 27) = t.d_t_e;
      ids_w[4] = id_ext;
      rl[0] = w * t.r;
      ne.add(ids_w, w * jw, rl);
    }
    return ne;
  }
  for (const Correspondence& c : problem.correspondences) {
    eval_knots(traj, c.point.t, true, ev);
    const LidarTerms t = lidar_terms(state, c, ev, e0);
    const double w = wl * std::sqrt(huber_weight(t.r, options));
    for (int j = 0; j < 4; ++j) {
      jl.block<1, 3>(0, 6 * j) = t.d_eps_j * ev.rot.d_orientation[j];
      jl.block<1, 3>(0, 6 * j + 3) = ev.w.value[j] * t.d_p_j;
      ids_l[j] = ev.segment + j;
      jl.block<1, 3>(0, 24 + 6 * j) = t.d_eps_0 * e0.rot.d_orientation[j];
      jl.block<1, 3>(0, 24 + 6 * j + 3) = e0.w.value[j] * t.d_p_0;
      ids_l[4 + j] = e0.segment + j;
    }
    jl.block<1, 3>(0, 48) = t.d_phi_e;
    jl.block<1, 3>(0, 51) = t.d_t_e;
    ids_l[8] = id_ext;
    rl[0] = w * t.r;
    ne.add(ids_l, w * jl, rl);
  }
  return ne;
}

double evaluate_cost(const Problem& problem, const CalibState& state, const LmOptions& options) {
  const Trajectory& traj = state.traj;
  const Vec3 g = state.gravity();
  double ca = 0.0, cg = 0.0, cl = 0.0;
  KnotEval ev;
  for (const ImuSample& s : problem.imu) {
    eval_knots(traj, s.t, false, ev);
    const Vec3 body = ev.rot.q.conjugate() * (ev.acc - g);
    ca += (s.accel - body - state.bias_a).squaredNorm();
    cg += (s.gyro - ev.rot.omega - state.bias_g).squaredNorm();
  }
  KnotEval e0;
  eval_knots(traj, problem.t_map, false, e0);
  const Pose to_map =
      problem.world_map ? Pose{} : (Pose{e0.rot.q, e0.p} * state.ext.as_pose()).inverse();
  const Pose il = state.ext.as_pose();
  for (const Correspondence& c : problem.correspondences) {
    const Pose pj = traj.pose(c.point.t);
    const Vec3 pl = to_map * (pj * (il * c.point.p));
    cl += huber_rho(c.n.dot(pl) + c.d, options);
  }
  const auto sq = [](double s) { return s * s; };
  return ca / sq(problem.noise.sigma_accel) + cg / sq(problem.noise.sigma_gyro) +
         cl / sq(problem.noise.sigma_lidar);
}

CalibState apply_increment(const CalibState& state, const Eigen::VectorXd& step) {
  CalibState out = state;
  const int n = state.traj.grid().n();
  for (int k = 0; k < n; ++k) {
    const int off = StateLayout::kKnotDim * k;
    out.traj.rot().set_ctrl(k, state.traj.rot().ctrl(k) * so3_exp(step.segment<3>(off)));
    out.traj.pos().set_ctrl(k, state.traj.pos().ctrl(k) + step.segment<3>(off + 3));
  }
  out.traj.rot().recondition();
  int off = StateLayout::kKnotDim * n;
  out.ext.q_LI = (state.ext.q_LI * so3_exp(step.segment<3>(off))).normalized();
  out.ext.p_LI = state.ext.p_LI + step.segment<3>(off + 3);
  off += kGlobalSizes[0];
  out.bias_a = state.bias_a + step.segment<3>(off);
  out.bias_g = state.bias_g + step.segment<3>(off + 3);
  off += kGlobalSizes[1];
  out.gravity_dof = state.gravity_dof + step.segment<2>(off);
  out.sync_gravity();
  return out;
}

std::string describe_parameter(int knot_count, int block, int component) {
  static const char* axis[3] = {"x", "y", "z"};
  if (block < knot_count) {
    return "control point " + std::to_string(block) + (component < 3 ? " rotation " : " position ") +
           axis[component % 3];
  }
  switch (block - knot_count) {
    case StateLayout::kExtrinsics:
      return std::string(component < 3 ? "extrinsic rotation " : "extrinsic translation ") + axis[component % 3];
    case StateLayout::kBiases:
      return std::string(component < 3 ? "accelerometer bias " : "gyroscope bias ") + axis[component % 3];
    default:
      return "gravity direction " + std::to_string(component);
  }
}

void write_lm_report(std::ostream& os, const LmReport& report) {
  nlohmann::json j;
  j["initial_cost"] = report.initial_cost;
  j["final_cost"] = report.final_cost;
  j["converged"] = report.converged;
  nlohmann::json its = nlohmann::json::array();
  for (const LmIteration& it : report.iterations) {
    its.push_back({{"iteration", it.iteration},
                   {"cost", it.cost},
                   {"lambda", it.lambda},
                   {"step_norm", it.step_norm},
                   {"accepted", it.accepted},
                   {"q_LI", {it.ext.q_LI.w(), it.ext.q_LI.x(), it.ext.q_LI.y(), it.ext.q_LI.z()}},
                   {"p_LI", {it.ext.p_LI.x(), it.ext.p_LI.y(), it.ext.p_LI.z()}}});
  }
  j["iterations"] = its;
  os << j.dump(2) << '\n';
}

CalibState solve_lm(const Problem& problem, const CalibState& init, const LmOptions& options,
                    LmReport* report) {
  CalibState state = init;
  state.sync_gravity();
  LmReport rep;
  double cost = evaluate_cost(problem, state, options);
  if (!std::isfinite(cost)) throw DivergenceError("initial cost is not finite");
  rep.initial_cost = cost;

  ArrowNormalEquations ne = build_normal_equations(problem, state, options);
  const std::vector<int> bad = ne.deficient_columns(options.observability_tol);
  if (!bad.empty()) {
    std::vector<std::string> names;
    std::set<std::string> seen;
    for (int col : bad) {
      const auto [block, comp] = ne.parameter_of(col);
      std::string name = describe_parameter(ne.knot_count(), block, comp);
      if (block < ne.knot_count()) name = comp < 3 ? "trajectory rotation" : "trajectory position";
      if (seen.insert(name).second) names.push_back(name);
    }
    std::string msg = "normal equations are rank deficient; unconstrained:";
    for (const std::string& s : names) msg += " [" + s + "]";
    throw ObservabilityError(msg, names);
  }

  double lambda = options.lambda0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    LmIteration rec;
    rec.iteration = it;
    rec.lambda = lambda;
    Eigen::VectorXd step;
    if (!ne.solve(lambda, step)) {
      lambda *= options.lambda_up;
      rec.cost = cost;
      rec.ext = state.ext;
      rep.iterations.push_back(rec);
      continue;
    }
    rec.step_norm = step.norm();
    CalibState trial = apply_increment(state, step);
    const double trial_cost = evaluate_cost(problem, trial, options);
    const bool finite = std::isfinite(trial_cost);
    const double change = finite ? std::abs(cost - trial_cost) / std::max(cost, 1e-300) : 1.0;
    if (finite && trial_cost <= cost) {
      state = std::move(trial);
      cost = trial_cost;
      rec.accepted = true;
      lambda = std::max(lambda / options.lambda_down, 1e-15);
    } else {
      lambda *= options.lambda_up;
    }
    rec.cost = cost;
    rec.ext = state.ext;
    rep.iterations.push_back(rec);
    if (cost == 0.0 || (finite && change < options.tolerance) || rec.step_norm < options.step_tolerance) {
      rep.converged = true;
      break;
    }
    if (lambda > 1e16) break;
    if (rec.accepted) ne = build_normal_equations(problem, state, options);
  }
  rep.final_cost = cost;
  if (report) *report = std::move(rep);
  return state;
}

}  // namespace ctcalib
