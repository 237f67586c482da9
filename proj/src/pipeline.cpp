#include "ctcalib/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ctcalib/errors.hpp"
#include "ctcalib/rot_init.hpp"

namespace ctcalib {

const char* to_string(OdometrySource s) { return s == OdometrySource::kOracle ? "oracle" : "icp"; }

OdometrySource parse_odometry_source(const std::string& s) {
  if (s == "oracle") return OdometrySource::kOracle;
  if (s == "icp") return OdometrySource::kIcp;
  throw ValidationError("unknown odometry source '" + s + "' (expected oracle or icp)");
}

void CalibConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("config: ") + what);
  };
  require(knot_dt > 0.0 && std::isfinite(knot_dt), "knot_dt must be positive");
  require(cell_size > 0.0 && std::isfinite(cell_size), "cell_size must be positive");
  require(planarity_first >= 0.0 && planarity_first <= 1.0, "planarity_first must lie in [0, 1]");
  require(planarity_later >= 0.0 && planarity_later <= 1.0, "planarity_later must lie in [0, 1]");
  require(reject_first > 0.0 && reject_later > 0.0, "reject distances must be positive");
  require(downsample_ratio > 0.0 && downsample_ratio <= 1.0, "downsample_ratio must lie in (0, 1]");
  require(noise.sigma_accel > 0.0 && noise.sigma_gyro > 0.0 && noise.sigma_lidar > 0.0,
          "noise sigmas must be positive");
  require(iterations >= 1, "iterations must be at least 1");
  require(plateau_trans >= 0.0 && plateau_rot_deg >= 0.0, "plateau bounds must be non-negative");
  require(min_duration >= 0.0, "min_duration must be non-negative");
  require(min_mean_rate >= 0.0, "min_mean_rate must be non-negative");
  require(handeye_threshold > 0.0, "handeye_threshold must be positive");
  require(pose_smoothing > 0.0, "pose_smoothing must be positive");
  require(ransac_tolerance > 0.0 && ransac_iterations >= 1, "ransac settings must be positive");
  require(lm_iterations >= 1, "lm_iterations must be at least 1");
  require(huber_delta > 0.0, "huber_delta must be positive");
}

Scan deskew_scan(const Scan& scan, const Trajectory& traj, const Extrinsics& ext, DeskewMode mode) {
  Scan out;
  out.t_ref = scan.t_ref;
  out.points.reserve(scan.points.size());
  if (mode == DeskewMode::kFull) {
    for (const LidarPoint& lp : scan.points) {
      out.points.push_back({lp.t, lidar_point_to_map(traj, ext, lp.p, lp.t, scan.t_ref)});
    }
    return out;
  }
  const Quat ref_inv = (traj.rot().orientation(scan.t_ref) * ext.q_LI).conjugate();
  for (const LidarPoint& lp : scan.points) {
    const Quat rel = ref_inv * traj.rot().orientation(lp.t) * ext.q_LI;
    out.points.push_back({lp.t, rel * lp.p});
  }
  return out;
}

ExtrinsicError extrinsic_error(const Extrinsics& est, const Extrinsics& truth) {
  return {angular_distance(est.q_LI, truth.q_LI) * 180.0 / M_PI, (est.p_LI - truth.p_LI).norm()};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs fn, relabelling any toolkit error with the stage name.
template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const ValidationError& e) {
    throw StageError(stage, e, false);
  } catch (const CalibError& e) {
    throw StageError(stage, e, true);
  }
}

std::uint64_t scan_seed(std::uint64_t seed, std::size_t k) {
  return seed ^ (0x9E3779B97F4A7C15ull * (k + 1));
}

struct Inputs {
  KnotGrid grid;
  std::vector<ImuSample> imu;
  std::vector<Scan> scans;
  std::vector<ScanPose> odometry;  // re-anchored on the first kept scan
};

Inputs select_inputs(std::span<const ImuSample> imu, std::span<const Scan> scans, const CalibConfig& config,
                     std::span<const ScanPose> odometry) {
  if (imu.size() < 2) throw InsufficientDataError("fewer than two IMU samples");
  if (scans.empty()) throw InsufficientDataError("no LiDAR scans");
  for (std::size_t k = 1; k < imu.size(); ++k) {
    if (!(imu[k].t > imu[k - 1].t)) throw ValidationError("IMU timestamps must strictly increase");
  }
  for (std::size_t k = 1; k < scans.size(); ++k) {
    if (!(scans[k].t_ref > scans[k - 1].t_ref)) throw ValidationError("scan times must strictly increase");
  }
  const bool oracle = config.odometry == OdometrySource::kOracle;
  if (oracle) {
    if (odometry.size() != scans.size()) {
      throw ValidationError("oracle odometry needs one pose per scan (" + std::to_string(odometry.size()) +
                            " poses, " + std::to_string(scans.size()) + " scans)");
    }
    for (std::size_t k = 0; k < scans.size(); ++k) {
      if (std::abs(odometry[k].t - scans[k].t_ref) > 1e-6) {
        throw ValidationError("odometry pose " + std::to_string(k) + " does not match its scan time");
      }
    }
  }

  double last_point = scans.back().t_ref;
  for (const LidarPoint& p : scans.back().points) last_point = std::max(last_point, p.t);
  const double t_begin = std::max(imu.front().t, scans.front().t_ref);
  const double t_end = std::min(imu.back().t, last_point);
  if (!(t_end - t_begin >= config.min_duration)) {
    throw InsufficientDataError("overlapping IMU/LiDAR span is " + std::to_string(std::max(0.0, t_end - t_begin)) +
                                " s, need at least " + std::to_string(config.min_duration) + " s");
  }

  Inputs in;
  in.grid = KnotGrid::covering(t_begin, t_end, config.knot_dt);
  for (const ImuSample& s : imu) {
    if (in.grid.contains(s.t) && s.t <= t_end) in.imu.push_back(s);
  }
  Pose anchor_inv;
  bool anchored = false;
  for (std::size_t k = 0; k < scans.size(); ++k) {
    const Scan& sc = scans[k];
    if (sc.t_ref < t_begin || sc.t_ref > t_end) continue;
    Scan kept;
    kept.t_ref = sc.t_ref;
    for (const LidarPoint& p : sc.points) {
      if (p.t >= t_begin && p.t <= t_end && p.p.allFinite()) kept.points.push_back(p);
    }
    if (kept.points.empty()) continue;
    in.scans.push_back(std::move(kept));
    if (oracle) {
      if (!anchored) {
        anchor_inv = as_pose(odometry[k]).inverse();
        anchored = true;
      }
      const Pose rel = anchor_inv * as_pose(odometry[k]);
      in.odometry.push_back({sc.t_ref, rel.q, rel.p});
    }
  }
  if (in.scans.size() < 3) throw InsufficientDataError("fewer than three scans inside the overlapping span");
  return in;
}

double mean_rate(std::span<const ImuSample> imu) {
  double s = 0.0;
  for (const ImuSample& m : imu) s += m.gyro.norm();
  return s / static_cast<double>(imu.size());
}

std::vector<ScanPose> run_icp(std::span<const Scan> scans, const std::function<Quat(int)>& prior,
                              const CalibConfig& config) {
  IcpOdometryOptions o = config.icp;
  o.cell_size = config.cell_size;
  o.surfels.seed = config.seed;
  return icp_odometry(scans, prior, o);
}

// Orientation from the gyro spline re-anchored at the map time, position
// from a smoothed fit to the odometry poses mapped into the IMU frame.
CalibState initial_state(const SplineSO3& gyro_spline, const Quat& q_LI, std::span<const ScanPose> odometry,
                         std::span<const ImuSample> imu, double t_map, const CalibConfig& config) {
  const KnotGrid& grid = gyro_spline.grid();
  const Quat align = gyro_spline.orientation(t_map).conjugate();
  std::vector<Quat> rc;
  rc.reserve(grid.n());
  for (const Quat& q : gyro_spline.ctrl()) rc.push_back(align * q);

  const Pose e{q_LI, Vec3::Zero()};
  std::vector<TimedPose> imu_poses;
  for (const ScanPose& sp : odometry) {
    const Pose p = e * as_pose(sp) * e.inverse();
    imu_poses.push_back({sp.t, p.q, p.p});
  }
  PoseFitOptions fit;
  fit.smoothing = config.pose_smoothing;
  const Trajectory fitted = fit_to_poses(imu_poses, grid, fit);

  CalibState s;
  s.ext = {q_LI, Vec3::Zero()};
  s.traj = Trajectory(SplineSO3(grid, std::move(rc)), fitted.pos(), Vec3(0.0, 0.0, -kGravityMagnitude));
  Vec3 g = Vec3::Zero();
  for (const ImuSample& m : imu) {
    g += s.traj.pos().acceleration(m.t) - s.traj.rot().orientation(m.t) * m.accel;
  }
  if (!(g.norm() > 0.0)) throw InsufficientDataError("cannot initialize gravity direction");
  s.set_gravity(g);
  return s;
}

LmOptions lm_options(const CalibConfig& config) {
  LmOptions o;
  o.max_iterations = config.lm_iterations;
  o.huber = config.huber;
  o.huber_delta = config.huber_delta;
  o.freeze_gravity = config.freeze_gravity;
  return o;
}

SurfelOptions surfel_options(const CalibConfig& config, double planarity) {
  SurfelOptions o;
  o.planarity_threshold = planarity;
  o.ransac_tolerance = config.ransac_tolerance;
  o.ransac_iterations = config.ransac_iterations;
  o.seed = config.seed;
  return o;
}

void fill_record(RoundRecord& r, const CalibState& s) {
  r.ext = s.ext;
  r.bias_a = s.bias_a;
  r.bias_g = s.bias_g;
  r.gravity = s.gravity();
}

}  // namespace

CalibReport calibrate(std::span<const ImuSample> imu, std::span<const Scan> scans, const CalibConfig& config,
                      std::span<const ScanPose> odometry) {
  const Clock::time_point t_start = Clock::now();
  CalibReport report;
  staged("config", [&] {
    config.validate();
    return 0;
  });
  const Inputs in = staged("input", [&] { return select_inputs(imu, scans, config, odometry); });
  report.scans_used = static_cast<int>(in.scans.size());
  report.imu_used = static_cast<int>(in.imu.size());
  const double t_map = in.scans.front().t_ref;

  report.mean_rate = mean_rate(in.imu);
  staged("excitation", [&] {
    if (report.mean_rate < config.min_mean_rate) {
      throw ObservabilityError("mean angular rate " + std::to_string(report.mean_rate) + " rad/s is below " +
                                   std::to_string(config.min_mean_rate) + " rad/s",
                               {"rotation excitation"});
    }
    return 0;
  });
  report.timing.emplace_back("input", seconds_since(t_start));

  // Rotation initialization.
  Clock::time_point t0 = Clock::now();
  const SplineSO3 gyro_spline = staged("rotation-init", [&] { return fit_gyro_spline(in.imu, in.grid); });
  std::vector<double> times;
  for (const Scan& s : in.scans) times.push_back(s.t_ref);
  std::vector<ScanPose> odom = in.odometry;
  if (config.odometry == OdometrySource::kIcp) {
    odom = staged("odometry", [&] { return run_icp(in.scans, nullptr, config); });
  }
  const Quat q_LI = staged("rotation-init", [&] {
    std::vector<Quat> lidar_q;
    for (const ScanPose& p : odom) lidar_q.push_back(p.q);
    const std::vector<RotPair> pairs = make_rot_pairs(gyro_spline, times, lidar_q, config.handeye_threshold);
    report.handeye_pairs = static_cast<int>(pairs.size());
    return solve_handeye(pairs);
  });
  report.q_init = q_LI;
  report.timing.emplace_back("rotation-init", seconds_since(t0));

  // Rotational deskew, odometry on the deskewed scans, trajectory seed.
  t0 = Clock::now();
  const Trajectory rot_only(gyro_spline, SplineR3(in.grid, std::vector<Vec3>(in.grid.n(), Vec3::Zero())),
                            Vec3(0.0, 0.0, -kGravityMagnitude));
  const Extrinsics rot_ext{q_LI, Vec3::Zero()};
  std::vector<Scan> deskewed;
  staged("deskew", [&] {
    for (const Scan& s : in.scans) deskewed.push_back(deskew_scan(s, rot_only, rot_ext, DeskewMode::kRotation));
    return 0;
  });
  if (config.odometry == OdometrySource::kIcp) {
    const Quat ref_inv = (gyro_spline.orientation(t_map) * q_LI).conjugate();
    const auto prior = [&](int k) { return ref_inv * gyro_spline.orientation(in.scans[k].t_ref) * q_LI; };
    odom = staged("odometry", [&] { return run_icp(deskewed, prior, config); });
  }
  CalibState state =
      staged("trajectory-init", [&] { return initial_state(gyro_spline, q_LI, odom, in.imu, t_map, config); });
  report.timing.emplace_back("odometry", seconds_since(t0));

  // Residual subsets stay fixed across rounds.
  std::vector<Scan> raw_sub, desk_sub;
  for (std::size_t k = 0; k < in.scans.size(); ++k) {
    raw_sub.push_back(downsample(in.scans[k], config.downsample_ratio, scan_seed(config.seed, k)));
    desk_sub.push_back(deskew_scan(raw_sub.back(), rot_only, rot_ext, DeskewMode::kRotation));
  }

  Problem problem;
  problem.imu = in.imu;
  problem.noise = config.noise;
  problem.t_map = t_map;
  problem.world_map = config.world_map;
  const LmOptions lm = lm_options(config);

  for (int round = 1; round <= config.iterations; ++round) {
    t0 = Clock::now();
    const std::string label = "round " + std::to_string(round);
    RoundRecord rec;
    rec.round = round;
    std::vector<MapFramePoint> pts;
    const SurfelMap map = staged(label + " surfel-map", [&] {
      if (round == 1) {
        const Pose anchor = config.world_map ? lidar_pose(state.traj, state.ext, t_map) : Pose{};
        std::vector<Pose> poses;
        for (const ScanPose& p : odom) poses.push_back(anchor * as_pose(p));
        SurfelMap m = build_map(deskewed, poses, config.cell_size);
        m.extract_surfels(surfel_options(config, config.planarity_first));
        for (std::size_t k = 0; k < raw_sub.size(); ++k) {
          for (std::size_t i = 0; i < raw_sub[k].points.size(); ++i) {
            pts.push_back({raw_sub[k].points[i], poses[k] * desk_sub[k].points[i].p});
          }
        }
        return m;
      }
      SurfelMap m = config.world_map ? build_map(in.scans, state.traj, state.ext, config.cell_size)
                                     : build_map(in.scans, state.traj, state.ext, t_map, config.cell_size);
      m.extract_surfels(surfel_options(config, config.planarity_later));
      for (const Scan& s : raw_sub) {
        for (const LidarPoint& lp : s.points) {
          const Vec3 p = config.world_map ? lidar_pose(state.traj, state.ext, lp.t) * lp.p
                                          : lidar_point_to_map(state.traj, state.ext, lp.p, lp.t, t_map);
          pts.push_back({lp, p});
        }
      }
      return m;
    });
    rec.surfels = static_cast<int>(map.surfels().size());
    problem.correspondences = associate(pts, map, round == 1 ? config.reject_first : config.reject_later);
    rec.correspondences = static_cast<int>(problem.correspondences.size());
    if (problem.correspondences.empty()) {
      throw StageError(label + " association", InsufficientDataError("no point-to-surfel correspondences"), true);
    }

    const Extrinsics before = state.ext;
    state = staged(label + " optimization", [&] { return solve_lm(problem, state, lm, &rec.lm); });
    fill_record(rec, state);
    rec.seconds = seconds_since(t0);
    report.timing.emplace_back(label, rec.seconds);
    report.rounds.push_back(std::move(rec));

    if (config.early_exit && round >= 2) {
      const ExtrinsicError d = extrinsic_error(state.ext, before);
      if (d.trans_m < config.plateau_trans && d.rot_deg < config.plateau_rot_deg) break;
    }
  }

  report.ext = state.ext;
  report.bias_a = state.bias_a;
  report.bias_g = state.bias_g;
  report.gravity = state.gravity();
  report.traj = state.traj;
  report.timing.emplace_back("total", seconds_since(t_start));
  return report;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
nlohmann::json quat_json(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

nlohmann::json ext_json(const Extrinsics& e) {
  const Vec3 rpy = to_euler_rpy(e.q_LI) * (180.0 / M_PI);
  return {{"q_LI", quat_json(e.q_LI)}, {"rpy_deg", vec_json(rpy)}, {"p_LI", vec_json(e.p_LI)}};
}

}  // namespace

void write_report_json(std::ostream& os, const CalibReport& r) {
  nlohmann::json j;
  j["extrinsics"] = ext_json(r.ext);
  j["bias_accel"] = vec_json(r.bias_a);
  j["bias_gyro"] = vec_json(r.bias_g);
  j["gravity"] = vec_json(r.gravity);
  j["rotation_init"] = {{"q_LI", quat_json(r.q_init)}, {"pairs", r.handeye_pairs}};
  j["mean_angular_rate"] = r.mean_rate;
  j["scans_used"] = r.scans_used;
  j["imu_samples_used"] = r.imu_used;
  nlohmann::json rounds = nlohmann::json::array();
  for (const RoundRecord& rec : r.rounds) {
    nlohmann::json costs = nlohmann::json::array();
    for (const LmIteration& it : rec.lm.iterations) costs.push_back(it.cost);
    rounds.push_back({{"round", rec.round},
                      {"extrinsics", ext_json(rec.ext)},
                      {"bias_accel", vec_json(rec.bias_a)},
                      {"bias_gyro", vec_json(rec.bias_g)},
                      {"gravity", vec_json(rec.gravity)},
                      {"surfels", rec.surfels},
                      {"correspondences", rec.correspondences},
                      {"initial_cost", rec.lm.initial_cost},
                      {"final_cost", rec.lm.final_cost},
                      {"converged", rec.lm.converged},
                      {"costs", costs}});
  }
  j["rounds"] = rounds;
  os << j.dump(2) << '\n';
}

void write_report_summary(std::ostream& os, const CalibReport& r, const Extrinsics* truth) {
  char buf[256];
  const Vec3 rpy = to_euler_rpy(r.ext.q_LI) * (180.0 / M_PI);
  os << "LiDAR -> IMU extrinsics\n";
  std::snprintf(buf, sizeof buf, "  q (w x y z)       %.9f %.9f %.9f %.9f\n", r.ext.q_LI.w(), r.ext.q_LI.x(),
                r.ext.q_LI.y(), r.ext.q_LI.z());
  os << buf;
  std::snprintf(buf, sizeof buf, "  roll pitch yaw    %.5f %.5f %.5f deg\n", rpy.x(), rpy.y(), rpy.z());
  os << buf;
  std::snprintf(buf, sizeof buf, "  x y z             %.5f %.5f %.5f m\n", r.ext.p_LI.x(), r.ext.p_LI.y(),
                r.ext.p_LI.z());
  os << buf;
  std::snprintf(buf, sizeof buf, "gyro bias           %.6f %.6f %.6f rad/s\n", r.bias_g.x(), r.bias_g.y(),
                r.bias_g.z());
  os << buf;
  std::snprintf(buf, sizeof buf, "accel bias          %.6f %.6f %.6f m/s^2\n", r.bias_a.x(), r.bias_a.y(),
                r.bias_a.z());
  os << buf;
  std::snprintf(buf, sizeof buf, "gravity (I0)        %.6f %.6f %.6f m/s^2\n", r.gravity.x(), r.gravity.y(),
                r.gravity.z());
  os << buf;
  os << "rounds\n";
  for (const RoundRecord& rec : r.rounds) {
    std::snprintf(buf, sizeof buf, "  %2d  cost %.6e  surfels %6d  residuals %7d  lm steps %3zu\n", rec.round,
                  rec.lm.final_cost, rec.surfels, rec.correspondences, rec.lm.iterations.size());
    os << buf;
  }
  if (truth) {
    const ExtrinsicError e = extrinsic_error(r.ext, *truth);
    std::snprintf(buf, sizeof buf, "error vs truth      %.6f deg  %.6f m\n", e.rot_deg, e.trans_m);
    os << buf;
  }
  if (!r.timing.empty()) {
    os << "timing\n";
    for (const auto& [stage, sec] : r.timing) {
      std::snprintf(buf, sizeof buf, "  %-16s %.3f s\n", stage.c_str(), sec);
      os << buf;
    }
  }
}

}  // namespace ctcalib
