#include "ctcalib/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "ctcalib/errors.hpp"

namespace ctcalib {

PlaneScene PlaneScene::corner() {
  PlaneScene s;
  s.planes.push_back({Vec3(-1, 0, 0), 4.0, Vec3(4, -6, -2), Vec3(4, 4, 8)});
  s.planes.push_back({Vec3(0, -1, 0), 4.0, Vec3(-6, 4, -2), Vec3(4, 4, 8)});
  s.planes.push_back({Vec3(0, 0, 1), 2.0, Vec3(-6, -6, -2), Vec3(4, 4, -2)});
  return s;
}

std::optional<double> PlaneScene::intersect(const Vec3& origin, const Vec3& dir) const {
  constexpr double kSlack = 1e-9;
  std::optional<double> best;
  for (const Plane& pl : planes) {
    const double denom = pl.n.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double r = -(pl.n.dot(origin) + pl.d) / denom;
    if (!(r > 1e-9)) continue;
    const Vec3 hit = origin + r * dir;
    if (((hit - pl.lo).array() < -kSlack).any() || ((hit - pl.hi).array() > kSlack).any()) continue;
    if (!best || r < *best) best = r;
  }
  return best;
}

double LidarModel::elevation(int beam) const {
  if (beams == 1) return 0.0;
  const double m = max_elevation_deg * M_PI / 180.0;
  return -m + 2.0 * m * beam / (beams - 1);
}

void LidarModel::validate() const {
  if (beams < 1 || azimuth_steps < 1) throw ValidationError("lidar: beams and azimuth_steps must be positive");
  if (!(rate > 0.0)) throw ValidationError("lidar: rate must be positive");
  if (!(max_elevation_deg >= 0.0 && max_elevation_deg < 90.0)) {
    throw ValidationError("lidar: max_elevation_deg must lie in [0, 90)");
  }
  if (!(range_noise >= 0.0) || !(max_range > 0.0)) throw ValidationError("lidar: bad range settings");
}

void ImuModel::validate() const {
  if (!(rate > 0.0)) throw ValidationError("imu: rate must be positive");
  if (!(sigma_gyro >= 0.0) || !(sigma_accel >= 0.0)) throw ValidationError("imu: noise must be non-negative");
  if (!bias_g.allFinite() || !bias_a.allFinite()) throw ValidationError("imu: biases must be finite");
}

Pose sinusoid_pose(const SinusoidParams& m, double t) {
  Vec3 p, th;
  for (int i = 0; i < 3; ++i) {
    p[i] = m.pos_amp[i] * std::sin(2.0 * M_PI * m.pos_freq[i] * t + m.pos_phase[i]);
    th[i] = m.rot_amp[i] * std::sin(2.0 * M_PI * m.rot_freq[i] * t + m.rot_phase[i]);
  }
  return {so3_exp(th), p};
}

SinusoidFit make_sinusoid_trajectory(const SinusoidParams& m) {
  if (!(m.duration > 0.0) || !(m.knot_dt > 0.0) || !(m.sample_rate > 0.0)) {
    throw ValidationError("sinusoid: duration, knot_dt and sample_rate must be positive");
  }
  const int n = static_cast<int>(std::floor(m.duration / m.knot_dt + 1e-9)) + 3;
  const KnotGrid grid(0.0, m.knot_dt, n);
  std::vector<TimedPose> samples;
  for (int k = 0;; ++k) {
    const double t = k / m.sample_rate;
    if (!grid.contains(t)) break;
    const Pose p = sinusoid_pose(m, t);
    samples.push_back({t, p.q, p.p});
  }
  SinusoidFit out;
  const Trajectory fitted = fit_to_poses(samples, grid);
  out.traj = Trajectory(fitted.rot(), fitted.pos(), Vec3(0.0, 0.0, -kGravityMagnitude));

  const double fmax = std::max(m.pos_freq.cwiseAbs().maxCoeff(), m.rot_freq.cwiseAbs().maxCoeff());
  out.bandwidth_warning = fmax > 0.1 / m.knot_dt;
  for (double t = 0.0; grid.contains(t); t += 0.25 / m.sample_rate) {
    const Pose a = sinusoid_pose(m, t);
    const Pose b = out.traj.pose(t);
    out.max_pos_error = std::max(out.max_pos_error, (a.p - b.p).norm());
    out.max_rot_error = std::max(out.max_rot_error, angular_distance(a.q, b.q));
  }
  return out;
}

std::vector<ImuSample> simulate_imu(const Trajectory& traj, const ImuModel& model, std::uint64_t seed) {
  model.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto noise = [&](double sigma) {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    return Vec3(sigma * v);
  };
  std::vector<ImuSample> out;
  const KnotGrid& g = traj.grid();
  for (long k = 0;; ++k) {
    const double t = g.begin() + k / model.rate;
    if (!g.contains(t)) break;
    ImuSample s;
    s.t = t;
    s.gyro = traj.predict_gyro(t) + model.bias_g + noise(model.sigma_gyro);
    s.accel = traj.predict_accel(t) + model.bias_a + noise(model.sigma_accel);
    out.push_back(s);
  }
  return out;
}

Scan simulate_scan(const Trajectory& traj, const Extrinsics& ext, const PlaneScene& scene, const LidarModel& model,
                   double scan_start, std::uint64_t seed) {
  model.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double period = model.firing_period();
  Scan scan;
  scan.t_ref = scan_start;
  for (int a = 0; a < model.azimuth_steps; ++a) {
    const double az = 2.0 * M_PI * a / model.azimuth_steps;
    for (int b = 0; b < model.beams; ++b) {
      const double el = model.elevation(b);
      const Vec3 dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const double t = scan_start + (static_cast<long>(a) * model.beams + b) * period;
      const Pose l = lidar_pose(traj, ext, t);
      const std::optional<double> r = scene.intersect(l.p, l.q * dir);
      if (!r || *r > model.max_range) continue;
      const double range = *r + (model.range_noise > 0.0 ? model.range_noise * gauss(rng) : 0.0);
      if (!(range > 0.0)) continue;
      scan.points.push_back({t, range * dir});
    }
  }
  return scan;
}

Extrinsics SimConfig::default_truth_extrinsics() {
  const double a = 10.0 * M_PI / 180.0;
  return {from_euler_rpy(a, a, a), Vec3(0.1, -0.05, 0.15)};
}

void SimConfig::make_noiseless() {
  lidar.range_noise = 0.0;
  imu.sigma_gyro = 0.0;
  imu.sigma_accel = 0.0;
  imu.bias_g.setZero();
  imu.bias_a.setZero();
  odom_sigma_rot = 0.0;
  odom_sigma_trans = 0.0;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

Dataset simulate_dataset(const SimConfig& config, std::uint64_t seed) {
  SinusoidParams motion = config.motion;
  if (config.random_phases) {
    std::mt19937_64 rng(mix(seed, 1));
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    for (int i = 0; i < 3; ++i) motion.pos_phase[i] = phase(rng);
    for (int i = 0; i < 3; ++i) motion.rot_phase[i] = phase(rng);
  }
  const SinusoidFit fit = make_sinusoid_trajectory(motion);

  Dataset ds;
  ds.truth = fit.traj;
  ds.truth_ext = config.truth_ext;
  ds.bias_g = config.imu.bias_g;
  ds.bias_a = config.imu.bias_a;
  ds.fit_pos_error = fit.max_pos_error;
  ds.fit_rot_error = fit.max_rot_error;
  ds.imu = simulate_imu(ds.truth, config.imu, mix(seed, 2));

  const KnotGrid& g = ds.truth.grid();
  const double span = (config.lidar.azimuth_steps * config.lidar.beams - 1) * config.lidar.firing_period();
  std::vector<double> times;
  for (int k = 0;; ++k) {
    const double t0 = g.begin() + k / config.lidar.rate;
    if (!g.contains(t0 + span)) break;
    times.push_back(t0);
    ds.scans.push_back(simulate_scan(ds.truth, ds.truth_ext, config.scene, config.lidar, t0, mix(seed, 100 + k)));
  }
  ds.odometry =
      oracle_odometry(ds.truth, ds.truth_ext, times, config.odom_sigma_rot, config.odom_sigma_trans, mix(seed, 3));
  return ds;
}

std::uint64_t trial_seed(std::uint64_t seed, int trial) { return mix(seed, 1000 + static_cast<std::uint64_t>(trial)); }

namespace {

TrialOutcome run_trial(int trial, const SimConfig& sim, const CalibConfig& config, std::uint64_t seed) {
  TrialOutcome out;
  out.trial = trial;
  out.seed = trial_seed(seed, trial);
  out.truth_bias_g = sim.imu.bias_g;
  out.truth_bias_a = sim.imu.bias_a;
  const auto start = std::chrono::steady_clock::now();
  try {
    const Dataset ds = simulate_dataset(sim, out.seed);
    CalibConfig c = config;
    c.seed = out.seed;
    const CalibReport rep = calibrate(ds.imu, ds.scans, c, ds.odometry);
    for (const RoundRecord& r : rep.rounds) {
      out.round_ext.push_back(r.ext);
      out.round_errors.push_back(extrinsic_error(r.ext, ds.truth_ext));
    }
    out.final_error = extrinsic_error(rep.ext, ds.truth_ext);
    out.bias_g = rep.bias_g;
    out.bias_a = rep.bias_a;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) {
    sd = std::nan("");
    return;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

MonteCarloResult monte_carlo(int n_trials, const SimConfig& sim, const CalibConfig& config, std::uint64_t seed,
                             int threads) {
  if (n_trials < 1) throw ValidationError("monte carlo needs at least one trial");
  config.validate();
  MonteCarloResult res;
  res.trials.resize(n_trials);
  const int workers = std::clamp(threads, 1, n_trials);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int k = next++; k < n_trials; k = next++) res.trials[k] = run_trial(k, sim, config, seed);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  std::vector<double> rot, trans;
  for (const TrialOutcome& t : res.trials) {
    if (!t.ok) continue;
    rot.push_back(t.final_error.rot_deg);
    trans.push_back(t.final_error.trans_m);
  }
  res.succeeded = static_cast<int>(rot.size());
  if (res.succeeded > 0) {
    mean_sd(rot, res.rot_mean, res.rot_sd);
    mean_sd(trans, res.trans_mean, res.trans_sd);
  } else {
    res.rot_mean = res.rot_sd = res.trans_mean = res.trans_sd = std::nan("");
  }
  return res;
}

void write_stats_json(std::ostream& os, const MonteCarloResult& r) {
  auto num = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return "n/a";
  };
  nlohmann::json j;
  j["trials"] = r.trials.size();
  j["succeeded"] = r.succeeded;
  j["rotation_deg"] = {{"mean", num(r.rot_mean)}, {"sd", num(r.rot_sd)}};
  j["translation_m"] = {{"mean", num(r.trans_mean)}, {"sd", num(r.trans_sd)}};
  nlohmann::json per = nlohmann::json::array();
  for (const TrialOutcome& t : r.trials) {
    nlohmann::json e = {{"trial", t.trial}, {"seed", t.seed}, {"ok", t.ok}};
    if (t.ok) {
      e["rot_deg"] = t.final_error.rot_deg;
      e["trans_m"] = t.final_error.trans_m;
      e["bias_gyro"] = {t.bias_g.x(), t.bias_g.y(), t.bias_g.z()};
      e["bias_accel"] = {t.bias_a.x(), t.bias_a.y(), t.bias_a.z()};
    } else {
      e["error"] = t.error;
    }
    per.push_back(e);
  }
  j["per_trial"] = per;
  os << j.dump(2) << '\n';
}

void write_convergence_csv(std::ostream& os, const MonteCarloResult& r) {
  os << "trial,round,rot_deg,trans_m\n";
  char buf[128];
  for (const TrialOutcome& t : r.trials) {
    for (std::size_t k = 0; k < t.round_errors.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g\n", t.trial, k + 1, t.round_errors[k].rot_deg,
                    t.round_errors[k].trans_m);
      os << buf;
    }
  }
}

}  // namespace ctcalib
