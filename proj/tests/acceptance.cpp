// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "ctcalib/errors.hpp"
#include "ctcalib/optimizer.hpp"
#include "ctcalib/pipeline.hpp"
#include "ctcalib/rot_init.hpp"
#include "ctcalib/sim.hpp"
#include "ctcalib/splines.hpp"
#include "ctcalib/surfel_map.hpp"
#include "fd_oracle.hpp"
#include "synthetic_problem.hpp"
#include "test_util.hpp"

namespace ctcalib {
namespace {

using Clock = std::chrono::steady_clock;

constexpr double kDeg = M_PI / 180.0;

// 1
constexpr int kSplineConfigs = 1000;
constexpr double kSplineEquivalenceTol = 1e-12;
constexpr double kSplineSeconds = 1.0;
// 2
constexpr int kDerivativeSplines = 100;
constexpr double kR3DerivativeRelTol = 1e-6;
constexpr double kSO3RateAbsTol = 1e-5;  // rad/s
constexpr double kDerivativeSeconds = 5.0;
// 3
constexpr double kHandEyeNoiselessTol = 1e-6;  // rad
constexpr double kHandEyeNoisyTolDeg = 0.5;
constexpr int kHandEyeRuns = 10;
constexpr double kHandEyeSeconds = 10.0;
// 4
constexpr double kPlaneLikenessTol = 1e-12;
constexpr double kPlaneLikenessSeconds = 1.0;
// 5
constexpr int kMonteCarloTrials = 10;
constexpr std::uint64_t kMonteCarloSeed = 2024;
constexpr double kMcTransMean = 0.02;  // m
constexpr double kMcRotMeanDeg = 0.2;
constexpr double kMcTrialSeconds = 180.0;
// 6
constexpr double kNoiselessTrans = 1e-3;  // m
constexpr double kNoiselessRotDeg = 0.01;
constexpr double kNoiselessSeconds = 120.0;
// 7
constexpr double kPlateauTrans = 1e-3;  // m
constexpr double kPlateauRotDeg = 0.05;
constexpr int kPlateauMinTrials = 9;
// 8
constexpr double kJacobianRelTol = 1e-5;
// 9
const Vec3 kInjectedBiasGyro(0.02, -0.02, 0.02);  // rad/s
const Vec3 kInjectedBiasAccel(0.1, -0.1, 0.1);  // m/s^2
constexpr double kBiasRelTol = 0.10;

int failures = 0;

void line(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("%s %2d %-24s %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool monotone(const LmReport& r) {
  double prev = r.initial_cost;
  for (const LmIteration& it : r.iterations) {
    if (it.cost > prev) return false;
    prev = it.cost;
  }
  return true;
}

void spline_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> udt(0.01, 0.5), ut0(-100.0, 100.0);
  std::uniform_int_distribution<int> un(4, 30);
  double worst = 0.0;
  for (int c = 0; c < kSplineConfigs; ++c) {
    const KnotGrid g(ut0(rng), udt(rng), un(rng));
    const SplineR3 s = testing::random_r3(rng, g, 10.0);
    for (int k = 0; k < 10; ++k) {
      const double t = testing::random_time(rng, g);
      worst = std::max(worst, (s.position(t) - s.position_cumulative(t)).cwiseAbs().maxCoeff());
    }
  }
  const double secs = seconds_since(t0);
  line(1, "spline-equivalence", worst < kSplineEquivalenceTol && secs < kSplineSeconds,
       format("max |matrix - cumulative| %.2e m over %d configs (tol %.0e), %.3f s (limit %.0f s)", worst,
              kSplineConfigs, kSplineEquivalenceTol, secs, kSplineSeconds));
}

void derivative_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> udt(0.05, 0.5), uu(0.01, 0.99);
  double worst_v = 0.0, worst_a = 0.0, worst_w = 0.0;
  for (int c = 0; c < kDerivativeSplines; ++c) {
    const KnotGrid g(0.0, udt(rng), 12);
    const SplineR3 p = testing::random_r3(rng, g, 3.0);
    const SplineSO3 q = testing::random_so3(rng, g, 0.3);
    for (int k = 0; k < 20; ++k) {
      // Stay inside one polynomial piece.
      const int seg = std::uniform_int_distribution<int>(0, g.segments() - 1)(rng);
      const double t = g.knot(seg) + uu(rng) * g.dt();
      const double hv = 1e-5, ha = 1e-4;
      const Vec3 v_fd = (p.position(t + hv) - p.position(t - hv)) / (2 * hv);
      const Vec3 a_fd = (p.position(t + ha) - 2.0 * p.position(t) + p.position(t - ha)) / (ha * ha);
      const Vec3 v = p.velocity(t), a = p.acceleration(t);
      worst_v = std::max(worst_v, (v - v_fd).norm() / std::max(v.norm(), 1.0));
      worst_a = std::max(worst_a, (a - a_fd).norm() / std::max(a.norm(), 1.0));
      const Vec3 w_fd = so3_log(q.orientation(t - hv).conjugate() * q.orientation(t + hv)) / (2 * hv);
      worst_w = std::max(worst_w, (q.angular_velocity(t) - w_fd).norm());
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_v < kR3DerivativeRelTol && worst_a < kR3DerivativeRelTol && worst_w < kSO3RateAbsTol &&
                    secs < kDerivativeSeconds;
  line(2, "derivative-correctness", pass,
       format("vel rel %.1e, acc rel %.1e (tol %.0e), omega abs %.1e rad/s (tol %.0e), %d splines, %.2f s", worst_v,
              worst_a, kR3DerivativeRelTol, worst_w, kSO3RateAbsTol, kDerivativeSplines, secs));
}

// Rotation-only initialization from simulated gyro and odometry.
double handeye_error(std::uint64_t seed, bool noisy) {
  std::mt19937_64 rng(seed);
  SinusoidParams motion;
  std::uniform_real_distribution<double> uph(0.0, 2.0 * M_PI);
  for (int i = 0; i < 3; ++i) motion.rot_phase[i] = uph(rng);
  const Trajectory truth = make_sinusoid_trajectory(motion).traj;
  const Extrinsics ext{testing::random_quat(rng), testing::random_vec(rng, 0.2)};

  ImuModel imu_model;
  imu_model.sigma_gyro = noisy ? 0.005 : 0.0;
  if (!noisy) imu_model.bias_g.setZero();
  const std::vector<ImuSample> imu = simulate_imu(truth, imu_model, seed);

  std::vector<double> times;
  for (double t = 0.0; t < motion.duration - 0.05; t += 0.1) times.push_back(t);
  const std::vector<ScanPose> odom =
      oracle_odometry(truth, ext, times, noisy ? 0.2 * kDeg : 0.0, noisy ? 0.01 : 0.0, seed + 1000);

  const KnotGrid grid = KnotGrid::covering(imu.front().t, imu.back().t, 0.02);
  std::vector<ImuSample> used;
  for (const ImuSample& s : imu) {
    if (grid.contains(s.t)) used.push_back(s);
  }
  const SplineSO3 gyro = fit_gyro_spline(used, grid);
  std::vector<Quat> lidar_q;
  for (const ScanPose& p : odom) lidar_q.push_back(p.q);
  const Quat est = solve_handeye(make_rot_pairs(gyro, times, lidar_q, kDefaultHandEyeThreshold));
  return angular_distance(est, ext.q_LI);
}

void handeye_recovery() {
  const auto t0 = Clock::now();
  double worst_clean = 0.0, worst_noisy = 0.0;
  for (int run = 0; run < kHandEyeRuns; ++run) {
    worst_clean = std::max(worst_clean, handeye_error(100 + run, false));
    worst_noisy = std::max(worst_noisy, handeye_error(200 + run, true));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_clean < kHandEyeNoiselessTol && worst_noisy < kHandEyeNoisyTolDeg * kDeg &&
                    secs < kHandEyeSeconds;
  line(3, "hand-eye-recovery", pass,
       format("noiseless worst %.1e rad (tol %.0e), noisy worst %.3f deg (tol %.1f) over %d runs each, %.1f s",
              worst_clean, kHandEyeNoiselessTol, worst_noisy / kDeg, kHandEyeNoisyTolDeg, kHandEyeRuns, secs));
}

VoxelCell cell_of(const std::vector<Vec3>& pts) {
  VoxelCell c;
  for (std::size_t k = 0; k < pts.size(); ++k) c.add({0, static_cast<int>(k), pts[k]});
  return c;
}

void plane_likeness_identities() {
  const auto t0 = Clock::now();
  // Disc: eigenvalues (0, l, l). Cube corners and face centres: (l, l, l). Line: (0, 0, l).
  std::vector<Vec3> disc, iso, line_pts;
  for (int k = 0; k < 12; ++k) {
    const double a = 2.0 * M_PI * k / 12.0;
    disc.emplace_back(std::cos(a), std::sin(a), 0.0);
  }
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) iso.emplace_back(sx, sy, sz);
  for (int a = 0; a < 3; ++a) {
    iso.push_back(Vec3::Unit(a));
    iso.push_back(-Vec3::Unit(a));
  }
  for (int k = 0; k < 10; ++k) line_pts.push_back(k * Vec3(1, 2, 3));
  const double p_disc = *plane_likeness(cell_of(disc));
  const double p_iso = *plane_likeness(cell_of(iso));
  const double p_line = *plane_likeness(cell_of(line_pts));
  const double secs = seconds_since(t0);
  const double worst = std::max({std::abs(p_disc - 1.0), std::abs(p_iso), std::abs(p_line)});
  line(4, "plane-likeness", worst < kPlaneLikenessTol && secs < kPlaneLikenessSeconds,
       format("planar %.15f, isotropic %.1e, collinear %.1e (tol %.0e), %.4f s", p_disc, p_iso, p_line,
              kPlaneLikenessTol, secs));
}

MonteCarloResult monte_carlo_headline() {
  SimConfig sim;
  CalibConfig config;
  const MonteCarloResult r = monte_carlo(kMonteCarloTrials, sim, config, kMonteCarloSeed, 1);
  double slowest = 0.0;
  for (const TrialOutcome& t : r.trials) slowest = std::max(slowest, t.seconds);
  const bool pass = r.succeeded == kMonteCarloTrials && r.trans_mean < kMcTransMean &&
                    r.rot_mean < kMcRotMeanDeg && slowest < kMcTrialSeconds;
  line(5, "monte-carlo-headline", pass,
       format("%d/%d ok, trans %.4f +/- %.4f m (limit %.2f), rot %.4f +/- %.4f deg (limit %.1f), slowest trial "
              "%.1f s (limit %.0f)",
              r.succeeded, kMonteCarloTrials, r.trans_mean, r.trans_sd, kMcTransMean, r.rot_mean, r.rot_sd,
              kMcRotMeanDeg, slowest, kMcTrialSeconds));
  return r;
}

std::vector<LmReport> noiseless_end_to_end() {
  const auto t0 = Clock::now();
  SimConfig sim;
  sim.make_noiseless();
  const Dataset ds = simulate_dataset(sim, 1);
  std::vector<LmReport> lm;
  try {
    const CalibReport r = calibrate(ds.imu, ds.scans, CalibConfig{}, ds.odometry);
    for (const RoundRecord& rec : r.rounds) lm.push_back(rec.lm);
    const ExtrinsicError e = extrinsic_error(r.ext, ds.truth_ext);
    const double secs = seconds_since(t0);
    line(6, "noiseless-end-to-end", e.trans_m < kNoiselessTrans && e.rot_deg < kNoiselessRotDeg && secs < kNoiselessSeconds,
         format("trans %.2e m (limit %.0e), rot %.2e deg (limit %.2f), %.1f s (limit %.0f)", e.trans_m,
                kNoiselessTrans, e.rot_deg, kNoiselessRotDeg, secs, kNoiselessSeconds));
  } catch (const std::exception& e) {
    line(6, "noiseless-end-to-end", false, std::string("threw: ") + e.what());
  }
  return lm;
}

void refinement_plateau(const MonteCarloResult& r) {
  int settled = 0, improved = 0, counted = 0;
  double worst_trans = 0.0, worst_rot = 0.0;
  for (const TrialOutcome& t : r.trials) {
    if (!t.ok || t.round_ext.size() < 8) continue;
    ++counted;
    const Extrinsics& a = t.round_ext[3];
    const Extrinsics& b = t.round_ext[7];
    const double dt = (a.p_LI - b.p_LI).norm();
    const double dr = angular_distance(a.q_LI, b.q_LI) / kDeg;
    worst_trans = std::max(worst_trans, dt);
    worst_rot = std::max(worst_rot, dr);
    if (dt < kPlateauTrans && dr < kPlateauRotDeg) ++settled;
    if (t.round_errors[1].trans_m <= t.round_errors[0].trans_m) ++improved;
  }
  line(7, "refinement-plateau", settled >= kPlateauMinTrials,
       format("%d/%d trials change < %.0f mm and < %.2f deg between rounds 4 and 8 (need %d), worst %.2e m %.4f deg; "
              "round 2 beats round 1 in %d/%d",
              settled, counted, kPlateauTrans * 1e3, kPlateauRotDeg, kPlateauMinTrials, worst_trans, worst_rot,
              improved, counted));
}

void optimizer_properties(const std::vector<LmReport>& end_to_end) {
  bool all_monotone = true;
  int problems = 0;
  double worst_jac = 0.0;
  for (bool world : {false, true}) {
    for (bool huber : {false, true}) {
      for (std::uint64_t seed : {11, 12, 13}) {
        testing::SyntheticOptions o;
        o.world_map = world;
        const auto syn = testing::make_synthetic(seed, o);
        const CalibState init = testing::perturbed(syn.truth, seed + 50, 3.0 * kDeg, 0.03, 0.002);
        LmOptions opts;
        opts.huber = huber;
        LmReport rep;
        solve_lm(syn.problem, init, opts, &rep);
        all_monotone &= monotone(rep);
        ++problems;
        if (!huber) {
          const testing::JacobianCheck jc = testing::compare_with_fd(syn.problem, init, opts);
          worst_jac = std::max({worst_jac, jc.hessian_rel, jc.gradient_rel});
        }
      }
    }
  }
  for (const LmReport& rep : end_to_end) {
    all_monotone &= monotone(rep);
    ++problems;
  }

  int unobservable = 0;
  for (bool world : {false, true}) {
    testing::SyntheticOptions o;
    o.stationary = true;
    o.world_map = world;
    const auto syn = testing::make_synthetic(14, o);
    try {
      solve_lm(syn.problem, syn.truth, {});
    } catch (const ObservabilityError&) {
      ++unobservable;
    }
  }
  SimConfig still;
  still.motion.rot_amp.setZero();
  still.motion.pos_amp.setZero();
  still.motion.duration = 3.0;
  still.lidar.azimuth_steps = 90;
  const Dataset ds = simulate_dataset(still, 3);
  try {
    calibrate(ds.imu, ds.scans, CalibConfig{}, ds.odometry);
  } catch (const StageError& e) {
    if (e.numerical()) ++unobservable;
  }
  const bool pass = all_monotone && worst_jac < kJacobianRelTol && unobservable == 3;
  line(8, "optimizer-properties", pass,
       format("LM monotone on %d/%d problems, worst Jacobian block rel %.1e (tol %.0e), stationary rejected %d/3",
              all_monotone ? problems : 0, problems, worst_jac, kJacobianRelTol, unobservable));
}

void bias_recovery() {
  SimConfig sim;
  sim.make_noiseless();
  sim.imu.bias_g = kInjectedBiasGyro;
  sim.imu.bias_a = kInjectedBiasAccel;
  const Dataset ds = simulate_dataset(sim, 2);
  try {
    const CalibReport r = calibrate(ds.imu, ds.scans, CalibConfig{}, ds.odometry);
    const double eg = (r.bias_g - kInjectedBiasGyro).norm() / kInjectedBiasGyro.norm();
    const double ea = (r.bias_a - kInjectedBiasAccel).norm() / kInjectedBiasAccel.norm();
    line(9, "bias-recovery", eg < kBiasRelTol && ea < kBiasRelTol,
         format("gyro rel error %.2e, accel rel error %.2e (tol %.2f)", eg, ea, kBiasRelTol));
  } catch (const std::exception& e) {
    line(9, "bias-recovery", false, std::string("threw: ") + e.what());
  }
}

void determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ctcalib_acceptance";
  fs::remove_all(dir);
  cli::ToolConfig config;
  config.sim.motion.duration = 5.0;
  config.sim.lidar.azimuth_steps = 180;
  config.calib.iterations = 2;
  std::ostringstream sink;
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  try {
    cli::cmd_montecarlo(config, 3, 77, 1, dir / "a", sink);
    cli::cmd_montecarlo(config, 3, 77, 2, dir / "b", sink);
    const std::string a = slurp(dir / "a" / "stats.json"), b = slurp(dir / "b" / "stats.json");
    line(10, "determinism", !a.empty() && a == b,
         format("stats.json %zu and %zu bytes, %s (second run with 2 threads)", a.size(), b.size(),
                a == b ? "identical" : "different"));
  } catch (const std::exception& e) {
    line(10, "determinism", false, std::string("threw: ") + e.what());
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace ctcalib

int main() {
  using namespace ctcalib;
  const auto t0 = Clock::now();
  spline_equivalence();
  derivative_correctness();
  handeye_recovery();
  plane_likeness_identities();
  const MonteCarloResult mc = monte_carlo_headline();
  const std::vector<LmReport> lm = noiseless_end_to_end();
  refinement_plateau(mc);
  optimizer_properties(lm);
  bias_recovery();
  determinism();
  std::printf("%d of 10 criteria failed, %.1f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
