#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "ctcalib/errors.hpp"

namespace ctcalib::cli {
namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create directory " + dir.string());
}

}  // namespace

void apply_manifest_noise(const SensorInfo& s, ToolConfig& c) {
  if (s.sigma_gyro && !c.noise_gyro_set) c.calib.noise.sigma_gyro = *s.sigma_gyro;
  if (s.sigma_accel && !c.noise_accel_set) c.calib.noise.sigma_accel = *s.sigma_accel;
  if (s.sigma_range && !c.noise_lidar_set) c.calib.noise.sigma_lidar = *s.sigma_range;
}

double profile_cell_size(const std::string& profile) {
  if (profile == "indoor") return 0.5;
  if (profile == "outdoor") return 1.0;
  throw ValidationError("unknown profile \"" + profile + "\" (use indoor or outdoor)");
}

ToolConfig resolve_config(const Overrides& o) {
  ToolConfig c = o.config ? read_config(*o.config) : ToolConfig{};
  if (o.iterations) c.calib.iterations = *o.iterations;
  if (o.profile) c.calib.cell_size = c.calib.icp.cell_size = profile_cell_size(*o.profile);
  if (o.odometry) c.calib.odometry = parse_odometry_source(*o.odometry);
  c.calib.validate();
  return c;
}

Dataset cmd_simulate(const ToolConfig& config, std::uint64_t seed, const fs::path& out_dir, ScanFormat format) {
  make_dir(out_dir);
  make_dir(out_dir / "scans");
  Dataset ds = simulate_dataset(config.sim, seed);
  quantize_points(ds.scans);

  DatasetManifest m;
  m.imu_file = out_dir / "imu.csv";
  m.scan_directory = out_dir / "scans";
  m.odometry_file = out_dir / "odometry.csv";
  m.truth_file = out_dir / "truth.json";
  m.trajectory_file = out_dir / "truth_trajectory.json";
  m.sensors.imu_rate = config.sim.imu.rate;
  m.sensors.lidar_rate = config.sim.lidar.rate;
  // Zero noise is not a usable residual weight; leave the calibration defaults in charge.
  if (config.sim.imu.sigma_gyro > 0.0) m.sensors.sigma_gyro = config.sim.imu.sigma_gyro;
  if (config.sim.imu.sigma_accel > 0.0) m.sensors.sigma_accel = config.sim.imu.sigma_accel;
  if (config.sim.lidar.range_noise > 0.0) m.sensors.sigma_range = config.sim.lidar.range_noise;

  write_imu_csv(m.imu_file, ds.imu);
  for (std::size_t k = 0; k < ds.scans.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "scan_%06zu", k);
    write_scan(m.scan_directory, stem, ds.scans[k], format);
  }
  write_odometry_csv(*m.odometry_file, ds.odometry);
  write_truth_json(*m.truth_file, {ds.truth_ext, ds.bias_g, ds.bias_a});
  write_trajectory_json(*m.trajectory_file, ds.truth);
  {
    std::ofstream cfg = open_out(out_dir / "config.json");
    cfg << nlohmann::json{{"calibration", calib_to_json(config.calib)}, {"simulation", sim_to_json(config.sim)}}.dump(2)
        << '\n';
  }
  write_manifest(out_dir / "manifest.json", m);
  return ds;
}

CalibReport cmd_calibrate(const fs::path& manifest_path, ToolConfig config, const fs::path& report_path,
                          std::ostream& out) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  const LoadedDataset data = load_dataset(manifest);
  apply_manifest_noise(manifest.sensors, config);
  config.calib.validate();
  if (config.calib.odometry == OdometrySource::kOracle && data.odometry.empty()) {
    throw ValidationError("odometry source \"oracle\" needs an odometry_file in the manifest; try --odometry icp");
  }

  const CalibReport report = calibrate(data.imu, data.scans, config.calib, data.odometry);

  if (report_path.has_parent_path()) make_dir(report_path.parent_path());
  {
    std::ofstream js = open_out(report_path);
    write_report_json(js, report);
  }
  const Extrinsics* truth = data.truth ? &data.truth->ext : nullptr;
  fs::path summary_path = report_path;
  summary_path.replace_extension(".txt");
  {
    std::ofstream txt = open_out(summary_path);
    write_report_summary(txt, report, truth);
  }
  write_report_summary(out, report, truth);
  return report;
}

MonteCarloResult cmd_montecarlo(const ToolConfig& config, int n_trials, std::uint64_t seed, int threads,
                                const fs::path& out_dir, std::ostream& out) {
  make_dir(out_dir);
  const MonteCarloResult r = monte_carlo(n_trials, config.sim, config.calib, seed, threads);
  {
    std::ofstream js = open_out(out_dir / "stats.json");
    write_stats_json(js, r);
  }
  {
    std::ofstream csv = open_out(out_dir / "convergence.csv");
    write_convergence_csv(csv, r);
  }

  char buf[160];
  auto sd = [&](double x, const char* f) -> std::string {
    if (!std::isfinite(x)) return "n/a";
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
  };
  out << "trials " << n_trials << ", succeeded " << r.succeeded << '\n';
  for (const TrialOutcome& t : r.trials) {
    if (t.ok) {
      std::snprintf(buf, sizeof buf, "  trial %2d  seed %20llu  %.5f deg  %.6f m\n", t.trial,
                    static_cast<unsigned long long>(t.seed), t.final_error.rot_deg, t.final_error.trans_m);
      out << buf;
    } else {
      out << "  trial " << t.trial << "  failed: " << t.error << '\n';
    }
  }
  if (r.succeeded > 0) {
    std::snprintf(buf, sizeof buf, "%.5f", r.rot_mean);
    out << "rotation     " << buf << " +/- " << sd(r.rot_sd, "%.5f") << " deg\n";
    std::snprintf(buf, sizeof buf, "%.6f", r.trans_mean);
    out << "translation  " << buf << " +/- " << sd(r.trans_sd, "%.6f") << " m\n";
  }
  if (r.succeeded == 0) throw DivergenceError("every Monte Carlo trial failed");
  return r;
}

int exit_code_for(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->numerical() ? kExitNumerical : kExitValidation;
  if (dynamic_cast<const ValidationError*>(&e)) return kExitValidation;
  if (dynamic_cast<const CalibError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitValidation;
  return kExitOther;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ctcalib: continuous-time LiDAR-IMU extrinsic calibration"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path, profile, odometry;
  int iterations = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "random seed")->capture_default_str();
    sub->add_option("--iterations", iterations, "refinement rounds")->check(CLI::PositiveNumber);
    sub->add_option("--profile", profile, "cell size preset")->check(CLI::IsMember({"indoor", "outdoor"}));
    sub->add_option("--odometry", odometry, "LiDAR pose source")->check(CLI::IsMember({"oracle", "icp"}));
    sub->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber)->capture_default_str();
  };

  fs::path out_dir;
  bool csv_scans = false;
  CLI::App* sim = app.add_subcommand("simulate", "write a simulated dataset");
  add_common(sim);
  sim->add_option("--out", out_dir, "output directory")->required();
  sim->add_flag("--csv-scans", csv_scans, "write scans as CSV instead of binary");

  fs::path manifest, report;
  CLI::App* cal = app.add_subcommand("calibrate", "calibrate a dataset");
  add_common(cal);
  cal->add_option("manifest", manifest, "dataset manifest JSON")->required();
  cal->add_option("--report", report, "report JSON path")->required();

  int trials = 10;
  CLI::App* mc = app.add_subcommand("montecarlo", "repeat simulate and calibrate over seeded trials");
  add_common(mc);
  mc->add_option("-n,--trials", trials, "number of trials")->check(CLI::PositiveNumber)->capture_default_str();
  mc->add_option("--out", out_dir, "output directory")->required();

  CLI::App* defaults = app.add_subcommand("defaults", "print the config schema with default values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (defaults->parsed()) {
      out << default_config_json().dump(2) << '\n';
      return kExitOk;
    }
    if (!config_path.empty()) ov.config = config_path;
    if (iterations > 0) ov.iterations = iterations;
    if (!profile.empty()) ov.profile = profile;
    if (!odometry.empty()) ov.odometry = odometry;
    ToolConfig config = resolve_config(ov);

    if (sim->parsed()) {
      const Dataset ds = cmd_simulate(config, seed, out_dir, csv_scans ? ScanFormat::kCsv : ScanFormat::kBinary);
      out << "wrote " << ds.imu.size() << " IMU samples and " << ds.scans.size() << " scans to " << out_dir.string()
          << '\n';
    } else if (cal->parsed()) {
      if (cal->count("--seed")) config.calib.seed = seed;
      cmd_calibrate(manifest, config, report, out);
    } else if (mc->parsed()) {
      cmd_montecarlo(config, trials, seed, threads, out_dir, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace ctcalib::cli
