#include "config_io.hpp"

#include <fstream>
#include <set>

#include "ctcalib/errors.hpp"

namespace ctcalib::cli {
namespace {

using nlohmann::json;

json v3(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

// Reads known keys of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  void mark(const std::string& key) { seen_.insert(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, Vec3>) {
        const json& a = j_[key];
        if (!a.is_array() || a.size() != 3) fail(key, "expected [x, y, z]");
        out = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
      } else if constexpr (std::is_same_v<T, Quat>) {
        const json& a = j_[key];
        if (!a.is_array() || a.size() != 4) fail(key, "expected [w, x, y, z]");
        out = Quat(a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()).normalized();
      } else {
        out = j_[key].get<T>();
      }
    } catch (const json::exception&) {
      fail(key, "wrong type");
    }
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.contains(key) ? j_[key] : json::object(), join(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(key, "unknown key");
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ValidationError("config " + join(key) + ": " + what);
  }

  const json& raw() const { return j_; }

 private:
  json j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_surfels(Reader r, SurfelOptions& s) {
  r.get("planarity_threshold", s.planarity_threshold);
  r.get("ransac_tolerance", s.ransac_tolerance);
  r.get("ransac_iterations", s.ransac_iterations);
  r.get("seed", s.seed);
  r.finish();
}

void read_calib(Reader r, ToolConfig& tc) {
  CalibConfig& c = tc.calib;
  r.get("knot_dt", c.knot_dt);
  r.get("cell_size", c.cell_size);
  r.get("planarity_first", c.planarity_first);
  r.get("planarity_later", c.planarity_later);
  r.get("reject_first", c.reject_first);
  r.get("reject_later", c.reject_later);
  r.get("downsample_ratio", c.downsample_ratio);
  {
    Reader n = r.child("noise");
    tc.noise_accel_set |= n.has("sigma_accel");
    tc.noise_gyro_set |= n.has("sigma_gyro");
    tc.noise_lidar_set |= n.has("sigma_lidar");
    n.get("sigma_accel", c.noise.sigma_accel);
    n.get("sigma_gyro", c.noise.sigma_gyro);
    n.get("sigma_lidar", c.noise.sigma_lidar);
    n.finish();
  }
  r.get("iterations", c.iterations);
  std::string odom = to_string(c.odometry);
  r.get("odometry", odom);
  c.odometry = parse_odometry_source(odom);
  r.get("seed", c.seed);
  r.get("early_exit", c.early_exit);
  r.get("plateau_trans", c.plateau_trans);
  r.get("plateau_rot_deg", c.plateau_rot_deg);
  r.get("min_duration", c.min_duration);
  r.get("min_mean_rate", c.min_mean_rate);
  r.get("handeye_threshold", c.handeye_threshold);
  r.get("pose_smoothing", c.pose_smoothing);
  r.get("ransac_tolerance", c.ransac_tolerance);
  r.get("ransac_iterations", c.ransac_iterations);
  r.get("lm_iterations", c.lm_iterations);
  r.get("huber", c.huber);
  r.get("huber_delta", c.huber_delta);
  r.get("freeze_gravity", c.freeze_gravity);
  r.get("world_map", c.world_map);
  {
    Reader i = r.child("icp");
    {
      Reader reg = i.child("registration");
      reg.get("max_iterations", c.icp.icp.max_iterations);
      reg.get("reject_dist", c.icp.icp.reject_dist);
      reg.get("min_correspondences", c.icp.icp.min_correspondences);
      reg.get("converge_step", c.icp.icp.converge_step);
      reg.get("degeneracy_ratio", c.icp.icp.degeneracy_ratio);
      reg.finish();
    }
    i.get("cell_size", c.icp.cell_size);
    read_surfels(i.child("surfels"), c.icp.surfels);
    i.get("rebuild_every", c.icp.rebuild_every);
    i.finish();
  }
  r.finish();
}

void read_sim(Reader r, SimConfig& s) {
  bool noiseless = false;
  r.get("noiseless", noiseless);
  if (noiseless) s.make_noiseless();
  if (r.has("planes")) {
    const json& planes = r.raw()["planes"];
    if (!planes.is_array()) r.fail("planes", "expected an array");
    s.scene.planes.clear();
    for (std::size_t k = 0; k < planes.size(); ++k) {
      Reader p(planes[k], r.join("planes[" + std::to_string(k) + "]"));
      Plane pl;
      p.get("n", pl.n);
      p.get("d", pl.d);
      p.get("lo", pl.lo);
      p.get("hi", pl.hi);
      p.finish();
      if (!(pl.n.norm() > 0.0)) p.fail("n", "normal must be non-zero");
      pl.n.normalize();
      s.scene.planes.push_back(pl);
    }
  }
  r.mark("planes");
  {
    Reader l = r.child("lidar");
    l.get("beams", s.lidar.beams);
    l.get("max_elevation_deg", s.lidar.max_elevation_deg);
    l.get("rate", s.lidar.rate);
    l.get("azimuth_steps", s.lidar.azimuth_steps);
    l.get("range_noise", s.lidar.range_noise);
    l.get("max_range", s.lidar.max_range);
    l.finish();
  }
  {
    Reader i = r.child("imu");
    i.get("rate", s.imu.rate);
    i.get("sigma_gyro", s.imu.sigma_gyro);
    i.get("sigma_accel", s.imu.sigma_accel);
    i.get("bias_gyro", s.imu.bias_g);
    i.get("bias_accel", s.imu.bias_a);
    i.finish();
  }
  {
    Reader m = r.child("motion");
    m.get("pos_amp", s.motion.pos_amp);
    m.get("pos_freq", s.motion.pos_freq);
    m.get("pos_phase", s.motion.pos_phase);
    m.get("rot_amp", s.motion.rot_amp);
    m.get("rot_freq", s.motion.rot_freq);
    m.get("rot_phase", s.motion.rot_phase);
    m.get("duration", s.motion.duration);
    m.get("knot_dt", s.motion.knot_dt);
    m.get("sample_rate", s.motion.sample_rate);
    m.finish();
  }
  r.get("random_phases", s.random_phases);
  {
    Reader e = r.child("truth_extrinsics");
    e.get("q_LI", s.truth_ext.q_LI);
    e.get("p_LI", s.truth_ext.p_LI);
    e.finish();
  }
  r.get("odom_sigma_rot", s.odom_sigma_rot);
  r.get("odom_sigma_trans", s.odom_sigma_trans);
  r.finish();
  s.lidar.validate();
  s.imu.validate();
  if (!(s.motion.duration > 0.0) || !(s.motion.knot_dt > 0.0) || !(s.motion.sample_rate > 0.0)) {
    throw ValidationError("config simulation.motion: duration, knot_dt and sample_rate must be positive");
  }
  if (s.odom_sigma_rot < 0.0 || s.odom_sigma_trans < 0.0) {
    throw ValidationError("config simulation: odometry noise must be non-negative");
  }
}

}  // namespace

json calib_to_json(const CalibConfig& c) {
  const SurfelOptions& s = c.icp.surfels;
  return {{"knot_dt", c.knot_dt},
          {"cell_size", c.cell_size},
          {"planarity_first", c.planarity_first},
          {"planarity_later", c.planarity_later},
          {"reject_first", c.reject_first},
          {"reject_later", c.reject_later},
          {"downsample_ratio", c.downsample_ratio},
          {"noise",
           {{"sigma_accel", c.noise.sigma_accel}, {"sigma_gyro", c.noise.sigma_gyro},
            {"sigma_lidar", c.noise.sigma_lidar}}},
          {"iterations", c.iterations},
          {"odometry", to_string(c.odometry)},
          {"seed", c.seed},
          {"early_exit", c.early_exit},
          {"plateau_trans", c.plateau_trans},
          {"plateau_rot_deg", c.plateau_rot_deg},
          {"min_duration", c.min_duration},
          {"min_mean_rate", c.min_mean_rate},
          {"handeye_threshold", c.handeye_threshold},
          {"pose_smoothing", c.pose_smoothing},
          {"ransac_tolerance", c.ransac_tolerance},
          {"ransac_iterations", c.ransac_iterations},
          {"lm_iterations", c.lm_iterations},
          {"huber", c.huber},
          {"huber_delta", c.huber_delta},
          {"freeze_gravity", c.freeze_gravity},
          {"world_map", c.world_map},
          {"icp",
           {{"registration",
             {{"max_iterations", c.icp.icp.max_iterations},
              {"reject_dist", c.icp.icp.reject_dist},
              {"min_correspondences", c.icp.icp.min_correspondences},
              {"converge_step", c.icp.icp.converge_step},
              {"degeneracy_ratio", c.icp.icp.degeneracy_ratio}}},
            {"cell_size", c.icp.cell_size},
            {"surfels",
             {{"planarity_threshold", s.planarity_threshold},
              {"ransac_tolerance", s.ransac_tolerance},
              {"ransac_iterations", s.ransac_iterations},
              {"seed", s.seed}}},
            {"rebuild_every", c.icp.rebuild_every}}}};
}

json sim_to_json(const SimConfig& s) {
  json planes = json::array();
  for (const Plane& p : s.scene.planes) planes.push_back({{"n", v3(p.n)}, {"d", p.d}, {"lo", v3(p.lo)}, {"hi", v3(p.hi)}});
  const Quat& q = s.truth_ext.q_LI;
  return {{"noiseless", false},
          {"planes", planes},
          {"lidar",
           {{"beams", s.lidar.beams},
            {"max_elevation_deg", s.lidar.max_elevation_deg},
            {"rate", s.lidar.rate},
            {"azimuth_steps", s.lidar.azimuth_steps},
            {"range_noise", s.lidar.range_noise},
            {"max_range", s.lidar.max_range}}},
          {"imu",
           {{"rate", s.imu.rate},
            {"sigma_gyro", s.imu.sigma_gyro},
            {"sigma_accel", s.imu.sigma_accel},
            {"bias_gyro", v3(s.imu.bias_g)},
            {"bias_accel", v3(s.imu.bias_a)}}},
          {"motion",
           {{"pos_amp", v3(s.motion.pos_amp)},
            {"pos_freq", v3(s.motion.pos_freq)},
            {"pos_phase", v3(s.motion.pos_phase)},
            {"rot_amp", v3(s.motion.rot_amp)},
            {"rot_freq", v3(s.motion.rot_freq)},
            {"rot_phase", v3(s.motion.rot_phase)},
            {"duration", s.motion.duration},
            {"knot_dt", s.motion.knot_dt},
            {"sample_rate", s.motion.sample_rate}}},
          {"random_phases", s.random_phases},
          {"truth_extrinsics", {{"q_LI", {q.w(), q.x(), q.y(), q.z()}}, {"p_LI", v3(s.truth_ext.p_LI)}}},
          {"odom_sigma_rot", s.odom_sigma_rot},
          {"odom_sigma_trans", s.odom_sigma_trans}};
}

json default_config_json() { return {{"calibration", calib_to_json({})}, {"simulation", sim_to_json({})}}; }

void apply_config_json(const json& j, ToolConfig& config) {
  Reader root(j, "");
  read_calib(root.child("calibration"), config);
  read_sim(root.child("simulation"), config.sim);
  root.finish();
  config.calib.validate();
}

ToolConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  ToolConfig c;
  apply_config_json(j, c);
  return c;
}

}  // namespace ctcalib::cli
