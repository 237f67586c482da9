#include "dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctcalib/errors.hpp"

namespace ctcalib::cli {
namespace {

static_assert(std::endian::native == std::endian::little, "scan files are read and written in host byte order");

constexpr std::size_t kRecordBytes = sizeof(double) + 3 * sizeof(float);

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw ValidationError("cannot write " + path.string() + ": " + std::strerror(errno));
  return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw ValidationError("cannot read " + path.string());
  return in;
}

[[noreturn]] void parse_error(const fs::path& path, int line, const std::string& what) {
  throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Splits a comma separated row into exactly n finite doubles.
std::vector<double> parse_row(const std::string& row, std::size_t n, const fs::path& path, int line) {
  std::vector<double> out;
  out.reserve(n);
  const char* s = row.c_str();
  while (true) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s, &end);
    if (end == s || errno == ERANGE || !std::isfinite(v)) parse_error(path, line, "bad number in \"" + row + "\"");
    out.push_back(v);
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    if (*end == '\0') break;
    if (*end != ',') parse_error(path, line, "expected ',' in \"" + row + "\"");
    s = end + 1;
  }
  if (out.size() != n) {
    parse_error(path, line, "expected " + std::to_string(n) + " columns, got " + std::to_string(out.size()));
  }
  return out;
}

// Calls f(values, line) for every data row; skips blanks, comments and a leading header.
template <typename F>
void for_each_row(const fs::path& path, std::size_t columns, F&& f) {
  std::ifstream in = open_in(path);
  std::string row;
  int line = 0;
  bool first_data = true;
  while (std::getline(in, row)) {
    ++line;
    const auto pos = row.find_first_not_of(" \t\r");
    if (pos == std::string::npos || row[pos] == '#') continue;
    if (first_data && std::isalpha(static_cast<unsigned char>(row[pos]))) {
      first_data = false;
      continue;
    }
    first_data = false;
    f(parse_row(row, columns, path, line), line);
  }
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("cannot write " + path.string());
}

Vec3 vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Quat quat(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("expected a quaternion [w, x, y, z]");
  return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

nlohmann::json to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
nlohmann::json to_json(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

}  // namespace

void write_imu_csv(const fs::path& path, const std::vector<ImuSample>& imu) {
  std::ofstream out = open_out(path);
  out << "# t,wx,wy,wz,ax,ay,az\n";
  for (const ImuSample& s : imu) {
    out << fmt(s.t) << ',' << fmt(s.gyro.x()) << ',' << fmt(s.gyro.y()) << ',' << fmt(s.gyro.z()) << ','
        << fmt(s.accel.x()) << ',' << fmt(s.accel.y()) << ',' << fmt(s.accel.z()) << '\n';
  }
  if (!out) throw ValidationError("cannot write " + path.string());
}

std::vector<ImuSample> read_imu_csv(const fs::path& path, double time_scale) {
  std::vector<ImuSample> imu;
  for_each_row(path, 7, [&](const std::vector<double>& v, int line) {
    ImuSample s;
    s.t = v[0] * time_scale;
    s.gyro = Vec3(v[1], v[2], v[3]);
    s.accel = Vec3(v[4], v[5], v[6]);
    if (!imu.empty() && !(s.t > imu.back().t)) parse_error(path, line, "timestamps must increase");
    imu.push_back(s);
  });
  return imu;
}

void write_scan(const fs::path& dir, const std::string& stem, const Scan& scan, ScanFormat format) {
  const bool binary = format == ScanFormat::kBinary;
  const std::string file = stem + (binary ? ".bin" : ".csv");
  if (binary) {
    std::ofstream out = open_out(dir / file, std::ios::out | std::ios::binary);
    std::vector<char> buf(scan.points.size() * kRecordBytes);
    char* w = buf.data();
    for (const LidarPoint& lp : scan.points) {
      const float xyz[3] = {static_cast<float>(lp.p.x()), static_cast<float>(lp.p.y()),
                            static_cast<float>(lp.p.z())};
      std::memcpy(w, &lp.t, sizeof(double));
      std::memcpy(w + sizeof(double), xyz, sizeof xyz);
      w += kRecordBytes;
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ValidationError("cannot write " + (dir / file).string());
  } else {
    std::ofstream out = open_out(dir / file);
    out << "# t,x,y,z\n";
    for (const LidarPoint& lp : scan.points) {
      out << fmt(lp.t) << ',' << fmt(lp.p.x()) << ',' << fmt(lp.p.y()) << ',' << fmt(lp.p.z()) << '\n';
    }
    if (!out) throw ValidationError("cannot write " + (dir / file).string());
  }
  write_json(dir / (stem + ".json"), {{"t_ref", scan.t_ref},
                                      {"count", scan.points.size()},
                                      {"format", binary ? "binary" : "csv"},
                                      {"file", file}});
}

Scan read_scan(const fs::path& sidecar, double time_scale) {
  const nlohmann::json j = read_json(sidecar);
  Scan scan;
  std::size_t count = 0;
  std::string format, file;
  try {
    scan.t_ref = j.at("t_ref").get<double>() * time_scale;
    count = j.at("count").get<std::size_t>();
    format = j.value("format", "binary");
    file = j.at("file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(sidecar.string() + ": " + e.what());
  }
  const fs::path data = sidecar.parent_path() / file;
  if (format == "binary") {
    std::ifstream in = open_in(data, std::ios::in | std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() != count * kRecordBytes) {
      throw ValidationError(data.string() + ": expected " + std::to_string(count) + " records of " +
                            std::to_string(kRecordBytes) + " bytes, file has " + std::to_string(buf.size()) +
                            " bytes");
    }
    scan.points.resize(count);
    const char* r = buf.data();
    for (std::size_t i = 0; i < count; ++i, r += kRecordBytes) {
      double t;
      float xyz[3];
      std::memcpy(&t, r, sizeof t);
      std::memcpy(xyz, r + sizeof t, sizeof xyz);
      scan.points[i] = {t * time_scale, Vec3(xyz[0], xyz[1], xyz[2])};
    }
  } else if (format == "csv") {
    for_each_row(data, 4, [&](const std::vector<double>& v, int) {
      scan.points.push_back({v[0] * time_scale, Vec3(v[1], v[2], v[3])});
    });
    if (scan.points.size() != count) {
      throw ValidationError(data.string() + ": sidecar says " + std::to_string(count) + " points, file has " +
                            std::to_string(scan.points.size()));
    }
  } else {
    throw ValidationError(sidecar.string() + ": unknown scan format \"" + format + "\"");
  }
  for (std::size_t i = 1; i < scan.points.size(); ++i) {
    if (scan.points[i].t < scan.points[i - 1].t) {
      throw ValidationError(data.string() + ": point " + std::to_string(i) + " goes back in time");
    }
  }
  return scan;
}

std::vector<Scan> read_scan_directory(const fs::path& dir, double time_scale) {
  if (!fs::is_directory(dir)) throw ValidationError("scan directory " + dir.string() + " does not exist");
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") sidecars.push_back(entry.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  std::vector<Scan> scans;
  scans.reserve(sidecars.size());
  for (const fs::path& p : sidecars) {
    scans.push_back(read_scan(p, time_scale));
    if (scans.size() > 1 && !(scans.back().t_ref > scans[scans.size() - 2].t_ref)) {
      throw ValidationError(p.string() + ": scan reference times must increase");
    }
  }
  return scans;
}

void write_odometry_csv(const fs::path& path, const std::vector<ScanPose>& poses) {
  std::ofstream out = open_out(path);
  out << "# t,qw,qx,qy,qz,x,y,z\n";
  for (const ScanPose& s : poses) {
    out << fmt(s.t) << ',' << fmt(s.q.w()) << ',' << fmt(s.q.x()) << ',' << fmt(s.q.y()) << ',' << fmt(s.q.z())
        << ',' << fmt(s.p.x()) << ',' << fmt(s.p.y()) << ',' << fmt(s.p.z()) << '\n';
  }
  if (!out) throw ValidationError("cannot write " + path.string());
}

std::vector<ScanPose> read_odometry_csv(const fs::path& path, double time_scale) {
  std::vector<ScanPose> poses;
  for_each_row(path, 8, [&](const std::vector<double>& v, int line) {
    ScanPose s;
    s.t = v[0] * time_scale;
    s.q = Quat(v[1], v[2], v[3], v[4]);
    if (std::abs(s.q.norm() - 1.0) > 1e-6) parse_error(path, line, "quaternion is not unit length");
    s.p = Vec3(v[5], v[6], v[7]);
    if (!poses.empty() && !(s.t > poses.back().t)) parse_error(path, line, "timestamps must increase");
    poses.push_back(s);
  });
  return poses;
}

void write_truth_json(const fs::path& path, const Truth& t) {
  write_json(path, {{"q_LI", to_json(t.ext.q_LI)},
                    {"p_LI", to_json(t.ext.p_LI)},
                    {"bias_gyro", to_json(t.bias_g)},
                    {"bias_accel", to_json(t.bias_a)}});
}

Truth read_truth_json(const fs::path& path) {
  const nlohmann::json j = read_json(path);
  try {
    Truth t;
    t.ext.q_LI = quat(j.at("q_LI")).normalized();
    t.ext.p_LI = vec3(j.at("p_LI"));
    if (j.contains("bias_gyro")) t.bias_g = vec3(j["bias_gyro"]);
    if (j.contains("bias_accel")) t.bias_a = vec3(j["bias_accel"]);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_trajectory_json(const fs::path& path, const Trajectory& traj) {
  nlohmann::json rot = nlohmann::json::array(), pos = nlohmann::json::array();
  for (const Quat& q : traj.rot().ctrl()) rot.push_back(to_json(q));
  for (const Vec3& p : traj.pos().ctrl()) pos.push_back(to_json(p));
  const KnotGrid& g = traj.grid();
  write_json(path, {{"t0", g.t0()},
                    {"dt", g.dt()},
                    {"n", g.n()},
                    {"gravity", to_json(traj.gravity())},
                    {"rotation", rot},
                    {"position", pos}});
}

Trajectory read_trajectory_json(const fs::path& path) {
  const nlohmann::json j = read_json(path);
  try {
    const KnotGrid grid(j.at("t0").get<double>(), j.at("dt").get<double>(), j.at("n").get<int>());
    std::vector<Quat> rot;
    std::vector<Vec3> pos;
    for (const auto& q : j.at("rotation")) rot.push_back(quat(q));
    for (const auto& p : j.at("position")) pos.push_back(vec3(p));
    return Trajectory(SplineSO3(grid, std::move(rot)), SplineR3(grid, std::move(pos)), vec3(j.at("gravity")));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

double DatasetManifest::time_scale() const {
  if (time_unit == "s") return 1.0;
  if (time_unit == "ms") return 1e-3;
  if (time_unit == "us") return 1e-6;
  if (time_unit == "ns") return 1e-9;
  throw ValidationError("manifest: unknown time_unit \"" + time_unit + "\" (use s, ms, us or ns)");
}

void DatasetManifest::validate() const {
  time_scale();
  auto require_file = [](const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw ValidationError(std::string("manifest: ") + what + " " + p.string() + " not found");
  };
  require_file(imu_file, "imu_file");
  if (!fs::is_directory(scan_directory)) {
    throw ValidationError("manifest: scan_directory " + scan_directory.string() + " not found");
  }
  if (odometry_file) require_file(*odometry_file, "odometry_file");
  if (truth_file) require_file(*truth_file, "truth_file");
  if (trajectory_file) require_file(*trajectory_file, "trajectory_file");
  if (sensors.imu_rate < 0.0 || sensors.lidar_rate < 0.0) throw ValidationError("manifest: rates must be non-negative");
  for (const auto& s : {sensors.sigma_gyro, sensors.sigma_accel, sensors.sigma_range}) {
    if (s && !(*s > 0.0)) throw ValidationError("manifest: sensor noise must be positive");
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  const nlohmann::json j = read_json(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  DatasetManifest m;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "imu_file") {
        m.imu_file = resolve(value.get<std::string>());
      } else if (key == "scan_directory") {
        m.scan_directory = resolve(value.get<std::string>());
      } else if (key == "time_unit") {
        m.time_unit = value.get<std::string>();
      } else if (key == "odometry_file") {
        m.odometry_file = resolve(value.get<std::string>());
      } else if (key == "truth_file") {
        m.truth_file = resolve(value.get<std::string>());
      } else if (key == "trajectory_file") {
        m.trajectory_file = resolve(value.get<std::string>());
      } else if (key == "sensors") {
        for (const auto& [k, v] : value.items()) {
          if (k == "imu_rate") m.sensors.imu_rate = v.get<double>();
          else if (k == "lidar_rate") m.sensors.lidar_rate = v.get<double>();
          else if (k == "sigma_gyro") m.sensors.sigma_gyro = v.get<double>();
          else if (k == "sigma_accel") m.sensors.sigma_accel = v.get<double>();
          else if (k == "sigma_range") m.sensors.sigma_range = v.get<double>();
          else throw ValidationError("unknown key sensors." + k);
        }
      } else {
        throw ValidationError("unknown key " + key);
      }
    }
    if (!j.contains("imu_file") || !j.contains("scan_directory")) {
      throw ValidationError("imu_file and scan_directory are required");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? p.string() : r.string();
  };
  nlohmann::json j = {{"imu_file", rel(m.imu_file)}, {"scan_directory", rel(m.scan_directory)},
                      {"time_unit", m.time_unit}};
  nlohmann::json sensors = {{"imu_rate", m.sensors.imu_rate}, {"lidar_rate", m.sensors.lidar_rate}};
  if (m.sensors.sigma_gyro) sensors["sigma_gyro"] = *m.sensors.sigma_gyro;
  if (m.sensors.sigma_accel) sensors["sigma_accel"] = *m.sensors.sigma_accel;
  if (m.sensors.sigma_range) sensors["sigma_range"] = *m.sensors.sigma_range;
  j["sensors"] = sensors;
  if (m.odometry_file) j["odometry_file"] = rel(*m.odometry_file);
  if (m.truth_file) j["truth_file"] = rel(*m.truth_file);
  if (m.trajectory_file) j["trajectory_file"] = rel(*m.trajectory_file);
  write_json(path, j);
}

LoadedDataset load_dataset(const DatasetManifest& m) {
  m.validate();
  const double scale = m.time_scale();
  LoadedDataset d;
  d.imu = read_imu_csv(m.imu_file, scale);
  d.scans = read_scan_directory(m.scan_directory, scale);
  if (m.odometry_file) d.odometry = read_odometry_csv(*m.odometry_file, scale);
  if (m.truth_file) d.truth = read_truth_json(*m.truth_file);
  return d;
}

void quantize_points(std::vector<Scan>& scans) {
  for (Scan& s : scans) {
    for (LidarPoint& lp : s.points) {
      for (int i = 0; i < 3; ++i) {
        // GCC 11 at -O3 vectorizes the plain cast pair away on two of the lanes.
        volatile float f = static_cast<float>(lp.p[i]);
        lp.p[i] = f;
      }
    }
  }
}

}  // namespace ctcalib::cli
