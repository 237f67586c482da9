#include "ctcalib/odometry.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ctcalib/errors.hpp"

namespace ctcalib {

std::vector<ScanPose> oracle_odometry(const Trajectory& truth, const Extrinsics& ext,
                                      std::span<const double> scan_times, double sigma_rot,
                                      double sigma_trans, std::uint64_t seed) {
  if (!(sigma_rot >= 0.0) || !(sigma_trans >= 0.0)) throw ValidationError("odometry noise must be non-negative");
  std::vector<ScanPose> out;
  if (scan_times.empty()) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Pose ref_inv = lidar_pose(truth, ext, scan_times[0]).inverse();
  for (std::size_t k = 0; k < scan_times.size(); ++k) {
    Pose p = ref_inv * lidar_pose(truth, ext, scan_times[k]);
    const Vec3 dr(gauss(rng), gauss(rng), gauss(rng));
    const Vec3 dp(gauss(rng), gauss(rng), gauss(rng));
    if (k > 0) {
      p.q = (p.q * so3_exp(sigma_rot * dr)).normalized();
      p.p += sigma_trans * dp;
    }
    out.push_back({scan_times[k], p.q, p.p});
  }
  return out;
}

Pose relative_pose(const ScanPose& a, const ScanPose& b) {
  const Quat qa_inv = a.q.conjugate();
  return {(qa_inv * b.q).normalized(), qa_inv * (b.p - a.p)};
}

namespace {

struct IcpPair {
  Vec3 x;
  Vec3 n;
  double d;
};

std::vector<IcpPair> icp_associate(const Scan& scan, const SurfelMap& map, const Pose& pose,
                                   double reject) {
  std::vector<IcpPair> out;
  for (const LidarPoint& lp : scan.points) {
    const Vec3 y = pose * lp.p;
    const Surfel* s = map.nearest_surfel(y);
    if (s && std::abs(s->distance(y)) <= reject) out.push_back({lp.p, s->n, s->d});
  }
  return out;
}

double icp_cost(const std::vector<IcpPair>& pairs, const Pose& pose) {
  double c = 0.0;
  for (const IcpPair& pr : pairs) {
    const double r = pr.n.dot(pose * pr.x) + pr.d;
    c += r * r;
  }
  return c;
}

Pose retract(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  return {(pose.q * so3_exp(delta.head<3>())).normalized(), pose.p + delta.tail<3>()};
}

}  // namespace

IcpResult icp_point_to_plane(const Scan& scan, const SurfelMap& map, const ScanPose& initial,
                             const IcpOptions& options) {
  IcpResult res;
  res.pose = initial;
  Pose pose = as_pose(initial);
  std::vector<IcpPair> pairs;
  for (int it = 0; it < options.max_iterations; ++it) {
    pairs = icp_associate(scan, map, pose, options.reject_dist);
    if (static_cast<int>(pairs.size()) < options.min_correspondences) {
      throw RegistrationError("scan at t=" + std::to_string(initial.t) + " has " +
                              std::to_string(pairs.size()) + " surfel correspondences; at least " +
                              std::to_string(options.min_correspondences) + " are needed");
    }
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    const Mat3 rot = pose.q.toRotationMatrix();
    double cost = 0.0;
    for (const IcpPair& pr : pairs) {
      const double r = pr.n.dot(rot * pr.x + pose.p) + pr.d;
      Eigen::Matrix<double, 1, 6> j;
      j.head<3>() = -pr.n.transpose() * rot * hat(pr.x);
      j.tail<3>() = pr.n.transpose();
      h.noalias() += j.transpose() * j;
      g.noalias() += j.transpose() * r;
      cost += r * r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(h);
    const auto ev = es.eigenvalues();
    if (!(ev[0] > options.degeneracy_ratio * ev[5])) {
      const auto v = es.eigenvectors().col(0);
      std::ostringstream os;
      os.precision(3);
      os << "registration is degenerate along rotation (" << v[0] << ", " << v[1] << ", " << v[2]
         << ") translation (" << v[3] << ", " << v[4] << ", " << v[5] << ")";
      throw RegistrationError(os.str());
    }
    const Eigen::Matrix<double, 6, 1> delta = -h.ldlt().solve(g);
    double alpha = 1.0;
    Pose trial = retract(pose, delta);
    double trial_cost = icp_cost(pairs, trial);
    while (trial_cost > cost && alpha > 1e-4) {
      alpha *= 0.5;
      trial = retract(pose, alpha * delta);
      trial_cost = icp_cost(pairs, trial);
    }
    res.iterations = it + 1;
    if (trial_cost > cost) {
      res.converged = true;
      break;
    }
    pose = trial;
    res.costs.push_back(trial_cost);
    if ((alpha * delta).norm() < options.converge_step) {
      res.converged = true;
      break;
    }
  }
  pairs = icp_associate(scan, map, pose, options.reject_dist);
  res.correspondences = static_cast<int>(pairs.size());
  double sum = 0.0;
  for (const IcpPair& pr : pairs) sum += std::abs(pr.n.dot(pose * pr.x) + pr.d);
  res.mean_residual = pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size());
  res.pose = {initial.t, pose.q, pose.p};
  return res;
}

std::vector<ScanPose> icp_odometry(std::span<const Scan> scans,
                                   const std::function<Quat(int)>& rotation_prior,
                                   const IcpOdometryOptions& options, int* low_confidence) {
  std::vector<ScanPose> poses;
  int failed = 0;
  if (scans.empty()) return poses;
  SurfelMap map(options.cell_size);
  auto insert_scan = [&](int k, const Pose& pose) {
    const auto& pts = scans[k].points;
    for (std::size_t i = 0; i < pts.size(); ++i) map.insert({k, static_cast<int>(i), pose * pts[i].p});
  };
  poses.push_back({scans[0].t_ref, Quat::Identity(), Vec3::Zero()});
  insert_scan(0, Pose{});
  map.extract_surfels(options.surfels);
  for (int k = 1; k < static_cast<int>(scans.size()); ++k) {
    ScanPose guess = poses.back();
    guess.t = scans[k].t_ref;
    if (k >= 2) {
      guess.p = poses[k - 1].p + (poses[k - 1].p - poses[k - 2].p);
      guess.q = (poses[k - 1].q * (poses[k - 2].q.conjugate() * poses[k - 1].q)).normalized();
    }
    if (rotation_prior) guess.q = rotation_prior(k);
    try {
      const IcpResult r = icp_point_to_plane(scans[k], map, guess, options.icp);
      poses.push_back(r.pose);
      insert_scan(k, as_pose(r.pose));
    } catch (const RegistrationError& e) {
      // Keep the prediction and leave the scan out of the map.
      poses.push_back(guess);
      if (++failed > static_cast<int>(scans.size()) / 2) {
        throw RegistrationError(std::string("most scans failed to register; last: ") + e.what());
      }
    }
    if (k % std::max(options.rebuild_every, 1) == 0) map.extract_surfels(options.surfels);
  }
  if (low_confidence) *low_confidence = failed;
  return poses;
}

void write_pose_csv(std::ostream& os, std::span<const ScanPose> poses) {
  os << "t,qw,qx,qy,qz,px,py,pz\n";
  char buf[512];
  for (const ScanPose& p : poses) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.t, p.q.w(),
                  p.q.x(), p.q.y(), p.q.z(), p.p.x(), p.p.y(), p.p.z());
    os << buf;
  }
}

std::vector<ScanPose> read_pose_csv(std::istream& is, const std::string& name) {
  std::vector<ScanPose> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("t,", 0) == 0) continue;
    double v[8];
    std::istringstream ls(line);
    std::string field;
    int n = 0;
    while (n < 8 && std::getline(ls, field, ',')) {
      try {
        std::size_t used = 0;
        v[n] = std::stod(field, &used);
        if (used != field.size() && field.find_first_not_of(" \t\r", used) != std::string::npos) throw 0;
      } catch (...) {
        throw ValidationError(name + ":" + std::to_string(line_no) + ": malformed number '" + field + "'");
      }
      ++n;
    }
    if (n != 8) throw ValidationError(name + ":" + std::to_string(line_no) + ": expected 8 fields");
    const Quat q(v[1], v[2], v[3], v[4]);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw ValidationError(name + ":" + std::to_string(line_no) + ": quaternion is not unit-norm");
    }
    out.push_back({v[0], q, Vec3(v[5], v[6], v[7])});
  }
  return out;
}

}  // namespace ctcalib
