#include "ctcalib/surfel_map.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "ctcalib/errors.hpp"

namespace ctcalib {

std::size_t CellIndexHash::operator()(const CellIndex& c) const noexcept {
  std::size_t h = static_cast<std::size_t>(static_cast<std::uint32_t>(c[0])) * 73856093u;
  h ^= static_cast<std::size_t>(static_cast<std::uint32_t>(c[1])) * 19349663u;
  h ^= static_cast<std::size_t>(static_cast<std::uint32_t>(c[2])) * 83492791u;
  return h;
}

CellIndex cell_index(const Vec3& p, double cell_size) {
  return {static_cast<int>(std::floor(p.x() / cell_size)),
          static_cast<int>(std::floor(p.y() / cell_size)),
          static_cast<int>(std::floor(p.z() / cell_size))};
}

void VoxelCell::add(const MapPoint& mp) {
  sum_ += mp.p;
  sum_outer_.noalias() += mp.p * mp.p.transpose();
  points_.push_back(mp);
}

Vec3 VoxelCell::mean() const {
  if (points_.empty()) return Vec3::Zero();
  return sum_ / static_cast<double>(points_.size());
}

Mat3 VoxelCell::second_moment() const {
  if (points_.empty()) return Mat3::Zero();
  return sum_outer_ / static_cast<double>(points_.size());
}

Mat3 VoxelCell::covariance() const {
  const Vec3 mu = mean();
  Mat3 c = second_moment() - mu * mu.transpose();
  return 0.5 * (c + c.transpose());
}

namespace {

double likeness_from_eigenvalues(Vec3 lambda) {
  lambda = lambda.cwiseMax(0.0);
  const double sum = lambda.sum();
  if (!(sum > 0.0)) return 0.0;
  return std::clamp(2.0 * (lambda[1] - lambda[0]) / sum, 0.0, 1.0);
}

// Centroid and smallest-eigenvalue direction of the given points.
std::pair<Vec3, Vec3> total_least_squares(const std::vector<MapPoint>& pts,
                                          const std::vector<int>& subset) {
  Vec3 c = Vec3::Zero();
  for (int k : subset) c += pts[k].p;
  c /= static_cast<double>(subset.size());
  Mat3 cov = Mat3::Zero();
  for (int k : subset) {
    const Vec3 x = pts[k].p - c;
    cov.noalias() += x * x.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  return {c, es.eigenvectors().col(0)};
}

}  // namespace

std::optional<double> plane_likeness(const VoxelCell& cell) {
  if (cell.count() < kMinCellPopulation) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Mat3> es(cell.covariance(), Eigen::EigenvaluesOnly);
  return likeness_from_eigenvalues(es.eigenvalues());
}

std::optional<Surfel> fit_plane_ransac(const VoxelCell& cell, double inlier_tol, int iters,
                                       std::uint64_t seed) {
  const auto& pts = cell.points();
  const int n = cell.count();
  if (n < 3) return std::nullopt;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);

  int best_inliers = -1;
  Vec3 best_n = Vec3::Zero();
  double best_d = 0.0;
  int hypotheses = 0;
  for (int draw = 0; hypotheses < iters && draw < 20 * iters; ++draw) {
    const int a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Vec3 u = pts[b].p - pts[a].p;
    const Vec3 v = pts[c].p - pts[a].p;
    const Vec3 cr = u.cross(v);
    const double scale = std::max(u.squaredNorm(), v.squaredNorm());
    if (!(cr.norm() > 1e-12 * scale) || scale == 0.0) continue;
    ++hypotheses;
    const Vec3 nrm = cr.normalized();
    const double d = -nrm.dot(pts[a].p);
    int inliers = 0;
    for (const MapPoint& mp : pts) inliers += std::abs(nrm.dot(mp.p) + d) <= inlier_tol;
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_n = nrm;
      best_d = d;
    }
  }
  if (best_inliers < 0 || 2 * best_inliers < n) return std::nullopt;

  std::vector<int> subset;
  subset.reserve(best_inliers);
  for (int k = 0; k < n; ++k) {
    if (std::abs(best_n.dot(pts[k].p) + best_d) <= inlier_tol) subset.push_back(k);
  }
  auto [centroid, normal] = total_least_squares(pts, subset);
  double d = -normal.dot(centroid);
  if (d < 0.0) {
    normal = -normal;
    d = -d;
  }
  Surfel s;
  s.n = normal.normalized();
  s.d = d;
  s.cell = cell.index();
  s.count = n;
  s.planarity = plane_likeness(cell).value_or(0.0);
  return s;
}

SurfelMap::SurfelMap(double cell_size) : cell_size_(cell_size) {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw ValidationError("cell size must be positive");
}

void SurfelMap::insert(const MapPoint& mp) {
  if (!mp.p.allFinite()) {
    ++skipped_;
    return;
  }
  const CellIndex idx = cell_index(mp.p, cell_size_);
  auto [it, fresh] = cells_.try_emplace(idx, idx);
  it->second.add(mp);
  ++points_;
}

const VoxelCell* SurfelMap::cell_at(const Vec3& p) const {
  const auto it = cells_.find(cell_index(p, cell_size_));
  return it == cells_.end() ? nullptr : &it->second;
}

int SurfelMap::extract_surfels(const SurfelOptions& options) {
  surfels_.clear();
  surfel_of_cell_.clear();
  std::vector<const VoxelCell*> ordered;
  ordered.reserve(cells_.size());
  for (const auto& [idx, cell] : cells_) ordered.push_back(&cell);
  std::sort(ordered.begin(), ordered.end(),
            [](const VoxelCell* a, const VoxelCell* b) { return a->index() < b->index(); });

  for (const VoxelCell* cell : ordered) {
    const std::optional<double> p = plane_likeness(*cell);
    if (!p || *p < options.planarity_threshold) continue;
    const CellIndex& c = cell->index();
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(c[0]), static_cast<std::uint32_t>(c[1]),
                      static_cast<std::uint32_t>(c[2])};
    std::uint64_t cell_seed = 0;
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    cell_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    std::optional<Surfel> s =
        fit_plane_ransac(*cell, options.ransac_tolerance, options.ransac_iterations, cell_seed);
    if (!s) continue;
    surfel_of_cell_.emplace(c, static_cast<int>(surfels_.size()));
    surfels_.push_back(*s);
  }
  return static_cast<int>(surfels_.size());
}

const Surfel* SurfelMap::surfel_at(const Vec3& p, int* id) const {
  const auto it = surfel_of_cell_.find(cell_index(p, cell_size_));
  if (it == surfel_of_cell_.end()) return nullptr;
  if (id) *id = it->second;
  return &surfels_[it->second];
}

const Surfel* SurfelMap::nearest_surfel(const Vec3& p) const {
  const CellIndex c = cell_index(p, cell_size_);
  const Surfel* best = nullptr;
  double best_dist = 0.0;
  for (int dx = -1; dx <= 1; ++dx) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dz = -1; dz <= 1; ++dz) {
        const auto it = surfel_of_cell_.find({c[0] + dx, c[1] + dy, c[2] + dz});
        if (it == surfel_of_cell_.end()) continue;
        const Surfel& s = surfels_[it->second];
        const double dist = std::abs(s.distance(p));
        if (!best || dist < best_dist) {
          best = &s;
          best_dist = dist;
        }
      }
    }
  }
  return best;
}

void SurfelMap::write_jsonl(std::ostream& os) const {
  for (const Surfel& s : surfels_) {
    nlohmann::json j;
    j["cell"] = s.cell;
    j["n"] = {s.n.x(), s.n.y(), s.n.z()};
    j["d"] = s.d;
    j["planarity"] = s.planarity;
    j["count"] = s.count;
    os << j.dump() << '\n';
  }
}

SurfelMap build_map(std::span<const Scan> scans, std::span<const Pose> scan_poses, double cell_size) {
  if (scans.size() != scan_poses.size()) throw ValidationError("one pose per scan is required");
  SurfelMap map(cell_size);
  for (std::size_t k = 0; k < scans.size(); ++k) {
    const auto& pts = scans[k].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      map.insert({static_cast<int>(k), static_cast<int>(i), scan_poses[k] * pts[i].p});
    }
  }
  return map;
}

namespace {

SurfelMap build_map(std::span<const Scan> scans, const Trajectory& traj, const Extrinsics& ext,
                    const Pose& to_map, double cell_size) {
  SurfelMap map(cell_size);
  const Pose il = ext.as_pose();
  for (std::size_t k = 0; k < scans.size(); ++k) {
    const auto& pts = scans[k].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 p = to_map * (traj.pose(pts[i].t) * (il * pts[i].p));
      map.insert({static_cast<int>(k), static_cast<int>(i), p});
    }
  }
  return map;
}

}  // namespace

SurfelMap build_map(std::span<const Scan> scans, const Trajectory& traj, const Extrinsics& ext,
                    double t_map, double cell_size) {
  return build_map(scans, traj, ext, lidar_pose(traj, ext, t_map).inverse(), cell_size);
}

SurfelMap build_map(std::span<const Scan> scans, const Trajectory& traj, const Extrinsics& ext, double cell_size) {
  return build_map(scans, traj, ext, Pose{}, cell_size);
}

std::vector<Correspondence> associate(std::span<const MapFramePoint> points, const SurfelMap& map,
                                      double reject_dist) {
  std::vector<Correspondence> out;
  for (const MapFramePoint& mp : points) {
    int id = -1;
    const Surfel* s = map.surfel_at(mp.map, &id);
    if (!s || !(std::abs(s->distance(mp.map)) <= reject_dist)) continue;
    out.push_back({mp.raw, mp.map, id, s->n, s->d});
  }
  return out;
}

Scan downsample(const Scan& scan, double keep_ratio, std::uint64_t seed) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ValidationError("keep ratio must lie in (0, 1]");
  Scan out;
  out.t_ref = scan.t_ref;
  if (keep_ratio == 1.0) {
    out.points = scan.points;
    return out;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  out.points.reserve(static_cast<std::size_t>(keep_ratio * scan.points.size() * 1.1) + 8);
  for (const LidarPoint& p : scan.points) {
    if (u(rng) < keep_ratio) out.points.push_back(p);
  }
  return out;
}

}  // namespace ctcalib
