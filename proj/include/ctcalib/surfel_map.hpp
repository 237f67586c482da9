#pragma once

// Voxelized map of LiDAR points, per-cell plane fitting, and point-to-surfel
// association. Planes are stored as (n, d) with n^T p + d = 0 and d >= 0.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ctcalib/so3.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

struct LidarPoint {
  double t = 0.0;  // capture time, seconds
  Vec3 p = Vec3::Zero();  // LiDAR frame at time t
};

/// One revolution. t_ref is the scan start time.
struct Scan {
  double t_ref = 0.0;
  std::vector<LidarPoint> points;
};

using CellIndex = std::array<int, 3>;

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const noexcept;
};

CellIndex cell_index(const Vec3& p, double cell_size);

inline constexpr int kMinCellPopulation = 10;

struct MapPoint {
  int scan = 0;
  int index = 0;
  Vec3 p = Vec3::Zero();  // map frame
};

class VoxelCell {
 public:
  VoxelCell() = default;
  explicit VoxelCell(const CellIndex& index) : index_(index) {}

  void add(const MapPoint& mp);

  const CellIndex& index() const { return index_; }
  int count() const { return static_cast<int>(points_.size()); }
  Vec3 mean() const;
  /// E[x x^T], raw (not centered).
  Mat3 second_moment() const;
  Mat3 covariance() const;
  const std::vector<MapPoint>& points() const { return points_; }

 private:
  CellIndex index_{0, 0, 0};
  Vec3 sum_ = Vec3::Zero();
  Mat3 sum_outer_ = Mat3::Zero();
  std::vector<MapPoint> points_;
};

struct Surfel {
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;
  double planarity = 0.0;
  CellIndex cell{0, 0, 0};
  int count = 0;

  double distance(const Vec3& p) const { return n.dot(p) + d; }
};

struct Correspondence {
  LidarPoint point;  // raw, LiDAR frame at point.t
  Vec3 map_point = Vec3::Zero();
  int surfel = -1;
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;
};

struct SurfelOptions {
  double planarity_threshold = 0.6;
  double ransac_tolerance = 0.02;
  int ransac_iterations = 50;
  std::uint64_t seed = 0;
};

/// 2 (l1 - l0) / (l0 + l1 + l2) over the covariance eigenvalues; nullopt
/// below kMinCellPopulation.
std::optional<double> plane_likeness(const VoxelCell& cell);

/// Best three-point plane by inlier count, refined by total least squares
/// over its inliers. nullopt when fewer than half the points are inliers or
/// no non-degenerate triple exists.
std::optional<Surfel> fit_plane_ransac(const VoxelCell& cell, double inlier_tol, int iters,
                                       std::uint64_t seed);

class SurfelMap {
 public:
  explicit SurfelMap(double cell_size);

  double cell_size() const { return cell_size_; }
  /// Non-finite points are counted and dropped.
  void insert(const MapPoint& mp);
  std::size_t skipped() const { return skipped_; }
  std::size_t point_count() const { return points_; }

  const std::unordered_map<CellIndex, VoxelCell, CellIndexHash>& cells() const { return cells_; }
  const VoxelCell* cell_at(const Vec3& p) const;

  /// Fits planes in every sufficiently planar cell; returns the surfel count.
  int extract_surfels(const SurfelOptions& options);
  const std::vector<Surfel>& surfels() const { return surfels_; }
  const Surfel* surfel_at(const Vec3& p, int* id = nullptr) const;
  /// Surfel with the smallest |distance| among p's cell and its 26 neighbours.
  const Surfel* nearest_surfel(const Vec3& p) const;

  /// One JSON object per line: cell, n, d, planarity, count.
  void write_jsonl(std::ostream& os) const;

 private:
  double cell_size_;
  std::size_t skipped_ = 0;
  std::size_t points_ = 0;
  std::unordered_map<CellIndex, VoxelCell, CellIndexHash> cells_;
  std::vector<Surfel> surfels_;
  std::unordered_map<CellIndex, int, CellIndexHash> surfel_of_cell_;
};

/// Each scan's points transformed by its pose (L_k -> map).
SurfelMap build_map(std::span<const Scan> scans, std::span<const Pose> scan_poses, double cell_size);

/// Points transformed individually through the continuous trajectory into the
/// LiDAR frame at t_map.
SurfelMap build_map(std::span<const Scan> scans, const Trajectory& traj, const Extrinsics& ext,
                    double t_map, double cell_size);

/// Same, into the trajectory's reference frame.
SurfelMap build_map(std::span<const Scan> scans, const Trajectory& traj, const Extrinsics& ext, double cell_size);

struct MapFramePoint {
  LidarPoint raw;
  Vec3 map = Vec3::Zero();
};

std::vector<Correspondence> associate(std::span<const MapFramePoint> points, const SurfelMap& map,
                                      double reject_dist);

/// Bernoulli subsample keeping each point with probability keep_ratio.
Scan downsample(const Scan& scan, double keep_ratio, std::uint64_t seed);

}  // namespace ctcalib
