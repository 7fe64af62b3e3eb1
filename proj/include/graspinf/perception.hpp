#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "graspinf/grasp.hpp"

namespace graspinf {

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct RansacSettings {
  double distance_threshold = 0.005;
  int max_iterations = 500;
  double inlier_fraction = 0.3;
  std::size_t min_points = 10;
  std::uint64_t seed = 0;
};

/// Plane n.p + d = 0 with unit normal.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  double signed_distance(const Vec3& p) const { return normal.dot(p) + offset; }
};

/// Right-handed frame: origin at the segment centroid, axes columns are the
/// first and second principal directions and their cross product.
struct ObjectFrame {
  Vec3 origin = Vec3::Zero();
  Mat3 axes = Mat3::Identity();

  Vec3 to_object(const Vec3& world) const { return axes.transpose() * (world - origin); }
  Vec3 to_world(const Vec3& local) const { return origin + axes * local; }
  Vec3 direction_to_world(const Vec3& local) const { return axes * local; }
};

/// Object-centric observation: occupancy grid aligned with the object frame,
/// per-axis extents, and the frame itself.
struct ObjectRep {
  std::size_t resolution = 32;
  std::vector<std::uint8_t> grid;  // resolution^3, index (i * R + j) * R + k
  Vec3 size = Vec3::Ones();
  ObjectFrame frame;

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * resolution + j) * resolution + k; }
  bool occupied(std::size_t i, std::size_t j, std::size_t k) const { return grid[index(i, j, k)] != 0; }
  std::size_t occupied_count() const;
  /// Grid as a {1, R, R, R} tensor payload (0/1 doubles).
  std::vector<double> grid_values() const;
};

/// Smallest extent reported in ObjectRep::size (meters).
inline constexpr double kMinExtent = 1e-3;

/// RANSAC table-plane fit followed by a least-squares refinement on the
/// inliers. Throws NoPlaneFound.
Plane fit_table_plane(const PointCloud& cloud, const RansacSettings& settings);

/// Points above the table plane. Throws InvalidInput, NoPlaneFound or
/// EmptySegment.
PointCloud segment_object(const PointCloud& cloud, const RansacSettings& settings);

/// Throws InvalidInput (< 4 points) or DegenerateGeometry (rank < 2).
ObjectFrame estimate_frame(const PointCloud& segment);

/// Cubic voxels of edge max(size)/resolution, grid centred on the frame
/// origin. Points on the grid's upper face fold into the last cell; anything
/// else outside the grid is dropped.
ObjectRep voxelize(const PointCloud& segment, const ObjectFrame& frame, std::size_t resolution = 32);

/// Full pipeline: segment, frame, voxelize.
ObjectRep perceive(const PointCloud& cloud, const RansacSettings& settings, std::size_t resolution);

// File formats: ASCII PLY (vertex x/y/z) or "x y z" per line.
PointCloud read_point_cloud(const std::string& path);
void write_point_cloud_xyz(const PointCloud& cloud, const std::string& path);
void write_point_cloud_ply(const PointCloud& cloud, const std::string& path);

/// Self-describing JSON with the grid run-length encoded (alternating runs,
/// starting with empty cells).
nlohmann::json to_json(const ObjectRep& rep);
ObjectRep object_rep_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ObjectFrame& frame);
ObjectFrame object_frame_from_json(const nlohmann::json& j);

std::vector<std::uint32_t> run_length_encode(const std::vector<std::uint8_t>& cells);
std::vector<std::uint8_t> run_length_decode(const std::vector<std::uint32_t>& runs, std::size_t total);

}  // namespace graspinf
