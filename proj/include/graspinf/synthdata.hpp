#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/grasp.hpp"
#include "graspinf/heuristic.hpp"
#include "graspinf/perception.hpp"

namespace graspinf {

enum class Primitive { Box, Cylinder, Sphere };

std::string to_string(Primitive p);
Primitive primitive_from_string(const std::string& name);

/// One primitive resting on the table plane z = 0 (world frame).
/// dimensions: box (x, y, z); cylinder (diameter, diameter, height); sphere
/// (diameter, diameter, diameter).
struct SceneSpec {
  std::uint64_t id = 0;
  Primitive primitive = Primitive::Box;
  Vec3 dimensions = Vec3::Constant(0.1);
  double x = 0.0, y = 0.0;  // position on the plane
  double yaw = 0.0;
  double camera_azimuth = 0.0;
  double camera_elevation = 0.8;
  std::uint64_t seed = 0;

  Vec3 center() const { return {x, y, 0.5 * dimensions.z()}; }
  Mat3 rotation() const;
  void validate() const;
};

/// Analytic surface queries in world coordinates.
struct PrimitiveShape {
  explicit PrimitiveShape(const SceneSpec& scene);

  /// Distance along the ray to the first surface hit (t > 0), if any.
  std::optional<double> ray_hit(const Vec3& origin, const Vec3& dir) const;
  bool contains(const Vec3& p) const;
  /// Closest surface point and its outward unit normal.
  std::pair<Vec3, Vec3> closest_surface(const Vec3& p) const;
  /// Width of the shape along unit direction u.
  double extent_along(const Vec3& u) const;
  /// max over the shape of u . x.
  double support(const Vec3& u) const;

  Primitive primitive;
  Vec3 center;
  Mat3 rotation;
  Vec3 half;  // box half extents; cylinder (r, r, h/2); sphere (r, r, r)
};

struct CameraSettings {
  double distance = 0.9;
  double half_field = 0.27;  // half width of the viewed square at the target, meters
  int pixels = 80;
  double table_half_size = 0.35;
};

/// Camera position: `distance` from the object center at the scene's azimuth
/// and elevation.
Vec3 camera_eye(const SceneSpec& scene, const CameraSettings& camera);
/// Horizontal direction from the object to the robot (co-located with the
/// camera), in the object frame.
Vec3 robot_direction(const SceneSpec& scene, const ObjectFrame& frame);

/// Single-viewpoint ray cast of the object plus a square table patch.
/// Throws NoVisibleSurface when fewer than 10 rays hit the object.
PointCloud render_partial_cloud(const SceneSpec& scene, const CameraSettings& camera, double noise_std,
                                std::mt19937_64& rng);

/// Versioned thresholds of the analytic success rule.
struct OracleConfig {
  std::string version = "1";
  double standoff_min = 0.02;
  double standoff_max = 0.10;
  double max_approach_angle = 40.0;  // degrees
  double span_below = 0.01;          // span may be this much narrower than the object
  double span_above = 0.06;          // ... or this much wider
  double table_clearance = 0.03;     // minimum palm height above the table
  double span_open = 0.25;           // span with all flexion joints at 0
  double span_flex_scale = 1.2;      // mean flexion that closes the hand fully
  double span_abduction = 0.03;      // extra span per radian of mean |abduction|
};

/// Width between thumb and fingers implied by the 8 joints.
double finger_span(const std::array<double, kJointCount>& joints, const OracleConfig& cfg = {});

struct OracleBreakdown {
  bool standoff = false, approach = false, span = false, type_geometry = false, table = false;
  double standoff_distance = -1.0;
  double approach_angle = 180.0;
  double span_value = 0.0, extent = 0.0;
  GraspType inferred_type = GraspType::Side;

  bool success() const { return standoff && approach && span && type_geometry && table; }
};

/// theta is expressed in `frame` (the perceived object frame).
OracleBreakdown oracle_evaluate(const SceneSpec& scene, const ObjectFrame& frame, const GraspConfig& theta,
                                const OracleConfig& cfg = {});
int oracle_label(const SceneSpec& scene, const ObjectFrame& frame, const GraspConfig& theta,
                 const OracleConfig& cfg = {});

/// Palm below the table or inside the object: the stand-in for an arm that
/// cannot reach the preshape.
bool grasp_reachable(const SceneSpec& scene, const ObjectFrame& frame, const GraspConfig& theta,
                     const OracleConfig& cfg = {});

struct GraspRecord {
  SceneSpec scene;
  ObjectRep rep;
  GraspConfig theta;
  GraspType type = GraspType::Side;
  int label = 0;
};

struct SceneSampling {
  double dim_min = 0.05, dim_max = 0.20;
  double position_range = 0.1;
  double elevation_min = 1.1, elevation_max = 1.5;  // radians above the table
  // camera (and robot) bearing from the object; the robot stands on the -x side
  double azimuth_min = 2.74, azimuth_max = 3.54;
};

struct DatasetConfig {
  std::size_t n_scenes = 500;
  std::size_t grasps_per_scene = 20;
  double test_fraction = 0.2;
  double noise_std = 0.001;
  std::size_t resolution = 32;
  SceneSampling sampling;
  CameraSettings camera;
  RansacSettings ransac;
  HeuristicSettings heuristic;
  OracleConfig oracle;
  HandModel hand;
};

SceneSpec sample_scene(std::uint64_t id, std::uint64_t seed, const SceneSampling& sampling);
/// Seeded per-purpose generator: independent streams for each (seed, id, salt).
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t id, std::uint64_t salt);

/// Render and perceive one scene. Re-draws the scene (up to 10 times) if the
/// view is unusable; the id is kept.
std::pair<SceneSpec, ObjectRep> observe_scene(std::uint64_t id, std::uint64_t seed, const DatasetConfig& cfg,
                                              const std::optional<SceneSpec>& fixed = std::nullopt);

struct DatasetSummary {
  std::size_t records = 0, successes = 0;
  std::size_t side = 0, side_successes = 0, overhead = 0, overhead_successes = 0;
  std::size_t scenes = 0;

  void add(const GraspRecord& r);
  double success_rate() const { return records ? static_cast<double>(successes) / static_cast<double>(records) : 0; }
  nlohmann::json to_json() const;
};

struct Dataset {
  std::vector<GraspRecord> train, test;
};

/// Generates both splits in memory. Scenes are split before grasping, so no
/// scene id appears in both.
Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed, int threads = 1);

/// Writes train.jsonl, test.jsonl and manifest.json into dir.
void write_dataset(const Dataset& data, const DatasetConfig& cfg, std::uint64_t seed, const std::string& dir,
                   const nlohmann::json& extra_manifest = nlohmann::json::object());
std::vector<GraspRecord> read_records(const std::string& path);

nlohmann::json to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GraspRecord& r);
GraspRecord grasp_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OracleConfig& c);
OracleConfig oracle_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

}  // namespace graspinf
