#pragma once

#include <array>
#include <optional>
#include <random>

#include <json.hpp>

#include "graspinf/grasp.hpp"
#include "graspinf/perception.hpp"

namespace graspinf {

/// Axis-aligned box in the object frame.
struct BoundingBox3 {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Constant(0.05);

  void validate() const;
};

/// Box spanned by the occupied voxels, in object-frame meters.
BoundingBox3 bounding_box(const ObjectRep& rep);

struct HeuristicSettings {
  double standoff = 0.08;
  double jitter = 0.015;
  double joint_low = 0.0;
  double joint_high = 0.6;
};

/// Overhead: palm parallel to the top face, `standoff` above it, thumb along
/// the mean of the top face's major and minor axes. Side: palm facing a
/// random lateral face, thumb toward object +z. Joints uniform in
/// [joint_low, joint_high]; result clamped into `bounds`.
/// `toward`: object-frame direction to the robot. When given, side grasps use
/// only the lateral faces turned toward it.
GraspConfig heuristic_grasp(const BoundingBox3& box, GraspType type, std::mt19937_64& rng,
                            const HeuristicSettings& settings = {}, const BoundBox& bounds = HandModel{}.bound_box(),
                            const std::optional<Vec3>& toward = std::nullopt);

nlohmann::json to_json(const HeuristicSettings& s);
HeuristicSettings heuristic_settings_from_json(const nlohmann::json& j);

}  // namespace graspinf
