#pragma once

#include <array>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

namespace graspinf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr std::size_t kConfigDim = 14;
inline constexpr std::size_t kJointCount = 8;
using ConfigVector = Eigen::Matrix<double, 14, 1>;

enum class GraspType { Side, Overhead };

std::string to_string(GraspType type);
GraspType grasp_type_from_string(const std::string& name);

/// Hand preshape in the object frame: palm position (m), palm orientation
/// (rad) and the two proximal joints of each finger, ordered
/// index, middle, ring, thumb.
///
/// Orientation is R = Rz(yaw) * Rx(pitch) * Ry(roll). Overhead grasps sit at
/// roll = pitch = 0 and side grasps at roll = -pi/2, pitch = 0; the gimbal
/// singularity is at pitch = +-pi/2.
struct GraspConfig {
  Vec3 palm_position = Vec3::Zero();
  Vec3 palm_rpy = Vec3::Zero();  // roll, pitch, yaw
  std::array<double, kJointCount> joints{};

  ConfigVector to_vector() const;
  static GraspConfig from_vector(const ConfigVector& v);
};

Mat3 palm_rotation(const Vec3& rpy);
/// Direction the palm moves to close on the object: palm -z.
Vec3 approach_axis(const Vec3& rpy);
/// Palm +x.
Vec3 thumb_axis(const Vec3& rpy);
/// roll/pitch/yaw reproducing a rotation whose columns are (thumb, *, -approach).
Vec3 rpy_from_axes(const Vec3& thumb, const Vec3& approach);

/// Box constraint on the 14-D configuration.
struct BoundBox {
  ConfigVector lower;
  ConfigVector upper;

  bool contains(const ConfigVector& v) const;
  ConfigVector clamp(const ConfigVector& v) const;
  void validate() const;
};

/// Joint limits and sampling ranges for a four-finger hand.
struct HandModel {
  std::array<double, kJointCount> joint_lower{-0.6, -0.2, -0.6, -0.2, -0.6, -0.2, 0.0, -0.2};
  std::array<double, kJointCount> joint_upper{0.6, 1.6, 0.6, 1.6, 0.6, 1.6, 1.4, 1.2};
  double position_limit = 0.4;
  double pitch_margin = 0.1;

  BoundBox bound_box() const;
};

nlohmann::json to_json(const GraspConfig& g);
GraspConfig grasp_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BoundBox& b);
BoundBox bound_box_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HandModel& h);
HandModel hand_model_from_json(const nlohmann::json& j);

}  // namespace graspinf
