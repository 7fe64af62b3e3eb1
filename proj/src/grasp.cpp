#include "graspinf/grasp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "graspinf/error.hpp"

namespace graspinf {

std::string to_string(GraspType type) { return type == GraspType::Side ? "side" : "overhead"; }

GraspType grasp_type_from_string(const std::string& name) {
  if (name == "side") return GraspType::Side;
  if (name == "overhead") return GraspType::Overhead;
  throw Error(Errc::ConfigError, "grasp type must be 'side' or 'overhead', got '" + name + "'");
}

ConfigVector GraspConfig::to_vector() const {
  ConfigVector v;
  v.segment<3>(0) = palm_position;
  v.segment<3>(3) = palm_rpy;
  for (std::size_t j = 0; j < kJointCount; ++j) v[6 + static_cast<Eigen::Index>(j)] = joints[j];
  return v;
}

GraspConfig GraspConfig::from_vector(const ConfigVector& v) {
  GraspConfig g;
  g.palm_position = v.segment<3>(0);
  g.palm_rpy = v.segment<3>(3);
  for (std::size_t j = 0; j < kJointCount; ++j) g.joints[j] = v[6 + static_cast<Eigen::Index>(j)];
  return g;
}

Mat3 palm_rotation(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy[2], Vec3::UnitZ()) * Eigen::AngleAxisd(rpy[1], Vec3::UnitX()) *
          Eigen::AngleAxisd(rpy[0], Vec3::UnitY()))
      .toRotationMatrix();
}

Vec3 approach_axis(const Vec3& rpy) { return -palm_rotation(rpy).col(2); }

Vec3 thumb_axis(const Vec3& rpy) { return palm_rotation(rpy).col(0); }

Vec3 rpy_from_axes(const Vec3& thumb, const Vec3& approach) {
  const Vec3 z = -approach.normalized();
  const Vec3 x = (thumb - thumb.dot(z) * z).normalized();
  Mat3 r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  // R = Rz(c) Rx(b) Ry(a):  R(2,1) = sin b,  R(0,1) = -cos b sin c,  R(1,1) = cos b cos c,
  // R(2,0) = -cos b sin a,  R(2,2) = cos b cos a.
  const double pitch = std::asin(std::clamp(r(2, 1), -1.0, 1.0));
  const double yaw = std::atan2(-r(0, 1), r(1, 1));
  const double roll = std::atan2(-r(2, 0), r(2, 2));
  return {roll, pitch, yaw};
}

bool BoundBox::contains(const ConfigVector& v) const {
  return (v.array() >= lower.array()).all() && (v.array() <= upper.array()).all();
}

ConfigVector BoundBox::clamp(const ConfigVector& v) const { return v.cwiseMax(lower).cwiseMin(upper); }

void BoundBox::validate() const {
  if (!(lower.array() < upper.array()).all()) throw Error(Errc::ConfigError, "bound box needs lower < upper");
}

BoundBox HandModel::bound_box() const {
  BoundBox b;
  const double pi = std::numbers::pi;
  b.lower.segment<3>(0).setConstant(-position_limit);
  b.upper.segment<3>(0).setConstant(position_limit);
  b.lower.segment<3>(3) << -pi, -pi / 2 + pitch_margin, -pi;
  b.upper.segment<3>(3) << pi, pi / 2 - pitch_margin, pi;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    b.lower[6 + static_cast<Eigen::Index>(j)] = joint_lower[j];
    b.upper[6 + static_cast<Eigen::Index>(j)] = joint_upper[j];
  }
  b.validate();
  return b;
}

namespace {

std::vector<double> as_std(const ConfigVector& v) { return {v.data(), v.data() + v.size()}; }

ConfigVector config_from(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  if (values.size() != kConfigDim) throw Error(Errc::DataError, "expected 14 configuration values");
  return Eigen::Map<const ConfigVector>(values.data());
}

}  // namespace

nlohmann::json to_json(const GraspConfig& g) {
  return {{"palm_position", {g.palm_position[0], g.palm_position[1], g.palm_position[2]}},
          {"palm_rpy", {g.palm_rpy[0], g.palm_rpy[1], g.palm_rpy[2]}},
          {"joints", g.joints}};
}

GraspConfig grasp_config_from_json(const nlohmann::json& j) {
  GraspConfig g;
  const auto p = j.at("palm_position").get<std::array<double, 3>>();
  const auto r = j.at("palm_rpy").get<std::array<double, 3>>();
  g.palm_position = Vec3(p[0], p[1], p[2]);
  g.palm_rpy = Vec3(r[0], r[1], r[2]);
  g.joints = j.at("joints").get<std::array<double, kJointCount>>();
  return g;
}

nlohmann::json to_json(const BoundBox& b) { return {{"lower", as_std(b.lower)}, {"upper", as_std(b.upper)}}; }

BoundBox bound_box_from_json(const nlohmann::json& j) {
  BoundBox b{config_from(j.at("lower")), config_from(j.at("upper"))};
  b.validate();
  return b;
}

nlohmann::json to_json(const HandModel& h) {
  return {{"joint_lower", h.joint_lower},
          {"joint_upper", h.joint_upper},
          {"position_limit", h.position_limit},
          {"pitch_margin", h.pitch_margin},
          {"thumb_axis", "palm +x"},
          {"approach_axis", "palm -z"}};
}

HandModel hand_model_from_json(const nlohmann::json& j) {
  HandModel h;
  h.joint_lower = j.value("joint_lower", h.joint_lower);
  h.joint_upper = j.value("joint_upper", h.joint_upper);
  h.position_limit = j.value("position_limit", h.position_limit);
  h.pitch_margin = j.value("pitch_margin", h.pitch_margin);
  h.bound_box();
  return h;
}

}  // namespace graspinf
