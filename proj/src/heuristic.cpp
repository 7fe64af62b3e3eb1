#include "graspinf/heuristic.hpp"

#include <vector>

#include <algorithm>
#include <limits>

#include "graspinf/error.hpp"

namespace graspinf {

void BoundingBox3::validate() const {
  if (!(half_extents.array() > 0.0).all() || !center.allFinite())
    throw Error(Errc::InvalidInput, "bounding box needs positive half extents");
}

BoundingBox3 bounding_box(const ObjectRep& rep) {
  const std::size_t r = rep.resolution;
  const double voxel = rep.size.maxCoeff() / static_cast<double>(r);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < r; ++k) {
        if (!rep.occupied(i, j, k)) continue;
        const Vec3 cell(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
        lo = lo.cwiseMin(cell);
        hi = hi.cwiseMax(cell + Vec3::Ones());
      }
  if (!lo.allFinite()) return BoundingBox3{Vec3::Zero(), 0.5 * rep.size};
  const Vec3 half_grid = Vec3::Constant(static_cast<double>(r) / 2.0);
  lo = (lo - half_grid) * voxel;
  hi = (hi - half_grid) * voxel;
  return BoundingBox3{0.5 * (lo + hi), 0.5 * (hi - lo)};
}

GraspConfig heuristic_grasp(const BoundingBox3& box, GraspType type, std::mt19937_64& rng,
                            const HeuristicSettings& settings, const BoundBox& bounds, const std::optional<Vec3>& toward) {
  box.validate();
  std::uniform_real_distribution<double> jitter(-settings.jitter, settings.jitter);
  GraspConfig g;
  if (type == GraspType::Overhead) {
    const double jx = jitter(rng), jy = jitter(rng);
    g.palm_position = box.center + Vec3(jx, jy, box.half_extents.z() + settings.standoff);
    g.palm_rpy = rpy_from_axes(Vec3(1.0, 1.0, 0.0).normalized(), -Vec3::UnitZ());
  } else {
    // faces 0..3: +x, -x, +y, -y
    std::vector<int> faces;
    for (int f = 0; f < 4; ++f)
      if (!toward || (f % 2 ? -1.0 : 1.0) * (*toward)[f / 2] > 1e-9) faces.push_back(f);
    if (faces.empty()) faces = {0, 1, 2, 3};
    const int face = faces[std::uniform_int_distribution<std::size_t>(0, faces.size() - 1)(rng)];
    const int axis = face / 2;
    const double sign = face % 2 ? -1.0 : 1.0;
    Vec3 normal = Vec3::Zero();
    normal[axis] = sign;
    Vec3 tangent = Vec3::Zero();
    tangent[1 - axis] = 1.0;
    const double jt = jitter(rng), jz = jitter(rng);
    g.palm_position = box.center + normal * (box.half_extents[axis] + settings.standoff) + tangent * jt +
                      Vec3::UnitZ() * jz;
    g.palm_rpy = rpy_from_axes(Vec3::UnitZ(), -normal);
  }
  std::uniform_real_distribution<double> joint(settings.joint_low, settings.joint_high);
  for (double& q : g.joints) q = joint(rng);
  return GraspConfig::from_vector(bounds.clamp(g.to_vector()));
}

nlohmann::json to_json(const HeuristicSettings& s) {
  return {{"standoff", s.standoff}, {"jitter", s.jitter}, {"joint_low", s.joint_low}, {"joint_high", s.joint_high}};
}

HeuristicSettings heuristic_settings_from_json(const nlohmann::json& j) {
  HeuristicSettings s;
  s.standoff = j.value("standoff", s.standoff);
  s.jitter = j.value("jitter", s.jitter);
  s.joint_low = j.value("joint_low", s.joint_low);
  s.joint_high = j.value("joint_high", s.joint_high);
  if (!(s.joint_low <= s.joint_high) || s.standoff < 0 || s.jitter < 0)
    throw Error(Errc::ConfigError, "invalid heuristic settings");
  return s;
}

}  // namespace graspinf
