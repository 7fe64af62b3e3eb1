#include "graspinf/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <Eigen/Geometry>

#include "graspinf/error.hpp"
#include "graspinf/io.hpp"
#include "graspinf/parallel.hpp"
#include "graspinf/priors.hpp"

namespace graspinf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void keep_nearest(std::optional<double>& best, double t) {
  if (t > 1e-12 && (!best || t < *best)) best = t;
}

std::vector<double> vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3(const nlohmann::json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return {a[0], a[1], a[2]};
}

}  // namespace

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::Cylinder: return "cylinder";
    case Primitive::Sphere: return "sphere";
    default: return "box";
  }
}

Primitive primitive_from_string(const std::string& name) {
  if (name == "box") return Primitive::Box;
  if (name == "cylinder") return Primitive::Cylinder;
  if (name == "sphere") return Primitive::Sphere;
  throw Error(Errc::DataError, "unknown primitive '" + name + "'");
}

Mat3 SceneSpec::rotation() const { return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(); }

void SceneSpec::validate() const {
  if (!((dimensions.array() >= 0.04 - 1e-12).all() && (dimensions.array() <= 0.30 + 1e-12).all()))
    throw Error(Errc::InvalidInput, "scene dimensions must lie in [0.04, 0.30] m");
  if (primitive == Primitive::Cylinder && dimensions.x() != dimensions.y())
    throw Error(Errc::InvalidInput, "cylinder needs equal x/y diameters");
  if (primitive == Primitive::Sphere && (dimensions.x() != dimensions.y() || dimensions.x() != dimensions.z()))
    throw Error(Errc::InvalidInput, "sphere needs equal dimensions");
}

// ------------------------------------------------------------------ shapes

PrimitiveShape::PrimitiveShape(const SceneSpec& scene)
    : primitive(scene.primitive), center(scene.center()), rotation(scene.rotation()), half(0.5 * scene.dimensions) {}

std::optional<double> PrimitiveShape::ray_hit(const Vec3& origin, const Vec3& dir) const {
  const Vec3 o = rotation.transpose() * (origin - center);
  const Vec3 d = rotation.transpose() * dir;
  std::optional<double> best;
  switch (primitive) {
    case Primitive::Box: {
      double t0 = -kInf, t1 = kInf;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
          if (std::abs(o[a]) > half[a]) return std::nullopt;
          continue;
        }
        double ta = (-half[a] - o[a]) / d[a], tb = (half[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      if (t0 > t1) return std::nullopt;
      keep_nearest(best, t0);
      if (!best) keep_nearest(best, t1);
      break;
    }
    case Primitive::Sphere: {
      const double r = half.x();
      const double b = o.dot(d), c = o.squaredNorm() - r * r, a = d.squaredNorm();
      const double disc = b * b - a * c;
      if (disc < 0) return std::nullopt;
      const double s = std::sqrt(disc);
      keep_nearest(best, (-b - s) / a);
      if (!best) keep_nearest(best, (-b + s) / a);
      break;
    }
    case Primitive::Cylinder: {
      const double r = half.x(), h = half.z();
      const double a = d.x() * d.x() + d.y() * d.y();
      if (a > 1e-15) {
        const double b = o.x() * d.x() + o.y() * d.y(), c = o.x() * o.x() + o.y() * o.y() - r * r;
        const double disc = b * b - a * c;
        if (disc >= 0) {
          const double s = std::sqrt(disc);
          for (double t : {(-b - s) / a, (-b + s) / a})
            if (std::abs(o.z() + t * d.z()) <= h) keep_nearest(best, t);
        }
      }
      if (std::abs(d.z()) > 1e-15) {
        for (double cap : {-h, h}) {
          const double t = (cap - o.z()) / d.z();
          const Vec3 p = o + t * d;
          if (p.x() * p.x() + p.y() * p.y() <= r * r) keep_nearest(best, t);
        }
      }
      break;
    }
  }
  return best;
}

bool PrimitiveShape::contains(const Vec3& p) const {
  const Vec3 q = rotation.transpose() * (p - center);
  switch (primitive) {
    case Primitive::Box: return (q.cwiseAbs().array() < half.array()).all();
    case Primitive::Sphere: return q.norm() < half.x();
    case Primitive::Cylinder: return q.head<2>().norm() < half.x() && std::abs(q.z()) < half.z();
  }
  return false;
}

std::pair<Vec3, Vec3> PrimitiveShape::closest_surface(const Vec3& p) const {
  const Vec3 q = rotation.transpose() * (p - center);
  Vec3 c, n;
  switch (primitive) {
    case Primitive::Sphere: {
      n = q.norm() > 1e-15 ? Vec3(q.normalized()) : Vec3(Vec3::UnitZ());
      c = half.x() * n;
      break;
    }
    case Primitive::Box: {
      if (!contains(p)) {
        c = q.cwiseMax(-half).cwiseMin(half);
        n = (q - c).normalized();
      } else {
        int axis = 0;
        double gap = kInf;
        for (int a = 0; a < 3; ++a)
          if (half[a] - std::abs(q[a]) < gap) {
            gap = half[a] - std::abs(q[a]);
            axis = a;
          }
        c = q;
        n = Vec3::Zero();
        n[axis] = q[axis] >= 0 ? 1.0 : -1.0;
        c[axis] = n[axis] * half[axis];
      }
      break;
    }
    case Primitive::Cylinder: {
      const double r = half.x(), h = half.z();
      const double rho = q.head<2>().norm();
      const Vec3 radial = rho > 1e-15 ? Vec3(q.x() / rho, q.y() / rho, 0.0) : Vec3(Vec3::UnitX());
      if (!contains(p)) {
        c = radial * std::min(rho, r);
        c.z() = std::clamp(q.z(), -h, h);
        n = (q - c).normalized();
      } else if (r - rho < h - std::abs(q.z())) {
        c = radial * r;
        c.z() = q.z();
        n = radial;
      } else {
        c = q;
        n = Vec3(0, 0, q.z() >= 0 ? 1.0 : -1.0);
        c.z() = n.z() * h;
      }
      break;
    }
  }
  return {center + rotation * c, rotation * n};
}

double PrimitiveShape::extent_along(const Vec3& u) const {
  const Vec3 l = rotation.transpose() * u.normalized();
  switch (primitive) {
    case Primitive::Box: return 2.0 * l.cwiseAbs().dot(half);
    case Primitive::Sphere: return 2.0 * half.x();
    case Primitive::Cylinder: return 2.0 * (half.x() * l.head<2>().norm() + half.z() * std::abs(l.z()));
  }
  return 0.0;
}

double PrimitiveShape::support(const Vec3& u) const { return center.dot(u) + 0.5 * extent_along(u) * u.norm(); }

// ------------------------------------------------------------------ rendering

Vec3 camera_eye(const SceneSpec& scene, const CameraSettings& camera) {
  const double ce = std::cos(scene.camera_elevation);
  return scene.center() + camera.distance * Vec3(ce * std::cos(scene.camera_azimuth),
                                                 ce * std::sin(scene.camera_azimuth),
                                                 std::sin(scene.camera_elevation));
}

Vec3 robot_direction(const SceneSpec& scene, const ObjectFrame& frame) {
  return frame.axes.transpose() * Vec3(std::cos(scene.camera_azimuth), std::sin(scene.camera_azimuth), 0.0);
}

PointCloud render_partial_cloud(const SceneSpec& scene, const CameraSettings& camera, double noise_std,
                                std::mt19937_64& rng) {
  const PrimitiveShape shape(scene);
  const Vec3 target = shape.center;
  const Vec3 eye = camera_eye(scene, camera);
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 up = right.cross(forward);
  std::normal_distribution<double> noise(0.0, noise_std > 0 ? noise_std : 1.0);
  PointCloud cloud;
  std::size_t object_hits = 0;
  const int n = camera.pixels;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double sx = camera.half_field * (2.0 * (i + 0.5) / n - 1.0);
      const double sy = camera.half_field * (2.0 * (j + 0.5) / n - 1.0);
      const Vec3 dir = (target + sx * right + sy * up - eye).normalized();
      std::optional<double> t = shape.ray_hit(eye, dir);
      bool on_object = t.has_value();
      if (dir.z() < 0) {
        const double tt = -eye.z() / dir.z();
        const Vec3 p = eye + tt * dir;
        if (std::abs(p.x() - target.x()) <= camera.table_half_size &&
            std::abs(p.y() - target.y()) <= camera.table_half_size && (!t || tt < *t)) {
          t = tt;
          on_object = false;
        }
      }
      if (!t) continue;
      const double depth = *t + (noise_std > 0 ? noise(rng) : 0.0);
      cloud.points.push_back(eye + depth * dir);
      object_hits += on_object;
    }
  }
  if (object_hits < 10)
    throw Error(Errc::NoVisibleSurface, "only " + std::to_string(object_hits) + " rays hit scene " +
                                            std::to_string(scene.id));
  return cloud;
}

// ------------------------------------------------------------------ oracle

double finger_span(const std::array<double, kJointCount>& q, const OracleConfig& cfg) {
  const double flex = (q[1] + q[3] + q[5] + q[7]) / 4.0;
  const double abduction = (std::abs(q[0]) + std::abs(q[2]) + std::abs(q[4])) / 3.0;
  return std::max(0.0, cfg.span_open * (1.0 - flex / cfg.span_flex_scale) + cfg.span_abduction * abduction);
}

OracleBreakdown oracle_evaluate(const SceneSpec& scene, const ObjectFrame& frame, const GraspConfig& theta,
                                const OracleConfig& cfg) {
  const PrimitiveShape shape(scene);
  OracleBreakdown out;
  const Vec3 palm = frame.to_world(theta.palm_position);
  const Mat3 r = frame.axes * palm_rotation(theta.palm_rpy);
  const Vec3 approach = -r.col(2);
  const Vec3 across = r.col(1);

  const bool inside = shape.contains(palm);
  if (!inside) {
    if (const auto t = shape.ray_hit(palm, approach)) {
      out.standoff_distance = *t;
      out.standoff = *t >= cfg.standoff_min && *t <= cfg.standoff_max;
    }
  }
  const auto [closest, normal] = shape.closest_surface(palm);
  const double cosang = std::clamp(approach.dot(-normal), -1.0, 1.0);
  out.approach_angle = std::acos(cosang) * 180.0 / std::numbers::pi;
  out.approach = !inside && out.approach_angle <= cfg.max_approach_angle;

  out.extent = shape.extent_along(across);
  out.span_value = finger_span(theta.joints, cfg);
  out.span = out.span_value >= out.extent - cfg.span_below && out.span_value <= out.extent + cfg.span_above;

  // Type from the orientation; geometry checked along the object frame's
  // third axis.
  out.inferred_type = classify_orientation(theta.palm_rpy);
  const Vec3 up = frame.axes.col(2);
  const double s = palm.dot(up), top = shape.support(up), bottom = -shape.support(-up);
  out.type_geometry = out.inferred_type == GraspType::Overhead ? s >= top : (s >= bottom && s <= top);
  out.table = palm.z() >= cfg.table_clearance;
  return out;
}

int oracle_label(const SceneSpec& scene, const ObjectFrame& frame, const GraspConfig& theta, const OracleConfig& cfg) {
  return oracle_evaluate(scene, frame, theta, cfg).success() ? 1 : 0;
}

bool grasp_reachable(const SceneSpec& scene, const ObjectFrame& frame, const GraspConfig& theta,
                     const OracleConfig& cfg) {
  const Vec3 palm = frame.to_world(theta.palm_position);
  return palm.z() >= cfg.table_clearance && !PrimitiveShape(scene).contains(palm);
}

// ------------------------------------------------------------------ datasets

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t id, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

SceneSpec sample_scene(std::uint64_t id, std::uint64_t seed, const SceneSampling& sampling) {
  std::mt19937_64 rng = derived_rng(seed, id, 1);
  std::uniform_real_distribution<double> dim(sampling.dim_min, sampling.dim_max);
  std::uniform_real_distribution<double> pos(-sampling.position_range, sampling.position_range);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> elevation(sampling.elevation_min, sampling.elevation_max);
  std::uniform_real_distribution<double> azimuth(sampling.azimuth_min, sampling.azimuth_max);
  SceneSpec s;
  s.id = id;
  s.seed = seed;
  s.primitive = static_cast<Primitive>(std::uniform_int_distribution<int>(0, 2)(rng));
  switch (s.primitive) {
    case Primitive::Box: s.dimensions = Vec3(dim(rng), dim(rng), dim(rng)); break;
    case Primitive::Cylinder: {
      const double d = dim(rng);
      s.dimensions = Vec3(d, d, dim(rng));
      break;
    }
    case Primitive::Sphere: s.dimensions = Vec3::Constant(dim(rng)); break;
  }
  s.x = pos(rng);
  s.y = pos(rng);
  s.yaw = angle(rng);
  s.camera_azimuth = azimuth(rng);
  s.camera_elevation = elevation(rng);
  return s;
}

std::pair<SceneSpec, ObjectRep> observe_scene(std::uint64_t id, std::uint64_t seed, const DatasetConfig& cfg,
                                              const std::optional<SceneSpec>& fixed) {
  for (std::uint64_t attempt = 0; attempt < 10; ++attempt) {
    SceneSpec scene = fixed ? *fixed : sample_scene(id, seed + attempt * 0x9E3779B97F4A7C15ull, cfg.sampling);
    scene.id = id;
    scene.validate();
    std::mt19937_64 rng = derived_rng(scene.seed, id, 2 + attempt);
    try {
      const PointCloud cloud = render_partial_cloud(scene, cfg.camera, cfg.noise_std, rng);
      RansacSettings ransac = cfg.ransac;
      ransac.seed = derived_rng(scene.seed, id, 3)();
      return {scene, perceive(cloud, ransac, cfg.resolution)};
    } catch (const Error& e) {
      if (fixed) throw;
      switch (e.code()) {
        case Errc::NoVisibleSurface:
        case Errc::NoPlaneFound:
        case Errc::EmptySegment:
        case Errc::DegenerateGeometry:
        case Errc::InvalidInput: continue;
        default: throw;
      }
    }
  }
  throw Error(Errc::NoVisibleSurface, "scene " + std::to_string(id) + " unusable after 10 draws");
}

void DatasetSummary::add(const GraspRecord& r) {
  ++records;
  successes += r.label;
  if (r.type == GraspType::Side) {
    ++side;
    side_successes += r.label;
  } else {
    ++overhead;
    overhead_successes += r.label;
  }
}

nlohmann::json DatasetSummary::to_json() const {
  return {{"scenes", scenes},
          {"records", records},
          {"success", successes},
          {"failure", records - successes},
          {"success_rate", success_rate()},
          {"side", {{"success", side_successes}, {"failure", side - side_successes}}},
          {"overhead", {{"success", overhead_successes}, {"failure", overhead - overhead_successes}}}};
}

Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed, int threads) {
  if (cfg.n_scenes < 1 || cfg.grasps_per_scene < 1) throw Error(Errc::ConfigError, "need at least one scene and grasp");
  std::vector<std::uint64_t> ids(cfg.n_scenes);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::mt19937_64 split_rng = derived_rng(seed, 0, 7);
  std::shuffle(ids.begin(), ids.end(), split_rng);
  std::size_t n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(cfg.n_scenes)));
  if (cfg.n_scenes > 1) n_test = std::clamp<std::size_t>(n_test, 1, cfg.n_scenes - 1);
  std::vector<bool> is_test(cfg.n_scenes, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[ids[i]] = true;

  std::vector<std::vector<GraspRecord>> per_scene(cfg.n_scenes);
  parallel_for(cfg.n_scenes, threads, [&](std::size_t id) {
    auto [scene, rep] = observe_scene(id, seed, cfg);
    const BoundingBox3 box = bounding_box(rep);
    const BoundBox bounds = cfg.hand.bound_box();
    std::mt19937_64 rng = derived_rng(seed, id, 4);
    for (std::size_t g = 0; g < cfg.grasps_per_scene; ++g) {
      GraspRecord r;
      r.scene = scene;
      r.rep = rep;
      r.type = g % 2 == 0 ? GraspType::Side : GraspType::Overhead;
      r.theta = heuristic_grasp(box, r.type, rng, cfg.heuristic, bounds, robot_direction(scene, rep.frame));
      r.label = oracle_label(scene, rep.frame, r.theta, cfg.oracle);
      per_scene[id].push_back(std::move(r));
    }
  });
  Dataset data;
  for (std::size_t id = 0; id < cfg.n_scenes; ++id) {
    auto& dst = is_test[id] ? data.test : data.train;
    for (auto& r : per_scene[id]) dst.push_back(std::move(r));
  }
  return data;
}

void write_dataset(const Dataset& data, const DatasetConfig& cfg, std::uint64_t seed, const std::string& dir,
                   const nlohmann::json& extra_manifest) {
  ensure_directory(dir);
  nlohmann::json manifest = {{"format", "graspinf-dataset"},
                             {"format_version", 1},
                             {"seed", seed},
                             {"config", to_json(cfg)},
                             {"config_hash", config_hash(to_json(cfg))},
                             {"oracle_version", cfg.oracle.version}};
  for (const auto& [name, records] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    std::string text;
    DatasetSummary summary;
    std::vector<std::uint64_t> scene_ids;
    for (const auto& r : *records) {
      text += to_json(r).dump() + "\n";
      summary.add(r);
      if (scene_ids.empty() || scene_ids.back() != r.scene.id) scene_ids.push_back(r.scene.id);
    }
    summary.scenes = scene_ids.size();
    write_text_file(dir + "/" + name + ".jsonl", text);
    manifest[name] = summary.to_json();
    manifest[name]["scene_ids"] = scene_ids;
  }
  for (const auto& [k, v] : extra_manifest.items()) manifest[k] = v;
  write_json_file(dir + "/manifest.json", manifest);
}

std::vector<GraspRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::FileError, "cannot open dataset '" + path + "'");
  std::vector<GraspRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(grasp_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::DataError, path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ------------------------------------------------------------------ json

nlohmann::json to_json(const SceneSpec& s) {
  return {{"id", s.id},
          {"primitive", to_string(s.primitive)},
          {"dimensions", vec(s.dimensions)},
          {"x", s.x},
          {"y", s.y},
          {"yaw", s.yaw},
          {"camera_azimuth", s.camera_azimuth},
          {"camera_elevation", s.camera_elevation},
          {"seed", s.seed}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.id = j.at("id");
  s.primitive = primitive_from_string(j.at("primitive"));
  s.dimensions = vec3(j.at("dimensions"));
  s.x = j.at("x");
  s.y = j.at("y");
  s.yaw = j.at("yaw");
  s.camera_azimuth = j.value("camera_azimuth", 0.0);
  s.camera_elevation = j.value("camera_elevation", 0.8);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

nlohmann::json to_json(const GraspRecord& r) {
  return {{"format_version", 1},
          {"scene", to_json(r.scene)},
          {"rep", to_json(r.rep)},
          {"theta", to_json(r.theta)},
          {"grasp_type", to_string(r.type)},
          {"label", r.label}};
}

GraspRecord grasp_record_from_json(const nlohmann::json& j) {
  GraspRecord r;
  r.scene = scene_spec_from_json(j.at("scene"));
  r.rep = object_rep_from_json(j.at("rep"));
  r.theta = grasp_config_from_json(j.at("theta"));
  r.type = grasp_type_from_string(j.at("grasp_type"));
  r.label = j.at("label");
  if (r.label != 0 && r.label != 1) throw Error(Errc::DataError, "label must be 0 or 1");
  return r;
}

nlohmann::json to_json(const OracleConfig& c) {
  return {{"version", c.version},
          {"standoff_min", c.standoff_min},
          {"standoff_max", c.standoff_max},
          {"max_approach_angle", c.max_approach_angle},
          {"span_below", c.span_below},
          {"span_above", c.span_above},
          {"table_clearance", c.table_clearance},
          {"span_open", c.span_open},
          {"span_flex_scale", c.span_flex_scale},
          {"span_abduction", c.span_abduction}};
}

OracleConfig oracle_config_from_json(const nlohmann::json& j) {
  OracleConfig c;
  c.version = j.value("version", c.version);
  c.standoff_min = j.value("standoff_min", c.standoff_min);
  c.standoff_max = j.value("standoff_max", c.standoff_max);
  c.max_approach_angle = j.value("max_approach_angle", c.max_approach_angle);
  c.span_below = j.value("span_below", c.span_below);
  c.span_above = j.value("span_above", c.span_above);
  c.table_clearance = j.value("table_clearance", c.table_clearance);
  c.span_open = j.value("span_open", c.span_open);
  c.span_flex_scale = j.value("span_flex_scale", c.span_flex_scale);
  c.span_abduction = j.value("span_abduction", c.span_abduction);
  if (!(c.standoff_min < c.standoff_max) || !(c.span_flex_scale > 0))
    throw Error(Errc::ConfigError, "invalid oracle thresholds");
  return c;
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"n_scenes", c.n_scenes},
          {"grasps_per_scene", c.grasps_per_scene},
          {"test_fraction", c.test_fraction},
          {"noise_std", c.noise_std},
          {"resolution", c.resolution},
          {"sampling",
           {{"dim_min", c.sampling.dim_min},
            {"dim_max", c.sampling.dim_max},
            {"position_range", c.sampling.position_range},
            {"elevation_min", c.sampling.elevation_min},
            {"elevation_max", c.sampling.elevation_max},
            {"azimuth_min", c.sampling.azimuth_min},
            {"azimuth_max", c.sampling.azimuth_max}}},
          {"camera",
           {{"distance", c.camera.distance},
            {"half_field", c.camera.half_field},
            {"pixels", c.camera.pixels},
            {"table_half_size", c.camera.table_half_size}}},
          {"ransac",
           {{"distance_threshold", c.ransac.distance_threshold},
            {"max_iterations", c.ransac.max_iterations},
            {"inlier_fraction", c.ransac.inlier_fraction},
            {"min_points", c.ransac.min_points}}},
          {"heuristic", to_json(c.heuristic)},
          {"oracle", to_json(c.oracle)},
          {"hand", to_json(c.hand)}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.n_scenes = j.value("n_scenes", c.n_scenes);
  c.grasps_per_scene = j.value("grasps_per_scene", c.grasps_per_scene);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.resolution = j.value("resolution", c.resolution);
  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    c.sampling.dim_min = s.value("dim_min", c.sampling.dim_min);
    c.sampling.dim_max = s.value("dim_max", c.sampling.dim_max);
    c.sampling.position_range = s.value("position_range", c.sampling.position_range);
    c.sampling.elevation_min = s.value("elevation_min", c.sampling.elevation_min);
    c.sampling.elevation_max = s.value("elevation_max", c.sampling.elevation_max);
    c.sampling.azimuth_min = s.value("azimuth_min", c.sampling.azimuth_min);
    c.sampling.azimuth_max = s.value("azimuth_max", c.sampling.azimuth_max);
  }
  if (j.contains("camera")) {
    const auto& s = j["camera"];
    c.camera.distance = s.value("distance", c.camera.distance);
    c.camera.half_field = s.value("half_field", c.camera.half_field);
    c.camera.pixels = s.value("pixels", c.camera.pixels);
    c.camera.table_half_size = s.value("table_half_size", c.camera.table_half_size);
  }
  if (j.contains("ransac")) {
    const auto& s = j["ransac"];
    c.ransac.distance_threshold = s.value("distance_threshold", c.ransac.distance_threshold);
    c.ransac.max_iterations = s.value("max_iterations", c.ransac.max_iterations);
    c.ransac.inlier_fraction = s.value("inlier_fraction", c.ransac.inlier_fraction);
    c.ransac.min_points = s.value("min_points", c.ransac.min_points);
  }
  if (j.contains("heuristic")) c.heuristic = heuristic_settings_from_json(j["heuristic"]);
  if (j.contains("oracle")) c.oracle = oracle_config_from_json(j["oracle"]);
  if (j.contains("hand")) c.hand = hand_model_from_json(j["hand"]);
  if (c.sampling.dim_min < 0.04 || c.sampling.dim_max > 0.30 || c.sampling.dim_min > c.sampling.dim_max)
    throw Error(Errc::ConfigError, "object dimensions must lie in [0.04, 0.30] m");
  if (c.resolution < 4) throw Error(Errc::ConfigError, "voxel resolution must be at least 4");
  if (!(c.test_fraction >= 0.0 && c.test_fraction < 1.0)) throw Error(Errc::ConfigError, "test_fraction in [0,1)");
  return c;
}

}  // namespace graspinf
