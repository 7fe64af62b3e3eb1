#include "graspinf/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "graspinf/error.hpp"

namespace graspinf {

namespace {

constexpr double kSignTie = 1e-12;

// Positive by the first component that is not (numerically) zero.
bool points_positive(const Vec3& v) {
  for (int a = 0; a < 3; ++a) {
    if (v[a] > kSignTie) return true;
    if (v[a] < -kSignTie) return false;
  }
  return true;
}

std::size_t count_inliers(const PointCloud& cloud, const Plane& plane, double threshold) {
  std::size_t n = 0;
  for (const Vec3& p : cloud.points) n += std::abs(plane.signed_distance(p)) <= threshold;
  return n;
}

Plane least_squares_plane(const std::vector<Vec3>& pts) {
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pts) cov += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Plane plane;
  plane.normal = eig.eigenvectors().col(0).normalized();
  plane.offset = -plane.normal.dot(centroid);
  return plane;
}

}  // namespace

std::size_t ObjectRep::occupied_count() const {
  return static_cast<std::size_t>(std::count_if(grid.begin(), grid.end(), [](std::uint8_t c) { return c != 0; }));
}

std::vector<double> ObjectRep::grid_values() const { return {grid.begin(), grid.end()}; }

Plane fit_table_plane(const PointCloud& cloud, const RansacSettings& settings) {
  if (cloud.size() < std::max<std::size_t>(settings.min_points, 3)) {
    throw Error(Errc::InvalidInput, "need at least " + std::to_string(settings.min_points) + " points, got " +
                                        std::to_string(cloud.size()));
  }
  std::mt19937_64 rng(settings.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  Plane best;
  std::size_t best_count = 0;
  for (int it = 0; it < settings.max_iterations; ++it) {
    const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Vec3& pa = cloud.points[a];
    const Vec3 normal = (cloud.points[b] - pa).cross(cloud.points[c] - pa);
    const double norm = normal.norm();
    if (norm < 1e-12) continue;
    Plane candidate{normal / norm, -normal.dot(pa) / norm};
    const std::size_t count = count_inliers(cloud, candidate, settings.distance_threshold);
    if (count > best_count) {
      best_count = count;
      best = candidate;
    }
  }
  const auto required = static_cast<std::size_t>(std::ceil(settings.inlier_fraction * static_cast<double>(cloud.size())));
  if (best_count < required || best_count < 3) {
    throw Error(Errc::NoPlaneFound, "best plane has " + std::to_string(best_count) + " inliers, need " +
                                        std::to_string(required));
  }
  std::vector<Vec3> inliers;
  for (const Vec3& p : cloud.points)
    if (std::abs(best.signed_distance(p)) <= settings.distance_threshold) inliers.push_back(p);
  const Plane refined = least_squares_plane(inliers);
  if (count_inliers(cloud, refined, settings.distance_threshold) >= best_count) best = refined;
  return best;
}

PointCloud segment_object(const PointCloud& cloud, const RansacSettings& settings) {
  Plane plane = fit_table_plane(cloud, settings);
  // Orient the normal toward the side holding most off-plane points.
  long balance = 0;
  for (const Vec3& p : cloud.points) {
    const double d = plane.signed_distance(p);
    if (d > settings.distance_threshold) ++balance;
    if (d < -settings.distance_threshold) --balance;
  }
  if (balance < 0) {
    plane.normal = -plane.normal;
    plane.offset = -plane.offset;
  }
  PointCloud segment;
  for (const Vec3& p : cloud.points)
    if (plane.signed_distance(p) > settings.distance_threshold) segment.points.push_back(p);
  if (segment.empty()) throw Error(Errc::EmptySegment, "no points above the fitted plane");
  return segment;
}

ObjectFrame estimate_frame(const PointCloud& segment) {
  if (segment.size() < 4) throw Error(Errc::InvalidInput, "frame estimation needs at least 4 points");
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : segment.points) centroid += p;
  centroid /= static_cast<double>(segment.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : segment.points) cov += (p - centroid) * (p - centroid).transpose();
  cov /= static_cast<double>(segment.size());

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 values = eig.eigenvalues();  // ascending
  if (!(values[2] > 0.0) || values[1] <= 1e-12 * values[2]) {
    throw Error(Errc::DegenerateGeometry, "point covariance has rank < 2");
  }
  Vec3 first = eig.eigenvectors().col(2).normalized();
  Vec3 second = eig.eigenvectors().col(1).normalized();
  if (!points_positive(first)) first = -first;
  second = (second - second.dot(first) * first).normalized();
  Vec3 third = first.cross(second);
  // Third axis "up": positive world z, ties broken by x then y.
  const Vec3 up_order(third.z(), third.x(), third.y());
  if (!points_positive(up_order)) {
    second = -second;
    third = -third;
  }
  ObjectFrame frame;
  frame.origin = centroid;
  frame.axes.col(0) = first;
  frame.axes.col(1) = second;
  frame.axes.col(2) = third;
  return frame;
}

ObjectRep voxelize(const PointCloud& segment, const ObjectFrame& frame, std::size_t resolution) {
  if (segment.empty()) throw Error(Errc::InvalidInput, "cannot voxelize an empty segment");
  if (resolution < 2) throw Error(Errc::InvalidInput, "voxel resolution must be at least 2");
  std::vector<Vec3> local;
  local.reserve(segment.size());
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Vec3& p : segment.points) {
    local.push_back(frame.to_object(p));
    lo = lo.cwiseMin(local.back());
    hi = hi.cwiseMax(local.back());
  }
  ObjectRep rep;
  rep.resolution = resolution;
  rep.frame = frame;
  rep.size = (hi - lo).cwiseMax(Vec3::Constant(kMinExtent));
  rep.grid.assign(resolution * resolution * resolution, 0);
  const double res = static_cast<double>(resolution);
  const double voxel = rep.size.maxCoeff() / res;
  for (const Vec3& q : local) {
    std::size_t idx[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const double u = q[a] / voxel + res / 2.0;
      if (!(u >= 0.0 && u <= res)) {
        inside = false;
        break;
      }
      idx[a] = std::min(static_cast<std::size_t>(std::floor(u)), resolution - 1);
    }
    if (inside) rep.grid[rep.index(idx[0], idx[1], idx[2])] = 1;
  }
  return rep;
}

ObjectRep perceive(const PointCloud& cloud, const RansacSettings& settings, std::size_t resolution) {
  const PointCloud segment = segment_object(cloud, settings);
  return voxelize(segment, estimate_frame(segment), resolution);
}

// ------------------------------------------------------------------ IO

PointCloud read_point_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::FileError, "cannot open point cloud '" + path + "'");
  PointCloud cloud;
  std::string line;
  auto parse_error = [&](const std::string& why) {
    return Error(Errc::DataError, "point cloud '" + path + "': " + why);
  };
  if (!std::getline(in, line)) throw parse_error("empty file");
  if (line.rfind("ply", 0) == 0) {
    std::size_t vertices = 0;
    std::vector<std::string> props;
    bool in_vertex = false;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string word;
      ss >> word;
      if (word == "format") {
        std::string fmt;
        ss >> fmt;
        if (fmt != "ascii") throw parse_error("only ASCII PLY is supported");
      } else if (word == "element") {
        std::string name;
        ss >> name;
        in_vertex = name == "vertex";
        if (in_vertex) ss >> vertices;
      } else if (word == "property" && in_vertex) {
        std::string type, name;
        ss >> type >> name;
        props.push_back(name);
      } else if (word == "end_header") {
        break;
      }
    }
    const auto find = [&](const std::string& name) {
      const auto it = std::find(props.begin(), props.end(), name);
      if (it == props.end()) throw parse_error("missing vertex property '" + name + "'");
      return static_cast<std::size_t>(it - props.begin());
    };
    const std::size_t ix = find("x"), iy = find("y"), iz = find("z");
    for (std::size_t v = 0; v < vertices; ++v) {
      if (!std::getline(in, line)) throw parse_error("truncated vertex list");
      std::istringstream ss(line);
      std::vector<double> values(props.size());
      for (double& x : values)
        if (!(ss >> x)) throw parse_error("bad vertex line " + std::to_string(v));
      cloud.points.emplace_back(values[ix], values[iy], values[iz]);
    }
  } else {
    do {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw parse_error("expected 'x y z' but got '" + line + "'");
      cloud.points.emplace_back(x, y, z);
    } while (std::getline(in, line));
  }
  for (const Vec3& p : cloud.points)
    if (!p.allFinite()) throw parse_error("non-finite coordinate");
  return cloud;
}

void write_point_cloud_xyz(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::FileError, "cannot write '" + path + "'");
  out.precision(17);
  for (const Vec3& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

void write_point_cloud_ply(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::FileError, "cannot write '" + path + "'");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out.precision(17);
  for (const Vec3& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

std::vector<std::uint32_t> run_length_encode(const std::vector<std::uint8_t>& cells) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t c : cells) {
    const std::uint8_t v = c != 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

std::vector<std::uint8_t> run_length_decode(const std::vector<std::uint32_t>& runs, std::size_t total) {
  std::vector<std::uint8_t> cells;
  cells.reserve(total);
  std::uint8_t value = 0;
  for (std::uint32_t r : runs) {
    cells.insert(cells.end(), r, value);
    value ^= 1;
  }
  if (cells.size() != total) throw Error(Errc::DataError, "run lengths do not cover the grid");
  return cells;
}

nlohmann::json to_json(const ObjectFrame& frame) {
  nlohmann::json axes = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) axes.push_back({frame.axes(r, 0), frame.axes(r, 1), frame.axes(r, 2)});
  return {{"origin", {frame.origin.x(), frame.origin.y(), frame.origin.z()}}, {"axes", axes}};
}

ObjectFrame object_frame_from_json(const nlohmann::json& j) {
  ObjectFrame f;
  const auto o = j.at("origin").get<std::array<double, 3>>();
  f.origin = Vec3(o[0], o[1], o[2]);
  const auto rows = j.at("axes").get<std::array<std::array<double, 3>, 3>>();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f.axes(r, c) = rows[r][c];
  return f;
}

nlohmann::json to_json(const ObjectRep& rep) {
  return {{"format", "graspinf-object-rep"},
          {"format_version", 1},
          {"resolution", rep.resolution},
          {"layout", "index = (i*R + j)*R + k along object-frame axes (x, y, z)"},
          {"size", {rep.size.x(), rep.size.y(), rep.size.z()}},
          {"frame", to_json(rep.frame)},
          {"occupancy_rle", run_length_encode(rep.grid)}};
}

ObjectRep object_rep_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "graspinf-object-rep") throw Error(Errc::DataError, "not an object rep");
  ObjectRep rep;
  rep.resolution = j.at("resolution");
  const auto s = j.at("size").get<std::array<double, 3>>();
  rep.size = Vec3(s[0], s[1], s[2]);
  rep.frame = object_frame_from_json(j.at("frame"));
  rep.grid = run_length_decode(j.at("occupancy_rle").get<std::vector<std::uint32_t>>(),
                               rep.resolution * rep.resolution * rep.resolution);
  return rep;
}

}  // namespace graspinf
