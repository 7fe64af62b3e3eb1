#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "graspinf/error.hpp"
#include "graspinf/heuristic.hpp"

using namespace graspinf;

namespace {

BoundingBox3 box(const Vec3& half, const Vec3& center = Vec3::Zero()) { return {center, half}; }

HeuristicSettings no_jitter() {
  HeuristicSettings s;
  s.jitter = 0.0;
  return s;
}

}  // namespace

TEST(Heuristic, OverheadOnUnitCube) {
  std::mt19937_64 rng(1);
  const GraspConfig g = heuristic_grasp(box(Vec3::Constant(0.5)), GraspType::Overhead, rng, no_jitter());
  EXPECT_LT((approach_axis(g.palm_rpy) - Vec3(0, 0, -1)).norm(), 1e-12);
  EXPECT_LT((thumb_axis(g.palm_rpy) - Vec3(1, 1, 0).normalized()).norm(), 1e-12);
}

TEST(Heuristic, OverheadSitsAboveTopFaceCentre) {
  std::mt19937_64 rng(2);
  const BoundingBox3 b = box(Vec3(0.03, 0.05, 0.04), Vec3(0.01, -0.02, 0.0));
  const GraspConfig g = heuristic_grasp(b, GraspType::Overhead, rng, no_jitter());
  EXPECT_NEAR(g.palm_position.x(), 0.01, 1e-12);
  EXPECT_NEAR(g.palm_position.y(), -0.02, 1e-12);
  EXPECT_NEAR(g.palm_position.z(), 0.04 + 0.08, 1e-12);
}

TEST(Heuristic, SideGraspOnTallBoxIsHorizontalThumbUp) {
  std::mt19937_64 rng(3);
  const BoundingBox3 b = box(Vec3(0.03, 0.04, 0.12));
  for (int n = 0; n < 50; ++n) {
    const GraspConfig g = heuristic_grasp(b, GraspType::Side, rng);
    const Vec3 a = approach_axis(g.palm_rpy);
    EXPECT_NEAR(a.z(), 0.0, 1e-12);
    EXPECT_GT(thumb_axis(g.palm_rpy).z(), 0.0);
    // Palm on the face normal, pointing back at the box.
    const Vec3 offset = g.palm_position - b.center;
    EXPECT_GT(-a.dot(offset), 0.0);
  }
}

TEST(Heuristic, SampledJointsInRange) {
  std::mt19937_64 rng(4);
  const HeuristicSettings s;
  const BoundBox bounds = HandModel{}.bound_box();
  for (int n = 0; n < 1000; ++n) {
    const GraspType t = n % 2 ? GraspType::Side : GraspType::Overhead;
    const GraspConfig g = heuristic_grasp(box(Vec3(0.04, 0.06, 0.08)), t, rng, s);
    for (double q : g.joints) {
      EXPECT_GE(q, s.joint_low);
      EXPECT_LE(q, s.joint_high);
    }
    EXPECT_TRUE(bounds.contains(g.to_vector()));
    EXPECT_EQ(g.to_vector().size(), 14);
  }
}

TEST(Heuristic, FacesTurnedTowardRobotOnly) {
  std::mt19937_64 rng(5);
  const BoundingBox3 b = box(Vec3(0.05, 0.05, 0.05));
  const Vec3 toward = Vec3(-1.0, 0.3, 0.0).normalized();
  int plus_y = 0;
  for (int n = 0; n < 400; ++n) {
    const GraspConfig g = heuristic_grasp(b, GraspType::Side, rng, no_jitter(), HandModel{}.bound_box(), toward);
    const Vec3 out = -approach_axis(g.palm_rpy);  // face normal
    EXPECT_GT(out.dot(toward), 0.0);
    plus_y += out.y() > 0.5;
  }
  // -x and +y are both eligible and chosen uniformly.
  EXPECT_GT(plus_y, 150);
  EXPECT_LT(plus_y, 250);
}

TEST(Heuristic, DeterministicUnderSeed) {
  std::mt19937_64 a(6), b(6);
  for (int n = 0; n < 20; ++n) {
    const GraspType t = n % 2 ? GraspType::Side : GraspType::Overhead;
    EXPECT_EQ(heuristic_grasp(box(Vec3(0.04, 0.05, 0.06)), t, a).to_vector(),
              heuristic_grasp(box(Vec3(0.04, 0.05, 0.06)), t, b).to_vector());
  }
}

TEST(Heuristic, BoundingBoxOfVoxels) {
  ObjectRep rep;
  rep.resolution = 4;
  rep.grid.assign(64, 0);
  rep.grid[rep.index(1, 1, 1)] = 1;
  rep.grid[rep.index(2, 2, 3)] = 1;
  rep.size = Vec3(0.08, 0.08, 0.08);  // voxel size = max extent / R = 0.02
  const BoundingBox3 b = bounding_box(rep);
  EXPECT_LT((b.center - Vec3(0.0, 0.0, 0.01)).norm(), 1e-12);
  EXPECT_LT((b.half_extents - Vec3(0.02, 0.02, 0.03)).norm(), 1e-12);
}

TEST(Heuristic, InvalidBoxRejected) {
  std::mt19937_64 rng(7);
  EXPECT_THROW(heuristic_grasp(box(Vec3(0.0, 0.1, 0.1)), GraspType::Side, rng), Error);
}
