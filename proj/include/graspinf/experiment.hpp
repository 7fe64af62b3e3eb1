#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/inference.hpp"
#include "graspinf/models.hpp"
#include "graspinf/synthdata.hpp"

namespace graspinf {

/// Prior for one observed object. Uniform uses the heuristic initializer on
/// the object's voxel bounding box, with side faces turned toward `toward`
/// when given.
PlanPrior make_plan_prior(PriorKind kind, const ModelBundle& bundle, const ObjectRep& rep,
                          const HeuristicSettings& heuristic, const std::optional<Vec3>& toward = std::nullopt);

struct PlannerEvalConfig {
  std::size_t objects = 8;
  std::size_t poses = 5;
  int attempts = 5;  // planner calls per trial before it counts as a failure
  std::vector<PriorKind> priors{PriorKind::Uniform, PriorKind::Gmm, PriorKind::Mdn};
  InferenceSettings inference;
  std::uint64_t id_base = 1000000;  // held-out scene ids start here

  void validate() const;
};

nlohmann::json to_json(const PlannerEvalConfig& c);
PlannerEvalConfig planner_eval_config_from_json(const nlohmann::json& j);

/// Held-out object `object` at pose `pose`: shape from one draw, placement and
/// viewpoint from another. Re-draws the placement if the view is unusable.
std::pair<SceneSpec, ObjectRep> held_out_scene(std::size_t object, std::size_t pose, std::uint64_t seed,
                                               const DatasetConfig& cfg, std::uint64_t id_base);

struct TrialResult {
  std::size_t object = 0, pose = 0;
  GraspType type = GraspType::Side;
  PriorKind prior = PriorKind::Uniform;
  bool success = false;
  int attempts_used = 0;
  bool reachable = false;
  double success_prob = 0.0, init_success_prob = 0.0;
  GraspConfig theta;
};

struct PlannerEvalReport {
  std::vector<TrialResult> trials;  // object, pose, type, prior order

  /// Success rate for one prior; `type` empty means both types.
  double success_rate(PriorKind prior, std::optional<GraspType> type = std::nullopt) const;
  /// Rows prior x {side, overhead, all}.
  nlohmann::json table() const;
  std::string table_csv() const;
};

PlannerEvalReport run_planner_eval(const ModelBundle& bundle, const DatasetConfig& data_cfg,
                                   const PlannerEvalConfig& cfg, std::uint64_t seed, int threads);

nlohmann::json to_json(const TrialResult& t);

}  // namespace graspinf
