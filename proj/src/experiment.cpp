#include "graspinf/experiment.hpp"

#include <cstdio>

#include "graspinf/error.hpp"
#include "graspinf/heuristic.hpp"
#include "graspinf/parallel.hpp"

namespace graspinf {

PlanPrior make_plan_prior(PriorKind kind, const ModelBundle& bundle, const ObjectRep& rep,
                          const HeuristicSettings& heuristic, const std::optional<Vec3>& toward) {
  PlanPrior p;
  p.kind = kind;
  p.box = bundle.hand.bound_box();
  switch (kind) {
    case PriorKind::Uniform: {
      const BoundingBox3 box = bounding_box(rep);
      const BoundBox bounds = p.box;
      p.initializer = [box, bounds, heuristic, toward](GraspType type, std::mt19937_64& rng) {
        return heuristic_grasp(box, type, rng, heuristic, bounds, toward).to_vector();
      };
      break;
    }
    case PriorKind::Gmm:
      if (!bundle.has_gmm) throw Error(Errc::ConfigError, "model bundle has no GMM prior (run fit-gmm)");
      p.mixture = bundle.gmm;
      p.mixture->box = p.box;
      break;
    case PriorKind::Mdn:
      if (!bundle.has_mdn) throw Error(Errc::ConfigError, "model bundle has no MDN (run train-mdn)");
      p.mixture = mdn_prior_for(bundle.encoder, bundle.mdn, rep, bundle.preset.mdn.components,
                                bundle.preset.mdn.var_floor, p.box);
      break;
  }
  return p;
}

void PlannerEvalConfig::validate() const {
  if (objects < 1 || poses < 1) throw Error(Errc::ConfigError, "need at least one object and one pose");
  if (attempts < 1) throw Error(Errc::ConfigError, "attempts must be at least 1");
  if (priors.empty()) throw Error(Errc::ConfigError, "no priors to evaluate");
  inference.validate();
}

nlohmann::json to_json(const PlannerEvalConfig& c) {
  std::vector<std::string> priors;
  for (PriorKind k : c.priors) priors.push_back(to_string(k));
  return {{"objects", c.objects},   {"poses", c.poses},
          {"attempts", c.attempts}, {"priors", priors},
          {"inference", to_json(c.inference)}, {"id_base", c.id_base}};
}

PlannerEvalConfig planner_eval_config_from_json(const nlohmann::json& j) {
  PlannerEvalConfig c;
  c.objects = j.value("objects", c.objects);
  c.poses = j.value("poses", c.poses);
  c.attempts = j.value("attempts", c.attempts);
  if (j.contains("priors")) {
    c.priors.clear();
    for (const auto& p : j["priors"]) c.priors.push_back(prior_kind_from_string(p.get<std::string>()));
  }
  if (j.contains("inference")) c.inference = inference_settings_from_json(j["inference"]);
  c.id_base = j.value("id_base", c.id_base);
  c.validate();
  return c;
}

std::pair<SceneSpec, ObjectRep> held_out_scene(std::size_t object, std::size_t pose, std::uint64_t seed,
                                               const DatasetConfig& cfg, std::uint64_t id_base) {
  const std::uint64_t id = id_base + object * 1000 + pose;
  const SceneSpec shape = sample_scene(id_base + object * 1000 + 999, seed, cfg.sampling);
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    SceneSpec scene = sample_scene(id, seed + draw * 0x9E3779B97F4A7C15ull, cfg.sampling);
    scene.primitive = shape.primitive;
    scene.dimensions = shape.dimensions;
    try {
      return observe_scene(id, seed, cfg, scene);
    } catch (const Error& e) {
      if (e.code() == Errc::NoVisibleSurface || e.code() == Errc::NoPlaneFound || e.code() == Errc::EmptySegment ||
          e.code() == Errc::DegenerateGeometry)
        continue;
      throw;
    }
  }
  throw Error(Errc::NoVisibleSurface, "held-out object " + std::to_string(object) + " pose " + std::to_string(pose) +
                                          " unusable after 10 placements");
}

double PlannerEvalReport::success_rate(PriorKind prior, std::optional<GraspType> type) const {
  std::size_t n = 0, ok = 0;
  for (const TrialResult& t : trials) {
    if (t.prior != prior || (type && t.type != *type)) continue;
    ++n;
    ok += t.success;
  }
  return n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0;
}

nlohmann::json PlannerEvalReport::table() const {
  std::vector<PriorKind> seen;
  for (const TrialResult& t : trials)
    if (std::find(seen.begin(), seen.end(), t.prior) == seen.end()) seen.push_back(t.prior);
  nlohmann::json rows = nlohmann::json::array();
  for (PriorKind k : seen) {
    std::size_t n = 0;
    for (const TrialResult& t : trials) n += t.prior == k;
    rows.push_back({{"prior", to_string(k)},
                    {"side", success_rate(k, GraspType::Side)},
                    {"overhead", success_rate(k, GraspType::Overhead)},
                    {"all", success_rate(k)},
                    {"trials", n}});
  }
  return rows;
}

std::string PlannerEvalReport::table_csv() const {
  std::string out = "prior,side,overhead,all,trials\n";
  char buf[160];
  for (const auto& row : table()) {
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%zu\n", row["prior"].get<std::string>().c_str(),
                  row["side"].get<double>(), row["overhead"].get<double>(), row["all"].get<double>(),
                  row["trials"].get<std::size_t>());
    out += buf;
  }
  return out;
}

PlannerEvalReport run_planner_eval(const ModelBundle& bundle, const DatasetConfig& data_cfg,
                                   const PlannerEvalConfig& cfg, std::uint64_t seed, int threads) {
  cfg.validate();
  if (!bundle.has_classifier) throw Error(Errc::ConfigError, "model bundle has no classifier (run train-classifier)");
  const std::size_t n_scenes = cfg.objects * cfg.poses;
  std::vector<std::pair<SceneSpec, ObjectRep>> scenes(n_scenes);
  parallel_for(n_scenes, threads, [&](std::size_t i) {
    scenes[i] = held_out_scene(i / cfg.poses, i % cfg.poses, seed, data_cfg, cfg.id_base);
  });

  const std::array<GraspType, 2> types{GraspType::Side, GraspType::Overhead};
  const std::size_t per_scene = types.size() * cfg.priors.size();
  PlannerEvalReport report;
  report.trials.resize(n_scenes * per_scene);
  parallel_for(report.trials.size(), threads, [&](std::size_t i) {
    const std::size_t s = i / per_scene, t = (i % per_scene) / cfg.priors.size(), p = i % cfg.priors.size();
    const auto& [scene, rep] = scenes[s];
    TrialResult& r = report.trials[i];
    r.object = s / cfg.poses;
    r.pose = s % cfg.poses;
    r.type = types[t];
    r.prior = cfg.priors[p];
    const ClassifierLikelihood lik(bundle.encoder, bundle.classifier, rep);
    const PlanPrior prior = make_plan_prior(r.prior, bundle, rep, data_cfg.heuristic, robot_direction(scene, rep.frame));
    InferenceSettings settings = cfg.inference;
    settings.threads = 1;
    for (int a = 0; a < cfg.attempts; ++a) {
      // Same draws for every prior so they face identical attempts.
      std::mt19937_64 rng = derived_rng(seed, s * 2 + t, 100 + static_cast<std::uint64_t>(a));
      ++r.attempts_used;
      PlanResult plan;
      try {
        plan = plan_grasp(lik, prior, r.type, settings, rng);
      } catch (const Error& e) {
        if (e.code() == Errc::AllRestartsFailed) continue;
        throw;
      }
      r.success_prob = plan.success_prob;
      r.init_success_prob = plan.init_success_prob;
      r.theta = plan.theta;
      if (!grasp_reachable(scene, rep.frame, plan.theta, data_cfg.oracle)) continue;
      r.reachable = true;
      r.success = oracle_label(scene, rep.frame, plan.theta, data_cfg.oracle) == 1;
      break;
    }
  });
  return report;
}

nlohmann::json to_json(const TrialResult& t) {
  return {{"object", t.object},
          {"pose", t.pose},
          {"grasp_type", to_string(t.type)},
          {"prior", to_string(t.prior)},
          {"success", t.success},
          {"attempts_used", t.attempts_used},
          {"reachable", t.reachable},
          {"success_prob", t.success_prob},
          {"init_success_prob", t.init_success_prob},
          {"theta", to_json(t.theta)}};
}

}  // namespace graspinf
