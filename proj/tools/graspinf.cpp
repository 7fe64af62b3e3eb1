// graspinf: data generation, training and planning from the command line.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "graspinf/error.hpp"
#include "graspinf/experiment.hpp"
#include "graspinf/heuristic.hpp"
#include "graspinf/io.hpp"
#include "graspinf/models.hpp"
#include "graspinf/parallel.hpp"
#include "graspinf/training.hpp"

using namespace graspinf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

struct Options {
  std::string config;
  std::uint64_t seed = 1;
  std::string preset = "desk";
  std::string out;
  std::string data;
  std::string bundle;
  std::string cloud;
  std::string prior = "mdn";
  std::string type = "side";
  std::string toward;
  std::size_t record = 0;
};

// --config file: a JSON object with optional sections "dataset", "pretrain",
// "classifier", "mdn", "gmm", "inference", "eval". Each section is merged
// over the preset defaults.
json overrides(const Options& o, const std::string& section) {
  if (o.config.empty()) return json::object();
  const json doc = read_json_file(o.config);
  if (!doc.is_object()) throw Error(Errc::ConfigError, o.config + ": top level must be a JSON object");
  return doc.value(section, json::object());
}

// Type errors in user overrides are configuration errors, not bad data.
template <class F>
auto from_config(const std::string& section, F&& parse) {
  try {
    return parse();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, "config section '" + section + "': " + e.what());
  }
}

json merged(json base, const json& patch) {
  base.merge_patch(patch);
  return base;
}

DatasetConfig dataset_config(const Options& o) {
  DatasetConfig d;
  if (o.preset == "desk") {
    d.n_scenes = 250;
    d.grasps_per_scene = 4;
    d.resolution = 16;
  } else if (o.preset != "full") {
    throw Error(Errc::ConfigError, "unknown preset '" + o.preset + "' (desk|full)");
  }
  return from_config("dataset", [&] { return dataset_config_from_json(merged(to_json(d), overrides(o, "dataset"))); });
}

Schedule schedule_for(const Options& o, const std::string& section, Schedule defaults) {
  return from_config(section, [&] { return schedule_from_json(overrides(o, section), defaults); });
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw Error(Errc::ConfigError, flag + " is required");
}

void require_dir(const std::string& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw Error(Errc::FileError, what + " directory '" + dir + "' does not exist");
}

// CSV outputs start with a comment line naming the format and config hash.
void write_csv(const std::string& path, const std::string& kind, const std::string& hash, const std::string& body) {
  write_text_file(path, "# " + kind + " format_version " + std::to_string(kFormatVersion) + " config_hash " + hash +
                            "\n" + body);
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileError, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

json stamp(const std::string& kind, const json& config) {
  return {{"format", kind}, {"format_version", kFormatVersion}, {"config_hash", config_hash(config)}};
}

// Bundle manifest ------------------------------------------------------------

json read_bundle_manifest(const std::string& dir) {
  require_dir(dir, "bundle");
  return read_json_file(dir + "/manifest.json");
}

void record_artifact(const std::string& dir, json manifest, const std::string& name, const json& entry) {
  manifest["artifacts"][name] = entry;
  write_json_file(dir + "/manifest.json", manifest);
}

struct LoadedData {
  json manifest;
  std::vector<GraspRecord> train, test;
};

LoadedData load_data(const Options& o) {
  require(o.data, "--data");
  require_dir(o.data, "data");
  LoadedData d;
  d.manifest = read_json_file(o.data + "/manifest.json");
  d.train = read_records(o.data + "/train.jsonl");
  d.test = read_records(o.data + "/test.jsonl");
  if (d.train.empty()) throw Error(Errc::DataError, o.data + ": training split is empty");
  return d;
}

std::string preset_name(const json& manifest) { return manifest.at("preset").at("name").get<std::string>(); }

void save_model(nn::NetModel& m, const std::string& path, const json& config) {
  m.metadata()["config_hash"] = config_hash(config);
  m.save(path);
}

// Commands -------------------------------------------------------------------

int gen_data(const Options& o) {
  require(o.out, "--out");
  const DatasetConfig cfg = dataset_config(o);
  const json config = {{"command", "gen-data"}, {"preset", o.preset}, {"seed", o.seed}, {"dataset", to_json(cfg)}};
  const Dataset data = generate_dataset(cfg, o.seed, thread_budget());
  write_dataset(data, cfg, o.seed, o.out, {{"preset", o.preset}, {"producer_config_hash", config_hash(config)}});
  DatasetSummary s;
  for (const auto* split : {&data.train, &data.test})
    for (const GraspRecord& r : *split) s.add(r);
  std::printf("%zu records (%zu train, %zu test), success rate %.3f\n", s.records, data.train.size(),
              data.test.size(), s.success_rate());
  return 0;
}

int pretrain(const Options& o) {
  require(o.out, "--out");
  const LoadedData d = load_data(o);
  const ArchitecturePreset arch = architecture_preset(o.preset);
  const Schedule sched = schedule_for(o, "pretrain", pretrain_schedule(o.preset));
  if (d.train.front().rep.resolution != arch.encoder.grid)
    throw Error(Errc::DataError, "dataset grids are " + std::to_string(d.train.front().rep.resolution) +
                                     "^3 but preset '" + o.preset + "' expects " + std::to_string(arch.encoder.grid) +
                                     "^3");
  const json config = {{"command", "pretrain-encoder"}, {"seed", o.seed}, {"architecture", to_json(arch)},
                       {"schedule", to_json(sched)}, {"data", d.manifest.at("config_hash")}};
  PretrainResult r = pretrain_encoder(autoencoder_pairs(d.train), arch.encoder, sched, o.seed,
                                      autoencoder_pairs(d.test));
  ensure_directory(o.out);
  for (const char* stale : {"classifier.cbor", "mdn.cbor", "gmm.json"}) fs::remove(fs::path(o.out) / stale);
  save_model(r.encoder, o.out + "/encoder.cbor", config);
  save_model(r.decoder, o.out + "/decoder.cbor", config);
  write_csv(o.out + "/pretrain_curve.csv", "graspinf-curve", config_hash(config), r.curve.to_csv());
  const double val = r.curve.rows.empty() ? 0.0 : r.curve.rows.back().test_metric;
  json report = stamp("graspinf-pretrain-report", config);
  report.update({{"config", config}, {"train_voxel_accuracy", r.voxel_accuracy}, {"test_voxel_accuracy", val}});
  write_json_file(o.out + "/pretrain_report.json", report);
  // A fresh bundle: later stages add their artifacts to this manifest.
  json manifest = stamp("graspinf-bundle", config);
  manifest.update({{"preset", to_json(arch)},
                   {"hand", to_json(dataset_config_from_json(d.manifest.at("config")).hand)},
                   {"dataset_config", d.manifest.at("config")},
                   {"artifacts", json::object()}});
  record_artifact(o.out, manifest, "encoder", {{"file", "encoder.cbor"}, {"config_hash", config_hash(config)}});
  std::printf("voxel accuracy: train %.4f, test %.4f\n", r.voxel_accuracy, val);
  return 0;
}

struct BundleAndData {
  json manifest;
  ModelBundle bundle;
  LoadedData data;
  FeatureSet train, test;
};

BundleAndData features_for(const Options& o) {
  require(o.bundle, "--bundle");
  BundleAndData b{read_bundle_manifest(o.bundle), ModelBundle::load(o.bundle), load_data(o), {}, {}};
  b.train = build_feature_set(b.bundle.encoder, b.data.train);
  b.test = build_feature_set(b.bundle.encoder, b.data.test);
  return b;
}

int train_classifier_cmd(const Options& o) {
  BundleAndData b = features_for(o);
  const std::string preset = preset_name(b.manifest);
  const Schedule sched = schedule_for(o, "classifier", classifier_schedule(preset));
  const json config = {{"command", "train-classifier"}, {"seed", o.seed},
                       {"encoder", b.manifest.at("artifacts").at("encoder").at("config_hash")},
                       {"schedule", to_json(sched)}, {"data", b.data.manifest.at("config_hash")}};
  ClassifierTraining r =
      train_classifier(b.train, b.test, b.bundle.preset.encoder, b.bundle.preset.classifier, sched, o.seed);
  save_model(r.head, o.bundle + "/classifier.cbor", config);
  write_csv(o.bundle + "/classifier_curve.csv", "graspinf-curve", config_hash(config), r.curve.to_csv());
  json report = stamp("graspinf-classifier-report", config);
  report.update({{"config", config}, {"threshold", 0.5}, {"train", r.train.to_json()}, {"test", r.test.to_json()}});
  write_json_file(o.bundle + "/classifier_report.json", report);
  record_artifact(o.bundle, b.manifest, "classifier", {{"file", "classifier.cbor"}, {"config_hash", config_hash(config)}});
  std::printf("test accuracy %.4f (majority %.4f), F1 %.4f\n", r.test.all.accuracy(), r.test.all.majority_baseline(),
              r.test.all.f1());
  return 0;
}

int fit_gmm_cmd(const Options& o) {
  require(o.bundle, "--bundle");
  const json manifest = read_bundle_manifest(o.bundle);
  const LoadedData d = load_data(o);
  const json gmm_cfg = merged({{"components", architecture_preset(preset_name(manifest)).mdn.components}},
                              overrides(o, "gmm"));
  const std::size_t k = from_config("gmm", [&] { return gmm_cfg.at("components").get<std::size_t>(); });
  if (k < 1) throw Error(Errc::ConfigError, "gmm.components must be at least 1");
  const json config = {{"command", "fit-gmm"}, {"seed", o.seed}, {"gmm", gmm_cfg},
                       {"data", d.manifest.at("config_hash")}};
  const HandModel hand = hand_model_from_json(manifest.at("hand"));
  const GmmTraining g = train_gmm(d.train, d.test, k, o.seed, hand.bound_box());
  json prior = to_json(g.prior);
  write_json_file(o.bundle + "/gmm.json", prior);
  json report = stamp("graspinf-gmm-report", config);
  report.update({{"config", config},
                 {"train_nll", g.train_nll},
                 {"test_nll", g.test_nll},
                 {"iterations", g.report.log_likelihood.size()},
                 {"converged", g.report.converged},
                 {"degenerate_events", g.report.degenerate_events},
                 {"reseeded", g.report.reseeded},
                 {"log_likelihood", g.report.log_likelihood}});
  write_json_file(o.bundle + "/gmm_report.json", report);
  record_artifact(o.bundle, manifest, "gmm", {{"file", "gmm.json"}, {"config_hash", config_hash(config)}});
  std::printf("GMM: %zu EM iterations, test NLL %.4f\n", g.report.log_likelihood.size(), g.test_nll);
  return 0;
}

int train_mdn_cmd(const Options& o) {
  BundleAndData b = features_for(o);
  const std::string preset = preset_name(b.manifest);
  const Schedule sched = schedule_for(o, "mdn", mdn_schedule(preset));
  json config = {{"command", "train-mdn"}, {"seed", o.seed},
                 {"encoder", b.manifest.at("artifacts").at("encoder").at("config_hash")},
                 {"schedule", to_json(sched)}, {"data", b.data.manifest.at("config_hash")}};
  // Start from the population GMM when one has been fitted.
  const MixturePrior* init = nullptr;
  if (b.bundle.has_gmm && b.bundle.gmm.weights.size() == b.bundle.preset.mdn.components) {
    init = &b.bundle.gmm;
    config["init"] = b.manifest.at("artifacts").at("gmm").at("config_hash");
  }
  MdnTraining r = train_mdn(b.train, b.test, b.bundle.preset.encoder, b.bundle.preset.mdn, sched, o.seed, init);
  save_model(r.mdn, o.bundle + "/mdn.cbor", config);
  write_csv(o.bundle + "/mdn_curve.csv", "graspinf-curve", config_hash(config), r.curve.to_csv());
  json report = stamp("graspinf-mdn-report", config);
  report.update({{"config", config}, {"train_nll", r.train_nll}, {"test_nll", r.test_nll}});
  write_json_file(o.bundle + "/mdn_report.json", report);
  record_artifact(o.bundle, b.manifest, "mdn", {{"file", "mdn.cbor"}, {"config_hash", config_hash(config)}});
  std::printf("MDN NLL: train %.4f, test %.4f\n", r.train_nll, r.test_nll);
  return 0;
}

Vec3 parse_vec3(const std::string& text) {
  std::stringstream ss(text);
  Vec3 v;
  char sep = 0;
  if (!(ss >> v.x() >> sep >> v.y() >> sep >> v.z()) || !v.allFinite())
    throw Error(Errc::ConfigError, "expected x,y,z but got '" + text + "'");
  return v;
}

int plan_cmd(const Options& o) {
  require(o.cloud, "--cloud");
  require(o.bundle, "--bundle");
  require(o.out, "--out");
  const json manifest = read_bundle_manifest(o.bundle);
  const ModelBundle bundle = ModelBundle::load(o.bundle);
  if (!bundle.has_classifier) throw Error(Errc::ConfigError, "bundle has no classifier (run train-classifier)");
  const DatasetConfig data_cfg = dataset_config_from_json(manifest.at("dataset_config"));
  const InferenceSettings settings =
      from_config("inference", [&] { return inference_settings_from_json(overrides(o, "inference")); });
  const PriorKind kind = prior_kind_from_string(o.prior);
  const GraspType type = grasp_type_from_string(o.type);

  const PointCloud cloud = read_point_cloud(o.cloud);
  RansacSettings ransac = data_cfg.ransac;
  ransac.seed = o.seed;
  const ObjectRep rep = perceive(cloud, ransac, bundle.preset.encoder.grid);
  std::optional<Vec3> toward;
  if (!o.toward.empty()) toward = rep.frame.axes.transpose() * parse_vec3(o.toward).normalized();

  const json config = {{"command", "plan"}, {"seed", o.seed}, {"prior", o.prior}, {"type", o.type},
                       {"inference", to_json(settings)}, {"cloud", file_hash(o.cloud)},
                       {"bundle", manifest.at("artifacts")}};
  const ClassifierLikelihood lik(bundle.encoder, bundle.classifier, rep);
  const PlanPrior prior = make_plan_prior(kind, bundle, rep, data_cfg.heuristic, toward);
  std::mt19937_64 rng(o.seed);
  const PlanResult r = plan_grasp(lik, prior, type, settings, rng);
  json doc = stamp("graspinf-plan", config);
  doc.update({{"config", config}, {"object", {{"frame", to_json(rep.frame)}, {"size", {rep.size.x(), rep.size.y(), rep.size.z()}}}},
              {"result", to_json(r)}});
  const fs::path out(o.out);
  if (out.has_parent_path()) ensure_directory(out.parent_path().string());
  write_json_file(o.out, doc);
  std::printf("success_prob %.4f (initialization %.4f)\n", r.success_prob, r.init_success_prob);
  return 0;
}

int eval_planner_cmd(const Options& o) {
  require(o.bundle, "--bundle");
  require(o.out, "--out");
  const json manifest = read_bundle_manifest(o.bundle);
  const ModelBundle bundle = ModelBundle::load(o.bundle);
  const DatasetConfig data_cfg = dataset_config_from_json(manifest.at("dataset_config"));
  json eval_json = merged(to_json(PlannerEvalConfig{}), overrides(o, "eval"));
  if (!o.config.empty() && read_json_file(o.config).contains("inference"))
    eval_json["inference"] = merged(eval_json["inference"], overrides(o, "inference"));
  const PlannerEvalConfig cfg = from_config("eval", [&] { return planner_eval_config_from_json(eval_json); });
  const json config = {{"command", "eval-planner"}, {"seed", o.seed}, {"eval", to_json(cfg)},
                       {"bundle", manifest.at("artifacts")}, {"oracle", to_json(data_cfg.oracle)}};
  const auto start = std::chrono::steady_clock::now();
  const PlannerEvalReport report = run_planner_eval(bundle, data_cfg, cfg, o.seed, thread_budget());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  ensure_directory(o.out);
  std::string lines;
  for (const TrialResult& t : report.trials) lines += to_json(t).dump() + "\n";
  write_text_file(o.out + "/trials.jsonl", lines);
  write_csv(o.out + "/success_table.csv", "graspinf-eval-table", config_hash(config), report.table_csv());
  json doc = stamp("graspinf-eval-report", config);
  doc.update({{"config", config}, {"table", report.table()}, {"oracle_version", data_cfg.oracle.version}});
  write_json_file(o.out + "/eval_report.json", doc);
  std::cout << report.table_csv();
  std::fprintf(stderr, "eval-planner: %zu trials in %.1f s\n", report.trials.size(), seconds);
  return 0;
}

int export_voxels_cmd(const Options& o) {
  require(o.out, "--out");
  ObjectRep rep;
  json source;
  if (!o.cloud.empty()) {
    RansacSettings ransac;
    ransac.seed = o.seed;
    std::size_t resolution = 32;
    if (!o.bundle.empty())
      resolution = read_bundle_manifest(o.bundle).at("preset").at("encoder").at("grid").get<std::size_t>();
    else if (o.preset == "desk")
      resolution = 16;
    rep = perceive(read_point_cloud(o.cloud), ransac, resolution);
    source = {{"cloud", o.cloud}};
  } else {
    require(o.data, "--data or --cloud");
    const auto records = read_records(o.data + "/train.jsonl");
    if (o.record >= records.size())
      throw Error(Errc::DataError, "record " + std::to_string(o.record) + " out of range (" +
                                       std::to_string(records.size()) + " records)");
    rep = records[o.record].rep;
    source = {{"data", o.data}, {"record", o.record}, {"scene_id", records[o.record].scene.id}};
  }
  const std::size_t r = rep.resolution;
  json occupied = json::array();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < r; ++k)
        if (rep.occupied(i, j, k)) occupied.push_back({i, j, k});
  const json config = {{"command", "export-voxels"}, {"seed", o.seed}, {"source", source}};
  json doc = stamp("graspinf-voxels", config);
  doc.update({{"dims", {r, r, r}},
              {"voxel_size", rep.size.maxCoeff() / static_cast<double>(r)},
              {"index_order", "cell (i, j, k) is flat index (i * R + j) * R + k; i along frame axis 0"},
              {"origin", "grid centre at the object frame origin"},
              {"frame", to_json(rep.frame)},
              {"size", {rep.size.x(), rep.size.y(), rep.size.z()}},
              {"occupied", occupied},
              {"runs", run_length_encode(rep.grid)}});
  const fs::path out(o.out);
  if (out.has_parent_path()) ensure_directory(out.parent_path().string());
  write_json_file(o.out, doc);
  std::printf("%zu occupied of %zu cells\n", occupied.size(), r * r * r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grasp planning as probabilistic inference: data, training and planning tools"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON file with per-stage overrides");
    c->add_option("--seed", o.seed, "seed for every random choice");
    c->add_option("--preset", o.preset, "desk | full")->check(CLI::IsMember({"desk", "full"}));
    c->add_option("--out", o.out, "output directory (file for plan / export-voxels)");
  };
  std::map<CLI::App*, std::function<int(const Options&)>> handlers;
  auto add = [&](const std::string& name, const std::string& help, std::function<int(const Options&)> fn) {
    CLI::App* c = app.add_subcommand(name, help);
    common(c);
    handlers[c] = std::move(fn);
    return c;
  };
  add("gen-data", "render scenes, attempt heuristic grasps, label them with the oracle", gen_data);
  add("pretrain-encoder", "train the voxel autoencoder and freeze its encoder; starts a model bundle", pretrain)
      ->add_option("--data", o.data, "dataset directory")
      ->required();
  for (auto [name, help, fn] : std::initializer_list<std::tuple<const char*, const char*, int (*)(const Options&)>>{
           {"train-classifier", "train the grasp success classifier", train_classifier_cmd},
           {"train-mdn", "train the mixture density network prior", train_mdn_cmd},
           {"fit-gmm", "fit the object-independent GMM prior", fit_gmm_cmd}}) {
    CLI::App* c = add(name, help, fn);
    c->add_option("--data", o.data, "dataset directory")->required();
    c->add_option("--bundle", o.bundle, "model bundle directory")->required();
  }
  CLI::App* plan = add("plan", "plan a grasp for one point cloud", plan_cmd);
  plan->add_option("--cloud", o.cloud, "point cloud (.xyz or .ply)")->required();
  plan->add_option("--bundle", o.bundle, "model bundle directory")->required();
  plan->add_option("--prior", o.prior, "uniform | gmm | mdn")->check(CLI::IsMember({"uniform", "gmm", "mdn"}));
  plan->add_option("--type", o.type, "side | overhead")->check(CLI::IsMember({"side", "overhead"}));
  plan->add_option("--toward", o.toward, "world direction x,y,z from the object to the robot (side faces)");
  CLI::App* eval = add("eval-planner", "held-out objects x poses x grasp types x priors against the oracle",
                       eval_planner_cmd);
  eval->add_option("--bundle", o.bundle, "model bundle directory")->required();
  CLI::App* vox = add("export-voxels", "write an occupancy grid as JSON for external viewers", export_voxels_cmd);
  vox->add_option("--cloud", o.cloud, "point cloud to perceive");
  vox->add_option("--data", o.data, "dataset directory (uses train.jsonl)");
  vox->add_option("--record", o.record, "record index in train.jsonl");
  vox->add_option("--bundle", o.bundle, "bundle whose grid resolution to use with --cloud");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    for (const auto& [cmd, fn] : handlers)
      if (cmd->parsed()) return fn(o);
  } catch (const Error& e) {
    std::cerr << "graspinf: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "graspinf: malformed JSON input: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "graspinf: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
