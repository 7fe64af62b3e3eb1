// End-to-end acceptance run. Usage: acceptance <graspinf-cli> <work-dir>
//
// Runs the desk pipeline twice through the CLI (gen-data, pretrain-encoder,
// train-classifier, fit-gmm, train-mdn, eval-planner), checks the in-process
// properties, and prints one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <array>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/inference.hpp"
#include "graspinf/io.hpp"
#include "graspinf/models.hpp"
#include "graspinf/priors.hpp"
#include "graspinf/training.hpp"
#include "test_support.hpp"

using namespace graspinf;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using Vec = Eigen::VectorXd;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  std::string out(static_cast<std::size_t>(std::snprintf(nullptr, 0, f, args...)), '\0');
  std::snprintf(out.data(), out.size() + 1, f, args...);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Pipeline ---------------------------------------------------------------------

struct PipelineRun {
  bool ok = true;
  std::string failed_step;
  std::map<std::string, double> seconds;
};

PipelineRun run_pipeline(const std::string& cli, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = (dir / "data").string(), b = (dir / "bundle").string(), e = (dir / "eval").string();
  const std::string seed = " --seed " + std::to_string(kSeed);
  const std::vector<std::pair<std::string, std::string>> steps{
      {"gen-data", "gen-data --preset desk" + seed + " --out " + d},
      {"pretrain-encoder", "pretrain-encoder --preset desk" + seed + " --data " + d + " --out " + b},
      {"train-classifier", "train-classifier" + seed + " --data " + d + " --bundle " + b},
      {"fit-gmm", "fit-gmm" + seed + " --data " + d + " --bundle " + b},
      {"train-mdn", "train-mdn" + seed + " --data " + d + " --bundle " + b},
      {"eval-planner", "eval-planner" + seed + " --bundle " + b + " --out " + e},
  };
  PipelineRun run;
  for (const auto& [name, args] : steps) {
    const auto t0 = Clock::now();
    const int rc = std::system((cli + " " + args + " > " + (dir / (name + ".log")).string() + " 2>&1").c_str());
    run.seconds[name] = seconds_since(t0);
    std::fprintf(stderr, "  %-17s %7.1f s (exit %d)\n", name.c_str(), run.seconds[name], rc);
    if (rc != 0) {
      run.ok = false;
      run.failed_step = name;
      break;
    }
  }
  return run;
}

// 1: gradients ------------------------------------------------------------------

struct GradStats {
  double worst = 0.0;
  int instances = 0;
  // worst instance, rechecked at h/10 to show the discrepancy shrinks as h^2
  double worst_at_tenth = 0.0;
};

void check_gradient(GradStats& s, const std::function<double(const std::vector<double>&)>& f,
                    const std::vector<double>& x, const std::vector<double>& analytic) {
  const double e = oracle::gradient_relative_error(analytic, oracle::central_difference(f, x, 1e-5));
  if (e >= s.worst) {
    s.worst = e;
    s.worst_at_tenth = oracle::gradient_relative_error(analytic, oracle::central_difference(f, x, 1e-6));
  }
  ++s.instances;
}

ConfigVector random_theta(std::mt19937_64& rng, const BoundBox& box, double margin = 0.02) {
  std::uniform_real_distribution<double> u(margin, 1.0 - margin);
  ConfigVector t;
  for (int d = 0; d < 14; ++d) t[d] = box.lower[d] + u(rng) * (box.upper[d] - box.lower[d]);
  return t;
}

ConfigVector clamp_inside(ConfigVector t, const BoundBox& box, double margin = 0.02) {
  for (int d = 0; d < 14; ++d) {
    const double span = box.upper[d] - box.lower[d];
    t[d] = std::clamp(t[d], box.lower[d] + margin * span, box.upper[d] - margin * span);
  }
  return t;
}

std::vector<double> as_std(const ConfigVector& v) { return {v.data(), v.data() + 14}; }

// Instances: 100 held-out test objects, theta uniform over the bound box (the NLL
// is taken at the recorded grasp, the GMM around its components). Reported but
// not gated: the NLL at uniform theta, and the MAP objective at draws from the
// object's MDN prior, where near-floor variances make h=1e-5 truncation visible.
Verdict gradient_suite(const ModelBundle& bundle, const std::vector<GraspRecord>& test) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const BoundBox box = bundle.hand.bound_box();
  const std::size_t k = bundle.preset.mdn.components;
  const double floor = bundle.preset.mdn.var_floor;
  GradStats cls, mdn, gmm, map, mdn_box, map_modes;
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t i = 0; i < 100 && i < test.size(); ++i) {
    const GraspRecord& r = test[i * test.size() / 100];
    const ObjectRep& rep = r.rep;
    const ClassifierLikelihood lik(bundle.encoder, bundle.classifier, rep);
    const std::vector<const ObjectRep*> reps{&rep};
    const nn::Tensor feat = encode(bundle.encoder, reps);
    const auto pass = bundle.mdn.forward(
        {{"voxel_feat", feat}, {"size", nn::Tensor({1, 3}, {rep.size.x(), rep.size.y(), rep.size.z()})}},
        nn::Mode::Eval);
    const std::vector<double> out(pass.output().data().begin(), pass.output().data().end());
    PlanPrior prior;
    prior.kind = PriorKind::Mdn;
    prior.mixture = mdn_prior_for(bundle.encoder, bundle.mdn, rep, k, floor, box);

    const ConfigVector theta = random_theta(rng, box);
    ConfigVector g;
    lik.probability(theta, &g);
    check_gradient(cls, [&](const std::vector<double>& x) {
      return lik.probability(Eigen::Map<const ConfigVector>(x.data()), nullptr);
    }, as_std(theta), as_std(g));

    auto nll_at = [&](GradStats& s, const ConfigVector& t) {
      std::vector<double> go(out.size());
      mdn_nll(out, t, k, floor, go);
      check_gradient(s, [&](const std::vector<double>& o) { return mdn_nll(o, t, k, floor); }, out, go);
    };
    nll_at(mdn, r.theta.to_vector());
    nll_at(mdn_box, theta);

    const std::size_t c = i % bundle.gmm.size();
    ConfigVector near = bundle.gmm.means[c];
    for (int d = 0; d < 14; ++d) near[d] += 2.0 * z(rng) * std::sqrt(bundle.gmm.variances[c][d]);
    const ConfigVector gg = log_density_grad(bundle.gmm, near);
    check_gradient(gmm, [&](const std::vector<double>& x) {
      return log_density(bundle.gmm, Eigen::Map<const ConfigVector>(x.data()));
    }, as_std(near), as_std(gg));

    auto map_at = [&](GradStats& s, const ConfigVector& t) {
      ConfigVector gm;
      map_objective(t, lik, prior, 0.5, &gm);
      check_gradient(s, [&](const std::vector<double>& x) {
        return map_objective(Eigen::Map<const ConfigVector>(x.data()), lik, prior, 0.5);
      }, as_std(t), as_std(gm));
    };
    map_at(map, theta);
    map_at(map_modes, clamp_inside(sample(*prior.mixture, rng), box));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({cls.worst, mdn.worst, gmm.worst, map.worst});
  const int fewest = std::min({cls.instances, mdn.instances, gmm.instances, map.instances});
  return {worst < 1e-4 && fewest >= 100 && secs < 300.0,
          fmt("max relative error: classifier %.1e, MDN NLL %.1e, GMM log-density %.1e, MAP objective %.1e "
              "(%d instances each, h=1e-5, bound 1e-4); not gated: MDN NLL at uniform theta %.1e, MAP at MDN prior "
              "draws %.1e (%.1e at h=1e-6); %.1f s",
              cls.worst, mdn.worst, gmm.worst, map.worst, fewest, mdn_box.worst, map_modes.worst,
              map_modes.worst_at_tenth, secs)};
}

// 2: optimizer ------------------------------------------------------------------

Verdict optimizer_contract() {
  std::mt19937_64 rng(202);
  double worst_gap = 0.0;
  bool feasible = true, monotone = true;
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd a = oracle::random_spd(rng, 14, 0.1, 10.0);
    const Vec b = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, -5, 5).data(), 14);
    const Vec lo = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, -1.0, -0.1).data(), 14);
    const Vec hi = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, 0.1, 1.0).data(), 14);
    const Vec x0 = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, -0.1, 0.1).data(), 14);
    const VectorObjective f = [&](const Vec& x, Vec* g) {
      feasible = feasible && (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
      if (g) *g = a * x - b;
      return 0.5 * x.dot(a * x) - b.dot(x);
    };
    const MinimizeResult r = minimize_bounded(f, x0, lo, hi, {});
    const Vec ref = oracle::projected_gradient_descent(a, b, x0, lo, hi, 10.0);
    worst_gap = std::max(worst_gap, std::abs(r.value - (0.5 * ref.dot(a * ref) - b.dot(ref))));
    for (std::size_t i = 1; i < r.trace.size(); ++i) monotone = monotone && r.trace[i] <= r.trace[i - 1];
  }
  return {worst_gap < 1e-4 && feasible && monotone,
          fmt("50 quadratics: max |f - f_oracle| %.1e (bound 1e-4), iterates feasible: %s, traces monotone: %s",
              worst_gap, feasible ? "yes" : "no", monotone ? "yes" : "no")};
}

// 3: EM ---------------------------------------------------------------------------

Verdict em_properties(const json& grasp_gmm_report) {
  bool monotone = true, recovered = true;
  double worst_mean = 0.0, worst_weight = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(300 + trial);
    const double sigma = 0.05 + 0.01 * trial, frac = 0.25 + 0.05 * trial;
    ConfigVector a = Eigen::Map<const ConfigVector>(oracle::random_vector(rng, 14, -1, 1).data());
    ConfigVector dir = Eigen::Map<const ConfigVector>(oracle::random_vector(rng, 14, -1, 1).data());
    const ConfigVector b = a + 10.0 * sigma * dir.normalized();
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<ConfigVector> data;
    const std::size_t n = 3000, na = static_cast<std::size_t>(frac * n);
    for (std::size_t i = 0; i < n; ++i) {
      ConfigVector x = i < na ? a : b;
      for (int d = 0; d < 14; ++d) x[d] += g(rng);
      data.push_back(x);
    }
    std::shuffle(data.begin(), data.end(), rng);
    GmmFitOptions opt;
    opt.seed = 400 + trial;
    GmmFitReport report;
    const MixturePrior p = fit_gmm(data, opt, &report);
    for (std::size_t i = 1; i < report.log_likelihood.size(); ++i)
      monotone = monotone && report.log_likelihood[i] >= report.log_likelihood[i - 1];
    const std::size_t ia = (p.means[0] - a).norm() < (p.means[1] - a).norm() ? 0 : 1, ib = 1 - ia;
    const double em = std::max((p.means[ia] - a).cwiseAbs().maxCoeff(), (p.means[ib] - b).cwiseAbs().maxCoeff()) / sigma;
    const double ew = std::max(std::abs(p.weights[ia] - frac), std::abs(p.weights[ib] - (1.0 - frac)));
    worst_mean = std::max(worst_mean, em);
    worst_weight = std::max(worst_weight, ew);
    recovered = recovered && em < 0.1 && ew < 0.05;
  }
  // The fit on real grasp data must be monotone as well (no reseeds there).
  const auto ll = grasp_gmm_report.at("log_likelihood").get<std::vector<double>>();
  bool data_monotone = grasp_gmm_report.at("reseeded").get<int>() == 0;
  for (std::size_t i = 1; i < ll.size(); ++i) data_monotone = data_monotone && ll[i] >= ll[i - 1];
  return {monotone && recovered && data_monotone,
          fmt("10 two-cluster fits: log-likelihood non-decreasing: %s; worst mean error %.3f sigma (bound 0.1), "
              "worst weight error %.3f (bound 0.05); grasp-data fit monotone over %zu iterations: %s",
              monotone ? "yes" : "no", worst_mean, worst_weight, ll.size(), data_monotone ? "yes" : "no")};
}

// 4: learning signal ------------------------------------------------------------

Verdict learning_signal(const fs::path& run, const ModelBundle& bundle, const std::vector<GraspRecord>& test) {
  const json data_manifest = read_json_file((run / "data/manifest.json").string());
  const std::size_t attempts =
      data_manifest["train"]["records"].get<std::size_t>() + data_manifest["test"]["records"].get<std::size_t>();
  // Recount from the test records instead of trusting the report.
  const FeatureSet fs = build_feature_set(bundle.encoder, test);
  const std::vector<double> probs = predict(bundle.classifier, fs);
  const oracle::Confusion c = oracle::recount(probs, fs.labels, 0.5);
  const double n = static_cast<double>(test.size());
  const double acc = static_cast<double>(c.tp + c.tn) / n;
  const double pos = static_cast<double>(c.tp + c.fn) / n;
  const double majority = std::max(pos, 1.0 - pos);
  const double prec = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  const double rec = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  const json report = read_json_file((run / "bundle/classifier_report.json").string());
  const bool consistent = std::abs(report["test"]["all"]["accuracy"].get<double>() - acc) < 1e-12 &&
                          std::abs(report["test"]["all"]["f1"].get<double>() - f1) < 1e-12;
  return {attempts == 1000 && acc - majority >= 0.10 && f1 > 0.4 && consistent,
          fmt("%zu attempts; test accuracy %.4f vs majority baseline %.4f (lift %.4f, need >= 0.10); F1 %.4f "
              "(need > 0.4); report matches recount: %s",
              attempts, acc, majority, acc - majority, f1, consistent ? "yes" : "no")};
}

// 5, 6: planner -----------------------------------------------------------------

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<json> read_trials(const fs::path& run) {
  std::vector<json> out;
  std::ifstream in(run / "eval/trials.jsonl");
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

Verdict planning_improvement(const std::vector<json>& trials) {
  std::vector<double> fin, init;
  std::size_t improved = 0;
  for (const json& t : trials) {
    fin.push_back(t["success_prob"].get<double>());
    init.push_back(t["init_success_prob"].get<double>());
    improved += fin.back() > init.back();
  }
  const double frac = static_cast<double>(improved) / static_cast<double>(trials.size());
  const double mf = median(fin), mi = median(init);
  return {trials.size() >= 200 && frac >= 0.9 && mf - mi >= 0.1,
          fmt("%zu (object, initialization) pairs; success_prob raised in %.1f%% (need >= 90%%); median final %.4f vs "
              "median initialization %.4f (gap %.4f, need >= 0.1)",
              trials.size(), 100.0 * frac, mf, mi, mf - mi)};
}

Verdict prior_ordering(const std::vector<json>& trials, double eval_seconds) {
  std::map<std::string, std::array<double, 3>> ok, n;  // side, overhead, all
  std::set<std::pair<std::size_t, std::size_t>> scenes;
  for (const json& t : trials) {
    const std::string p = t["prior"];
    const int type = t["grasp_type"] == "side" ? 0 : 1;
    const double s = t["success"].get<bool>() ? 1.0 : 0.0;
    ok[p][type] += s;
    n[p][type] += 1;
    ok[p][2] += s;
    n[p][2] += 1;
    scenes.insert({t["object"].get<std::size_t>(), t["pose"].get<std::size_t>()});
  }
  auto rate = [&](const std::string& p, int i) { return n[p][i] > 0 ? ok[p][i] / n[p][i] : 0.0; };
  const double u = rate("uniform", 2), g = rate("gmm", 2), m = rate("mdn", 2);
  const bool shape = scenes.size() == 40 && trials.size() == 40 * 2 * 3;
  return {shape && m >= g && g >= u && m - u >= 0.15 && eval_seconds < 1800.0,
          fmt("8 objects x 5 poses x 2 types: success side/overhead/all - uniform %.3f/%.3f/%.3f, gmm %.3f/%.3f/%.3f, "
              "mdn %.3f/%.3f/%.3f; MDN - uniform = %.1f pp (need >= 15); eval %.1f s (limit 1800)",
              rate("uniform", 0), rate("uniform", 1), u, rate("gmm", 0), rate("gmm", 1), g, rate("mdn", 0),
              rate("mdn", 1), m, 100.0 * (m - u), eval_seconds)};
}

// 7: determinism ----------------------------------------------------------------

Verdict determinism(const std::string& cli, const fs::path& a, const fs::path& b) {
  const PipelineRun second = run_pipeline(cli, b);
  if (!second.ok) return {false, "second run failed at " + second.failed_step};
  std::size_t files = 0;
  std::vector<std::string> differ;
  for (const auto& sub : {"data", "bundle", "eval"})
    for (const auto& entry : fs::recursive_directory_iterator(a / sub)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), a);
      ++files;
      if (!fs::exists(b / rel) || slurp(entry.path()) != slurp(b / rel)) differ.push_back(rel.string());
    }
  std::string list;
  for (const auto& d : differ) list += " " + d;
  return {differ.empty() && files > 0,
          fmt("two full runs with --seed %llu: %zu output files compared byte for byte, %zu differ%s",
              static_cast<unsigned long long>(kSeed), files, differ.size(), list.c_str())};
}

// 8: perception -----------------------------------------------------------------

Verdict perception_invariants() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> shift(-1.0, 1.0), ext(0.02, 0.14);
  int failures = 0, identical = 0;
  double worst_orth = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    // Well separated extents so the principal axes are defined.
    std::array<double, 3> e{ext(rng), ext(rng), ext(rng)};
    std::sort(e.begin(), e.end(), std::greater<>());
    e[1] = std::min(e[1], 0.75 * e[0]);
    e[2] = std::min(e[2], 0.75 * e[1]);
    const PointCloud box = oracle::box_surface(rng, Vec3::Zero(), Vec3(e[0], e[1], e[2]), 1200);
    const ObjectFrame f0 = estimate_frame(box);
    const ObjectRep r0 = voxelize(box, f0);
    const Mat3 q = oracle::random_rotation(rng);
    const Vec3 t(shift(rng), shift(rng), shift(rng));
    PointCloud moved;
    for (const Vec3& p : box.points) moved.points.push_back(q * p + t);
    const ObjectFrame f1 = estimate_frame(moved);
    const double orth = std::max((f1.axes.transpose() * f1.axes - Mat3::Identity()).cwiseAbs().maxCoeff(),
                                 std::abs(f1.axes.determinant() - 1.0));
    worst_orth = std::max(worst_orth, orth);
    const Eigen::Vector3i s = oracle::axis_signs(q * f0.axes, f1.axes);
    const ObjectRep r1 = voxelize(moved, f1);
    const bool ok = orth < 1e-9 && s.cwiseAbs().minCoeff() != 0 && s.prod() == 1 &&
                    (r1.size - r0.size).cwiseAbs().maxCoeff() < 1e-9 && oracle::grids_equal_under_flips(r0, r1, s);
    failures += !ok;
    identical += ok && s == Eigen::Vector3i::Ones() && r0.grid == r1.grid;
  }
  return {failures == 0,
          fmt("1000 random boxes under random rigid transforms: %d failures; worst orthonormality/determinant "
              "error %.1e; %d trials with no axis flip and bit-identical grids",
              failures, worst_orth, identical)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: acceptance <graspinf-cli> <work-dir>\n");
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argv[2], run_a = work / "run_a", run_b = work / "run_b";
  std::map<int, std::pair<std::string, Verdict>> results;
  auto record = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    try {
      results[id] = {name, fn()};
    } catch (const std::exception& e) {
      results[id] = {name, {false, std::string("exception: ") + e.what()}};
    }
  };

  std::fprintf(stderr, "desk pipeline, run A:\n");
  const PipelineRun first = run_pipeline(cli, run_a);
  record(8, "perception invariants", perception_invariants);
  record(2, "optimizer contract", optimizer_contract);
  if (first.ok) {
    const ModelBundle bundle = ModelBundle::load((run_a / "bundle").string());
    const auto test = read_records((run_a / "data/test.jsonl").string());
    record(1, "gradient suite", [&] { return gradient_suite(bundle, test); });
    record(3, "EM properties",
           [&] { return em_properties(read_json_file((run_a / "bundle/gmm_report.json").string())); });
    record(4, "learning signal", [&] { return learning_signal(run_a, bundle, test); });
    const std::vector<json> trials = read_trials(run_a);
    record(5, "planning improvement", [&] { return planning_improvement(trials); });
    record(6, "prior ordering", [&] { return prior_ordering(trials, first.seconds.at("eval-planner")); });
    std::fprintf(stderr, "desk pipeline, run B:\n");
    record(7, "determinism", [&] { return determinism(cli, run_a, run_b); });
  } else {
    for (const auto& [id, name] : std::vector<std::pair<int, std::string>>{{1, "gradient suite"},
                                                                          {3, "EM properties"},
                                                                          {4, "learning signal"},
                                                                          {5, "planning improvement"},
                                                                          {6, "prior ordering"},
                                                                          {7, "determinism"}})
      results[id] = {name, {false, "pipeline failed at " + first.failed_step}};
  }

  // also kept next to the runs, since ctest hides the output of passing tests
  std::FILE* copy = std::fopen((work / "acceptance_results.txt").c_str(), "w");
  auto line = [&](const std::string& text) {
    std::printf("%s\n", text.c_str());
    if (copy) std::fprintf(copy, "%s\n", text.c_str());
  };
  int failed = 0;
  for (const auto& [id, r] : results) {
    line(fmt("%s  criterion %d  %-21s %s", r.second.pass ? "PASS" : "FAIL", id, r.first.c_str(),
             r.second.detail.c_str()));
    failed += !r.second.pass;
  }
  line(fmt("%d of %zu criteria passed", static_cast<int>(results.size()) - failed, results.size()));
  if (copy) std::fclose(copy);
  return failed == 0 ? 0 : 1;
}
