#include "graspinf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>

#include "graspinf/error.hpp"
#include "graspinf/nn/losses.hpp"
#include "graspinf/nn/optim.hpp"

namespace graspinf {

using nn::NetModel;
using nn::Shape;
using nn::Tensor;

void Schedule::validate() const {
  if (epochs < 1) throw Error(Errc::ConfigError, "epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw Error(Errc::ConfigError, "learning rate must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw Error(Errc::ConfigError, "decay must be in (0, 1]");
  if (batch < 2) throw Error(Errc::ConfigError, "batch size must be at least 2 (batch normalization)");
}

Schedule classifier_schedule(const std::string& preset) {
  if (preset == "full") return {90, 1e-3, {30, 60}, 0.1, 64};
  if (preset == "desk") return {30, 1e-3, {10, 20}, 0.1, 64};
  throw Error(Errc::ConfigError, "unknown preset '" + preset + "'");
}

Schedule mdn_schedule(const std::string& preset) { return classifier_schedule(preset); }

Schedule pretrain_schedule(const std::string& preset) {
  if (preset == "full") return {30, 1e-3, {20}, 0.1, 32};
  if (preset == "desk") return {8, 2e-3, {6}, 0.1, 16};
  throw Error(Errc::ConfigError, "unknown preset '" + preset + "'");
}

nlohmann::json to_json(const Schedule& s) {
  return {{"epochs", s.epochs},
          {"learning_rate", s.learning_rate},
          {"milestones", s.milestones},
          {"decay", s.decay},
          {"batch", s.batch}};
}

Schedule schedule_from_json(const nlohmann::json& j, Schedule d) {
  d.epochs = j.value("epochs", d.epochs);
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  if (j.contains("milestones")) d.milestones = j["milestones"].get<std::vector<int>>();
  d.decay = j.value("decay", d.decay);
  d.batch = j.value("batch", d.batch);
  d.validate();
  return d;
}

std::string TrainingCurve::to_csv() const {
  std::string out = "epoch,learning_rate,train_loss,train_" + metric_name + ",test_loss,test_" + metric_name + "\n";
  char buf[256];
  for (const CurveRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.learning_rate, r.train_loss,
                  r.train_metric, r.test_loss, r.test_metric);
    out += buf;
  }
  return out;
}

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// Batches of `batch` indices; a trailing batch of one sample is folded into
// the previous one so batch statistics stay defined.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + batch));
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
  const std::size_t w = src.sample_size();
  Tensor out({rows.size(), w});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src.raw() + rows[i] * w, w, out.raw() + i * w);
  return out;
}

nn::TensorMap feature_inputs(const FeatureSet& set, const std::vector<std::size_t>& idx, bool with_theta) {
  std::vector<std::size_t> scenes(idx.size());
  Tensor size({idx.size(), 3}), theta({idx.size(), kConfigDim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    scenes[i] = set.scene_of[idx[i]];
    for (int a = 0; a < 3; ++a) size[i * 3 + a] = set.sizes[scenes[i]][a];
    for (std::size_t d = 0; d < kConfigDim; ++d) theta[i * kConfigDim + d] = set.thetas[idx[i]][static_cast<int>(d)];
  }
  nn::TensorMap m{{"voxel_feat", gather_rows(set.features, scenes)}, {"size", std::move(size)}};
  if (with_theta) m.emplace("theta", std::move(theta));
  return m;
}

std::vector<std::vector<std::size_t>> chunks(std::size_t n, std::size_t chunk) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += chunk) {
    out.emplace_back(std::min(chunk, n - s));
    std::iota(out.back().begin(), out.back().end(), s);
  }
  return out;
}

void adam_update(NetModel& m, const nn::Gradients& g, nn::AdamState& state, double lr) {
  nn::AdamHyper hyper;
  hyper.learning_rate = lr;
  const auto mask = m.trainable_mask();
  auto params = m.parameters();
  nn::adam_step(params, g.params, state, hyper, mask);
}

double mean_bce(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], nn::kProbabilityClamp, 1.0 - nn::kProbabilityClamp);
    s -= labels[i] ? std::log(p) : std::log1p(-p);
  }
  return s / static_cast<double>(probs.size());
}

}  // namespace

// Autoencoder ---------------------------------------------------------------

Tensor reconstruction_target(const SceneSpec& scene, const ObjectFrame& frame, std::size_t r) {
  const PrimitiveShape shape(scene);
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, shape.extent_along(frame.axes.col(a)));
  const double vs = extent / (static_cast<double>(r) * 26.0 / 32.0);
  const double half = 0.5 * static_cast<double>(r);
  Tensor t({1, r, r, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < r; ++k) {
        const Vec3 local((static_cast<double>(i) + 0.5 - half) * vs, (static_cast<double>(j) + 0.5 - half) * vs,
                         (static_cast<double>(k) + 0.5 - half) * vs);
        t[(i * r + j) * r + k] = shape.contains(shape.center + frame.axes * local) ? 1.0 : 0.0;
      }
  return t;
}

std::vector<AutoencoderPair> autoencoder_pairs(const std::vector<GraspRecord>& records) {
  std::vector<AutoencoderPair> out;
  std::map<std::uint64_t, bool> seen;
  for (const GraspRecord& r : records) {
    if (seen[r.scene.id]) continue;
    seen[r.scene.id] = true;
    out.push_back({r.rep, reconstruction_target(r.scene, r.rep.frame, r.rep.resolution)});
  }
  return out;
}

namespace {

Tensor stack_targets(const std::vector<AutoencoderPair>& pairs, const std::vector<std::size_t>& idx) {
  const Tensor& first = pairs[idx.front()].target;
  Shape shape{idx.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(shape);
  const std::size_t w = first.size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& t = pairs[idx[i]].target;
    if (t.size() != w) throw Error(Errc::DataError, "reconstruction targets differ in size");
    std::copy_n(t.raw(), w, out.raw() + i * w);
  }
  return out;
}

Tensor stack_grids(const std::vector<AutoencoderPair>& pairs, const std::vector<std::size_t>& idx) {
  std::vector<const ObjectRep*> reps;
  for (std::size_t i : idx) reps.push_back(&pairs[i].input);
  return grid_tensor(reps);
}

double logit_accuracy(const Tensor& logits, const Tensor& target) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) hit += ((logits[i] > 0.0) == (target[i] > 0.5));
  return static_cast<double>(hit) / static_cast<double>(logits.size());
}

void check_pairs(const std::vector<AutoencoderPair>& pairs, const EncoderConfig& cfg) {
  const std::size_t r = cfg.grid;
  for (const AutoencoderPair& p : pairs) {
    if (p.input.resolution != r || p.input.grid.size() != r * r * r)
      throw Error(Errc::DataError, "input grid is " + std::to_string(p.input.resolution) + "^3, encoder expects " +
                                       std::to_string(r) + "^3");
    if (p.target.shape() != Shape{1, r, r, r})
      throw Error(Errc::DataError, "target shape " + nn::shape_string(p.target.shape()) + " does not match the grid");
  }
}

std::pair<double, double> reconstruction_scores(const NetModel& enc, const NetModel& dec,
                                                const std::vector<AutoencoderPair>& pairs) {
  double loss = 0.0, acc = 0.0;
  for (const auto& idx : chunks(pairs.size(), 32)) {
    const Tensor grid = stack_grids(pairs, idx), target = stack_targets(pairs, idx);
    const auto pe = enc.forward({{"grid", grid}}, nn::Mode::Eval);
    const auto pd = dec.forward({{"feature", pe.output()}}, nn::Mode::Eval);
    const double w = static_cast<double>(idx.size()) / static_cast<double>(pairs.size());
    loss += w * nn::voxel_ce_loss(pd.output(), target).value;
    acc += w * logit_accuracy(pd.output(), target);
  }
  return {loss, acc};
}

}  // namespace

double voxel_accuracy(const NetModel& encoder, const NetModel& decoder, const std::vector<AutoencoderPair>& pairs) {
  if (pairs.empty()) return 0.0;
  return reconstruction_scores(encoder, decoder, pairs).second;
}

PretrainResult pretrain_encoder(const std::vector<AutoencoderPair>& pairs, const EncoderConfig& cfg,
                                const Schedule& schedule, std::uint64_t seed,
                                const std::vector<AutoencoderPair>& validation) {
  schedule.validate();
  if (pairs.empty()) throw Error(Errc::DataError, "no reconstruction pairs");
  check_pairs(pairs, cfg);
  check_pairs(validation, cfg);
  PretrainResult res{build_encoder(cfg), build_decoder(cfg), {}, 0.0};
  res.encoder.initialize(sub_seed(seed, 1));
  res.decoder.initialize(sub_seed(seed, 2));
  std::mt19937_64 rng(sub_seed(seed, 3));
  nn::AdamState enc_state, dec_state;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = nn::stepped_learning_rate(schedule.learning_rate, schedule.milestones, schedule.decay, epoch);
    CurveRow row{epoch + 1, lr};
    for (const auto& idx : make_batches(pairs.size(), schedule.batch, rng)) {
      const Tensor target = stack_targets(pairs, idx);
      const auto pe = res.encoder.forward({{"grid", stack_grids(pairs, idx)}}, nn::Mode::Train);
      const auto pd = res.decoder.forward({{"feature", pe.output()}}, nn::Mode::Train);
      const nn::LossResult loss = nn::voxel_ce_loss(pd.output(), target);
      nn::BackwardOptions opt;
      opt.input_grads = {"feature"};
      const nn::Gradients gd = res.decoder.backward(pd, loss.grad, opt);
      const nn::Gradients ge = res.encoder.backward(pe, gd.inputs.at("feature"));
      res.decoder.commit_batch_statistics(pd);
      res.encoder.commit_batch_statistics(pe);
      adam_update(res.decoder, gd, dec_state, lr);
      adam_update(res.encoder, ge, enc_state, lr);
      const double w = static_cast<double>(idx.size()) / static_cast<double>(pairs.size());
      row.train_loss += w * loss.value;
      row.train_metric += w * logit_accuracy(pd.output(), target);
    }
    if (!validation.empty()) std::tie(row.test_loss, row.test_metric) = reconstruction_scores(res.encoder, res.decoder, validation);
    res.curve.rows.push_back(row);
  }
  res.encoder.set_trainable(false);
  res.encoder.metadata()["frozen"] = true;
  res.voxel_accuracy = voxel_accuracy(res.encoder, res.decoder, pairs);
  return res;
}

// Features --------------------------------------------------------------------

FeatureSet build_feature_set(const NetModel& encoder, const std::vector<GraspRecord>& records) {
  FeatureSet set;
  std::map<std::uint64_t, std::size_t> scene_index;
  std::vector<const ObjectRep*> reps;
  for (const GraspRecord& r : records) {
    auto [it, fresh] = scene_index.emplace(r.scene.id, reps.size());
    if (fresh) {
      reps.push_back(&r.rep);
      set.sizes.push_back(r.rep.size);
    }
    set.scene_of.push_back(it->second);
    set.thetas.push_back(r.theta.to_vector());
    set.labels.push_back(r.label);
    set.types.push_back(r.type);
  }
  if (!reps.empty()) set.features = encode(encoder, reps);
  return set;
}

namespace {

template <typename Get>
void fit_scale(nn::NetModel& head, const std::string& node, std::size_t dim, std::size_t n, Get get) {
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += get(i, d) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) sd[d] += std::pow(get(i, d) - mean[d], 2) / static_cast<double>(n);
  for (double& v : sd) v = std::sqrt(v);
  dynamic_cast<nn::Scale&>(head.layer(node)).set(mean, sd, 1e-3);
}

}  // namespace

void fit_input_scaling(nn::NetModel& head, const FeatureSet& train) {
  if (train.size() == 0) throw Error(Errc::DataError, "cannot fit input scaling on an empty set");
  const std::size_t n = train.size();
  if (head.has_node("size_scale"))
    fit_scale(head, "size_scale", 3, n, [&](std::size_t i, std::size_t d) {
      return train.sizes[train.scene_of[i]][static_cast<Eigen::Index>(d)];
    });
  if (head.has_node("theta_scale"))
    fit_scale(head, "theta_scale", kConfigDim, n,
              [&](std::size_t i, std::size_t d) { return train.thetas[i][static_cast<Eigen::Index>(d)]; });
}

// Metrics ------------------------------------------------------------------

double BinaryMetrics::accuracy() const {
  return count() ? static_cast<double>(tp + tn) / static_cast<double>(count()) : 0.0;
}
double BinaryMetrics::precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
double BinaryMetrics::recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
double BinaryMetrics::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}
double BinaryMetrics::majority_baseline() const {
  return count() ? static_cast<double>(std::max(tp + fn, tn + fp)) / static_cast<double>(count()) : 0.0;
}

nlohmann::json BinaryMetrics::to_json() const {
  return {{"count", count()},     {"tp", tp},
          {"fp", fp},             {"tn", tn},
          {"fn", fn},             {"accuracy", accuracy()},
          {"precision", precision()}, {"recall", recall()},
          {"f1", f1()},           {"majority_baseline", majority_baseline()}};
}

BinaryMetrics binary_metrics(const std::vector<double>& probs, const std::vector<int>& labels, double threshold) {
  if (probs.size() != labels.size()) throw Error(Errc::InvalidInput, "predictions and labels differ in length");
  BinaryMetrics m;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] > threshold, truth = labels[i] != 0;
    if (pred && truth) ++m.tp;
    else if (pred) ++m.fp;
    else if (truth) ++m.fn;
    else ++m.tn;
  }
  return m;
}

nlohmann::json ClassifierEvaluation::to_json() const {
  return {{"all", all.to_json()}, {"side", side.to_json()}, {"overhead", overhead.to_json()}, {"bce", bce}};
}

std::vector<double> predict(const NetModel& head, const FeatureSet& set) {
  std::vector<double> out;
  out.reserve(set.size());
  for (const auto& idx : chunks(set.size(), 256)) {
    const auto pass = head.forward(feature_inputs(set, idx, true), nn::Mode::Eval);
    out.insert(out.end(), pass.output().raw(), pass.output().raw() + idx.size());
  }
  return out;
}

ClassifierEvaluation evaluate_classifier(const NetModel& head, const FeatureSet& set) {
  const std::vector<double> probs = predict(head, set);
  ClassifierEvaluation ev;
  ev.all = binary_metrics(probs, set.labels);
  std::vector<double> ps[2];
  std::vector<int> ls[2];
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int t = set.types[i] == GraspType::Overhead;
    ps[t].push_back(probs[i]);
    ls[t].push_back(set.labels[i]);
  }
  ev.side = binary_metrics(ps[0], ls[0]);
  ev.overhead = binary_metrics(ps[1], ls[1]);
  ev.bce = mean_bce(probs, set.labels);
  return ev;
}

// Classifier ----------------------------------------------------------------

ClassifierTraining train_classifier(const FeatureSet& train, const FeatureSet& test, const EncoderConfig& enc,
                                    const ClassifierConfig& cfg, const Schedule& schedule, std::uint64_t seed) {
  schedule.validate();
  if (train.size() < 2) throw Error(Errc::DataError, "need at least two training records");
  if (train.features.sample_size() != enc.feature)
    throw Error(Errc::DataError, "feature width " + std::to_string(train.features.sample_size()) +
                                     " does not match the encoder (" + std::to_string(enc.feature) + ")");
  ClassifierTraining res{build_classifier_head(enc, cfg), {}, {}, {}};
  res.head.initialize(sub_seed(seed, 11));
  fit_input_scaling(res.head, train);
  std::mt19937_64 rng(sub_seed(seed, 12));
  nn::AdamState state;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = nn::stepped_learning_rate(schedule.learning_rate, schedule.milestones, schedule.decay, epoch);
    CurveRow row{epoch + 1, lr};
    for (const auto& idx : make_batches(train.size(), schedule.batch, rng)) {
      std::vector<double> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      const auto pass = res.head.forward(feature_inputs(train, idx, true), nn::Mode::Train);
      const nn::LossResult loss = nn::bce_loss(pass.output(), labels);
      const nn::Gradients g = res.head.backward(pass, loss.grad);
      res.head.commit_batch_statistics(pass);
      adam_update(res.head, g, state, lr);
      row.train_loss += loss.value * static_cast<double>(idx.size()) / static_cast<double>(train.size());
    }
    const ClassifierEvaluation tr = evaluate_classifier(res.head, train);
    row.train_metric = tr.all.accuracy();
    if (test.size()) {
      const ClassifierEvaluation te = evaluate_classifier(res.head, test);
      row.test_loss = te.bce;
      row.test_metric = te.all.accuracy();
    }
    res.curve.rows.push_back(row);
  }
  res.train = evaluate_classifier(res.head, train);
  if (test.size()) res.test = evaluate_classifier(res.head, test);
  return res;
}

// MDN ------------------------------------------------------------------------

double mdn_mean_nll(const NetModel& mdn, const FeatureSet& set, std::size_t components, double var_floor) {
  if (set.size() == 0) return 0.0;
  double total = 0.0;
  for (const auto& idx : chunks(set.size(), 256)) {
    const auto pass = mdn.forward(feature_inputs(set, idx, false), nn::Mode::Eval);
    for (std::size_t i = 0; i < idx.size(); ++i)
      total += mdn_nll(pass.output().sample(i), set.thetas[idx[i]], components, var_floor);
  }
  return total / static_cast<double>(set.size());
}

MdnTraining train_mdn(const FeatureSet& train, const FeatureSet& test, const EncoderConfig& enc, const MdnConfig& cfg,
                      const Schedule& schedule, std::uint64_t seed, const MixturePrior* init) {
  schedule.validate();
  if (train.size() < 2) throw Error(Errc::DataError, "need at least two training records");
  if (train.features.sample_size() != enc.feature)
    throw Error(Errc::DataError, "feature width does not match the encoder");
  MdnTraining res{build_mdn_head(enc, cfg), {}, 0.0, 0.0};
  res.curve.metric_name = "unused";
  res.mdn.initialize(sub_seed(seed, 21));
  fit_input_scaling(res.mdn, train);
  if (init) seed_mdn_output(res.mdn, *init, cfg.var_floor);
  std::mt19937_64 rng(sub_seed(seed, 22));
  nn::AdamState state;
  const std::size_t k = cfg.components;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = nn::stepped_learning_rate(schedule.learning_rate, schedule.milestones, schedule.decay, epoch);
    CurveRow row{epoch + 1, lr};
    for (const auto& idx : make_batches(train.size(), schedule.batch, rng)) {
      const auto pass = res.mdn.forward(feature_inputs(train, idx, false), nn::Mode::Train);
      Tensor grad(pass.output().shape());
      double loss = 0.0;
      const double inv = 1.0 / static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto gi = grad.sample(i);
        loss += mdn_nll(pass.output().sample(i), train.thetas[idx[i]], k, cfg.var_floor, gi);
        for (double& v : gi) v *= inv;
      }
      const nn::Gradients g = res.mdn.backward(pass, grad);
      res.mdn.commit_batch_statistics(pass);
      adam_update(res.mdn, g, state, lr);
      row.train_loss += loss / static_cast<double>(train.size());
    }
    if (test.size()) row.test_loss = mdn_mean_nll(res.mdn, test, k, cfg.var_floor);
    res.curve.rows.push_back(row);
  }
  res.train_nll = mdn_mean_nll(res.mdn, train, k, cfg.var_floor);
  res.test_nll = test.size() ? mdn_mean_nll(res.mdn, test, k, cfg.var_floor) : 0.0;
  return res;
}

// GMM ------------------------------------------------------------------------

GmmTraining train_gmm(const std::vector<GraspRecord>& train, const std::vector<GraspRecord>& test,
                      std::size_t components, std::uint64_t seed, const BoundBox& box) {
  std::vector<ConfigVector> data;
  for (const GraspRecord& r : train) data.push_back(r.theta.to_vector());
  GmmFitOptions opt;
  opt.components = components;
  opt.seed = seed;
  GmmTraining res;
  res.prior = fit_gmm(data, opt, &res.report);
  res.prior.box = box;
  res.prior = tag_components(res.prior);
  auto nll = [&](const std::vector<GraspRecord>& rs) {
    if (rs.empty()) return 0.0;
    double s = 0.0;
    for (const GraspRecord& r : rs) s -= log_density(res.prior, r.theta.to_vector());
    return s / static_cast<double>(rs.size());
  };
  res.train_nll = nll(train);
  res.test_nll = nll(test);
  return res;
}

}  // namespace graspinf
