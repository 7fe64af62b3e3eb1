#include "graspinf/models.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "graspinf/error.hpp"
#include "graspinf/io.hpp"

namespace graspinf {

using nn::NetModel;
using nn::Tensor;

namespace {

// Dense -> BatchNorm -> activation, returns the activation node name.
template <typename Act>
std::string dense_block(NetModel& m, const std::string& name, std::size_t in, std::size_t out,
                        const std::string& input) {
  m.add(name, std::make_unique<nn::Dense>(in, out), {input});
  m.add(name + "_bn", std::make_unique<nn::BatchNorm>(out), {name});
  m.add(name + "_act", std::make_unique<Act>(), {name + "_bn"});
  return name + "_act";
}

std::vector<std::size_t> to_sizes(const nlohmann::json& j) { return j.get<std::vector<std::size_t>>(); }

}  // namespace

void EncoderConfig::validate() const {
  if (channels.size() != 4 || strides.size() != 4) throw Error(Errc::ConfigError, "encoder needs four conv layers");
  std::size_t s = grid;
  for (std::size_t st : strides) {
    if (st != 1 && st != 2) throw Error(Errc::ConfigError, "conv strides must be 1 or 2");
    if (s % st != 0) throw Error(Errc::ConfigError, "grid size must be divisible by the stride product");
    s /= st;
  }
  if (grid < 4 || feature < 1) throw Error(Errc::ConfigError, "bad encoder geometry");
}

ArchitecturePreset architecture_preset(const std::string& name) {
  ArchitecturePreset p;
  p.name = name;
  if (name == "full") return p;
  if (name == "desk") {
    p.encoder.grid = 16;
    p.encoder.channels = {16, 32, 64, 128};
    p.encoder.feature = 64;
    return p;
  }
  throw Error(Errc::ConfigError, "preset must be 'desk' or 'full', got '" + name + "'");
}

nlohmann::json to_json(const ArchitecturePreset& p) {
  return {{"name", p.name},
          {"encoder",
           {{"grid", p.encoder.grid},
            {"channels", p.encoder.channels},
            {"strides", p.encoder.strides},
            {"feature", p.encoder.feature},
            {"kernel", 3},
            {"activation", "elu"}}},
          {"classifier",
           {{"object_widths", p.classifier.object_widths},
            {"grasp_widths", p.classifier.grasp_widths},
            {"head_widths", p.classifier.head_widths}}},
          {"mdn",
           {{"components", p.mdn.components},
            {"trunk_widths", p.mdn.trunk_widths},
            {"var_floor", p.mdn.var_floor}}}};
}

ArchitecturePreset architecture_preset_from_json(const nlohmann::json& j) {
  ArchitecturePreset p = architecture_preset(j.value("name", std::string("full")) == "desk" ? "desk" : "full");
  p.name = j.value("name", p.name);
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    p.encoder.grid = e.value("grid", p.encoder.grid);
    if (e.contains("channels")) p.encoder.channels = to_sizes(e["channels"]);
    if (e.contains("strides")) p.encoder.strides = to_sizes(e["strides"]);
    p.encoder.feature = e.value("feature", p.encoder.feature);
  }
  if (j.contains("classifier")) {
    const auto& c = j["classifier"];
    if (c.contains("object_widths")) p.classifier.object_widths = to_sizes(c["object_widths"]);
    if (c.contains("grasp_widths")) p.classifier.grasp_widths = to_sizes(c["grasp_widths"]);
    if (c.contains("head_widths")) p.classifier.head_widths = to_sizes(c["head_widths"]);
  }
  if (j.contains("mdn")) {
    const auto& m = j["mdn"];
    p.mdn.components = m.value("components", p.mdn.components);
    if (m.contains("trunk_widths")) p.mdn.trunk_widths = to_sizes(m["trunk_widths"]);
    p.mdn.var_floor = m.value("var_floor", p.mdn.var_floor);
  }
  p.encoder.validate();
  if (p.mdn.components < 1) throw Error(Errc::ConfigError, "MDN needs at least one component");
  if (!(p.mdn.var_floor > 0.0)) throw Error(Errc::ConfigError, "var_floor must be positive");
  return p;
}

NetModel build_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  NetModel m;
  m.add_input("grid", {1, cfg.grid, cfg.grid, cfg.grid});
  std::string prev = "grid";
  std::size_t in = 1, side = cfg.grid;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string n = "conv" + std::to_string(i + 1);
    m.add(n, std::make_unique<nn::Conv3D>(in, cfg.channels[i], cfg.strides[i]), {prev});
    m.add(n + "_bn", std::make_unique<nn::BatchNorm>(cfg.channels[i]), {n});
    m.add(n + "_act", std::make_unique<nn::Elu>(), {n + "_bn"});
    prev = n + "_act";
    in = cfg.channels[i];
    side /= cfg.strides[i];
  }
  m.add("flatten", std::make_unique<nn::Flatten>(), {prev});
  const std::string out = dense_block<nn::Elu>(m, "fc", in * side * side * side, cfg.feature, "flatten");
  m.set_output(out);
  m.finalize();
  m.metadata()["role"] = "voxel_encoder";
  return m;
}

NetModel build_decoder(const EncoderConfig& cfg) {
  cfg.validate();
  std::size_t side = cfg.grid;
  for (std::size_t s : cfg.strides) side /= s;
  NetModel m;
  m.add_input("feature", {cfg.feature});
  const std::size_t c_last = cfg.channels.back();
  const std::string fc = dense_block<nn::Elu>(m, "fc", cfg.feature, c_last * side * side * side, "feature");
  m.add("reshape", std::make_unique<nn::Reshape>(nn::Shape{c_last, side, side, side}), {fc});
  std::string prev = "reshape";
  for (std::size_t i = 4; i-- > 0;) {
    const std::size_t in = cfg.channels[i], out = i > 0 ? cfg.channels[i - 1] : 1;
    const std::string n = "deconv" + std::to_string(i + 1);
    m.add(n, std::make_unique<nn::ConvTranspose3D>(in, out, cfg.strides[i], i > 0 ? nn::Init::He : nn::Init::Xavier),
          {prev});
    prev = n;
    if (i > 0) {
      m.add(n + "_bn", std::make_unique<nn::BatchNorm>(out), {n});
      m.add(n + "_act", std::make_unique<nn::Elu>(), {n + "_bn"});
      prev = n + "_act";
    }
  }
  m.set_output(prev);
  m.finalize();
  m.metadata()["role"] = "voxel_decoder";
  return m;
}

NetModel build_classifier_head(const EncoderConfig& enc, const ClassifierConfig& cfg) {
  if (cfg.object_widths.empty() || cfg.grasp_widths.empty() || cfg.head_widths.empty())
    throw Error(Errc::ConfigError, "classifier trunks need at least one layer each");
  NetModel m;
  m.add_input("voxel_feat", {enc.feature});
  m.add_input("size", {3});
  m.add_input("theta", {kConfigDim});
  m.add("size_scale", std::make_unique<nn::Scale>(3), {"size"});
  m.add("theta_scale", std::make_unique<nn::Scale>(kConfigDim), {"theta"});
  m.add("object_in", std::make_unique<nn::Concat>(2), {"voxel_feat", "size_scale"});
  std::string obj = "object_in";
  std::size_t in = enc.feature + 3;
  for (std::size_t i = 0; i < cfg.object_widths.size(); ++i) {
    obj = dense_block<nn::Elu>(m, "object" + std::to_string(i + 1), in, cfg.object_widths[i], obj);
    in = cfg.object_widths[i];
  }
  std::string grasp = "theta_scale";
  std::size_t gin = kConfigDim;
  for (std::size_t i = 0; i < cfg.grasp_widths.size(); ++i) {
    grasp = dense_block<nn::Elu>(m, "grasp" + std::to_string(i + 1), gin, cfg.grasp_widths[i], grasp);
    gin = cfg.grasp_widths[i];
  }
  m.add("joint_in", std::make_unique<nn::Concat>(2), {obj, grasp});
  std::string head = "joint_in";
  std::size_t hin = in + gin;
  for (std::size_t i = 0; i < cfg.head_widths.size(); ++i) {
    head = dense_block<nn::Elu>(m, "head" + std::to_string(i + 1), hin, cfg.head_widths[i], head);
    hin = cfg.head_widths[i];
  }
  m.add("out", std::make_unique<nn::Dense>(hin, 1, nn::Init::Xavier), {head});
  m.add("prob", std::make_unique<nn::Sigmoid>(), {"out"});
  m.set_output("prob");
  m.finalize();
  m.metadata()["role"] = "grasp_classifier";
  return m;
}

NetModel build_mdn_head(const EncoderConfig& enc, const MdnConfig& cfg) {
  if (cfg.components < 1) throw Error(Errc::ConfigError, "MDN needs at least one component");
  NetModel m;
  m.add_input("voxel_feat", {enc.feature});
  m.add_input("size", {3});
  m.add("size_scale", std::make_unique<nn::Scale>(3), {"size"});
  m.add("object_in", std::make_unique<nn::Concat>(2), {"voxel_feat", "size_scale"});
  std::string prev = "object_in";
  std::size_t in = enc.feature + 3;
  for (std::size_t i = 0; i < cfg.trunk_widths.size(); ++i) {
    prev = dense_block<nn::Relu>(m, "trunk" + std::to_string(i + 1), in, cfg.trunk_widths[i], prev);
    in = cfg.trunk_widths[i];
  }
  m.add("out", std::make_unique<nn::Dense>(in, cfg.components * (1 + 2 * kConfigDim), nn::Init::Zero), {prev});
  m.set_output("out");
  m.finalize();
  m.metadata()["role"] = "mdn";
  m.metadata()["components"] = cfg.components;
  m.metadata()["var_floor"] = cfg.var_floor;
  return m;
}

Tensor grid_tensor(std::span<const ObjectRep* const> reps) {
  if (reps.empty()) throw Error(Errc::InvalidInput, "no object representations");
  const std::size_t r = reps.front()->resolution, cells = r * r * r;
  Tensor t({reps.size(), 1, r, r, r});
  for (std::size_t i = 0; i < reps.size(); ++i) {
    if (reps[i]->resolution != r) throw Error(Errc::DataError, "mixed voxel resolutions in one batch");
    for (std::size_t c = 0; c < cells; ++c) t.raw()[i * cells + c] = reps[i]->grid[c];
  }
  return t;
}

Tensor size_tensor(std::span<const ObjectRep* const> reps) {
  Tensor t({reps.size(), 3});
  for (std::size_t i = 0; i < reps.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) t.raw()[i * 3 + a] = reps[i]->size[static_cast<Eigen::Index>(a)];
  return t;
}

Tensor encode(const NetModel& encoder, std::span<const ObjectRep* const> reps, std::size_t chunk) {
  const std::size_t grid = encoder.input_shape("grid")[1];
  for (const ObjectRep* r : reps)
    if (r->resolution != grid)
      throw Error(Errc::DataError, "object grid is " + std::to_string(r->resolution) + "^3 but the encoder expects " +
                                       std::to_string(grid) + "^3");
  const std::size_t f = encoder.output_shape()[0];
  Tensor out({reps.size(), f});
  for (std::size_t start = 0; start < reps.size(); start += chunk) {
    const std::size_t n = std::min(chunk, reps.size() - start);
    const auto pass = encoder.forward({{"grid", grid_tensor(reps.subspan(start, n))}}, nn::Mode::Eval);
    std::copy(pass.output().raw(), pass.output().raw() + n * f, out.raw() + start * f);
  }
  return out;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0)) throw Error(Errc::InvalidInput, "inverse softplus needs a positive argument");
  return y > 30 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

namespace {

struct MdnView {
  std::span<const double> logits, means, raw;
};

MdnView split(std::span<const double> out, std::size_t k) {
  if (out.size() != k * (1 + 2 * kConfigDim)) throw Error(Errc::ShapeMismatch, "MDN output has the wrong length");
  return {out.subspan(0, k), out.subspan(k, k * kConfigDim), out.subspan(k + k * kConfigDim, k * kConfigDim)};
}

}  // namespace

MixturePrior mdn_mixture(std::span<const double> out, std::size_t components, double var_floor, const BoundBox& box) {
  const MdnView v = split(out, components);
  MixturePrior p;
  p.box = box;
  const double top = *std::max_element(v.logits.begin(), v.logits.end());
  double total = 0.0;
  for (double a : v.logits) total += std::exp(a - top);
  for (std::size_t c = 0; c < components; ++c) {
    p.weights.push_back(std::exp(v.logits[c] - top) / total);
    ConfigVector mean, var;
    for (std::size_t d = 0; d < kConfigDim; ++d) {
      mean[static_cast<Eigen::Index>(d)] = v.means[c * kConfigDim + d];
      var[static_cast<Eigen::Index>(d)] = softplus(v.raw[c * kConfigDim + d]) + var_floor;
    }
    p.means.push_back(mean);
    p.variances.push_back(var);
    p.tags.push_back(ComponentTag::Unlabeled);
  }
  return p;
}

double mdn_nll(std::span<const double> out, const ConfigVector& theta, std::size_t k, double var_floor,
               std::span<double> grad) {
  const MdnView v = split(out, k);
  const double log2pi = std::log(2.0 * M_PI);
  std::vector<double> joint(k), comp(k);
  for (std::size_t c = 0; c < k; ++c) {
    double lp = -0.5 * static_cast<double>(kConfigDim) * log2pi;
    for (std::size_t d = 0; d < kConfigDim; ++d) {
      const double var = softplus(v.raw[c * kConfigDim + d]) + var_floor;
      const double e = theta[static_cast<Eigen::Index>(d)] - v.means[c * kConfigDim + d];
      lp -= 0.5 * (std::log(var) + e * e / var);
    }
    comp[c] = lp;
    joint[c] = v.logits[c] + lp;
  }
  auto lse = [](const std::vector<double>& x) {
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double y : x) s += std::exp(y - m);
    return m + std::log(s);
  };
  const std::vector<double> logits(v.logits.begin(), v.logits.end());
  const double lse_logits = lse(logits), lse_joint = lse(joint);
  const double nll = lse_logits - lse_joint;
  if (!grad.empty()) {
    if (grad.size() != out.size()) throw Error(Errc::ShapeMismatch, "MDN gradient buffer has the wrong length");
    for (std::size_t c = 0; c < k; ++c) {
      const double w = std::exp(logits[c] - lse_logits), gamma = std::exp(joint[c] - lse_joint);
      grad[c] = w - gamma;
      for (std::size_t d = 0; d < kConfigDim; ++d) {
        const double raw = v.raw[c * kConfigDim + d];
        const double var = softplus(raw) + var_floor;
        const double e = theta[static_cast<Eigen::Index>(d)] - v.means[c * kConfigDim + d];
        grad[k + c * kConfigDim + d] = -gamma * e / var;
        const double dvar = gamma * (0.5 / var - 0.5 * e * e / (var * var));
        grad[k + k * kConfigDim + c * kConfigDim + d] = dvar / (1.0 + std::exp(-raw));
      }
    }
  }
  return nll;
}

void seed_mdn_output(NetModel& mdn, const MixturePrior& prior, double var_floor) {
  auto& out = dynamic_cast<nn::Dense&>(mdn.layer("out"));
  const std::size_t k = prior.size();
  if (out.bias().size() != k * (1 + 2 * kConfigDim))
    throw Error(Errc::ShapeMismatch, "prior has " + std::to_string(k) + " components but the MDN expects " +
                                         std::to_string(out.bias().size() / (1 + 2 * kConfigDim)));
  out.weight().fill(0.0);
  double* b = out.bias().raw();
  for (std::size_t c = 0; c < k; ++c) {
    b[c] = std::log(std::max(prior.weights[c], 1e-12));
    for (std::size_t d = 0; d < kConfigDim; ++d) {
      const auto i = static_cast<Eigen::Index>(d);
      b[k + c * kConfigDim + d] = prior.means[c][i];
      b[k + k * kConfigDim + c * kConfigDim + d] = inverse_softplus(std::max(prior.variances[c][i] - var_floor, 1e-12));
    }
  }
  mdn.touch();
}

ClassifierLikelihood::ClassifierLikelihood(const NetModel& head, Tensor feature, const Vec3& size)
    : head_(&head), feature_(std::move(feature)), size_({1, 3}, {size.x(), size.y(), size.z()}) {
  if (feature_.batch() != 1) feature_ = feature_.reshaped({1, feature_.size()});
}

ClassifierLikelihood::ClassifierLikelihood(const NetModel& encoder, const NetModel& head, const ObjectRep& rep)
    : ClassifierLikelihood(head, [&] {
        const ObjectRep* p = &rep;
        return encode(encoder, std::span<const ObjectRep* const>(&p, 1));
      }(), rep.size) {}

double ClassifierLikelihood::probability(const ConfigVector& theta, ConfigVector* grad) const {
  Tensor t({1, kConfigDim}, std::vector<double>(theta.data(), theta.data() + kConfigDim));
  const auto pass = head_->forward({{"voxel_feat", feature_}, {"size", size_}, {"theta", std::move(t)}}, nn::Mode::Eval);
  const double p = pass.output().raw()[0];
  if (grad) {
    nn::BackwardOptions opt;
    opt.param_grads = false;
    opt.input_grads = {"theta"};
    const auto g = head_->backward(pass, Tensor({1, 1}, 1.0), opt);
    *grad = Eigen::Map<const ConfigVector>(g.inputs.at("theta").raw());
  }
  return p;
}

MixturePrior mdn_prior_for(const NetModel& encoder, const NetModel& mdn, const ObjectRep& rep, std::size_t components,
                           double var_floor, const BoundBox& box) {
  const ObjectRep* p = &rep;
  const Tensor feat = encode(encoder, std::span<const ObjectRep* const>(&p, 1));
  const auto pass = mdn.forward({{"voxel_feat", feat}, {"size", size_tensor(std::span<const ObjectRep* const>(&p, 1))}},
                                nn::Mode::Eval);
  return tag_components(mdn_mixture({pass.output().raw(), pass.output().size()}, components, var_floor, box));
}

ModelBundle ModelBundle::load(const std::string& dir) {
  const nlohmann::json manifest = read_json_file(dir + "/manifest.json");
  ModelBundle b;
  b.preset = architecture_preset_from_json(manifest.at("preset"));
  if (manifest.contains("hand")) b.hand = hand_model_from_json(manifest["hand"]);
  b.encoder = NetModel::load(dir + "/encoder.cbor");
  namespace fs = std::filesystem;
  if (fs::exists(dir + "/classifier.cbor")) {
    b.classifier = NetModel::load(dir + "/classifier.cbor");
    b.has_classifier = true;
  }
  if (fs::exists(dir + "/mdn.cbor")) {
    b.mdn = NetModel::load(dir + "/mdn.cbor");
    b.has_mdn = true;
  }
  if (fs::exists(dir + "/gmm.json")) {
    b.gmm = mixture_prior_from_json(read_json_file(dir + "/gmm.json"));
    b.has_gmm = true;
  }
  return b;
}

}  // namespace graspinf
