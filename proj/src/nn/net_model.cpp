#include "graspinf/nn/net_model.hpp"

#include <atomic>
#include <fstream>
#include <iterator>
#include <set>

namespace graspinf::nn {

namespace {

std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace

NetModel::NetModel() : version_(next_version()) {}

NetModel::NetModel(const NetModel& other)
    : inputs_(other.inputs_),
      index_(other.index_),
      output_(other.output_),
      metadata_(other.metadata_),
      version_(next_version()) {
  nodes_.reserve(other.nodes_.size());
  for (const Node& n : other.nodes_) nodes_.push_back({n.name, n.layer->clone(), n.inputs, n.shape, n.trainable});
}

NetModel& NetModel::operator=(const NetModel& other) {
  if (this != &other) {
    NetModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void NetModel::touch() { version_ = next_version(); }

void NetModel::add_input(const std::string& name, Shape sample_shape) {
  if (index_.contains(name)) throw Error(Errc::ConfigError, "duplicate name '" + name + "'");
  for (const auto& [n, s] : inputs_)
    if (n == name) throw Error(Errc::ConfigError, "duplicate input '" + name + "'");
  inputs_.emplace_back(name, std::move(sample_shape));
  touch();
}

const Shape& NetModel::shape_of(const std::string& name) const {
  for (const auto& [n, s] : inputs_)
    if (n == name) return s;
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(Errc::ConfigError, "unknown node or input '" + name + "'");
  return nodes_[it->second].shape;
}

std::size_t NetModel::node_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(Errc::ConfigError, "unknown node '" + name + "'");
  return it->second;
}

void NetModel::add(const std::string& name, std::unique_ptr<Layer> layer, std::vector<std::string> inputs) {
  if (index_.contains(name)) throw Error(Errc::ConfigError, "duplicate node '" + name + "'");
  for (const auto& [n, s] : inputs_)
    if (n == name) throw Error(Errc::ConfigError, "node name '" + name + "' shadows an input");
  if (inputs.size() != layer->arity()) {
    throw Error(Errc::ShapeMismatch, "node '" + name + "' (" + layer->kind() + ") expects " +
                                         std::to_string(layer->arity()) + " inputs");
  }
  std::vector<Shape> shapes;
  for (const auto& in : inputs) shapes.push_back(shape_of(in));
  Shape out = layer->output_shape(shapes);
  index_[name] = nodes_.size();
  nodes_.push_back({name, std::move(layer), std::move(inputs), std::move(out), true});
  touch();
}

void NetModel::set_output(const std::string& name) {
  node_index(name);
  output_ = name;
}

void NetModel::finalize() {
  if (output_.empty()) throw Error(Errc::ConfigError, "model has no output");
  for (const auto& [name, shape] : inputs_) {
    std::size_t uses = 0;
    for (const Node& n : nodes_)
      uses += static_cast<std::size_t>(std::count(n.inputs.begin(), n.inputs.end(), name));
    if (uses != 1) {
      throw Error(Errc::ConfigError, "input '" + name + "' consumed " + std::to_string(uses) + " times, expected 1");
    }
  }
}

void NetModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Node& n : nodes_) n.layer->initialize(rng);
  touch();
}

ForwardPass NetModel::forward(const TensorMap& inputs, Mode mode) const {
  if (inputs.size() != inputs_.size()) {
    throw Error(Errc::ShapeMismatch, "expected " + std::to_string(inputs_.size()) + " inputs, got " +
                                         std::to_string(inputs.size()));
  }
  std::size_t batch = 0;
  for (const auto& [name, shape] : inputs_) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw Error(Errc::ShapeMismatch, "missing input '" + name + "'");
    const Tensor& t = it->second;
    if (t.rank() != shape.size() + 1 || t.sample_shape() != shape) {
      throw Error(Errc::ShapeMismatch, "input '" + name + "' has shape " + shape_string(t.shape()) +
                                           ", expected [N]+" + shape_string(shape));
    }
    if (batch == 0) batch = t.batch();
    if (t.batch() != batch || batch == 0) throw Error(Errc::ShapeMismatch, "inconsistent or empty batch");
    ensure_finite(t, "input '" + name + "'");
  }

  ForwardPass pass;
  pass.mode = mode;
  pass.model_version = version_;
  pass.inputs = inputs;
  pass.outputs.resize(nodes_.size());
  pass.caches.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    std::vector<const Tensor*> args;
    for (const auto& in : n.inputs) {
      auto it = pass.inputs.find(in);
      args.push_back(it != pass.inputs.end() ? &it->second : &pass.outputs[index_.at(in)]);
    }
    pass.outputs[i] = n.layer->forward(args, mode, pass.caches[i]);
    ensure_finite(pass.outputs[i], "node '" + n.name + "'");
  }
  pass.output_index = node_index(output_);
  return pass;
}

Gradients NetModel::backward(const ForwardPass& pass, const Tensor& output_grad, const BackwardOptions& options) const {
  if (pass.model_version != version_) throw Error(Errc::StaleCache, "model changed since forward pass");
  if (output_grad.shape() != pass.output().shape()) {
    throw Error(Errc::ShapeMismatch, "output gradient shape " + shape_string(output_grad.shape()) + " vs output " +
                                         shape_string(pass.output().shape()));
  }
  const std::set<std::string> wanted(options.input_grads.begin(), options.input_grads.end());
  for (const auto& w : wanted)
    if (!pass.inputs.contains(w)) throw Error(Errc::ConfigError, "no input named '" + w + "'");

  // needs[i]: some parameter or requested input at or upstream of node i wants a gradient.
  std::vector<bool> needs(nodes_.size(), false);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    bool need = options.param_grads && !n.layer->params().empty() && (n.trainable || !options.skip_frozen);
    for (const auto& in : n.inputs) {
      if (pass.inputs.contains(in)) {
        need = need || wanted.contains(in);
      } else {
        need = need || needs[index_.at(in)];
      }
    }
    needs[i] = need;
  }

  Gradients grads;
  std::vector<std::size_t> param_offset(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    param_offset[i] = grads.params.size();
    for (const Tensor* p : std::as_const(*nodes_[i].layer).params()) grads.params.emplace_back(p->shape());
  }
  for (const auto& w : wanted) grads.inputs[w] = Tensor(pass.inputs.at(w).shape());

  std::vector<Tensor> node_grads(nodes_.size());
  node_grads[pass.output_index] = output_grad;
  for (std::size_t r = nodes_.size(); r-- > 0;) {
    if (!needs[r] || node_grads[r].empty()) continue;
    const Node& n = nodes_[r];
    std::vector<const Tensor*> args;
    bool need_input = false;
    for (const auto& in : n.inputs) {
      auto it = pass.inputs.find(in);
      if (it != pass.inputs.end()) {
        args.push_back(&it->second);
        need_input = need_input || wanted.contains(in);
      } else {
        args.push_back(&pass.outputs[index_.at(in)]);
        need_input = need_input || needs[index_.at(in)];
      }
    }
    const std::size_t n_params = std::as_const(*n.layer).params().size();
    std::vector<Tensor> scratch;
    std::span<Tensor> param_span(grads.params.data() + param_offset[r], n_params);
    const bool want_params = options.param_grads && (n.trainable || !options.skip_frozen);
    if (!want_params) {
      for (std::size_t k = 0; k < n_params; ++k) scratch.emplace_back(grads.params[param_offset[r] + k].shape());
      param_span = scratch;
    }
    auto in_grads = n.layer->backward(args, pass.outputs[r], pass.caches[r], node_grads[r], param_span, need_input);
    if (!need_input) continue;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::string& in = n.inputs[k];
      Tensor* target = nullptr;
      if (pass.inputs.contains(in)) {
        if (wanted.contains(in)) target = &grads.inputs[in];
      } else if (needs[index_.at(in)]) {
        Tensor& g = node_grads[index_.at(in)];
        if (g.empty()) {
          g = std::move(in_grads[k]);
          continue;
        }
        target = &g;
      }
      if (target == nullptr) continue;
      for (std::size_t j = 0; j < target->size(); ++j) (*target)[j] += in_grads[k][j];
    }
  }
  return grads;
}

void NetModel::commit_batch_statistics(const ForwardPass& pass) {
  if (pass.mode != Mode::Train) return;
  if (pass.model_version != version_) throw Error(Errc::StaleCache, "model changed since forward pass");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (auto* bn = dynamic_cast<BatchNorm*>(nodes_[i].layer.get()); bn != nullptr && nodes_[i].trainable) {
      bn->update_running_stats(pass.caches[i]);
    }
  }
  touch();
}

std::vector<Tensor*> NetModel::parameters() {
  touch();
  std::vector<Tensor*> out;
  for (Node& n : nodes_)
    for (Tensor* p : n.layer->params()) out.push_back(p);
  return out;
}

std::vector<const Tensor*> NetModel::parameters() const {
  std::vector<const Tensor*> out;
  for (const Node& n : nodes_)
    for (const Tensor* p : std::as_const(*n.layer).params()) out.push_back(p);
  return out;
}

std::vector<bool> NetModel::trainable_mask() const {
  std::vector<bool> out;
  for (const Node& n : nodes_)
    for (std::size_t k = 0; k < std::as_const(*n.layer).params().size(); ++k) out.push_back(n.trainable);
  return out;
}

std::size_t NetModel::parameter_count() const {
  std::size_t total = 0;
  for (const Tensor* p : parameters()) total += p->size();
  return total;
}

void NetModel::set_trainable(bool trainable) {
  for (Node& n : nodes_) n.trainable = trainable;
}

void NetModel::set_trainable(const std::string& node_prefix, bool trainable) {
  for (Node& n : nodes_)
    if (n.name.starts_with(node_prefix)) n.trainable = trainable;
}

const Shape& NetModel::input_shape(const std::string& name) const {
  for (const auto& [n, s] : inputs_)
    if (n == name) return s;
  throw Error(Errc::ConfigError, "unknown input '" + name + "'");
}

const Shape& NetModel::output_shape() const { return nodes_.at(node_index(output_)).shape; }

std::vector<std::string> NetModel::input_names() const {
  std::vector<std::string> out;
  for (const auto& [n, s] : inputs_) out.push_back(n);
  return out;
}

Layer& NetModel::layer(const std::string& name) {
  touch();
  return *nodes_.at(node_index(name)).layer;
}

const Layer& NetModel::layer(const std::string& name) const { return *nodes_.at(node_index(name)).layer; }

nlohmann::json NetModel::to_json() const {
  nlohmann::json doc;
  doc["format"] = "graspinf-netmodel";
  doc["format_version"] = kFormatVersion;
  doc["metadata"] = metadata_;
  doc["output"] = output_;
  for (const auto& [name, shape] : inputs_) doc["inputs"].push_back({{"name", name}, {"shape", shape}});
  for (const Node& n : nodes_) {
    nlohmann::json node{{"name", n.name}, {"layer", n.layer->describe()}, {"inputs", n.inputs},
                        {"trainable", n.trainable}};
    for (const Tensor* p : std::as_const(*n.layer).params()) node["params"].push_back(p->storage());
    for (const Tensor* b : std::as_const(*n.layer).buffers()) node["buffers"].push_back(b->storage());
    doc["nodes"].push_back(std::move(node));
  }
  return doc;
}

NetModel NetModel::from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string()) != "graspinf-netmodel") {
    throw Error(Errc::DataError, "not a graspinf model container");
  }
  if (doc.at("format_version").get<int>() != kFormatVersion) {
    throw Error(Errc::DataError, "unsupported model format version " + doc.at("format_version").dump());
  }
  NetModel model;
  for (const auto& in : doc.at("inputs")) model.add_input(in.at("name"), in.at("shape").get<Shape>());
  for (const auto& node : doc.at("nodes")) {
    const std::string name = node.at("name");
    model.add(name, make_layer(node.at("layer")), node.at("inputs").get<std::vector<std::string>>());
    Node& n = model.nodes_.back();
    n.trainable = node.at("trainable");
    const auto load_into = [&](std::vector<Tensor*> targets, const char* key) {
      if (targets.empty()) return;
      const auto& values = node.at(key);
      if (values.size() != targets.size()) throw Error(Errc::DataError, "tensor count mismatch in node " + name);
      for (std::size_t k = 0; k < targets.size(); ++k) {
        auto data = values[k].get<std::vector<double>>();
        if (data.size() != targets[k]->size()) throw Error(Errc::DataError, "tensor size mismatch in node " + name);
        targets[k]->storage() = std::move(data);
      }
    };
    load_into(n.layer->params(), "params");
    load_into(n.layer->buffers(), "buffers");
  }
  model.set_output(doc.at("output"));
  model.metadata_ = doc.value("metadata", nlohmann::json::object());
  model.touch();
  return model;
}

void NetModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::FileError, "cannot write model file '" + path + "'");
  const auto bytes = nlohmann::json::to_cbor(to_json());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::FileError, "failed writing model file '" + path + "'");
}

NetModel NetModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileError, "cannot open model file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::from_cbor(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::DataError, "corrupt model file '" + path + "': " + e.what());
  }
  return from_json(doc);
}

}  // namespace graspinf::nn
