#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/nn/layers.hpp"

namespace graspinf::nn {

using TensorMap = std::map<std::string, Tensor>;

/// Activations recorded by one forward call. Owned by the caller, so frozen
/// models can be evaluated concurrently.
struct ForwardPass {
  Mode mode = Mode::Eval;
  std::uint64_t model_version = 0;
  TensorMap inputs;
  std::vector<Tensor> outputs;  // one per node, in node order
  std::vector<LayerCache> caches;
  std::size_t output_index = 0;

  const Tensor& output() const { return outputs.at(output_index); }
};

struct BackwardOptions {
  bool param_grads = true;
  /// Skip parameter gradients for frozen nodes (their entries stay zero).
  bool skip_frozen = true;
  /// Model inputs that need gradients. Empty means none.
  std::vector<std::string> input_grads;
};

struct Gradients {
  std::vector<Tensor> params;  // aligned with NetModel::parameters()
  TensorMap inputs;
};

/// Layer DAG with named inputs. Nodes may only consume model inputs or nodes
/// added earlier, so insertion order is a topological order.
class NetModel {
 public:
  NetModel();
  NetModel(const NetModel& other);
  NetModel& operator=(const NetModel& other);
  NetModel(NetModel&&) noexcept = default;
  NetModel& operator=(NetModel&&) noexcept = default;

  void add_input(const std::string& name, Shape sample_shape);
  /// Validates arity and shapes against the producing nodes; throws ShapeMismatch.
  void add(const std::string& name, std::unique_ptr<Layer> layer, std::vector<std::string> inputs);
  void set_output(const std::string& name);

  /// Throws ConfigError unless every declared input is consumed exactly once
  /// and an output is set.
  void finalize();

  void initialize(std::uint64_t seed);

  ForwardPass forward(const TensorMap& inputs, Mode mode) const;
  Gradients backward(const ForwardPass& pass, const Tensor& output_grad, const BackwardOptions& options = {}) const;

  /// Fold train-mode batch statistics into the BatchNorm running averages.
  void commit_batch_statistics(const ForwardPass& pass);

  /// Mutable access invalidates outstanding forward passes.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  /// Per-parameter trainable flag, aligned with parameters().
  std::vector<bool> trainable_mask() const;
  std::size_t parameter_count() const;

  void set_trainable(bool trainable);
  void set_trainable(const std::string& node_prefix, bool trainable);

  const Shape& input_shape(const std::string& name) const;
  const Shape& output_shape() const;
  std::vector<std::string> input_names() const;
  std::size_t node_count() const { return nodes_.size(); }
  bool has_node(const std::string& name) const { return index_.contains(name); }
  Layer& layer(const std::string& name);
  const Layer& layer(const std::string& name) const;

  std::uint64_t version() const { return version_; }
  void touch();

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  nlohmann::json to_json() const;
  static NetModel from_json(const nlohmann::json& doc);
  /// Binary (CBOR) container: architecture, weights, running stats, version.
  void save(const std::string& path) const;
  static NetModel load(const std::string& path);

  static constexpr int kFormatVersion = 1;

 private:
  struct Node {
    std::string name;
    std::unique_ptr<Layer> layer;
    std::vector<std::string> inputs;
    Shape shape;
    bool trainable = true;
  };

  const Shape& shape_of(const std::string& name) const;
  std::size_t node_index(const std::string& name) const;

  std::vector<std::pair<std::string, Shape>> inputs_;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> index_;
  std::string output_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::uint64_t version_;
};

}  // namespace graspinf::nn
