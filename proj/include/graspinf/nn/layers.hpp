#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/nn/tensor.hpp"

namespace graspinf::nn {

enum class Mode { Train, Eval };

/// Weight initialisation scheme for layers with parameters.
enum class Init { He, Xavier, Zero };

/// Per-call scratch a layer keeps between forward and backward.
struct LayerCache {
  std::vector<Tensor> saved;
};

/// A differentiable operation on batched tensors. Shapes passed to
/// `output_shape` are per-sample (no batch dimension); tensors passed to
/// forward/backward are batched.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t arity() const { return 1; }
  /// Validates input shapes; throws ShapeMismatch.
  virtual Shape output_shape(std::span<const Shape> inputs) const = 0;

  virtual Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const = 0;

  /// Returns one gradient per input (empty tensors when `need_input_grad` is
  /// false) and accumulates parameter gradients into `param_grads`, ordered as
  /// `params()`.
  virtual std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output,
                                       const LayerCache& cache, const Tensor& grad_out, std::span<Tensor> param_grads,
                                       bool need_input_grad) const = 0;

  virtual std::vector<Tensor*> params() { return {}; }
  std::vector<const Tensor*> params() const;
  /// Non-trainable state that is still serialised (BatchNorm running stats).
  virtual std::vector<Tensor*> buffers() { return {}; }
  std::vector<const Tensor*> buffers() const;

  virtual void initialize(std::mt19937_64& /*rng*/) {}
  virtual nlohmann::json describe() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Init init = Init::He);

  std::string kind() const override { return "Dense"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  void initialize(std::mt19937_64& rng) override;
  nlohmann::json describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  Init init_;
  Tensor weight_;  // {out, in}
  Tensor bias_;    // {out}
};

/// 3x3x3 convolution with TensorFlow-style "same" padding; stride 1 or 2.
class Conv3D final : public Layer {
 public:
  Conv3D(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Init init = Init::He);

  std::string kind() const override { return "Conv3D"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  void initialize(std::mt19937_64& rng) override;
  nlohmann::json describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv3D>(*this); }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  std::size_t in_ch_, out_ch_, stride_;
  Init init_;
  Tensor weight_;  // {out, in, 3, 3, 3}
  Tensor bias_;    // {out}
};

/// Adjoint of a strided Conv3D: upsamples spatial dims by `stride`.
class ConvTranspose3D final : public Layer {
 public:
  ConvTranspose3D(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Init init = Init::He);

  std::string kind() const override { return "ConvTranspose3D"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  void initialize(std::mt19937_64& rng) override;
  nlohmann::json describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose3D>(*this); }

 private:
  std::size_t in_ch_, out_ch_, stride_;
  Init init_;
  Tensor weight_;  // {in, out, 3, 3, 3}: weight of the adjoint convolution out -> in
  Tensor bias_;    // {out}
};

/// Normalises the leading per-sample axis (features for vectors, channels for
/// volumes). Post-linear, pre-activation placement is decided by the builder.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t features, double momentum = 0.99, double eps = 1e-3);

  std::string kind() const override { return "BatchNorm"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  std::vector<Tensor*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }
  nlohmann::json describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

  /// EMA update from the batch statistics recorded in a train-mode cache.
  void update_running_stats(const LayerCache& cache);

  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

 private:
  std::size_t features_;
  double momentum_, eps_;
  Tensor gamma_, beta_;
  Tensor running_mean_, running_var_;
};

class Elu final : public Layer {
 public:
  std::string kind() const override { return "ELU"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Elu>(*this); }
};

class Relu final : public Layer {
 public:
  std::string kind() const override { return "ReLU"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
};

class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "Sigmoid"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

class Flatten final : public Layer {
 public:
  std::string kind() const override { return "Flatten"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
};

class Reshape final : public Layer {
 public:
  explicit Reshape(Shape target) : target_(std::move(target)) {}
  std::string kind() const override { return "Reshape"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}, {"target", target_}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

 private:
  Shape target_;
};

/// Concatenates vector inputs along the feature axis.
class Concat final : public Layer {
 public:
  explicit Concat(std::size_t arity) : arity_(arity) {}
  std::string kind() const override { return "Concat"; }
  std::size_t arity() const override { return arity_; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  nlohmann::json describe() const override { return {{"kind", kind()}, {"arity", arity_}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Concat>(*this); }

 private:
  std::size_t arity_;
};

/// Fixed per-feature affine map y = (x - shift) * scale on vector inputs.
/// Shift and scale are buffers: serialised, never trained.
class Scale final : public Layer {
 public:
  explicit Scale(std::size_t features);

  std::string kind() const override { return "Scale"; }
  Shape output_shape(std::span<const Shape> inputs) const override;
  Tensor forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const override;
  std::vector<Tensor> backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache& cache,
                               const Tensor& grad_out, std::span<Tensor> param_grads,
                               bool need_input_grad) const override;
  std::vector<Tensor*> buffers() override { return {&shift_, &scale_}; }
  nlohmann::json describe() const override { return {{"kind", kind()}, {"features", features_}}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Scale>(*this); }

  /// scale = 1 / max(std, floor).
  void set(std::span<const double> mean, std::span<const double> stddev, double floor = 1e-6);
  const Tensor& shift() const { return shift_; }
  const Tensor& scale() const { return scale_; }

 private:
  std::size_t features_;
  Tensor shift_, scale_;
};

/// Rebuilds a layer (without weights) from `describe()` output.
std::unique_ptr<Layer> make_layer(const nlohmann::json& desc);

/// Spatial output size of a 3-wide "same" convolution.
inline std::size_t same_conv_extent(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

}  // namespace graspinf::nn
