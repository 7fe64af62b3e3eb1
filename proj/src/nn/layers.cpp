#include "graspinf/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace graspinf::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel * kKernel;

void require_arity(std::span<const Shape> inputs, std::size_t n, const std::string& kind) {
  if (inputs.size() != n) {
    throw Error(Errc::ShapeMismatch, kind + " expects " + std::to_string(n) + " input(s), got " +
                                         std::to_string(inputs.size()));
  }
}

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
}

double init_stddev(Init init, double fan_in, double fan_out) {
  switch (init) {
    case Init::He: return std::sqrt(2.0 / fan_in);
    case Init::Xavier: return std::sqrt(2.0 / (fan_in + fan_out));
    case Init::Zero: return 0.0;
  }
  return 0.0;
}

std::string init_name(Init init) {
  switch (init) {
    case Init::He: return "he";
    case Init::Xavier: return "xavier";
    case Init::Zero: return "zero";
  }
  return "he";
}

Init init_from_name(const std::string& name) {
  if (name == "xavier") return Init::Xavier;
  if (name == "zero") return Init::Zero;
  return Init::He;
}

/// Index bookkeeping for a 3x3x3 "same" convolution from an input volume to
/// a (possibly strided) output volume.
struct ConvGeometry {
  std::size_t in[3];
  std::size_t out[3];
  std::size_t pad[3];
  std::size_t stride;

  ConvGeometry(const Shape& spatial, std::size_t s) : stride(s) {
    for (int a = 0; a < 3; ++a) {
      in[a] = spatial[a];
      out[a] = same_conv_extent(in[a], s);
      const std::size_t needed = (out[a] - 1) * s + kKernel;
      const std::size_t total = needed > in[a] ? needed - in[a] : 0;
      pad[a] = total / 2;
    }
  }
  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
};

// col is (channels * 27) x out_volume, row-major.
void im2col(const double* x, std::size_t channels, const ConvGeometry& g, double* col) {
  const std::size_t P = g.out_volume();
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x + c * g.in_volume();
    for (std::size_t kd = 0; kd < kKernel; ++kd)
      for (std::size_t kh = 0; kh < kKernel; ++kh)
        for (std::size_t kw = 0; kw < kKernel; ++kw) {
          double* row = col + ((c * kTaps) + kd * 9 + kh * 3 + kw) * P;
          std::size_t p = 0;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - static_cast<long>(g.pad[0]);
            const bool d_ok = id >= 0 && id < static_cast<long>(g.in[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad[1]);
              const bool h_ok = d_ok && ih >= 0 && ih < static_cast<long>(g.in[1]);
              for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++p) {
                const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad[2]);
                row[p] = (h_ok && iw >= 0 && iw < static_cast<long>(g.in[2]))
                             ? xc[(static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2] +
                                  static_cast<std::size_t>(iw)]
                             : 0.0;
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-add columns back into the (zeroed) volume.
void col2im(const double* col, std::size_t channels, const ConvGeometry& g, double* x) {
  const std::size_t P = g.out_volume();
  for (std::size_t c = 0; c < channels; ++c) {
    double* xc = x + c * g.in_volume();
    for (std::size_t kd = 0; kd < kKernel; ++kd)
      for (std::size_t kh = 0; kh < kKernel; ++kh)
        for (std::size_t kw = 0; kw < kKernel; ++kw) {
          const double* row = col + ((c * kTaps) + kd * 9 + kh * 3 + kw) * P;
          std::size_t p = 0;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - static_cast<long>(g.pad[0]);
            const bool d_ok = id >= 0 && id < static_cast<long>(g.in[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad[1]);
              const bool h_ok = d_ok && ih >= 0 && ih < static_cast<long>(g.in[1]);
              for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++p) {
                const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad[2]);
                if (h_ok && iw >= 0 && iw < static_cast<long>(g.in[2])) {
                  xc[(static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2] +
                     static_cast<std::size_t>(iw)] += row[p];
                }
              }
            }
          }
        }
  }
}

Shape require_volume(std::span<const Shape> inputs, std::size_t channels, const std::string& kind) {
  require_arity(inputs, 1, kind);
  const Shape& s = inputs[0];
  if (s.size() != 4 || s[0] != channels) {
    throw Error(Errc::ShapeMismatch, kind + " expects {" + std::to_string(channels) + ",D,H,W}, got " +
                                         shape_string(s));
  }
  return s;
}

Shape elementwise_shape(std::span<const Shape> inputs, const std::string& kind) {
  require_arity(inputs, 1, kind);
  return inputs[0];
}

std::vector<Tensor> single(Tensor t) {
  std::vector<Tensor> out;
  out.push_back(std::move(t));
  return out;
}

}  // namespace

std::vector<const Tensor*> Layer::params() const {
  auto mutable_params = const_cast<Layer*>(this)->params();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<const Tensor*> Layer::buffers() const {
  auto mutable_buffers = const_cast<Layer*>(this)->buffers();
  return {mutable_buffers.begin(), mutable_buffers.end()};
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out, Init init)
    : in_(in), out_(out), init_(init), weight_({out, in}), bias_({out}) {
  if (in == 0 || out == 0) throw Error(Errc::ShapeMismatch, "Dense dimensions must be positive");
}

Shape Dense::output_shape(std::span<const Shape> inputs) const {
  require_arity(inputs, 1, "Dense");
  if (inputs[0] != Shape{in_}) {
    throw Error(Errc::ShapeMismatch, "Dense expects {" + std::to_string(in_) + "}, got " + shape_string(inputs[0]));
  }
  return {out_};
}

Tensor Dense::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  Tensor y({n, out_});
  ConstMatMap X(x.raw(), n, in_);
  ConstMatMap W(weight_.raw(), out_, in_);
  MatMap Y(y.raw(), n, out_);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += ConstVecMap(bias_.raw(), out_).transpose();
  return y;
}

std::vector<Tensor> Dense::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                    const Tensor& grad_out, std::span<Tensor> param_grads,
                                    bool need_input_grad) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  ConstMatMap X(x.raw(), n, in_);
  ConstMatMap G(grad_out.raw(), n, out_);
  MatMap(param_grads[0].raw(), out_, in_).noalias() += G.transpose() * X;
  VecMap(param_grads[1].raw(), out_) += G.colwise().sum().transpose();
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor({n, in_});
    MatMap(dx.raw(), n, in_).noalias() = G * ConstMatMap(weight_.raw(), out_, in_);
  }
  return single(std::move(dx));
}

void Dense::initialize(std::mt19937_64& rng) {
  fill_normal(weight_, rng, init_stddev(init_, static_cast<double>(in_), static_cast<double>(out_)));
  bias_.fill(0.0);
}

nlohmann::json Dense::describe() const {
  return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"init", init_name(init_)}};
}

// ---------------------------------------------------------------- Conv3D

Conv3D::Conv3D(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Init init)
    : in_ch_(in_channels),
      out_ch_(out_channels),
      stride_(stride),
      init_(init),
      weight_({out_channels, in_channels, kKernel, kKernel, kKernel}),
      bias_({out_channels}) {
  if (stride != 1 && stride != 2) throw Error(Errc::ShapeMismatch, "Conv3D stride must be 1 or 2");
  if (in_channels == 0 || out_channels == 0) throw Error(Errc::ShapeMismatch, "Conv3D channels must be positive");
}

Shape Conv3D::output_shape(std::span<const Shape> inputs) const {
  const Shape s = require_volume(inputs, in_ch_, "Conv3D");
  return {out_ch_, same_conv_extent(s[1], stride_), same_conv_extent(s[2], stride_), same_conv_extent(s[3], stride_)};
}

Tensor Conv3D::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  const ConvGeometry g({x.dim(2), x.dim(3), x.dim(4)}, stride_);
  const std::size_t K = in_ch_ * kTaps;
  const std::size_t P = g.out_volume();
  Tensor y({n, out_ch_, g.out[0], g.out[1], g.out[2]});
  std::vector<double> col(K * P);
  ConstMatMap W(weight_.raw(), out_ch_, K);
  ConstVecMap b(bias_.raw(), out_ch_);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.sample(i).data(), in_ch_, g, col.data());
    MatMap Y(y.sample(i).data(), out_ch_, P);
    Y.noalias() = W * ConstMatMap(col.data(), K, P);
    Y.colwise() += b;
  }
  return y;
}

std::vector<Tensor> Conv3D::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                     const Tensor& grad_out, std::span<Tensor> param_grads,
                                     bool need_input_grad) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  const ConvGeometry g({x.dim(2), x.dim(3), x.dim(4)}, stride_);
  const std::size_t K = in_ch_ * kTaps;
  const std::size_t P = g.out_volume();
  std::vector<double> col(K * P);
  std::vector<double> dcol(need_input_grad ? K * P : 0);
  ConstMatMap W(weight_.raw(), out_ch_, K);
  MatMap dW(param_grads[0].raw(), out_ch_, K);
  VecMap db(param_grads[1].raw(), out_ch_);
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.sample(i).data(), in_ch_, g, col.data());
    ConstMatMap G(grad_out.sample(i).data(), out_ch_, P);
    dW.noalias() += G * ConstMatMap(col.data(), K, P).transpose();
    db += G.rowwise().sum();
    if (need_input_grad) {
      MatMap(dcol.data(), K, P).noalias() = W.transpose() * G;
      col2im(dcol.data(), in_ch_, g, dx.sample(i).data());
    }
  }
  return single(std::move(dx));
}

void Conv3D::initialize(std::mt19937_64& rng) {
  fill_normal(weight_, rng,
              init_stddev(init_, static_cast<double>(in_ch_ * kTaps), static_cast<double>(out_ch_ * kTaps)));
  bias_.fill(0.0);
}

nlohmann::json Conv3D::describe() const {
  return {{"kind", kind()}, {"in", in_ch_}, {"out", out_ch_}, {"stride", stride_}, {"init", init_name(init_)}};
}

// ---------------------------------------------------------------- ConvTranspose3D

ConvTranspose3D::ConvTranspose3D(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Init init)
    : in_ch_(in_channels),
      out_ch_(out_channels),
      stride_(stride),
      init_(init),
      weight_({in_channels, out_channels, kKernel, kKernel, kKernel}),
      bias_({out_channels}) {
  if (stride != 1 && stride != 2) throw Error(Errc::ShapeMismatch, "ConvTranspose3D stride must be 1 or 2");
  if (in_channels == 0 || out_channels == 0) {
    throw Error(Errc::ShapeMismatch, "ConvTranspose3D channels must be positive");
  }
}

Shape ConvTranspose3D::output_shape(std::span<const Shape> inputs) const {
  const Shape s = require_volume(inputs, in_ch_, "ConvTranspose3D");
  return {out_ch_, s[1] * stride_, s[2] * stride_, s[3] * stride_};
}

Tensor ConvTranspose3D::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  const ConvGeometry g({x.dim(2) * stride_, x.dim(3) * stride_, x.dim(4) * stride_}, stride_);
  const std::size_t K = out_ch_ * kTaps;
  const std::size_t P = g.out_volume();  // small grid
  Tensor y({n, out_ch_, g.in[0], g.in[1], g.in[2]});
  std::vector<double> col(K * P);
  ConstMatMap W(weight_.raw(), in_ch_, K);
  for (std::size_t i = 0; i < n; ++i) {
    MatMap(col.data(), K, P).noalias() = W.transpose() * ConstMatMap(x.sample(i).data(), in_ch_, P);
    col2im(col.data(), out_ch_, g, y.sample(i).data());
    MatMap Y(y.sample(i).data(), out_ch_, g.in_volume());
    Y.colwise() += ConstVecMap(bias_.raw(), out_ch_);
  }
  return y;
}

std::vector<Tensor> ConvTranspose3D::backward(std::span<const Tensor* const> inputs, const Tensor&,
                                              const LayerCache&, const Tensor& grad_out,
                                              std::span<Tensor> param_grads, bool need_input_grad) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  const ConvGeometry g({x.dim(2) * stride_, x.dim(3) * stride_, x.dim(4) * stride_}, stride_);
  const std::size_t K = out_ch_ * kTaps;
  const std::size_t P = g.out_volume();
  std::vector<double> gcol(K * P);
  ConstMatMap W(weight_.raw(), in_ch_, K);
  MatMap dW(param_grads[0].raw(), in_ch_, K);
  VecMap db(param_grads[1].raw(), out_ch_);
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    im2col(grad_out.sample(i).data(), out_ch_, g, gcol.data());
    ConstMatMap GC(gcol.data(), K, P);
    ConstMatMap X(x.sample(i).data(), in_ch_, P);
    dW.noalias() += X * GC.transpose();
    db += ConstMatMap(grad_out.sample(i).data(), out_ch_, g.in_volume()).rowwise().sum();
    if (need_input_grad) MatMap(dx.sample(i).data(), in_ch_, P).noalias() = W * GC;
  }
  return single(std::move(dx));
}

void ConvTranspose3D::initialize(std::mt19937_64& rng) {
  fill_normal(weight_, rng,
              init_stddev(init_, static_cast<double>(in_ch_ * kTaps), static_cast<double>(out_ch_ * kTaps)));
  bias_.fill(0.0);
}

nlohmann::json ConvTranspose3D::describe() const {
  return {{"kind", kind()}, {"in", in_ch_}, {"out", out_ch_}, {"stride", stride_}, {"init", init_name(init_)}};
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t features, double momentum, double eps)
    : features_(features),
      momentum_(momentum),
      eps_(eps),
      gamma_({features}, 1.0),
      beta_({features}, 0.0),
      running_mean_({features}, 0.0),
      running_var_({features}, 1.0) {}

Shape BatchNorm::output_shape(std::span<const Shape> inputs) const {
  require_arity(inputs, 1, "BatchNorm");
  if (inputs[0].empty() || inputs[0][0] != features_) {
    throw Error(Errc::ShapeMismatch, "BatchNorm(" + std::to_string(features_) + ") got " + shape_string(inputs[0]));
  }
  return inputs[0];
}

// cache.saved: [0] xhat, [1] inv_std {F}, [2] batch mean {F}, [3] batch var {F}
Tensor BatchNorm::forward(std::span<const Tensor* const> inputs, Mode mode, LayerCache& cache) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  const std::size_t inner = x.sample_size() / features_;
  Tensor y(x.shape());
  Tensor mean({features_}), var({features_}), inv_std({features_});
  if (mode == Mode::Train) {
    const double count = static_cast<double>(n * inner);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xs = x.sample(i).data();
      for (std::size_t f = 0; f < features_; ++f)
        for (std::size_t k = 0; k < inner; ++k) mean[f] += xs[f * inner + k];
    }
    for (std::size_t f = 0; f < features_; ++f) mean[f] /= count;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xs = x.sample(i).data();
      for (std::size_t f = 0; f < features_; ++f)
        for (std::size_t k = 0; k < inner; ++k) {
          const double d = xs[f * inner + k] - mean[f];
          var[f] += d * d;
        }
    }
    for (std::size_t f = 0; f < features_; ++f) var[f] /= count;
  } else {
    mean = running_mean_;
    var = running_var_;
  }
  for (std::size_t f = 0; f < features_; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + eps_);

  Tensor xhat(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* xs = x.sample(i).data();
    double* hs = xhat.sample(i).data();
    double* ys = y.sample(i).data();
    for (std::size_t f = 0; f < features_; ++f)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t j = f * inner + k;
        hs[j] = (xs[j] - mean[f]) * inv_std[f];
        ys[j] = gamma_[f] * hs[j] + beta_[f];
      }
  }
  cache.saved = {std::move(xhat), std::move(inv_std), std::move(mean), std::move(var)};
  cache.saved.emplace_back(Tensor({1}, mode == Mode::Train ? 1.0 : 0.0));
  return y;
}

std::vector<Tensor> BatchNorm::backward(std::span<const Tensor* const> inputs, const Tensor&,
                                        const LayerCache& cache, const Tensor& grad_out,
                                        std::span<Tensor> param_grads, bool need_input_grad) const {
  const Tensor& x = *inputs[0];
  const std::size_t n = x.batch();
  const std::size_t inner = x.sample_size() / features_;
  const Tensor& xhat = cache.saved[0];
  const Tensor& inv_std = cache.saved[1];
  const bool train = cache.saved[4][0] != 0.0;

  std::vector<double> sum_g(features_, 0.0), sum_gx(features_, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* gs = grad_out.sample(i).data();
    const double* hs = xhat.sample(i).data();
    for (std::size_t f = 0; f < features_; ++f)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t j = f * inner + k;
        sum_g[f] += gs[j];
        sum_gx[f] += gs[j] * hs[j];
      }
  }
  for (std::size_t f = 0; f < features_; ++f) {
    param_grads[0][f] += sum_gx[f];
    param_grads[1][f] += sum_g[f];
  }
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor(x.shape());
    const double count = static_cast<double>(n * inner);
    for (std::size_t i = 0; i < n; ++i) {
      const double* gs = grad_out.sample(i).data();
      const double* hs = xhat.sample(i).data();
      double* ds = dx.sample(i).data();
      for (std::size_t f = 0; f < features_; ++f) {
        const double scale = gamma_[f] * inv_std[f];
        for (std::size_t k = 0; k < inner; ++k) {
          const std::size_t j = f * inner + k;
          ds[j] = train ? scale * (gs[j] - sum_g[f] / count - hs[j] * sum_gx[f] / count) : scale * gs[j];
        }
      }
    }
  }
  return single(std::move(dx));
}

void BatchNorm::update_running_stats(const LayerCache& cache) {
  const Tensor& mean = cache.saved[2];
  const Tensor& var = cache.saved[3];
  for (std::size_t f = 0; f < features_; ++f) {
    running_mean_[f] = momentum_ * running_mean_[f] + (1.0 - momentum_) * mean[f];
    running_var_[f] = momentum_ * running_var_[f] + (1.0 - momentum_) * var[f];
  }
}

nlohmann::json BatchNorm::describe() const {
  return {{"kind", kind()}, {"features", features_}, {"momentum", momentum_}, {"eps", eps_}};
}

// ---------------------------------------------------------------- activations

Shape Elu::output_shape(std::span<const Shape> inputs) const { return elementwise_shape(inputs, "ELU"); }

Tensor Elu::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  Tensor y = *inputs[0];
  for (double& v : y.data()) v = v > 0.0 ? v : std::expm1(v);
  return y;
}

std::vector<Tensor> Elu::backward(std::span<const Tensor* const> inputs, const Tensor& output, const LayerCache&,
                                  const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  Tensor dx;
  if (need_input_grad) {
    dx = grad_out;
    const Tensor& x = *inputs[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= x[i] > 0.0 ? 1.0 : output[i] + 1.0;
  }
  return single(std::move(dx));
}

Shape Relu::output_shape(std::span<const Shape> inputs) const { return elementwise_shape(inputs, "ReLU"); }

Tensor Relu::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  Tensor y = *inputs[0];
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

std::vector<Tensor> Relu::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                   const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  Tensor dx;
  if (need_input_grad) {
    dx = grad_out;
    const Tensor& x = *inputs[0];
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (x[i] <= 0.0) dx[i] = 0.0;
  }
  return single(std::move(dx));
}

Shape Sigmoid::output_shape(std::span<const Shape> inputs) const { return elementwise_shape(inputs, "Sigmoid"); }

Tensor Sigmoid::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  Tensor y = *inputs[0];
  for (double& v : y.data()) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return y;
}

std::vector<Tensor> Sigmoid::backward(std::span<const Tensor* const>, const Tensor& output, const LayerCache&,
                                      const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  Tensor dx;
  if (need_input_grad) {
    dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output[i] * (1.0 - output[i]);
  }
  return single(std::move(dx));
}

// ---------------------------------------------------------------- shape plumbing

Shape Flatten::output_shape(std::span<const Shape> inputs) const {
  require_arity(inputs, 1, "Flatten");
  return {element_count(inputs[0])};
}

Tensor Flatten::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const Tensor& x = *inputs[0];
  return x.reshaped({x.batch(), x.sample_size()});
}

std::vector<Tensor> Flatten::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                      const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  return single(need_input_grad ? grad_out.reshaped(inputs[0]->shape()) : Tensor());
}

Shape Reshape::output_shape(std::span<const Shape> inputs) const {
  require_arity(inputs, 1, "Reshape");
  if (element_count(inputs[0]) != element_count(target_)) {
    throw Error(Errc::ShapeMismatch, "Reshape " + shape_string(inputs[0]) + " -> " + shape_string(target_));
  }
  return target_;
}

Tensor Reshape::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const Tensor& x = *inputs[0];
  Shape s{x.batch()};
  s.insert(s.end(), target_.begin(), target_.end());
  return x.reshaped(std::move(s));
}

std::vector<Tensor> Reshape::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                      const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  return single(need_input_grad ? grad_out.reshaped(inputs[0]->shape()) : Tensor());
}

Shape Concat::output_shape(std::span<const Shape> inputs) const {
  require_arity(inputs, arity_, "Concat");
  std::size_t total = 0;
  for (const Shape& s : inputs) {
    if (s.size() != 1) throw Error(Errc::ShapeMismatch, "Concat expects vector inputs, got " + shape_string(s));
    total += s[0];
  }
  return {total};
}

Tensor Concat::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const std::size_t n = inputs[0]->batch();
  std::size_t total = 0;
  for (const Tensor* t : inputs) {
    if (t->batch() != n) throw Error(Errc::ShapeMismatch, "Concat inputs disagree on batch size");
    total += t->sample_size();
  }
  Tensor y({n, total});
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = y.sample(i).data();
    for (const Tensor* t : inputs) {
      const auto src = t->sample(i);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return y;
}

std::vector<Tensor> Concat::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                     const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  std::vector<Tensor> grads(inputs.size());
  if (!need_input_grad) return grads;
  const std::size_t n = grad_out.batch();
  for (std::size_t k = 0; k < inputs.size(); ++k) grads[k] = Tensor(inputs[k]->shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = grad_out.sample(i).data();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto dst = grads[k].sample(i);
      std::copy(src, src + dst.size(), dst.begin());
      src += dst.size();
    }
  }
  return grads;
}

Scale::Scale(std::size_t features) : features_(features), shift_({features}, 0.0), scale_({features}, 1.0) {}

Shape Scale::output_shape(std::span<const Shape> inputs) const {
  require_arity(inputs, 1, "Scale");
  if (inputs[0] != Shape{features_}) {
    throw Error(Errc::ShapeMismatch, "Scale expects {" + std::to_string(features_) + "}, got " + shape_string(inputs[0]));
  }
  return inputs[0];
}

Tensor Scale::forward(std::span<const Tensor* const> inputs, Mode, LayerCache&) const {
  const Tensor& x = *inputs[0];
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.batch(); ++i)
    for (std::size_t f = 0; f < features_; ++f) {
      const std::size_t k = i * features_ + f;
      y[k] = (x[k] - shift_[f]) * scale_[f];
    }
  return y;
}

std::vector<Tensor> Scale::backward(std::span<const Tensor* const> inputs, const Tensor&, const LayerCache&,
                                    const Tensor& grad_out, std::span<Tensor>, bool need_input_grad) const {
  if (!need_input_grad) return single(Tensor());
  Tensor g(inputs[0]->shape());
  for (std::size_t i = 0; i < g.batch(); ++i)
    for (std::size_t f = 0; f < features_; ++f) g[i * features_ + f] = grad_out[i * features_ + f] * scale_[f];
  return single(std::move(g));
}

void Scale::set(std::span<const double> mean, std::span<const double> stddev, double floor) {
  if (mean.size() != features_ || stddev.size() != features_) throw Error(Errc::ShapeMismatch, "Scale statistics");
  for (std::size_t f = 0; f < features_; ++f) {
    shift_[f] = mean[f];
    scale_[f] = 1.0 / std::max(stddev[f], floor);
  }
}

std::unique_ptr<Layer> make_layer(const nlohmann::json& desc) {
  const std::string kind = desc.at("kind").get<std::string>();
  const auto init = [&] { return init_from_name(desc.value("init", std::string("he"))); };
  if (kind == "Dense") return std::make_unique<Dense>(desc.at("in"), desc.at("out"), init());
  if (kind == "Conv3D") return std::make_unique<Conv3D>(desc.at("in"), desc.at("out"), desc.at("stride"), init());
  if (kind == "ConvTranspose3D") {
    return std::make_unique<ConvTranspose3D>(desc.at("in"), desc.at("out"), desc.at("stride"), init());
  }
  if (kind == "BatchNorm") return std::make_unique<BatchNorm>(desc.at("features"), desc.at("momentum"), desc.at("eps"));
  if (kind == "ELU") return std::make_unique<Elu>();
  if (kind == "ReLU") return std::make_unique<Relu>();
  if (kind == "Sigmoid") return std::make_unique<Sigmoid>();
  if (kind == "Flatten") return std::make_unique<Flatten>();
  if (kind == "Reshape") return std::make_unique<Reshape>(desc.at("target").get<Shape>());
  if (kind == "Concat") return std::make_unique<Concat>(desc.at("arity"));
  if (kind == "Scale") return std::make_unique<Scale>(desc.at("features"));
  throw Error(Errc::ConfigError, "unknown layer kind '" + kind + "'");
}

}  // namespace graspinf::nn
