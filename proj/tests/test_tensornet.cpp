#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "graspinf/nn/losses.hpp"
#include "graspinf/nn/net_model.hpp"
#include "graspinf/nn/optim.hpp"
#include "test_support.hpp"

using namespace graspinf;
using namespace graspinf::nn;

namespace {

NetModel single_layer(std::unique_ptr<Layer> layer, const std::vector<Shape>& input_shapes) {
  NetModel m;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < input_shapes.size(); ++i) {
    names.push_back("x" + std::to_string(i));
    m.add_input(names.back(), input_shapes[i]);
  }
  m.add("layer", std::move(layer), names);
  m.set_output("layer");
  m.finalize();
  return m;
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// L = sum(r * y) for a fixed random r, so dL/dy = r.
struct ProbeLoss {
  Tensor weights;
  double operator()(const Tensor& y) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  }
};

/// Checks every input and parameter gradient of `model` against central
/// differences; returns the worst relative error.
double gradient_check(NetModel& model, const TensorMap& inputs, Mode mode, std::mt19937_64& rng) {
  const ForwardPass pass = model.forward(inputs, mode);
  const ProbeLoss loss{random_tensor(rng, pass.output().shape())};
  BackwardOptions opts;
  opts.input_grads = model.input_names();
  const Gradients g = model.backward(pass, loss.weights, opts);

  double worst = 0.0;
  for (const auto& name : model.input_names()) {
    TensorMap probe = inputs;
    auto f = [&](const std::vector<double>& x) {
      probe[name].storage() = x;
      return loss(model.forward(probe, mode).output());
    };
    const auto numeric = oracle::central_difference(f, inputs.at(name).storage());
    worst = std::max(worst, oracle::max_relative_error(g.inputs.at(name).storage(), numeric));
  }
  auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::vector<double> original = params[k]->storage();
    auto f = [&](const std::vector<double>& x) {
      params[k]->storage() = x;
      return loss(model.forward(inputs, mode).output());
    };
    const auto numeric = oracle::central_difference(f, original);
    params[k]->storage() = original;
    worst = std::max(worst, oracle::max_relative_error(g.params[k].storage(), numeric));
  }
  return worst;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

TEST(Activations, SigmoidOfZeroIsHalf) {
  NetModel m = single_layer(std::make_unique<Sigmoid>(), {{1}});
  EXPECT_DOUBLE_EQ(m.forward({{"x0", Tensor({1, 1}, 0.0)}}, Mode::Eval).output()[0], 0.5);
}

TEST(Activations, EluOfMinusOne) {
  NetModel m = single_layer(std::make_unique<Elu>(), {{1}});
  EXPECT_NEAR(m.forward({{"x0", Tensor({1, 1}, -1.0)}}, Mode::Eval).output()[0], std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(std::exp(-1.0) - 1.0, -0.6321, 1e-4);
}

TEST(Conv3D, AllOnesKernelSpreadsImpulseToNeighbours) {
  auto conv = std::make_unique<Conv3D>(1, 1, 1);
  conv->weight().fill(1.0);
  conv->bias().fill(0.0);
  NetModel m = single_layer(std::move(conv), {{1, 5, 5, 5}});
  Tensor x({1, 1, 5, 5, 5});
  x[(2 * 5 + 2) * 5 + 2] = 1.0;
  const Tensor y = m.forward({{"x0", x}}, Mode::Eval).output();
  int ones = 0;
  for (int d = 0; d < 5; ++d)
    for (int h = 0; h < 5; ++h)
      for (int w = 0; w < 5; ++w) {
        const bool neighbour = std::abs(d - 2) <= 1 && std::abs(h - 2) <= 1 && std::abs(w - 2) <= 1;
        const double v = y[(d * 5 + h) * 5 + w];
        EXPECT_EQ(v, neighbour ? 1.0 : 0.0) << d << "," << h << "," << w;
        ones += neighbour;
      }
  EXPECT_EQ(ones, 27);
}

TEST(Conv3D, StrideTwoHalvesWithCeiling) {
  for (std::size_t n : {1, 2, 3, 7, 8, 16, 31, 32}) {
    Conv3D conv(1, 2, 2);
    const std::vector<Shape> in{{1, n, n + 1, n + 2}};
    const Shape out = conv.output_shape(in);
    EXPECT_EQ(out, (Shape{2, (n + 1) / 2, (n + 2) / 2, (n + 3) / 2}));
  }
}

TEST(NetModel, ShapeMismatchRaisesAtConstruction) {
  NetModel m;
  m.add_input("x", {4});
  try {
    m.add("d", std::make_unique<Dense>(5, 2), {"x"});
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(NetModel, InputsMustBeConsumedExactlyOnce) {
  NetModel m;
  m.add_input("a", {2});
  m.add_input("b", {2});
  m.add("d", std::make_unique<Dense>(2, 1), {"a"});
  m.set_output("d");
  EXPECT_THROW(m.finalize(), Error);
}

TEST(Dense, InputGradientIsWeightTransposeTimesOutputGrad) {
  auto dense = std::make_unique<Dense>(3, 2);
  std::mt19937_64 rng(3);
  dense->initialize(rng);
  const Tensor w = dense->weight();
  NetModel m = single_layer(std::move(dense), {{3}});
  const auto pass = m.forward({{"x0", Tensor({1, 3}, {0.1, -0.2, 0.3})}}, Mode::Eval);
  const Tensor g({1, 2}, {0.7, -1.3});
  BackwardOptions opts;
  opts.input_grads = {"x0"};
  const auto grads = m.backward(pass, g, opts);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(grads.inputs.at("x0")[j], w[0 * 3 + j] * 0.7 + w[1 * 3 + j] * -1.3, 1e-15);
  }
}

TEST(Backward, ZeroOutputGradGivesZeroGradients) {
  NetModel m;
  m.add_input("x", {1, 4, 4, 4});
  m.add("conv", std::make_unique<Conv3D>(1, 2, 2), {"x"});
  m.add("bn", std::make_unique<BatchNorm>(2), {"conv"});
  m.add("act", std::make_unique<Elu>(), {"bn"});
  m.add("flat", std::make_unique<Flatten>(), {"act"});
  m.add("fc", std::make_unique<Dense>(16, 1), {"flat"});
  m.set_output("fc");
  m.finalize();
  m.initialize(1);
  std::mt19937_64 rng(2);
  const auto pass = m.forward({{"x", random_tensor(rng, {3, 1, 4, 4, 4})}}, Mode::Train);
  BackwardOptions opts;
  opts.input_grads = {"x"};
  const auto grads = m.backward(pass, Tensor({3, 1}), opts);
  for (const Tensor& g : grads.params)
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  for (double v : grads.inputs.at("x").data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, StaleCacheAfterMutation) {
  NetModel m = single_layer(std::make_unique<Dense>(2, 2), {{2}});
  m.initialize(4);
  const auto pass = m.forward({{"x0", Tensor({1, 2}, 1.0)}}, Mode::Eval);
  m.parameters()[0]->storage()[0] += 1.0;
  try {
    m.backward(pass, Tensor({1, 2}, 1.0));
    FAIL() << "expected StaleCache";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::StaleCache);
  }
}

TEST(Forward, NonFiniteInputRaises) {
  NetModel m = single_layer(std::make_unique<Relu>(), {{2}});
  Tensor x({1, 2}, 0.0);
  x[1] = std::nan("");
  try {
    m.forward({{"x0", x}}, Mode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteActivation);
  }
}

// Property: every layer kind agrees with central differences over 100 random
// configurations.
class LayerGradientProperty : public ::testing::TestWithParam<std::string> {};

TEST_P(LayerGradientProperty, MatchesFiniteDifferences) {
  const std::string kind = GetParam();
  std::mt19937_64 rng(std::hash<std::string>{}(kind) % 1000 + 17);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t batch = pick(rng, 1, 3);
    std::unique_ptr<Layer> layer;
    std::vector<Shape> shapes;
    Mode mode = Mode::Eval;
    if (kind == "Dense") {
      const std::size_t in = pick(rng, 1, 6), out = pick(rng, 1, 5);
      layer = std::make_unique<Dense>(in, out);
      shapes = {{in}};
    } else if (kind == "Conv3D") {
      const std::size_t ci = pick(rng, 1, 2), co = pick(rng, 1, 2), s = pick(rng, 1, 2);
      layer = std::make_unique<Conv3D>(ci, co, s);
      shapes = {{ci, pick(rng, 2, 4), pick(rng, 2, 4), pick(rng, 2, 4)}};
    } else if (kind == "ConvTranspose3D") {
      const std::size_t ci = pick(rng, 1, 2), co = pick(rng, 1, 2), s = pick(rng, 1, 2);
      layer = std::make_unique<ConvTranspose3D>(ci, co, s);
      shapes = {{ci, pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}};
    } else if (kind == "BatchNormTrain" || kind == "BatchNormEval") {
      const std::size_t f = pick(rng, 1, 3);
      layer = std::make_unique<BatchNorm>(f);
      shapes = trial % 2 == 0 ? std::vector<Shape>{{f}} : std::vector<Shape>{{f, 2, 2, pick(rng, 1, 2)}};
      if (kind == "BatchNormTrain") {
        mode = Mode::Train;
      }
    } else if (kind == "ELU") {
      layer = std::make_unique<Elu>();
      shapes = {{pick(rng, 1, 8)}};
    } else if (kind == "ReLU") {
      layer = std::make_unique<Relu>();
      shapes = {{pick(rng, 1, 8)}};
    } else if (kind == "Sigmoid") {
      layer = std::make_unique<Sigmoid>();
      shapes = {{pick(rng, 1, 8)}};
    } else if (kind == "Flatten") {
      layer = std::make_unique<Flatten>();
      shapes = {{pick(rng, 1, 3), pick(rng, 1, 3), 2, 2}};
    } else if (kind == "Concat") {
      const std::size_t k = pick(rng, 1, 3);
      layer = std::make_unique<Concat>(k);
      for (std::size_t i = 0; i < k; ++i) shapes.push_back({pick(rng, 1, 4)});
    }
    NetModel m = single_layer(std::move(layer), shapes);
    m.initialize(rng());
    // Non-trivial affine and running statistics so both BN modes are exercised.
    for (Tensor* p : m.parameters())
      for (double& v : p->data()) v += 0.3 * std::normal_distribution<double>(0.0, 1.0)(rng);
    if (auto* bn = dynamic_cast<BatchNorm*>(&m.layer("layer"))) {
      for (Tensor* b : bn->buffers())
        for (double& v : b->data()) v = 0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    TensorMap inputs;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      Shape s{mode == Mode::Train ? batch + 1 : batch};
      s.insert(s.end(), shapes[i].begin(), shapes[i].end());
      inputs["x" + std::to_string(i)] = random_tensor(rng, s);
    }
    worst = std::max(worst, gradient_check(m, inputs, mode, rng));
  }
  EXPECT_LT(worst, 1e-4) << kind;
}

INSTANTIATE_TEST_SUITE_P(AllLayers, LayerGradientProperty,
                         ::testing::Values("Dense", "Conv3D", "ConvTranspose3D", "BatchNormTrain", "BatchNormEval",
                                           "ELU", "ReLU", "Sigmoid", "Flatten", "Concat"));

TEST(BatchNorm, EvalForwardIsBitIdentical) {
  NetModel m;
  m.add_input("x", {3});
  m.add("fc", std::make_unique<Dense>(3, 4), {"x"});
  m.add("bn", std::make_unique<BatchNorm>(4), {"fc"});
  m.set_output("bn");
  m.finalize();
  m.initialize(9);
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {5, 3});
  // Move the running stats off their defaults first.
  for (int i = 0; i < 3; ++i) m.commit_batch_statistics(m.forward({{"x", x}}, Mode::Train));
  const Tensor a = m.forward({{"x", x}}, Mode::Eval).output();
  const Tensor b = m.forward({{"x", x}}, Mode::Eval).output();
  EXPECT_EQ(a, b);
}

TEST(BatchNorm, RunningStatsUseEma) {
  NetModel m = single_layer(std::make_unique<BatchNorm>(1), {{1}});
  m.commit_batch_statistics(m.forward({{"x0", Tensor({2, 1}, {1.0, 3.0})}}, Mode::Train));
  const auto& bn = dynamic_cast<const BatchNorm&>(std::as_const(m).layer("layer"));
  EXPECT_NEAR(bn.running_mean()[0], 0.01 * 2.0, 1e-15);
  EXPECT_NEAR(bn.running_var()[0], 0.99 * 1.0 + 0.01 * 1.0, 1e-15);
}

TEST(Serialization, SaveLoadForwardIsBitIdentical) {
  NetModel m;
  m.add_input("grid", {1, 4, 4, 4});
  m.add_input("v", {2});
  m.add("conv", std::make_unique<Conv3D>(1, 2, 2), {"grid"});
  m.add("bn", std::make_unique<BatchNorm>(2), {"conv"});
  m.add("act", std::make_unique<Elu>(), {"bn"});
  m.add("flat", std::make_unique<Flatten>(), {"act"});
  m.add("cat", std::make_unique<Concat>(2), {"flat", "v"});
  m.add("fc", std::make_unique<Dense>(18, 1, Init::Xavier), {"cat"});
  m.add("out", std::make_unique<Sigmoid>(), {"fc"});
  m.set_output("out");
  m.finalize();
  m.initialize(5);
  std::mt19937_64 rng(6);
  TensorMap in{{"grid", random_tensor(rng, {2, 1, 4, 4, 4})}, {"v", random_tensor(rng, {2, 2})}};
  m.commit_batch_statistics(m.forward(in, Mode::Train));
  m.metadata()["note"] = "roundtrip";
  const auto path = std::filesystem::temp_directory_path() / "graspinf_roundtrip.model";
  m.save(path.string());
  const NetModel loaded = NetModel::load(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(m.forward(in, Mode::Eval).output(), loaded.forward(in, Mode::Eval).output());
  EXPECT_EQ(loaded.metadata().at("note"), "roundtrip");
}

TEST(Adam, FirstStepMovesBySignTimesLearningRate) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  const std::vector<Tensor> g{Tensor({3}, {0.3, -4.0, 1e-3})};
  AdamState state;
  std::vector<Tensor*> params{&p};
  adam_step(params, g, state, {.learning_rate = 0.01});
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-6);
  EXPECT_NEAR(p[2], 0.5 - 0.01, 1e-5);
}

TEST(Momentum, ZeroGradientZeroVelocityKeepsParams) {
  Tensor p({2}, {1.0, 2.0});
  const std::vector<Tensor> g{Tensor({2}, 0.0)};
  MomentumState state;
  std::vector<Tensor*> params{&p};
  momentum_step(params, g, state, {});
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 2.0);
}

TEST(Adam, ConvergesOnConvexQuadratic) {
  Tensor x({2}, {0.6, 0.8});
  AdamState state;
  std::vector<Tensor*> params{&x};
  for (int i = 0; i < 200; ++i) {
    const std::vector<Tensor> g{Tensor({2}, {2.0 * x[0], 2.0 * x[1]})};
    adam_step(params, g, state, {.learning_rate = 0.01});
  }
  EXPECT_LT(std::hypot(x[0], x[1]), 1e-2);
}

TEST(Losses, BceAtHalfIsLogTwo) {
  const double y = 1.0;
  EXPECT_NEAR(bce_loss(Tensor({1, 1}, 0.5), std::span<const double>(&y, 1)).value, std::log(2.0), 1e-15);
}

TEST(Losses, BceAtLabelIsNearZero) {
  const std::vector<double> labels{1.0, 0.0};
  EXPECT_LE(bce_loss(Tensor({2, 1}, {1.0, 0.0}), labels).value, 1e-6);
}

TEST(Losses, BceGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto p = oracle::random_vector(rng, 20, 0.05, 0.95);
  std::vector<double> labels(20);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(i % 2);
  const auto r = bce_loss(Tensor({20, 1}, p), labels);
  const auto numeric = oracle::central_difference(
      [&](const std::vector<double>& x) { return bce_loss(Tensor({20, 1}, x), labels).value; }, p);
  EXPECT_LT(oracle::max_relative_error(r.grad.storage(), numeric), 1e-6);
}

TEST(Losses, VoxelCrossEntropyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const auto logits = oracle::random_vector(rng, 27, -3.0, 3.0);
  Tensor target({1, 27});
  for (std::size_t i = 0; i < 27; ++i) target[i] = i % 3 == 0 ? 1.0 : 0.0;
  const auto r = voxel_ce_loss(Tensor({1, 27}, logits), target);
  const auto numeric = oracle::central_difference(
      [&](const std::vector<double>& x) { return voxel_ce_loss(Tensor({1, 27}, x), target).value; }, logits);
  EXPECT_LT(oracle::max_relative_error(r.grad.storage(), numeric), 1e-6);
}
