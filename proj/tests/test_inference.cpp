#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "graspinf/error.hpp"
#include "graspinf/inference.hpp"
#include "test_support.hpp"

using namespace graspinf;
using Vec = Eigen::VectorXd;

namespace {

// p = sigmoid(offset - 0.5 (t - peak)' A (t - peak)); unique maximizer `peak`.
class QuadraticSurrogate : public GraspLikelihood {
 public:
  QuadraticSurrogate(ConfigVector peak, Eigen::Matrix<double, 14, 14> a, double offset = 0.0)
      : peak_(std::move(peak)), a_(std::move(a)), offset_(offset) {}

  double probability(const ConfigVector& theta, ConfigVector* grad) const override {
    const ConfigVector d = theta - peak_;
    const double q = offset_ - 0.5 * d.dot(a_ * d);
    const double p = 1.0 / (1.0 + std::exp(-q));
    if (grad) *grad = -p * (1.0 - p) * (a_ * d);
    return p;
  }

 private:
  ConfigVector peak_;
  Eigen::Matrix<double, 14, 14> a_;
  double offset_;
};

class NanLikelihood : public GraspLikelihood {
 public:
  double probability(const ConfigVector&, ConfigVector* grad) const override {
    if (grad) grad->setZero();
    return std::numeric_limits<double>::quiet_NaN();
  }
};

ConfigVector centre() {
  const BoundBox b = HandModel{}.bound_box();
  return 0.5 * (b.lower + b.upper);
}

Eigen::Matrix<double, 14, 14> spd14(std::mt19937_64& rng, double lo, double hi) {
  return oracle::random_spd(rng, 14, lo, hi);
}

MixturePrior test_gmm() {
  MixturePrior m;
  m.weights = {0.4, 0.6};
  m.means = {centre(), centre()};
  m.means[0][3] = -1.5;
  m.means[1][0] = 0.1;
  m.variances = {ConfigVector::Constant(0.3), ConfigVector::Constant(0.5)};
  m.tags = {ComponentTag::Side, ComponentTag::Overhead};
  return m;
}

}  // namespace

TEST(MinimizeBounded, BoundActiveQuadratic) {
  const VectorObjective f = [](const Vec& x, Vec* g) {
    if (g) *g = 2.0 * (x.array() - 2.0).matrix();
    return (x.array() - 2.0).square().sum();
  };
  const auto r = minimize_bounded(f, Vec::Zero(1), Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), {});
  EXPECT_EQ(r.x[0], 1.0);
  EXPECT_EQ(r.termination, Termination::GradTol);
}

TEST(MinimizeBounded, InteriorMinimum) {
  std::mt19937_64 rng(1);
  const Vec c = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, -0.5, 0.5).data(), 14);
  const VectorObjective f = [&](const Vec& x, Vec* g) {
    if (g) *g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
  const auto r = minimize_bounded(f, Vec::Zero(14), Vec::Constant(14, -1.0), Vec::Constant(14, 1.0), {});
  EXPECT_LT((r.x - c).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(MinimizeBounded, MatchesProjectedGradientOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd a = oracle::random_spd(rng, 14, 0.1, 10.0);
    const Vec b = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, -5, 5).data(), 14);
    const Vec lo = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, -1.0, -0.1).data(), 14);
    const Vec hi = Eigen::Map<const Vec>(oracle::random_vector(rng, 14, 0.1, 1.0).data(), 14);
    bool feasible = true;
    const VectorObjective f = [&](const Vec& x, Vec* g) {
      feasible = feasible && (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
      if (g) *g = a * x - b;
      return 0.5 * x.dot(a * x) - b.dot(x);
    };
    const auto r = minimize_bounded(f, Vec::Zero(14), lo, hi, {});
    const Vec ref = oracle::projected_gradient_descent(a, b, Vec::Zero(14), lo, hi, 10.0);
    const double f_ref = 0.5 * ref.dot(a * ref) - b.dot(ref);
    EXPECT_NEAR(r.value, f_ref, 1e-4) << "instance " << t;
    EXPECT_TRUE(feasible);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
  }
}

TEST(Objective, UniformIsNegativeLogLikelihood) {
  std::mt19937_64 rng(3);
  const QuadraticSurrogate s(centre(), spd14(rng, 0.5, 2.0));
  PlanPrior uniform;
  PlanPrior gmm;
  gmm.kind = PriorKind::Gmm;
  gmm.mixture = test_gmm();
  for (int t = 0; t < 20; ++t) {
    ConfigVector theta = centre();
    for (int d = 0; d < 14; ++d) theta[d] += 0.3 * std::uniform_real_distribution<double>(-1, 1)(rng);
    const double p = s.probability(theta, nullptr);
    EXPECT_EQ(map_objective(theta, s, uniform, 0.5), -std::log(p));
    EXPECT_NEAR(map_objective(theta, s, gmm, 0.0), map_objective(theta, s, uniform, 0.5), 1e-12);
  }
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  PlanPrior gmm;
  gmm.kind = PriorKind::Gmm;
  gmm.mixture = test_gmm();
  for (int t = 0; t < 100; ++t) {
    const QuadraticSurrogate s(centre(), spd14(rng, 0.5, 2.0));
    ConfigVector theta = centre();
    for (int d = 0; d < 14; ++d) theta[d] += 0.5 * std::uniform_real_distribution<double>(-1, 1)(rng);
    ConfigVector g;
    map_objective(theta, s, gmm, 0.5, &g);
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& v) {
          return map_objective(Eigen::Map<const ConfigVector>(v.data()), s, gmm, 0.5);
        },
        std::vector<double>(theta.data(), theta.data() + 14));
    EXPECT_LT(oracle::max_relative_error(std::vector<double>(g.data(), g.data() + 14), fd, 1e-6), 1e-4);
  }
}

TEST(Objective, SaturatedLikelihoodHasZeroGradient) {
  const QuadraticSurrogate s(centre(), Eigen::Matrix<double, 14, 14>::Identity(), 40.0);
  ConfigVector g;
  const double v = map_objective(centre(), s, PlanPrior{}, 0.5, &g);
  EXPECT_NEAR(v, -std::log(1.0 - kLikelihoodClamp), 1e-15);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(PlanGrasp, FindsSurrogateMaximizer) {
  std::mt19937_64 rng(5);
  ConfigVector peak = centre();
  peak[0] += 0.05;
  peak[5] -= 0.3;
  peak[8] += 0.2;
  const QuadraticSurrogate s(peak, spd14(rng, 1.0, 20.0));
  PlanPrior uniform;
  uniform.initializer = [](GraspType, std::mt19937_64& r) {
    ConfigVector x = centre();
    for (int d = 0; d < 14; ++d) x[d] += 0.2 * std::uniform_real_distribution<double>(-1, 1)(r);
    return x;
  };
  InferenceSettings settings;
  settings.restarts = 3;
  const PlanResult r = plan_grasp(s, uniform, GraspType::Side, settings, rng);
  EXPECT_LT((r.theta.to_vector() - peak).lpNorm<Eigen::Infinity>(), 1e-3);
  EXPECT_EQ(r.success_prob, s.probability(r.theta.to_vector(), nullptr));
  EXPECT_GE(r.success_prob, r.init_success_prob);
  EXPECT_TRUE(uniform.box.contains(r.theta.to_vector()));
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i) EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1]);
}

TEST(PlanGrasp, DeterministicWithFixedSeed) {
  std::mt19937_64 rng(6);
  const QuadraticSurrogate s(centre(), spd14(rng, 1.0, 5.0));
  PlanPrior gmm;
  gmm.kind = PriorKind::Gmm;
  gmm.mixture = test_gmm();
  InferenceSettings settings;
  settings.restarts = 1;
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(to_json(plan_grasp(s, gmm, GraspType::Overhead, settings, a)).dump(),
            to_json(plan_grasp(s, gmm, GraspType::Overhead, settings, b)).dump());
  settings.restarts = 4;
  settings.threads = 3;
  std::mt19937_64 c(8), d(8);
  const auto parallel = to_json(plan_grasp(s, gmm, GraspType::Side, settings, c)).dump();
  settings.threads = 1;
  EXPECT_EQ(parallel, to_json(plan_grasp(s, gmm, GraspType::Side, settings, d)).dump());
}

TEST(PlanGrasp, ZeroGainMatchesUniform) {
  std::mt19937_64 rng(9);
  const QuadraticSurrogate s(centre(), spd14(rng, 1.0, 5.0));
  PlanPrior gmm;
  gmm.kind = PriorKind::Gmm;
  gmm.mixture = test_gmm();
  PlanPrior uniform;
  InferenceSettings settings;
  settings.prior_gain = 0.0;
  const ConfigVector init = gmm.initial(GraspType::Side, rng);
  const PlanResult a = plan_from(s, gmm, GraspType::Side, init, settings);
  const PlanResult b = plan_from(s, uniform, GraspType::Side, init, settings);
  EXPECT_EQ(a.theta.to_vector(), b.theta.to_vector());
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(PlanGrasp, AllRestartsFailed) {
  PlanPrior uniform;
  uniform.initializer = [](GraspType, std::mt19937_64&) { return centre(); };
  std::mt19937_64 rng(10);
  try {
    plan_grasp(NanLikelihood{}, uniform, GraspType::Side, InferenceSettings{}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::AllRestartsFailed);
  }
}

TEST(PlanGrasp, UniformWithoutInitializerIsConfigError) {
  std::mt19937_64 rng(11);
  try {
    PlanPrior{}.initial(GraspType::Side, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigError);
  }
}
