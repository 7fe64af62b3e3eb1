#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "graspinf/error.hpp"
#include "graspinf/priors.hpp"
#include "test_support.hpp"

using namespace graspinf;

namespace {

ConfigVector box_centre() {
  const BoundBox b = HandModel{}.bound_box();
  return 0.5 * (b.lower + b.upper);
}

MixturePrior random_prior(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> w(0.2, 1.0), var(0.2, 2.0), mu(-1.0, 1.0);
  MixturePrior p;
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    p.weights.push_back(w(rng));
    total += p.weights.back();
    ConfigVector m, v;
    for (int d = 0; d < 14; ++d) {
      m[d] = mu(rng);
      v[d] = var(rng);
    }
    p.means.push_back(m);
    p.variances.push_back(v);
    p.tags.push_back(ComponentTag::Unlabeled);
  }
  for (double& x : p.weights) x /= total;
  return p;
}

// Direct density: weighted sum of products of 1-D normal pdfs.
double direct_density(const MixturePrior& p, const ConfigVector& x, int skip_a = -1, int skip_b = -1) {
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    double prod = p.weights[c];
    for (int d = 0; d < 14; ++d) {
      if (d == skip_a || d == skip_b) continue;
      const double s2 = p.variances[c][d], e = x[d] - p.means[c][d];
      prod *= std::exp(-e * e / (2 * s2)) / std::sqrt(2 * std::numbers::pi * s2);
    }
    total += prod;
  }
  return total;
}

std::vector<ConfigVector> two_clusters(std::mt19937_64& rng, std::size_t n, double frac, const ConfigVector& a,
                                       const ConfigVector& b, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<ConfigVector> data;
  const auto na = static_cast<std::size_t>(frac * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    ConfigVector x = i < na ? a : b;
    for (int d = 0; d < 14; ++d) x[d] += g(rng);
    data.push_back(x);
  }
  std::shuffle(data.begin(), data.end(), rng);
  return data;
}

}  // namespace

TEST(MixtureDensity, StandardNormalAtMean) {
  MixturePrior p;
  p.weights = {1.0};
  p.means = {ConfigVector::Zero()};
  p.variances = {ConfigVector::Ones()};
  p.tags = {ComponentTag::Unlabeled};
  EXPECT_NEAR(log_density(p, ConfigVector::Zero()), -7.0 * std::log(2 * std::numbers::pi), 1e-12);
  EXPECT_EQ(log_density_grad(p, ConfigVector::Zero()).norm(), 0.0);
}

TEST(MixtureDensity, MatchesDirectEvaluation) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const MixturePrior p = random_prior(rng, 1 + t % 3);
    const auto x = oracle::random_vector(rng, 14);
    const ConfigVector theta = Eigen::Map<const ConfigVector>(x.data());
    EXPECT_NEAR(log_density(p, theta), std::log(direct_density(p, theta)), 1e-9);
  }
}

TEST(MixtureDensity, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const MixturePrior p = random_prior(rng, 1 + t % 3);
    const auto x = oracle::random_vector(rng, 14);
    const ConfigVector g = log_density_grad(p, Eigen::Map<const ConfigVector>(x.data()));
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& v) { return log_density(p, Eigen::Map<const ConfigVector>(v.data())); }, x);
    EXPECT_LT(oracle::max_relative_error(std::vector<double>(g.data(), g.data() + 14), fd, 1e-3), 1e-6);
  }
}

TEST(MixtureDensity, SliceIntegratesToMarginalMass) {
  std::mt19937_64 rng(3);
  const MixturePrior p = random_prior(rng, 2);
  ConfigVector theta = p.means[0];
  double lo[2], hi[2];
  for (int a = 0; a < 2; ++a) {
    lo[a] = std::min(p.means[0][a], p.means[1][a]) - 5 * std::sqrt(std::max(p.variances[0][a], p.variances[1][a]));
    hi[a] = std::max(p.means[0][a], p.means[1][a]) + 5 * std::sqrt(std::max(p.variances[0][a], p.variances[1][a]));
  }
  const int n = 400;
  const double dx = (hi[0] - lo[0]) / n, dy = (hi[1] - lo[1]) / n;
  double integral = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      theta[0] = lo[0] + (i + 0.5) * dx;
      theta[1] = lo[1] + (j + 0.5) * dy;
      integral += std::exp(log_density(p, theta)) * dx * dy;
    }
  const double marginal = direct_density(p, theta, 0, 1);
  EXPECT_NEAR(integral / marginal, 1.0, 0.01);
}

TEST(FitGmm, SingleComponentIsClosedForm) {
  std::mt19937_64 rng(4);
  std::vector<ConfigVector> data;
  std::normal_distribution<double> g(0.3, 0.5);
  for (int i = 0; i < 200; ++i) {
    ConfigVector x;
    for (int d = 0; d < 14; ++d) x[d] = g(rng) * (d + 1);
    data.push_back(x);
  }
  GmmFitOptions opt;
  opt.components = 1;
  const MixturePrior p = fit_gmm(data, opt);
  ConfigVector mean = ConfigVector::Zero(), var = ConfigVector::Zero();
  for (const auto& x : data) mean += x;
  mean /= 200.0;
  for (const auto& x : data) var += (x - mean).cwiseAbs2();
  var /= 200.0;
  EXPECT_LT((p.means[0] - mean).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((p.variances[0] - var).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_DOUBLE_EQ(p.weights[0], 1.0);
}

TEST(FitGmm, RecoversTwoClustersMonotonically) {
  std::mt19937_64 rng(5);
  const double sigma = 0.1;
  ConfigVector a = ConfigVector::Zero(), b = ConfigVector::Zero();
  b[0] = 10 * sigma;  // centres 10 sigma apart
  const auto data = two_clusters(rng, 3000, 0.3, a, b, sigma);
  GmmFitOptions opt;
  opt.seed = 9;
  GmmFitReport report;
  const MixturePrior p = fit_gmm(data, opt, &report);
  for (std::size_t i = 1; i < report.log_likelihood.size(); ++i)
    EXPECT_GE(report.log_likelihood[i], report.log_likelihood[i - 1]);
  const std::size_t ia = p.means[0][0] < p.means[1][0] ? 0 : 1, ib = 1 - ia;
  EXPECT_LT((p.means[ia] - a).cwiseAbs().maxCoeff(), 0.1 * sigma);
  EXPECT_LT((p.means[ib] - b).cwiseAbs().maxCoeff(), 0.1 * sigma);
  EXPECT_NEAR(p.weights[ia], 0.3, 0.05);
  EXPECT_NEAR(p.weights[ib], 0.7, 0.05);
}

TEST(FitGmm, IdenticalPointsStopAtFloor) {
  std::vector<ConfigVector> data(60, ConfigVector::Constant(0.2));
  GmmFitReport report;
  const MixturePrior p = fit_gmm(data, GmmFitOptions{}, &report);
  for (const auto& v : p.variances) EXPECT_LT((v - ConfigVector::Constant(kVarFloor)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GT(report.degenerate_events, 0);
}

TEST(FitGmm, TooFewSamples) {
  std::vector<ConfigVector> data(29, ConfigVector::Zero());
  try {
    fit_gmm(data, GmmFitOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidInput);
  }
}

TEST(Sample, FloorVarianceStaysNearTaggedMean) {
  MixturePrior p;
  p.weights = {0.9, 0.1};
  p.means = {box_centre(), box_centre()};
  p.means[1][0] = 0.2;
  p.variances = {ConfigVector::Constant(0.05), ConfigVector::Constant(kVarFloor)};
  p.tags = {ComponentTag::Side, ComponentTag::Overhead};
  std::mt19937_64 rng(6);
  std::array<int, 14> inside{};
  for (int t = 0; t < 1000; ++t) {
    const ConfigVector x = sample(p, rng, GraspType::Overhead);
    for (int d = 0; d < 14; ++d) inside[d] += std::abs(x[d] - p.means[1][d]) <= 3 * std::sqrt(kVarFloor);
  }
  for (int d = 0; d < 14; ++d) EXPECT_GT(inside[d], 990);
}

TEST(Sample, DeterministicAndInsideBox) {
  MixturePrior p;
  p.weights = {1.0};
  p.means = {box_centre()};
  p.variances = {ConfigVector::Constant(4.0)};
  p.tags = {ComponentTag::Unlabeled};
  std::mt19937_64 r1(7), r2(7);
  EXPECT_EQ(sample(p, r1), sample(p, r2));
  for (int t = 0; t < 1000; ++t) EXPECT_TRUE(p.box.contains(sample(p, r1)));
  try {
    sample(p, r1, GraspType::Side);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownTag);
  }
}

TEST(Sample, EmpiricalMean) {
  MixturePrior p;
  p.weights = {1.0};
  p.means = {box_centre()};
  const ConfigVector sd = 0.05 * (p.box.upper - p.box.lower);
  p.variances = {sd.cwiseAbs2()};
  p.tags = {ComponentTag::Unlabeled};
  std::mt19937_64 rng(8);
  ConfigVector mean = ConfigVector::Zero();
  const int n = 100000;
  for (int t = 0; t < n; ++t) mean += sample(p, rng);
  mean /= n;
  for (int d = 0; d < 14; ++d) EXPECT_LT(std::abs(mean[d] - p.means[0][d]), 0.02 * sd[d]);
}

TEST(Tagging, PalmDownIsOverheadAndHorizontalIsSide) {
  EXPECT_EQ(classify_orientation(Vec3(0, 0, 0.7)), GraspType::Overhead);
  EXPECT_EQ(classify_orientation(Vec3(-std::numbers::pi / 2, 0, 1.2)), GraspType::Side);
  MixturePrior p;
  p.weights = {0.5, 0.5};
  p.means = {ConfigVector::Zero(), ConfigVector::Zero()};
  p.means[1][3] = -std::numbers::pi / 2;
  p.variances = {ConfigVector::Ones(), ConfigVector::Ones()};
  p = tag_components(p);
  EXPECT_EQ(p.tags[0], ComponentTag::Overhead);
  EXPECT_EQ(p.tags[1], ComponentTag::Side);
}

TEST(Uniform, IsZeroEverywhere) {
  const BoundBox b = HandModel{}.bound_box();
  EXPECT_EQ(uniform_log_density(b, box_centre()), 0.0);
  EXPECT_EQ(uniform_log_density(b, b.lower), 0.0);
}

TEST(MixtureJson, RoundTrip) {
  std::mt19937_64 rng(10);
  MixturePrior p = tag_components(random_prior(rng, 2));
  const MixturePrior back = mixture_prior_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(back.weights, p.weights);
  EXPECT_EQ(back.means, p.means);
  EXPECT_EQ(back.variances, p.variances);
  EXPECT_EQ(back.tags, p.tags);
}
