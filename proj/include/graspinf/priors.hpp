#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "graspinf/grasp.hpp"

namespace graspinf {

inline constexpr double kVarFloor = 1e-4;

enum class ComponentTag { Unlabeled, Side, Overhead };

std::string to_string(ComponentTag tag);
ComponentTag component_tag_from_string(const std::string& name);
ComponentTag tag_for(GraspType type);

/// Diagonal Gaussian mixture over the 14-D configuration.
struct MixturePrior {
  std::vector<double> weights;
  std::vector<ConfigVector> means;
  std::vector<ConfigVector> variances;
  std::vector<ComponentTag> tags;
  BoundBox box = HandModel{}.bound_box();

  std::size_t size() const { return weights.size(); }
  /// Throws InvalidInput on a broken simplex, bad variances or mismatched sizes.
  void validate(double var_floor = kVarFloor) const;
};

/// log p(theta). When grad is non-null it receives d log p / d theta.
double log_density(const MixturePrior& prior, const ConfigVector& theta, ConfigVector* grad = nullptr);
ConfigVector log_density_grad(const MixturePrior& prior, const ConfigVector& theta);

/// Per-component log N(theta; mean_k, diag(var_k)), without the weight.
double component_log_pdf(const ConfigVector& mean, const ConfigVector& var, const ConfigVector& theta);

struct GmmFitOptions {
  std::size_t components = 2;
  std::uint64_t seed = 0;
  int max_iterations = 500;
  double tolerance = 1e-6;  // on the mean per-sample log-likelihood
  double var_floor = kVarFloor;
};

struct GmmFitReport {
  std::vector<double> log_likelihood;  // mean per sample, one entry per EM iteration
  int degenerate_events = 0;           // variance coordinates clamped to the floor
  int reseeded = 0;                    // components that lost all responsibility
  bool converged = false;
};

/// EM with k-means++ seeding. Throws InvalidInput when N < 15 K, and
/// std::logic_error if the log-likelihood ever decreases between two
/// iterations without an intervening reseed.
MixturePrior fit_gmm(const std::vector<ConfigVector>& data, const GmmFitOptions& options,
                     GmmFitReport* report = nullptr);

/// Draw from the mixture (restricted to components tagged `type` if given),
/// clamped into prior.box. Throws UnknownTag if no component has the tag.
ConfigVector sample(const MixturePrior& prior, std::mt19937_64& rng, std::optional<GraspType> type = std::nullopt);

/// Overhead when the approach axis at the mean orientation is within
/// `threshold` of object -z, side otherwise.
GraspType classify_orientation(const Vec3& rpy, double threshold = 0.7853981633974483);
MixturePrior tag_components(MixturePrior prior);

/// Un-normalized uniform prior: 0 everywhere (bounds are the optimizer's job).
inline double uniform_log_density(const BoundBox&, const ConfigVector&) { return 0.0; }

nlohmann::json to_json(const MixturePrior& prior);
MixturePrior mixture_prior_from_json(const nlohmann::json& j);

}  // namespace graspinf
