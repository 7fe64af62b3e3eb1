#pragma once

#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "graspinf/grasp.hpp"
#include "graspinf/priors.hpp"

namespace graspinf {

inline constexpr double kLikelihoodClamp = 1e-7;

enum class PriorKind { Uniform, Gmm, Mdn };
enum class Termination { GradTol, StepTol, MaxIters, LineSearchFailure };

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string& name);
std::string to_string(Termination t);

struct InferenceSettings {
  double prior_gain = 0.5;
  int restarts = 5;
  int max_iters = 200;
  double grad_tol = 1e-5;
  double step_tol = 1e-10;
  int history_size = 10;
  int threads = 1;  // restarts run concurrently when > 1

  void validate() const;
};

/// p(Y = 1 | theta, z) for one fixed object; grad (if non-null) receives
/// d p / d theta. Must be safe to call concurrently.
class GraspLikelihood {
 public:
  virtual ~GraspLikelihood() = default;
  virtual double probability(const ConfigVector& theta, ConfigVector* grad) const = 0;
};

/// Prior term plus the initializer used for each restart.
struct PlanPrior {
  PriorKind kind = PriorKind::Uniform;
  std::optional<MixturePrior> mixture;  // gmm / mdn
  BoundBox box = HandModel{}.bound_box();
  /// Uniform prior only: heuristic initial configuration of the given type.
  std::function<ConfigVector(GraspType, std::mt19937_64&)> initializer;

  ConfigVector initial(GraspType type, std::mt19937_64& rng) const;
};

/// -log clamp(p) - gain * log prior. Throws NonFiniteObjective.
double map_objective(const ConfigVector& theta, const GraspLikelihood& likelihood, const PlanPrior& prior, double gain,
                     ConfigVector* grad = nullptr);

/// Value and gradient of a function of a dense vector.
using VectorObjective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<double> trace;  // objective at every accepted iterate, starting with x0
  Termination termination = Termination::MaxIters;
  int iterations = 0;
};

/// Projected L-BFGS: two-loop recursion on the free variables, projected
/// Armijo backtracking, every iterate inside [lower, upper].
MinimizeResult minimize_bounded(const VectorObjective& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                                const Eigen::VectorXd& upper, const InferenceSettings& settings);

/// Infinity norm of P(x - g) - x.
double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lower,
                               const Eigen::VectorXd& upper);

struct PlanResult {
  GraspConfig theta;
  double success_prob = 0.0;
  double objective = 0.0;
  std::vector<double> objective_trace;
  GraspConfig init;
  double init_success_prob = 0.0;
  PriorKind prior_kind = PriorKind::Uniform;
  GraspType grasp_type = GraspType::Side;
  Termination termination = Termination::MaxIters;
  int restart = 0;
  int failed_restarts = 0;
};

/// Draws all `restarts` initial configurations from rng first, then
/// optimizes each; the lowest final objective wins (ties: lowest index).
/// Throws AllRestartsFailed.
PlanResult plan_grasp(const GraspLikelihood& likelihood, const PlanPrior& prior, GraspType type,
                      const InferenceSettings& settings, std::mt19937_64& rng);

/// Single restart from a given initial configuration.
PlanResult plan_from(const GraspLikelihood& likelihood, const PlanPrior& prior, GraspType type,
                     const ConfigVector& init, const InferenceSettings& settings);

nlohmann::json to_json(const PlanResult& r);
nlohmann::json to_json(const InferenceSettings& s);
InferenceSettings inference_settings_from_json(const nlohmann::json& j);

}  // namespace graspinf
