#include "graspinf/inference.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "graspinf/error.hpp"
#include "graspinf/parallel.hpp"

namespace graspinf {

namespace {

using Vec = Eigen::VectorXd;

Vec project(const Vec& x, const Vec& lower, const Vec& upper) { return x.cwiseMax(lower).cwiseMin(upper); }

// Coordinates pinned at a bound with the gradient pushing outward.
Vec free_mask(const Vec& x, const Vec& g, const Vec& lower, const Vec& upper) {
  Vec m = Vec::Ones(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if ((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)) m[i] = 0.0;
  return m;
}

struct Pair {
  Vec s, y;
};

Vec two_loop(const Vec& g, const Vec& mask, const std::deque<Pair>& history) {
  Vec q = g.cwiseProduct(mask);
  std::vector<double> alpha(history.size(), 0.0), rho(history.size(), 0.0);
  double gamma = 1.0;
  bool have_gamma = false;
  for (std::size_t k = history.size(); k-- > 0;) {
    const Vec s = history[k].s.cwiseProduct(mask), y = history[k].y.cwiseProduct(mask);
    const double sy = s.dot(y);
    if (sy <= 1e-12 * std::max(1.0, s.norm() * y.norm())) continue;
    rho[k] = 1.0 / sy;
    alpha[k] = rho[k] * s.dot(q);
    q -= alpha[k] * y;
    if (!have_gamma) {
      gamma = sy / y.squaredNorm();
      have_gamma = true;
    }
  }
  q *= gamma;
  for (std::size_t k = 0; k < history.size(); ++k) {
    if (rho[k] == 0.0) continue;
    const Vec s = history[k].s.cwiseProduct(mask), y = history[k].y.cwiseProduct(mask);
    const double beta = rho[k] * y.dot(q);
    q += (alpha[k] - beta) * s;
  }
  return -q.cwiseProduct(mask);
}

// NaN / non-finite objective values count as failed trial points.
double safe_eval(const VectorObjective& f, const Vec& x, Vec* g) {
  try {
    const double v = f(x, g);
    if (!std::isfinite(v) || (g && !g->allFinite())) return std::numeric_limits<double>::quiet_NaN();
    return v;
  } catch (const Error& e) {
    if (e.code() == Errc::NonFiniteObjective) return std::numeric_limits<double>::quiet_NaN();
    throw;
  }
}

}  // namespace

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::Gmm: return "gmm";
    case PriorKind::Mdn: return "mdn";
    default: return "uniform";
  }
}

PriorKind prior_kind_from_string(const std::string& name) {
  if (name == "uniform") return PriorKind::Uniform;
  if (name == "gmm") return PriorKind::Gmm;
  if (name == "mdn") return PriorKind::Mdn;
  throw Error(Errc::ConfigError, "prior must be uniform, gmm or mdn, got '" + name + "'");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::GradTol: return "grad_tol";
    case Termination::StepTol: return "step_tol";
    case Termination::LineSearchFailure: return "line_search_failure";
    default: return "max_iters";
  }
}

void InferenceSettings::validate() const {
  if (!(prior_gain >= 0.0)) throw Error(Errc::ConfigError, "prior_gain must be >= 0");
  if (restarts < 1) throw Error(Errc::ConfigError, "restarts must be >= 1");
  if (max_iters < 1 || history_size < 1) throw Error(Errc::ConfigError, "max_iters and history_size must be >= 1");
  if (!(grad_tol > 0.0) || !(step_tol >= 0.0)) throw Error(Errc::ConfigError, "tolerances must be positive");
}

ConfigVector PlanPrior::initial(GraspType type, std::mt19937_64& rng) const {
  if (kind == PriorKind::Uniform) {
    if (!initializer) throw Error(Errc::ConfigError, "uniform prior needs a heuristic initializer");
    return box.clamp(initializer(type, rng));
  }
  if (!mixture) throw Error(Errc::ConfigError, to_string(kind) + " prior has no mixture");
  MixturePrior m = *mixture;
  m.box = box;
  return sample(m, rng, type);
}

double map_objective(const ConfigVector& theta, const GraspLikelihood& likelihood, const PlanPrior& prior, double gain,
                     ConfigVector* grad) {
  if (!theta.allFinite()) throw Error(Errc::NonFiniteObjective, "non-finite configuration");
  ConfigVector dp;
  const double p = likelihood.probability(theta, grad ? &dp : nullptr);
  const double pc = std::clamp(p, kLikelihoodClamp, 1.0 - kLikelihoodClamp);
  double value = -std::log(pc);
  if (grad) *grad = pc == p ? ConfigVector(-dp / pc) : ConfigVector::Zero();
  if (prior.kind != PriorKind::Uniform && gain != 0.0) {
    if (!prior.mixture) throw Error(Errc::ConfigError, "prior has no mixture");
    ConfigVector dl;
    value -= gain * log_density(*prior.mixture, theta, grad ? &dl : nullptr);
    if (grad) *grad -= gain * dl;
  }
  if (!std::isfinite(value) || (grad && !grad->allFinite()))
    throw Error(Errc::NonFiniteObjective, "objective or gradient is not finite");
  return value;
}

double projected_gradient_norm(const Vec& x, const Vec& g, const Vec& lower, const Vec& upper) {
  return (project(x - g, lower, upper) - x).lpNorm<Eigen::Infinity>();
}

MinimizeResult minimize_bounded(const VectorObjective& f, const Vec& x0, const Vec& lower, const Vec& upper,
                                const InferenceSettings& settings) {
  if (x0.size() != lower.size() || x0.size() != upper.size()) throw Error(Errc::InvalidInput, "dimension mismatch");
  MinimizeResult out;
  Vec x = project(x0, lower, upper);
  Vec g(x.size());
  double fx = safe_eval(f, x, &g);
  if (std::isnan(fx)) throw Error(Errc::NonFiniteObjective, "objective is not finite at the initial point");
  out.trace.push_back(fx);
  std::deque<Pair> history;
  constexpr double c1 = 1e-4;
  constexpr int kMaxHalvings = 40, kMaxNanShrinks = 20;

  out.termination = Termination::MaxIters;
  for (int it = 0; it < settings.max_iters; ++it) {
    if (projected_gradient_norm(x, g, lower, upper) < settings.grad_tol) {
      out.termination = Termination::GradTol;
      break;
    }
    const Vec mask = free_mask(x, g, lower, upper);
    bool accepted = false;
    Vec x_new, g_new(x.size());
    double f_new = fx;
    // First try the quasi-Newton direction, then fall back to the projected
    // gradient path with a cleared memory.
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      const bool steepest = attempt == 1 || history.empty();
      Vec d = steepest ? Vec(-g.cwiseProduct(mask)) : two_loop(g, mask, history);
      if (!steepest && g.dot(d) >= 0.0) continue;
      double alpha = 1.0;
      if (steepest && history.empty()) alpha = std::min(1.0, 1.0 / std::max(d.lpNorm<Eigen::Infinity>(), 1e-300));
      int nan_shrinks = 0;
      for (int h = 0; h < kMaxHalvings; ++h, alpha *= 0.5) {
        x_new = project(x + alpha * d, lower, upper);
        const double decrease = g.dot(x_new - x);
        if (decrease >= 0.0) {
          if (!steepest) break;
          continue;
        }
        f_new = safe_eval(f, x_new, &g_new);
        if (std::isnan(f_new)) {
          if (++nan_shrinks > kMaxNanShrinks) break;
          continue;
        }
        if (f_new <= fx + c1 * decrease) {
          accepted = true;
          break;
        }
      }
      if (!accepted) history.clear();
    }
    if (!accepted) {
      out.termination = Termination::LineSearchFailure;
      break;
    }
    const Vec s = x_new - x, y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      history.push_back({s, y});
      if (static_cast<int>(history.size()) > settings.history_size) history.pop_front();
    }
    x = x_new;
    g = g_new;
    fx = f_new;
    out.trace.push_back(fx);
    out.iterations = it + 1;
    if (s.lpNorm<Eigen::Infinity>() < settings.step_tol) {
      out.termination = Termination::StepTol;
      break;
    }
  }
  out.x = x;
  out.value = fx;
  return out;
}

PlanResult plan_from(const GraspLikelihood& likelihood, const PlanPrior& prior, GraspType type,
                     const ConfigVector& init, const InferenceSettings& settings) {
  const double gain = settings.prior_gain;
  VectorObjective f = [&](const Vec& v, Vec* g) {
    ConfigVector cg;
    const double value = map_objective(ConfigVector(v), likelihood, prior, gain, g ? &cg : nullptr);
    if (g) *g = cg;
    return value;
  };
  const ConfigVector start = prior.box.clamp(init);
  const MinimizeResult m = minimize_bounded(f, start, prior.box.lower, prior.box.upper, settings);
  if (m.value > m.trace.front()) throw std::logic_error("bounded minimizer increased the objective");
  PlanResult r;
  const ConfigVector theta = prior.box.clamp(ConfigVector(m.x));
  r.theta = GraspConfig::from_vector(theta);
  r.success_prob = likelihood.probability(theta, nullptr);
  r.objective = m.value;
  r.objective_trace = m.trace;
  r.init = GraspConfig::from_vector(start);
  r.init_success_prob = likelihood.probability(start, nullptr);
  r.prior_kind = prior.kind;
  r.grasp_type = type;
  r.termination = m.termination;
  return r;
}

PlanResult plan_grasp(const GraspLikelihood& likelihood, const PlanPrior& prior, GraspType type,
                      const InferenceSettings& settings, std::mt19937_64& rng) {
  settings.validate();
  std::vector<ConfigVector> inits;
  for (int r = 0; r < settings.restarts; ++r) inits.push_back(prior.initial(type, rng));
  std::vector<std::optional<PlanResult>> results(inits.size());
  std::vector<std::string> failures(inits.size());
  parallel_for(inits.size(), settings.threads, [&](std::size_t i) {
    try {
      results[i] = plan_from(likelihood, prior, type, inits[i], settings);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  std::optional<PlanResult> best;
  int failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i]) {
      ++failed;
      continue;
    }
    if (!best || results[i]->objective < best->objective) {
      best = results[i];
      best->restart = static_cast<int>(i);
    }
  }
  if (!best) throw Error(Errc::AllRestartsFailed, "every restart failed; first error: " + failures.front());
  best->failed_restarts = failed;
  return *best;
}

nlohmann::json to_json(const PlanResult& r) {
  return {{"format", "graspinf-plan-result"},
          {"format_version", 1},
          {"theta", to_json(r.theta)},
          {"theta_vector", std::vector<double>(r.theta.to_vector().data(), r.theta.to_vector().data() + kConfigDim)},
          {"success_prob", r.success_prob},
          {"objective", r.objective},
          {"objective_trace", r.objective_trace},
          {"init", to_json(r.init)},
          {"init_success_prob", r.init_success_prob},
          {"prior_kind", to_string(r.prior_kind)},
          {"grasp_type", to_string(r.grasp_type)},
          {"termination", to_string(r.termination)},
          {"restart", r.restart},
          {"failed_restarts", r.failed_restarts}};
}

nlohmann::json to_json(const InferenceSettings& s) {
  return {{"prior_gain", s.prior_gain}, {"restarts", s.restarts},   {"max_iters", s.max_iters},
          {"grad_tol", s.grad_tol},     {"step_tol", s.step_tol},   {"history_size", s.history_size}};
}

InferenceSettings inference_settings_from_json(const nlohmann::json& j) {
  InferenceSettings s;
  s.prior_gain = j.value("prior_gain", s.prior_gain);
  s.restarts = j.value("restarts", s.restarts);
  s.max_iters = j.value("max_iters", s.max_iters);
  s.grad_tol = j.value("grad_tol", s.grad_tol);
  s.step_tol = j.value("step_tol", s.step_tol);
  s.history_size = j.value("history_size", s.history_size);
  s.validate();
  return s;
}

}  // namespace graspinf
