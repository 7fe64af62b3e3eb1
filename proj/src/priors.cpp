#include "graspinf/priors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "graspinf/error.hpp"

namespace graspinf {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> to_std(const ConfigVector& v) { return {v.data(), v.data() + v.size()}; }

ConfigVector from_std(const std::vector<double>& v) {
  if (v.size() != kConfigDim) throw Error(Errc::DataError, "expected 14 values per mixture component");
  return Eigen::Map<const ConfigVector>(v.data());
}

// k-means++ seeding: first centre uniform, the rest proportional to squared
// distance from the nearest chosen centre.
std::vector<ConfigVector> kmeanspp(const std::vector<ConfigVector>& data, std::size_t k, std::mt19937_64& rng) {
  std::vector<ConfigVector> centres;
  centres.push_back(data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)]);
  std::vector<double> d2(data.size(), std::numeric_limits<double>::infinity());
  while (centres.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      d2[i] = std::min(d2[i], (data[i] - centres.back()).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < data.size(); ++pick) {
        target -= d2[pick];
        if (target <= 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
    }
    centres.push_back(data[pick]);
  }
  return centres;
}

}  // namespace

std::string to_string(ComponentTag tag) {
  switch (tag) {
    case ComponentTag::Side: return "side";
    case ComponentTag::Overhead: return "overhead";
    default: return "unlabeled";
  }
}

ComponentTag component_tag_from_string(const std::string& name) {
  if (name == "side") return ComponentTag::Side;
  if (name == "overhead") return ComponentTag::Overhead;
  if (name == "unlabeled") return ComponentTag::Unlabeled;
  throw Error(Errc::UnknownTag, "unknown component tag '" + name + "'");
}

ComponentTag tag_for(GraspType type) { return type == GraspType::Side ? ComponentTag::Side : ComponentTag::Overhead; }

void MixturePrior::validate(double var_floor) const {
  const std::size_t k = weights.size();
  if (k == 0 || means.size() != k || variances.size() != k || tags.size() != k)
    throw Error(Errc::InvalidInput, "mixture parts have inconsistent sizes");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw Error(Errc::InvalidInput, "mixture weights sum to " + std::to_string(total));
  for (std::size_t c = 0; c < k; ++c) {
    if (!(weights[c] >= 0.0)) throw Error(Errc::InvalidInput, "negative mixture weight");
    if (!means[c].allFinite()) throw Error(Errc::InvalidInput, "non-finite mixture mean");
    if (!(variances[c].array() >= var_floor * (1.0 - 1e-12)).all() || !variances[c].allFinite())
      throw Error(Errc::InvalidInput, "mixture variance below the floor");
  }
  box.validate();
}

double component_log_pdf(const ConfigVector& mean, const ConfigVector& var, const ConfigVector& theta) {
  const ConfigVector d = theta - mean;
  return -0.5 * (static_cast<double>(kConfigDim) * kLog2Pi + var.array().log().sum() +
                 (d.array().square() / var.array()).sum());
}

double log_density(const MixturePrior& prior, const ConfigVector& theta, ConfigVector* grad) {
  std::vector<double> terms(prior.size());
  for (std::size_t c = 0; c < prior.size(); ++c)
    terms[c] = std::log(prior.weights[c]) + component_log_pdf(prior.means[c], prior.variances[c], theta);
  const double total = log_sum_exp(terms);
  if (grad) {
    grad->setZero();
    for (std::size_t c = 0; c < prior.size(); ++c) {
      const double r = std::exp(terms[c] - total);
      if (r == 0.0) continue;
      *grad -= r * ((theta - prior.means[c]).array() / prior.variances[c].array()).matrix();
    }
  }
  return total;
}

ConfigVector log_density_grad(const MixturePrior& prior, const ConfigVector& theta) {
  ConfigVector g;
  log_density(prior, theta, &g);
  return g;
}

MixturePrior fit_gmm(const std::vector<ConfigVector>& data, const GmmFitOptions& options, GmmFitReport* report) {
  const std::size_t k = options.components, n = data.size();
  if (k < 1) throw Error(Errc::InvalidInput, "need at least one mixture component");
  if (n < 15 * k)
    throw Error(Errc::InvalidInput, "fit_gmm needs at least " + std::to_string(15 * k) + " samples, got " +
                                        std::to_string(n));
  GmmFitReport local;
  GmmFitReport& rep = report ? *report : local;
  rep = GmmFitReport{};
  std::mt19937_64 rng(options.seed);

  ConfigVector global_mean = ConfigVector::Zero();
  for (const auto& x : data) global_mean += x;
  global_mean /= static_cast<double>(n);
  ConfigVector global_var = ConfigVector::Zero();
  for (const auto& x : data) global_var += (x - global_mean).array().square().matrix();
  global_var = (global_var / static_cast<double>(n)).cwiseMax(options.var_floor);

  MixturePrior prior;
  prior.weights.assign(k, 0.0);
  prior.means = kmeanspp(data, k, rng);
  prior.variances.assign(k, global_var);
  prior.tags.assign(k, ComponentTag::Unlabeled);

  // Responsibilities, starting from a hard nearest-centre assignment.
  std::vector<std::vector<double>> resp(n, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if ((data[i] - prior.means[c]).squaredNorm() < (data[i] - prior.means[best]).squaredNorm()) best = c;
    resp[i][best] = 1.0;
  }

  std::vector<double> point_ll(n, 0.0);
  auto m_step = [&] {
    bool reseeded = false;
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      ConfigVector mean = ConfigVector::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i][c];
        mean += resp[i][c] * data[i];
      }
      if (nk < 1e-10) {
        // Lost component: restart it on the worst-explained sample.
        const std::size_t worst =
            static_cast<std::size_t>(std::min_element(point_ll.begin(), point_ll.end()) - point_ll.begin());
        prior.means[c] = data[worst];
        prior.variances[c] = global_var;
        prior.weights[c] = 1.0 / static_cast<double>(n);
        ++rep.reseeded;
        reseeded = true;
        continue;
      }
      mean /= nk;
      ConfigVector var = ConfigVector::Zero();
      for (std::size_t i = 0; i < n; ++i) var += resp[i][c] * (data[i] - mean).array().square().matrix();
      var /= nk;
      for (Eigen::Index d = 0; d < var.size(); ++d) {
        if (var[d] < options.var_floor) {
          var[d] = options.var_floor;
          ++rep.degenerate_events;
        }
      }
      prior.weights[c] = nk / static_cast<double>(n);
      prior.means[c] = mean;
      prior.variances[c] = var;
    }
    const double total = std::accumulate(prior.weights.begin(), prior.weights.end(), 0.0);
    for (double& w : prior.weights) w /= total;
    return reseeded;
  };

  MixturePrior before = prior;
  bool skip_check = m_step();
  std::vector<double> terms(k);
  for (int it = 0; it < options.max_iterations; ++it) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c)
        terms[c] = std::log(prior.weights[c]) + component_log_pdf(prior.means[c], prior.variances[c], data[i]);
      point_ll[i] = log_sum_exp(terms);
      for (std::size_t c = 0; c < k; ++c) resp[i][c] = std::exp(terms[c] - point_ll[i]);
      ll += point_ll[i];
    }
    ll /= static_cast<double>(n);
    if (!std::isfinite(ll)) throw Error(Errc::DataError, "non-finite log-likelihood during EM");
    if (!rep.log_likelihood.empty() && !skip_check) {
      const double prev = rep.log_likelihood.back();
      if (ll < prev - 1e-10 * std::max(1.0, std::abs(prev)))
        throw std::logic_error("EM log-likelihood decreased from " + std::to_string(prev) + " to " +
                               std::to_string(ll));
      if (ll - prev < options.tolerance) {
        // a step that lost a few ulps at the fixed point is dropped, not recorded
        if (ll < prev)
          prior = before;
        else
          rep.log_likelihood.push_back(ll);
        rep.converged = true;
        break;
      }
    }
    rep.log_likelihood.push_back(ll);
    before = prior;
    skip_check = m_step();
  }
  prior.validate(options.var_floor);
  return prior;
}

ConfigVector sample(const MixturePrior& prior, std::mt19937_64& rng, std::optional<GraspType> type) {
  std::vector<double> w = prior.weights;
  if (type) {
    const ComponentTag want = tag_for(*type);
    bool any = false;
    for (std::size_t c = 0; c < prior.size(); ++c) {
      if (prior.tags[c] != want) w[c] = 0.0;
      any = any || prior.tags[c] == want;
    }
    if (!any) throw Error(Errc::UnknownTag, "no mixture component tagged '" + to_string(want) + "'");
    // Tagged components with zero weight still get picked.
    if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0)
      for (std::size_t c = 0; c < prior.size(); ++c) w[c] = prior.tags[c] == want;
  }
  const std::size_t c = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  ConfigVector theta;
  for (Eigen::Index d = 0; d < theta.size(); ++d)
    theta[d] = prior.means[c][d] + std::sqrt(prior.variances[c][d]) * normal(rng);
  return prior.box.clamp(theta);
}

GraspType classify_orientation(const Vec3& rpy, double threshold) {
  return approach_axis(rpy).dot(-Vec3::UnitZ()) >= std::cos(threshold) ? GraspType::Overhead : GraspType::Side;
}

MixturePrior tag_components(MixturePrior prior) {
  prior.tags.resize(prior.size());
  for (std::size_t c = 0; c < prior.size(); ++c)
    prior.tags[c] = tag_for(classify_orientation(prior.means[c].segment<3>(3)));
  return prior;
}

nlohmann::json to_json(const MixturePrior& prior) {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t c = 0; c < prior.size(); ++c) {
    comps.push_back({{"weight", prior.weights[c]},
                     {"mean", to_std(prior.means[c])},
                     {"variance", to_std(prior.variances[c])},
                     {"tag", to_string(prior.tags[c])}});
  }
  return {{"format", "graspinf-mixture-prior"}, {"format_version", 1}, {"components", comps}, {"bounds", to_json(prior.box)}};
}

MixturePrior mixture_prior_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "graspinf-mixture-prior")
    throw Error(Errc::DataError, "not a mixture prior document");
  if (j.value("format_version", 0) != 1) throw Error(Errc::DataError, "unsupported mixture prior version");
  MixturePrior prior;
  for (const auto& c : j.at("components")) {
    prior.weights.push_back(c.at("weight"));
    prior.means.push_back(from_std(c.at("mean")));
    prior.variances.push_back(from_std(c.at("variance")));
    prior.tags.push_back(component_tag_from_string(c.value("tag", "unlabeled")));
  }
  prior.box = bound_box_from_json(j.at("bounds"));
  prior.validate(0.0);
  return prior;
}

}  // namespace graspinf
