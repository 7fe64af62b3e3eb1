#include "graspinf/nn/optim.hpp"

#include <cmath>

namespace graspinf::nn {

namespace {

void check_alignment(std::size_t params, std::size_t grads, std::size_t active) {
  if (params != grads) throw Error(Errc::ShapeMismatch, "parameter/gradient count mismatch");
  if (active != 0 && active != params) throw Error(Errc::ShapeMismatch, "active mask length mismatch");
}

}  // namespace

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamHyper& hyper, const std::vector<bool>& active) {
  check_alignment(params.size(), grads.size(), active.size());
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!active.empty() && !active[k]) continue;
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (g.size() != p.size()) throw Error(Errc::ShapeMismatch, "gradient size mismatch in adam_step");
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      p[i] -= hyper.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + hyper.epsilon);
    }
  }
}

void momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads, MomentumState& state,
                   const MomentumHyper& hyper, const std::vector<bool>& active) {
  check_alignment(params.size(), grads.size(), active.size());
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!active.empty() && !active[k]) continue;
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (g.size() != p.size()) throw Error(Errc::ShapeMismatch, "gradient size mismatch in momentum_step");
    Tensor& vel = state.velocity[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = hyper.momentum * vel[i] - hyper.learning_rate * g[i];
      p[i] += vel[i];
    }
  }
}

double stepped_learning_rate(double base, std::span<const int> milestones, double factor, int epoch) {
  double lr = base;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

}  // namespace graspinf::nn
