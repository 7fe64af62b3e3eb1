#pragma once

#include <span>
#include <vector>

#include "graspinf/nn/tensor.hpp"

namespace graspinf::nn {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;
};

/// One bias-corrected Adam update. `params` and `grads` must align; entries
/// whose `active` flag is false are left untouched (frozen layers).
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamHyper& hyper, const std::vector<bool>& active = {});

struct MomentumHyper {
  double learning_rate = 1e-3;
  double momentum = 0.9;
};

struct MomentumState {
  std::vector<Tensor> velocity;
};

/// Heavy-ball update: v <- mu v - lr g; p <- p + v.
void momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads, MomentumState& state,
                   const MomentumHyper& hyper, const std::vector<bool>& active = {});

/// Piecewise-constant decay: lr * factor^(number of milestones <= epoch).
double stepped_learning_rate(double base, std::span<const int> milestones, double factor, int epoch);

}  // namespace graspinf::nn
