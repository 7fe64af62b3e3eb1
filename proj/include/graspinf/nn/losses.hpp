#pragma once

#include <span>

#include "graspinf/nn/tensor.hpp"

namespace graspinf::nn {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d(value)/d(prediction), same shape as the prediction
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy of probabilities against {0,1} labels.
/// Probabilities are clamped to [1e-7, 1-1e-7]; clamped entries get zero
/// gradient.
LossResult bce_loss(const Tensor& pred, std::span<const double> labels);

/// Mean sigmoid cross-entropy over every voxel, computed from logits.
LossResult voxel_ce_loss(const Tensor& logits, const Tensor& target);

}  // namespace graspinf::nn
