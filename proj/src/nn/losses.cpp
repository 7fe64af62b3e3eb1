#include "graspinf/nn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace graspinf::nn {

LossResult bce_loss(const Tensor& pred, std::span<const double> labels) {
  if (pred.size() != labels.size() || pred.empty()) {
    throw Error(Errc::ShapeMismatch, "bce_loss: prediction/label count mismatch");
  }
  const double n = static_cast<double>(pred.size());
  LossResult r{0.0, Tensor(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = labels[i];
    const double raw = pred[i];
    const double p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
    r.value -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    if (raw == p) r.grad[i] = (p - y) / (p * (1.0 - p) * n);
  }
  r.value /= n;
  return r;
}

LossResult voxel_ce_loss(const Tensor& logits, const Tensor& target) {
  if (logits.size() != target.size() || logits.empty()) {
    throw Error(Errc::ShapeMismatch, "voxel_ce_loss: logits " + shape_string(logits.shape()) + " vs target " +
                                         shape_string(target.shape()));
  }
  const double n = static_cast<double>(logits.size());
  LossResult r{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double t = target[i];
    r.value += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    r.grad[i] = (s - t) / n;
  }
  r.value /= n;
  return r;
}

}  // namespace graspinf::nn
