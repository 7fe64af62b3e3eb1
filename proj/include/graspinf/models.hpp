#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/inference.hpp"
#include "graspinf/nn/net_model.hpp"
#include "graspinf/perception.hpp"
#include "graspinf/priors.hpp"

namespace graspinf {

struct EncoderConfig {
  std::size_t grid = 32;
  std::vector<std::size_t> channels{32, 64, 128, 256};
  std::vector<std::size_t> strides{1, 2, 1, 2};
  std::size_t feature = 128;

  void validate() const;
};

/// Hidden widths; the output layer (1 unit, sigmoid) is added on top.
struct ClassifierConfig {
  std::vector<std::size_t> object_widths{128, 64};
  std::vector<std::size_t> grasp_widths{64, 32};
  std::vector<std::size_t> head_widths{128, 64};
};

struct MdnConfig {
  std::size_t components = 2;
  std::vector<std::size_t> trunk_widths{128, 32};
  double var_floor = kVarFloor;
};

struct ArchitecturePreset {
  std::string name;
  EncoderConfig encoder;
  ClassifierConfig classifier;
  MdnConfig mdn;
};

/// "full": 32^3 grid, channels 32-64-128-256. "desk": 16^3 grid, channels
/// halved. Throws ConfigError for anything else.
ArchitecturePreset architecture_preset(const std::string& name);

nlohmann::json to_json(const ArchitecturePreset& p);
ArchitecturePreset architecture_preset_from_json(const nlohmann::json& j);

// Four Conv3D(3^3) + BatchNorm + ELU blocks, then Dense + BatchNorm + ELU.
// Input "grid" {1, R, R, R}.
nn::NetModel build_encoder(const EncoderConfig& cfg);
/// Mirror of the encoder with transposed convolutions; outputs voxel logits.
nn::NetModel build_decoder(const EncoderConfig& cfg);
/// Inputs "voxel_feat" {F}, "size" {3}, "theta" {14}; output {1} in (0,1).
nn::NetModel build_classifier_head(const EncoderConfig& enc, const ClassifierConfig& cfg);
/// Inputs "voxel_feat", "size"; output {K * 29}: logits, means, raw scales.
nn::NetModel build_mdn_head(const EncoderConfig& enc, const MdnConfig& cfg);

/// Batched {N, 1, R, R, R} occupancy tensor.
nn::Tensor grid_tensor(std::span<const ObjectRep* const> reps);
nn::Tensor size_tensor(std::span<const ObjectRep* const> reps);
/// Eval-mode encoder features {N, F}, computed in chunks.
nn::Tensor encode(const nn::NetModel& encoder, std::span<const ObjectRep* const> reps, std::size_t chunk = 32);

/// Splits one MDN output row into a mixture. weights = softmax(logits),
/// variances = softplus(raw) + var_floor.
MixturePrior mdn_mixture(std::span<const double> out, std::size_t components, double var_floor,
                         const BoundBox& box = HandModel{}.bound_box());
/// -log p(theta) under the emitted mixture; grad (same length as out) receives
/// d NLL / d out when non-empty.
double mdn_nll(std::span<const double> out, const ConfigVector& theta, std::size_t components, double var_floor,
               std::span<double> grad = {});
/// Sets the MDN output bias so that a zero-weight output layer emits `prior`.
void seed_mdn_output(nn::NetModel& mdn, const MixturePrior& prior, double var_floor);

double softplus(double x);
double inverse_softplus(double y);

/// Grasp classifier for one object: encoder features are computed once; each
/// probability call evaluates only the head.
class ClassifierLikelihood final : public GraspLikelihood {
 public:
  ClassifierLikelihood(const nn::NetModel& head, nn::Tensor feature, const Vec3& size);
  ClassifierLikelihood(const nn::NetModel& encoder, const nn::NetModel& head, const ObjectRep& rep);

  double probability(const ConfigVector& theta, ConfigVector* grad) const override;

 private:
  const nn::NetModel* head_;
  nn::Tensor feature_;
  nn::Tensor size_;
};

/// Emitted MDN mixture for one object, tagged.
MixturePrior mdn_prior_for(const nn::NetModel& encoder, const nn::NetModel& mdn, const ObjectRep& rep,
                           std::size_t components, double var_floor, const BoundBox& box);

/// Directory holding every trained artifact plus a manifest.
struct ModelBundle {
  ArchitecturePreset preset;
  nn::NetModel encoder;
  nn::NetModel classifier;
  nn::NetModel mdn;
  MixturePrior gmm;
  HandModel hand;
  bool has_classifier = false, has_mdn = false, has_gmm = false;

  static ModelBundle load(const std::string& dir);
};

}  // namespace graspinf
