#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspinf/models.hpp"
#include "graspinf/nn/net_model.hpp"
#include "graspinf/synthdata.hpp"

namespace graspinf {

struct Schedule {
  int epochs = 30;
  double learning_rate = 1e-3;
  std::vector<int> milestones{10, 20};
  double decay = 0.1;
  std::size_t batch = 64;

  void validate() const;
};

// desk: 30 epochs, lr / 10 every 10. full: 90 epochs, lr / 10 every 30.
Schedule classifier_schedule(const std::string& preset);
Schedule mdn_schedule(const std::string& preset);
Schedule pretrain_schedule(const std::string& preset);

nlohmann::json to_json(const Schedule& s);
Schedule schedule_from_json(const nlohmann::json& j, Schedule defaults);

struct CurveRow {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_metric = 0.0;  // accuracy (classifier, autoencoder); unused for the MDN
  double test_loss = 0.0;
  double test_metric = 0.0;
};

struct TrainingCurve {
  std::string metric_name = "accuracy";
  std::vector<CurveRow> rows;
  std::string to_csv() const;
};

// Autoencoder pretraining ---------------------------------------------------

/// Complete primitive occupancy in the perceived frame, scaled so its largest
/// extent spans 26/32 of the grid and centered. {1, R, R, R}.
nn::Tensor reconstruction_target(const SceneSpec& scene, const ObjectFrame& frame, std::size_t resolution);

struct AutoencoderPair {
  ObjectRep input;
  nn::Tensor target;  // {1, R, R, R}
};

/// One pair per distinct scene in `records`.
std::vector<AutoencoderPair> autoencoder_pairs(const std::vector<GraspRecord>& records);

struct PretrainResult {
  nn::NetModel encoder;  // frozen
  nn::NetModel decoder;
  TrainingCurve curve;
  double voxel_accuracy = 0.0;  // on the training pairs, eval mode
};

/// Throws DataError when a pair does not match the encoder grid.
PretrainResult pretrain_encoder(const std::vector<AutoencoderPair>& pairs, const EncoderConfig& cfg,
                                const Schedule& schedule, std::uint64_t seed,
                                const std::vector<AutoencoderPair>& validation = {});

/// Fraction of voxels where (logit > 0) equals the target.
double voxel_accuracy(const nn::NetModel& encoder, const nn::NetModel& decoder,
                      const std::vector<AutoencoderPair>& pairs);

// Cached encoder features -----------------------------------------------------

/// Records with their scene's encoder feature computed once.
struct FeatureSet {
  nn::Tensor features;  // {S, F}, one row per scene
  std::vector<Vec3> sizes;
  std::vector<std::size_t> scene_of;  // per record
  std::vector<ConfigVector> thetas;
  std::vector<int> labels;
  std::vector<GraspType> types;

  std::size_t size() const { return thetas.size(); }
};

FeatureSet build_feature_set(const nn::NetModel& encoder, const std::vector<GraspRecord>& records);

/// Sets the "size_scale" / "theta_scale" nodes (when present) to standardise
/// the training inputs.
void fit_input_scaling(nn::NetModel& head, const FeatureSet& train);

// Metrics ------------------------------------------------------------------

struct BinaryMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t count() const { return tp + fp + tn + fn; }
  double accuracy() const;
  double precision() const;
  double recall() const;
  double f1() const;
  /// Accuracy of always predicting the more frequent label.
  double majority_baseline() const;
  nlohmann::json to_json() const;
};

/// Positive when p > threshold (strict).
BinaryMetrics binary_metrics(const std::vector<double>& probs, const std::vector<int>& labels, double threshold = 0.5);

struct ClassifierEvaluation {
  BinaryMetrics all, side, overhead;
  double bce = 0.0;
  nlohmann::json to_json() const;
};

std::vector<double> predict(const nn::NetModel& head, const FeatureSet& set);
ClassifierEvaluation evaluate_classifier(const nn::NetModel& head, const FeatureSet& set);

// Classifier and MDN -------------------------------------------------------

struct ClassifierTraining {
  nn::NetModel head;
  TrainingCurve curve;
  ClassifierEvaluation train, test;
};

/// BCE + Adam on the classifier head; the encoder is only read.
ClassifierTraining train_classifier(const FeatureSet& train, const FeatureSet& test, const EncoderConfig& enc,
                                    const ClassifierConfig& cfg, const Schedule& schedule, std::uint64_t seed);

struct MdnTraining {
  nn::NetModel mdn;
  TrainingCurve curve;
  double train_nll = 0.0, test_nll = 0.0;
};

/// Mean NLL of every record's theta under the MDN output for its scene.
double mdn_mean_nll(const nn::NetModel& mdn, const FeatureSet& set, std::size_t components, double var_floor);

/// Trains on all attempts. When `init` is given, the output layer starts at
/// that mixture.
MdnTraining train_mdn(const FeatureSet& train, const FeatureSet& test, const EncoderConfig& enc, const MdnConfig& cfg,
                      const Schedule& schedule, std::uint64_t seed, const MixturePrior* init = nullptr);

struct GmmTraining {
  MixturePrior prior;
  GmmFitReport report;
  double train_nll = 0.0, test_nll = 0.0;
};

/// EM on every training attempt, components tagged side/overhead.
GmmTraining train_gmm(const std::vector<GraspRecord>& train, const std::vector<GraspRecord>& test,
                      std::size_t components, std::uint64_t seed, const BoundBox& box);

}  // namespace graspinf
