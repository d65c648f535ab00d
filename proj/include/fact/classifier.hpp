#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fact/checkpoint.hpp"
#include "fact/core.hpp"
#include "fact/graph.hpp"
#include "fact/segment.hpp"

namespace fact::cls {

// Hounsfield conversion applied at the classifier boundary.
inline double hu_from_mu(double mu) { return 1000.0 * (mu - kWaterMu) / kWaterMu; }

// 3D DenseNet-style binary classifier configuration.
struct ClassifierConfig {
  int n_blocks = 3;
  int layers_per_block = 4;
  int growth_rate = 4;
  int stem_channels = 8;
  int kernel = 3;      // per axis, 3D
  int input_size = 32; // cube edge after resampling
  double init_std = 0.01;
  uint64_t init_seed = 7;
  double bn_momentum = 0.1;
  // Normalization window in HU; inputs are clamped and mapped to [0,1].
  double hu_lo = -1000.0;
  double hu_hi = 400.0;

  void validate() const;
  std::string to_json() const;
  static ClassifierConfig from_json(const std::string& text);

  static ClassifierConfig paper_faithful();
  static ClassifierConfig desk();
};

struct AugmentationSpec {
  double noise_probability = 0.75;
  double noise_variance = 0.1;  // of the normalized [0,1] range
  double contrast_probability = 0.5;
  double oscillation_magnitude = 0.1;

  void validate() const;
};

struct ClassifierNet {
  ClassifierConfig config;
  nn::Graph graph;
  nn::NodeId in = nn::kNoNode;      // input "x", (B,1,d,d,d) normalized
  nn::NodeId target = nn::kNoNode;  // input "y", (B,1) labels
  nn::NodeId logit = nn::kNoNode;   // (B,1)
  nn::NodeId score = nn::kNoNode;   // sigmoid(logit)
  nn::NodeId loss = nn::kNoNode;    // mean BCE

  int64_t parameter_count();
};

ClassifierNet build_classifier(const ClassifierConfig& config);

struct ClassifierModel {
  ClassifierConfig config;
  nn::Checkpoint checkpoint;

  void save(const std::string& path) const;
  static ClassifierModel load(const std::string& path);
  ClassifierNet instantiate() const;
};

// Trilinear resampling of a volume to an n^3 grid spanning the same extent.
Volume resample_to_cube(const Volume& v, int n);

// Classifier input preprocessing: mask, convert to HU, resample, normalize.
nn::Tensor preprocess_case(const Volume& volume, const seg::Mask& mask,
                           const ClassifierConfig& config);

// Seeded augmentation on a normalized tensor: additive Gaussian noise and a
// multiplicative contrast shift with the stated probabilities, then a
// low-frequency intensity oscillation.
nn::Tensor augment(const nn::Tensor& x, const AugmentationSpec& spec, uint64_t seed);

struct LabeledCase {
  Volume volume;
  seg::Mask mask;
  int label = 0;  // 0 or 1
};

struct ClassifierTrainHyper {
  double lr = 1e-4;  // paper-faithful 1e-6
  int batch = 4;
  int epochs = 30;
  uint64_t seed = 0;
  bool augment_enabled = true;
  AugmentationSpec augmentation;
  std::string log_csv_path;
};

struct ClassifierTrainResult {
  ClassifierModel model;
  std::vector<double> epoch_loss;
};

ClassifierTrainResult train_classifier(const std::vector<LabeledCase>& dataset,
                                       const ClassifierConfig& config,
                                       const ClassifierTrainHyper& hyper);

// Probability score in (0,1) for one masked volume.
double predict(ClassifierNet& net, const Volume& volume, const seg::Mask& mask);

}  // namespace fact::cls
