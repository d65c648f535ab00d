#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fact/checkpoint.hpp"
#include "fact/core.hpp"
#include "fact/graph.hpp"
#include "fact/metrics.hpp"
#include "fact/optim.hpp"

namespace fact::enh {

// DenseNet + deconvolution enhancement network configuration. The block and
// deconv counts are architectural constants; desk-scale work shrinks
// growth_rate / layers_per_block only.
struct DDNetConfig {
  int dims = 2;  // 2 or 3
  int n_dense_blocks = 4;
  int layers_per_block = 2;
  int growth_rate = 8;
  int stem_channels = 16;
  int n_deconv_layers = 8;
  int kernel = 5;
  int pool_kernel = 3;
  int pool_stride = 2;
  double init_std = 0.01;
  uint64_t init_seed = 1;
  double bn_momentum = 0.1;

  // Input normalization applied before the net (and inverted after); chosen
  // so training images land roughly in [0, 1].
  double input_scale = 1.0;

  // Composite loss settings.
  double loss_lambda = 0.1;
  int loss_window = 11;
  double loss_sigma = 1.5;
  std::vector<double> loss_scale_weights = {0.3, 0.4, 0.3};
  double loss_dynamic_range = 1.0;

  void validate() const;
  std::string to_json() const;
  static DDNetConfig from_json(const std::string& text);

  static DDNetConfig paper_faithful(int dims);
  static DDNetConfig desk_2d();
  static DDNetConfig desk_3d();
};

// A built DD-Net: the graph plus the handles the trainer and the inference
// path need.
struct EnhancerNet {
  DDNetConfig config;
  nn::Graph graph;
  nn::NodeId in = nn::kNoNode;       // input "x"
  nn::NodeId out = nn::kNoNode;      // enhanced output (residual added)
  nn::NodeId target = nn::kNoNode;   // input "y"
  nn::NodeId loss = nn::kNoNode;
  nn::NodeId mse_term = nn::kNoNode;
  nn::NodeId msssim_term = nn::kNoNode;

  int64_t parameter_count();
};

EnhancerNet build_ddnet(const DDNetConfig& config);

struct EnhancerModel {
  DDNetConfig config;
  nn::Checkpoint checkpoint;

  void save(const std::string& path) const;
  static EnhancerModel load(const std::string& path);
  // Materialize a runnable net with the stored weights.
  EnhancerNet instantiate() const;
};

struct TrainHyper {
  double lr = 1e-4;       // 2D default; 3D default 5e-5
  int batch = 4;
  int epochs = 10;
  uint64_t seed = 0;
  double grad_clip_norm = 0.0;  // 3D stability option
  std::string log_csv_path;     // per-iteration loss log, empty = no log
};

struct TrainResult {
  EnhancerModel model;        // best-validation checkpoint
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  bool aborted_on_nan = false;
};

// Supervised training of (low, high) aligned volume pairs with the
// MSE + lambda*(1 - MS-SSIM) loss and ADAM.
TrainResult train_enhancer(const std::vector<std::pair<Volume, Volume>>& train_pairs,
                           const std::vector<std::pair<Volume, Volume>>& val_pairs,
                           const DDNetConfig& config, const TrainHyper& hyper);

// Single forward pass on one image/volume; output clamped to >= 0.
Volume enhance_2d(EnhancerNet& net, const Volume& image);
Volume enhance_volume(EnhancerNet& net, const Volume& volume);

struct SubsampleResult {
  Volume volume;
  int stride = 1;
  bool homogeneous = true;
};

// Keep target_n slices at homogeneous stride floor(depth/target_n).
SubsampleResult subsample_slices(const Volume& volume, int target_n = 64);

struct TilingPlan {
  int tile_xy = 256;
  int pad_px = 16;
  int n_slices = 64;

  void validate() const;
};

// Tile the volume in x/y, pad each tile with real neighboring data where it
// exists (zeros at the outer border), enhance, crop, stitch.
Volume enhance_volume_tiled(EnhancerNet& net, const Volume& volume,
                            const TilingPlan& plan);

}  // namespace fact::enh
