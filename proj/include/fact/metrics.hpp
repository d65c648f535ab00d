#pragma once

#include <vector>

#include "fact/core.hpp"

namespace fact::metrics {

struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  // Dynamic range of pixel values; <= 0 means "compute (max - min) of the
  // reference image per pair".
  double L = 0.0;
  int window = 11;
  double gaussian_sigma = 1.5;  // <= 0 selects a uniform window
  std::vector<double> scale_weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

  int n_scales() const { return static_cast<int>(scale_weights.size()); }
  void validate() const;

  static SsimParams defaults_2d() { return {}; }
  static SsimParams defaults_3d() {
    SsimParams p;
    p.window = 7;
    p.gaussian_sigma = -1.0;  // uniform 7^3 for tractability
    return p;
  }
};

double mse(const Volume& a, const Volume& b);

// Mean over all valid window positions of the per-window SSIM map. Volumes
// of depth 1 use a 2D window, deeper volumes a cubic moving window.
double ssim(const Volume& a, const Volume& b, const SsimParams& params);

// Multi-scale SSIM: per-scale contrast-structure terms (luminance folded in
// only at the coarsest scale), each raised to its scale weight; scales are
// linked by 2x mean-pool downsampling per spatial axis.
double ms_ssim_2d(const Volume& a, const Volume& b, const SsimParams& params);
double ms_ssim_3d(const Volume& a, const Volume& b, const SsimParams& params);

// Dispatches on depth.
double ms_ssim(const Volume& a, const Volume& b, const SsimParams& params);

// sign(x) * |x|^p; keeps fractional powers defined for slightly negative
// mean contrast-structure terms.
double signed_pow(double x, double p);

// 2x mean-pool along each spatial axis (z only when nz > 1); trailing odd
// samples are dropped.
Volume downsample2(const Volume& v);

// Per-window mean contrast-structure term and mean full (l*cs) term; the
// building blocks of ssim and ms_ssim, exposed for the invariance tests.
struct SsimTerms {
  double mean_lcs = 0.0;
  double mean_cs = 0.0;
};
SsimTerms ssim_terms(const Volume& a, const Volume& b, const SsimParams& params,
                     double dynamic_range);

}  // namespace fact::metrics
