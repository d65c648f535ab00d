#pragma once

#include <vector>

#include "fact/core.hpp"
#include "fact/projector.hpp"

namespace fact::recon {

enum class FilterKind { RamLak, SheppLogan, Hann };

struct FilterSpec {
  FilterKind kind = FilterKind::RamLak;
  double cutoff = 1.0;  // fraction of Nyquist, (0, 1]

  void validate() const;
};

// Discrete Ram-Lak taps at spacing tau, h[-(n-1) .. n-1] returned as a
// vector of length 2n-1 (center at index n-1), optionally windowed.
std::vector<double> ramp_kernel(int n, double tau, const FilterSpec& spec);

// Convolve every view row with the ramp kernel (includes the tau integration
// factor). Spatial-domain reference path; use_fft selects the FFT fast path,
// which matches the reference to ~1e-12.
proj::Sinogram ramp_filter(const proj::Sinogram& sino, const FilterSpec& spec,
                           double det_pitch_mm, bool use_fft = false);

// Backprojection step only.
//   weighted=false: ray-driven scatter, the exact transpose of forward_project.
//   weighted=true:  pixel-driven fan-beam backprojection (cosine-distance
//                   weights D^2/U^2, bilinear detector interpolation, scaled
//                   by pi/n_views), as used inside fbp_reconstruct.
Volume backproject(const proj::Sinogram& sino, const proj::ScanGeometry& geom,
                   int out_nx, int out_ny, double voxel_mm, bool weighted);

// Full fan-beam weighted FBP of one slice: cosine pre-weighting, ramp
// filtering on the virtual (isocenter-scaled) detector, weighted
// backprojection. Output in mu units (mm^-1), depth-1 volume.
Volume fbp_reconstruct(const proj::Sinogram& sino, const proj::ScanGeometry& geom,
                       int out_nx, int out_ny, double voxel_mm,
                       const FilterSpec& spec = {}, bool use_fft = true);

}  // namespace fact::recon
