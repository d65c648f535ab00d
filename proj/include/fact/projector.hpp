#pragma once

#include <cstdint>
#include <vector>

#include "fact/core.hpp"

namespace fact::proj {

// Fan-beam acquisition on a flat equidistant detector. The source rotates on
// a circle of radius sod_mm around the isocenter; the detector is centered on
// the central ray at distance sdd_mm from the source, perpendicular to it.
struct ScanGeometry {
  double sdd_mm = 1500.0;
  double sod_mm = 1000.0;
  int n_detectors = 1024;
  double det_pitch_mm = 0.8;
  int n_views = 720;
  double step_deg = 0.5;

  void validate() const;

  // Source position at view v (z fixed to the slice plane).
  Vec3 source(int view, double z = 0.0) const;
  // Center of detector bin d at view v.
  Vec3 detector_bin(int view, int bin, double z = 0.0) const;
};

enum class SinoKind { LineIntegral, PhotonCount };

struct Sinogram {
  int n_views = 0;
  int n_detectors = 0;
  SinoKind kind = SinoKind::LineIntegral;
  std::vector<double> values;  // view-major: values[v * n_detectors + d]
  bool coverage_warning = false;

  Sinogram() = default;
  Sinogram(int views, int dets, SinoKind k)
      : n_views(views), n_detectors(dets), kind(k),
        values(static_cast<size_t>(views) * dets, 0.0) {}
  double& at(int v, int d) { return values[static_cast<size_t>(v) * n_detectors + d]; }
  double at(int v, int d) const { return values[static_cast<size_t>(v) * n_detectors + d]; }
};

// Exact ray sum through the voxel grid: sum over traversed voxels of
// mu * intersection length (mm), via Siddon's parametric boundary walk.
// Returns 0 when the ray misses the grid.
double siddon_line_integral(const Volume& vol, const Vec3& src, const Vec3& dst);

// Fan-beam projection of one axial slice; one ray per detector-bin center.
Sinogram forward_project(const Volume& vol, const ScanGeometry& geom, int slice_index);

// P_i ~ Poisson(b * exp(-l_i)), counter-based per-bin seeding.
Sinogram apply_beer_poisson(const Sinogram& sino, double photons_per_ray, uint64_t seed);

// l_hat = -ln(max(P, c_floor) / b), c_floor = 0.5 counts.
Sinogram counts_to_line_integrals(const Sinogram& sino, double photons_per_ray);

}  // namespace fact::proj
