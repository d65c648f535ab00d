#pragma once

#include "fact/core.hpp"

namespace fact::seg {

// Binary mask over a volume grid; values are exactly 0 or 1.
struct Mask {
  int nx = 0, ny = 0, nz = 1;
  double voxel_mm = 1.0;
  std::vector<uint8_t> values;  // x fastest, then y, then z
  bool empty_warning = false;   // set when no interior air component was found

  Mask() = default;
  Mask(int nx_, int ny_, int nz_, double voxel)
      : nx(nx_), ny(ny_), nz(nz_), voxel_mm(voxel),
        values(static_cast<size_t>(nx_) * ny_ * nz_, 0) {}

  size_t size() const { return values.size(); }
  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * ny + y) * nx + x;
  }
  size_t sum() const;
  bool same_dims(const Volume& v) const {
    return nx == v.nx && ny == v.ny && nz == v.nz;
  }
};

// Classical lung segmentation on a mu-valued volume: threshold below
// air_threshold_mu, drop border-touching (exterior air) components, keep the
// two largest interior components, then close radius-1 holes.
Mask segment_lung(const Volume& volume, double air_threshold_mu = 0.3 * kWaterMu);

// Count of 6-connected components among mask voxels.
int count_components(const Mask& mask);

// Keep voxels under the mask, set the rest to fill_value.
Volume mask_apply(const Volume& volume, const Mask& mask, double fill_value = 0.0);

}  // namespace fact::seg
