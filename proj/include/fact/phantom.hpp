#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fact/core.hpp"

namespace fact::phantom {

// One additive ellipsoid component. Rotation is about the z axis only.
struct EllipsoidSpec {
  Vec3 center;               // mm
  Vec3 semi_axes;            // a,b,c in mm, all > 0
  double rotation_deg = 0.0; // about z
  double mu_delta = 0.0;     // additive attenuation, mm^-1

  void validate() const;
  // True if the point lies inside or on the ellipsoid surface.
  bool contains(const Vec3& p) const;
  // Chord length (mm) of the segment src->dst inside the ellipsoid.
  double chord_length(const Vec3& src, const Vec3& dst) const;
};

enum class PhantomLabel { Unlabeled, PositiveAnalog, NegativeAnalog };

struct Phantom {
  int nx = 256, ny = 256, nz = 64;
  double voxel_mm = 1.0;
  std::vector<EllipsoidSpec> components;
  PhantomLabel label = PhantomLabel::Unlabeled;

  void validate() const;
};

struct LungPhantomParams {
  int min_blobs = 2;
  int max_blobs = 8;
  double blob_radius_min_mm = 4.0;
  double blob_radius_max_mm = 12.0;
  // Lesion blob additive attenuation range.
  double blob_mu_min = 0.3 * kWaterMu;
  double blob_mu_max = 0.6 * kWaterMu;
  double body_mu = kWaterMu;
  double lung_mu_fraction = 0.05;  // cavity attenuation as a fraction of body_mu

  void validate() const;
};

// Voxel value = sum of mu_delta over ellipsoids containing the voxel center.
Volume rasterize(const Phantom& ph);

// Seeded lung-like phantom: body ellipsoid, two low-mu cavities, and (when
// positive) small lesion blobs biased toward posterior/bilateral placement.
Phantom make_lung_phantom(uint64_t seed, bool positive,
                          const LungPhantomParams& params = {});
Phantom make_lung_phantom(uint64_t seed, bool positive, int nx, int ny, int nz,
                          double voxel_mm, const LungPhantomParams& params = {});

// Exact line integral of the additive ellipsoid composition along the
// segment src->dst (closed-form quadratic chords, no voxel grid involved).
double analytic_line_integral(const Phantom& ph, const Vec3& src, const Vec3& dst);

// JSON (de)serialization of phantom specs.
std::string to_json(const Phantom& ph);
Phantom phantom_from_json(const std::string& text);

}  // namespace fact::phantom
