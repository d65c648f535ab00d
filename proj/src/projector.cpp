#include "fact/projector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fact::proj {

void ScanGeometry::validate() const {
  if (!(sdd_mm > sod_mm && sod_mm > 0.0))
    throw std::invalid_argument("ScanGeometry: require sdd_mm > sod_mm > 0");
  if (n_detectors < 1) throw std::invalid_argument("ScanGeometry: n_detectors >= 1");
  if (det_pitch_mm <= 0) throw std::invalid_argument("ScanGeometry: det_pitch_mm > 0");
  if (n_views < 1 || step_deg <= 0)
    throw std::invalid_argument("ScanGeometry: n_views >= 1, step_deg > 0");
  if (std::abs(n_views * step_deg - 360.0) > 1e-9)
    throw std::invalid_argument("ScanGeometry: n_views * step_deg must equal 360");
}

Vec3 ScanGeometry::source(int view, double z) const {
  const double beta = view * step_deg * kPi / 180.0;
  return {sod_mm * std::cos(beta), sod_mm * std::sin(beta), z};
}

Vec3 ScanGeometry::detector_bin(int view, int bin, double z) const {
  const double beta = view * step_deg * kPi / 180.0;
  const double c = std::cos(beta), s = std::sin(beta);
  const Vec3 src{sod_mm * c, sod_mm * s, z};
  const Vec3 central{-c, -s, 0.0};   // toward the isocenter
  const Vec3 tangent{-s, c, 0.0};
  const double u = (bin - (n_detectors - 1) * 0.5) * det_pitch_mm;
  return src + central * sdd_mm + tangent * u;
}

double siddon_line_integral(const Volume& vol, const Vec3& src, const Vec3& dst) {
  const Vec3 dir = dst - src;
  const double ray_len = dir.norm();
  if (ray_len == 0.0)
    throw std::invalid_argument("siddon_line_integral: src and dst must differ");

  // Grid boundary planes per axis: (i - n/2) * voxel, i = 0..n.
  const double v = vol.voxel_mm;
  const double org[3] = {-vol.nx * 0.5 * v, -vol.ny * 0.5 * v, -vol.nz * 0.5 * v};
  const int dims[3] = {vol.nx, vol.ny, vol.nz};
  const double s[3] = {src.x, src.y, src.z};
  const double d[3] = {dir.x, dir.y, dir.z};

  // Clip the parametric range to the grid (slab test).
  double tmin = 0.0, tmax = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = org[a], hi = org[a] + dims[a] * v;
    if (d[a] == 0.0) {
      if (s[a] <= lo || s[a] >= hi) return 0.0;
    } else {
      double t0 = (lo - s[a]) / d[a];
      double t1 = (hi - s[a]) / d[a];
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
    }
  }
  if (tmax <= tmin) return 0.0;

  // Walk plane crossings in increasing t; classify each segment by its
  // midpoint's voxel.
  double t_next[3];
  double dt[3];
  double t = tmin;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      t_next[a] = 2.0;  // never crosses
      dt[a] = 0.0;
      continue;
    }
    dt[a] = std::abs(v / d[a]);
    const double pos = s[a] + tmin * d[a];
    double idx = (pos - org[a]) / v;
    double next_plane;
    if (d[a] > 0) {
      next_plane = org[a] + std::ceil(idx - 1e-12) * v;
      if (next_plane <= pos) next_plane += v;
    } else {
      next_plane = org[a] + std::floor(idx + 1e-12) * v;
      if (next_plane >= pos) next_plane -= v;
    }
    t_next[a] = (next_plane - s[a]) / d[a];
  }

  double sum = 0.0;
  while (t < tmax - 1e-14) {
    double tn = std::min(tmax, std::min(t_next[0], std::min(t_next[1], t_next[2])));
    if (tn <= t) tn = std::min(tmax, t + 1e-14);
    const double tm = 0.5 * (t + tn);
    int ix = static_cast<int>(std::floor((s[0] + tm * d[0] - org[0]) / v));
    int iy = static_cast<int>(std::floor((s[1] + tm * d[1] - org[1]) / v));
    int iz = static_cast<int>(std::floor((s[2] + tm * d[2] - org[2]) / v));
    if (ix >= 0 && ix < dims[0] && iy >= 0 && iy < dims[1] && iz >= 0 && iz < dims[2])
      sum += vol.at(ix, iy, iz) * (tn - t) * ray_len;
    for (int a = 0; a < 3; ++a)
      if (t_next[a] <= tn + 1e-15 && dt[a] > 0.0) t_next[a] += dt[a];
    t = tn;
  }
  return sum;
}

Sinogram forward_project(const Volume& vol, const ScanGeometry& geom, int slice_index) {
  geom.validate();
  if (slice_index < 0 || slice_index >= vol.nz)
    throw std::invalid_argument("forward_project: slice_index out of range");

  Sinogram sino(geom.n_views, geom.n_detectors, SinoKind::LineIntegral);

  // Fan coverage check: the half fan must subtend the grid circumradius.
  const double half_span = 0.5 * (geom.n_detectors - 1) * geom.det_pitch_mm;
  const double fan_half = std::atan2(half_span, geom.sdd_mm);
  const double circum =
      0.5 * std::hypot(vol.nx * vol.voxel_mm, vol.ny * vol.voxel_mm);
  if (std::sin(fan_half) * geom.sod_mm < circum) sino.coverage_warning = true;

  const double z = (slice_index - (vol.nz - 1) * 0.5) * vol.voxel_mm;
  for (int view = 0; view < geom.n_views; ++view) {
    const Vec3 src = geom.source(view, z);
    for (int bin = 0; bin < geom.n_detectors; ++bin) {
      const Vec3 dst = geom.detector_bin(view, bin, z);
      sino.at(view, bin) = siddon_line_integral(vol, src, dst);
    }
  }
  return sino;
}

Sinogram apply_beer_poisson(const Sinogram& sino, double photons_per_ray, uint64_t seed) {
  if (photons_per_ray <= 0.0)
    throw std::invalid_argument("apply_beer_poisson: photons_per_ray must be > 0");
  Sinogram out(sino.n_views, sino.n_detectors, SinoKind::PhotonCount);
  out.coverage_warning = sino.coverage_warning;
  for (int v = 0; v < sino.n_views; ++v) {
    for (int d = 0; d < sino.n_detectors; ++d) {
      const double l = sino.at(v, d);
      const double mean = photons_per_ray * std::exp(-l);
      std::mt19937_64 rng(hash_combine(hash_combine(seed, v), d));
      if (mean <= 0.0) {
        out.at(v, d) = 0.0;
      } else {
        std::poisson_distribution<long long> pois(mean);
        out.at(v, d) = static_cast<double>(pois(rng));
      }
    }
  }
  return out;
}

Sinogram counts_to_line_integrals(const Sinogram& sino, double photons_per_ray) {
  if (photons_per_ray <= 0.0)
    throw std::invalid_argument("counts_to_line_integrals: photons_per_ray must be > 0");
  constexpr double kCountFloor = 0.5;
  Sinogram out(sino.n_views, sino.n_detectors, SinoKind::LineIntegral);
  out.coverage_warning = sino.coverage_warning;
  for (size_t i = 0; i < sino.values.size(); ++i)
    out.values[i] = -std::log(std::max(sino.values[i], kCountFloor) / photons_per_ray);
  return out;
}

}  // namespace fact::proj
