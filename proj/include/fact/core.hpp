#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fact {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

// 3D scalar grid of linear attenuation coefficients (mm^-1). 2D images are
// depth-1 volumes. Grid is centered on the isocenter; the voxel (i,j,k)
// center sits at ((i-(nx-1)/2)*voxel_mm, ...).
struct Volume {
  int nx = 0, ny = 0, nz = 1;
  double voxel_mm = 1.0;
  std::vector<double> values;  // x fastest, then y, then z

  Volume() = default;
  Volume(int nx_, int ny_, int nz_, double voxel)
      : nx(nx_), ny(ny_), nz(nz_) {
    if (nx < 1 || ny < 1 || nz < 1)
      throw std::invalid_argument("Volume: dims must be >= 1");
    if (voxel <= 0.0) throw std::invalid_argument("Volume: voxel_mm must be > 0");
    voxel_mm = voxel;
    values.assign(static_cast<size_t>(nx) * ny * nz, 0.0);
  }

  size_t size() const { return values.size(); }
  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * ny + y) * nx + x;
  }
  double& at(int x, int y, int z) { return values[index(x, y, z)]; }
  double at(int x, int y, int z) const { return values[index(x, y, z)]; }

  bool same_dims(const Volume& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz;
  }

  // Physical coordinate of a voxel center.
  Vec3 voxel_center(int x, int y, int z) const {
    return {(x - (nx - 1) * 0.5) * voxel_mm, (y - (ny - 1) * 0.5) * voxel_mm,
            (z - (nz - 1) * 0.5) * voxel_mm};
  }
};

// splitmix64: cheap, high-quality seed scrambler used for counter-based
// per-element RNG streams (results independent of evaluation order).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t a) {
  return splitmix64(seed ^ (a + 0x9E3779B97F4A7C15ULL));
}

// FNV-1a over raw bytes; used for manifest/artifact hashing.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr double kPi = 3.14159265358979323846;

// Soft-tissue baseline: water attenuation at 60 keV.
constexpr double kWaterMu = 0.0206;  // mm^-1

}  // namespace fact
