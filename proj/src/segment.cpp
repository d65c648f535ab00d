#include "fact/segment.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace fact::seg {

size_t Mask::sum() const {
  return std::accumulate(values.begin(), values.end(), size_t{0});
}

namespace {

// 6-connected flood fill over `candidate` starting at seed; labels visited
// voxels with `label` in `labels` and returns (size, touches_border).
struct FloodResult {
  size_t size = 0;
  bool touches_border = false;
};

FloodResult flood(const std::vector<uint8_t>& candidate, std::vector<int>& labels,
                  int nx, int ny, int nz, size_t seed, int label) {
  FloodResult r;
  std::queue<size_t> q;
  q.push(seed);
  labels[seed] = label;
  const size_t slab = static_cast<size_t>(nx) * ny;
  while (!q.empty()) {
    const size_t i = q.front();
    q.pop();
    ++r.size;
    const int z = static_cast<int>(i / slab);
    const int y = static_cast<int>((i % slab) / nx);
    const int x = static_cast<int>(i % nx);
    if (x == 0 || x == nx - 1 || y == 0 || y == ny - 1 ||
        (nz > 1 && (z == 0 || z == nz - 1)))
      r.touches_border = true;
    const int dx[6] = {1, -1, 0, 0, 0, 0};
    const int dy[6] = {0, 0, 1, -1, 0, 0};
    const int dz[6] = {0, 0, 0, 0, 1, -1};
    for (int d = 0; d < 6; ++d) {
      const int X = x + dx[d], Y = y + dy[d], Z = z + dz[d];
      if (X < 0 || X >= nx || Y < 0 || Y >= ny || Z < 0 || Z >= nz) continue;
      const size_t j = (static_cast<size_t>(Z) * ny + Y) * nx + X;
      if (candidate[j] && labels[j] < 0) {
        labels[j] = label;
        q.push(j);
      }
    }
  }
  return r;
}

// Morphological closing with a radius-1 6-connected structuring element.
void close_radius1(std::vector<uint8_t>& m, int nx, int ny, int nz) {
  auto pass = [&](const std::vector<uint8_t>& src, uint8_t target) {
    std::vector<uint8_t> out = src;
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const size_t i = (static_cast<size_t>(z) * ny + y) * nx + x;
          if (src[i] == target) continue;
          auto probe = [&](int X, int Y, int Z) {
            if (X < 0 || X >= nx || Y < 0 || Y >= ny || Z < 0 || Z >= nz)
              return false;
            return src[(static_cast<size_t>(Z) * ny + Y) * nx + X] == target;
          };
          if (probe(x - 1, y, z) || probe(x + 1, y, z) || probe(x, y - 1, z) ||
              probe(x, y + 1, z) || probe(x, y, z - 1) || probe(x, y, z + 1))
            out[i] = target;
        }
    return out;
  };
  m = pass(m, 1);  // dilate
  m = pass(m, 0);  // erode
}

}  // namespace

Mask segment_lung(const Volume& volume, double air_threshold_mu) {
  const int nx = volume.nx, ny = volume.ny, nz = volume.nz;
  std::vector<uint8_t> candidate(volume.size());
  for (size_t i = 0; i < candidate.size(); ++i)
    candidate[i] = volume.values[i] < air_threshold_mu ? 1 : 0;

  std::vector<int> labels(volume.size(), -1);
  std::vector<FloodResult> comps;
  for (size_t i = 0; i < candidate.size(); ++i)
    if (candidate[i] && labels[i] < 0)
      comps.push_back(flood(candidate, labels, nx, ny, nz, i,
                            static_cast<int>(comps.size())));

  // Interior components ranked by size; keep at most the two largest.
  std::vector<int> interior;
  for (int c = 0; c < static_cast<int>(comps.size()); ++c)
    if (!comps[c].touches_border) interior.push_back(c);
  std::sort(interior.begin(), interior.end(), [&](int a, int b) {
    return comps[a].size != comps[b].size ? comps[a].size > comps[b].size : a < b;
  });
  if (interior.size() > 2) interior.resize(2);

  Mask mask(nx, ny, nz, volume.voxel_mm);
  if (interior.empty()) {
    mask.empty_warning = true;
    return mask;
  }
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == interior[0] ||
        (interior.size() > 1 && labels[i] == interior[1]))
      mask.values[i] = 1;
  close_radius1(mask.values, nx, ny, nz);
  return mask;
}

int count_components(const Mask& mask) {
  std::vector<int> labels(mask.size(), -1);
  int n = 0;
  for (size_t i = 0; i < mask.values.size(); ++i)
    if (mask.values[i] && labels[i] < 0)
      flood(mask.values, labels, mask.nx, mask.ny, mask.nz, i, n++);
  return n;
}

Volume mask_apply(const Volume& volume, const Mask& mask, double fill_value) {
  if (!mask.same_dims(volume))
    throw std::invalid_argument("mask_apply: mask/volume dims mismatch");
  Volume out = volume;
  for (size_t i = 0; i < out.values.size(); ++i)
    if (!mask.values[i]) out.values[i] = fill_value;
  return out;
}

}  // namespace fact::seg
