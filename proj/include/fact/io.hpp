#pragma once

#include <string>
#include <vector>

#include "fact/core.hpp"
#include "fact/projector.hpp"
#include "fact/segment.hpp"

namespace fact::io {

// Payload interpretation tags stored in the volume file header.
enum class Dtype : uint32_t { F32 = 0, U8 = 1 };
enum class Kind : uint32_t { Mu = 0, HU = 1, Mask = 2, Sino = 3 };

struct VolumeFile {
  Kind kind = Kind::Mu;
  Dtype dtype = Dtype::F32;
  Volume volume;  // u8 payloads surface as 0/1 doubles
};

// Raw little-endian volume container: magic "FACTVOL1", dtype/kind tags,
// dims, voxel size, row-major payload (x fastest, then y, then z).
void write_volume(const std::string& path, const Volume& v, Kind kind,
                  Dtype dtype = Dtype::F32);
VolumeFile read_volume(const std::string& path);

void write_mask(const std::string& path, const seg::Mask& m);
seg::Mask read_mask(const std::string& path);

// Sinograms ride in the same container: x = detector bin, y = view.
void write_sinogram(const std::string& path, const proj::Sinogram& s);
proj::Sinogram read_sinogram(const std::string& path);

// 16-bit binary PGM of one axial slice; values window-mapped [lo, hi] ->
// [0, 65535]. lo >= hi selects the slice min/max (constant slice -> all 0).
void write_pgm16(const std::string& path, const Volume& v, int z, double lo = 0.0,
                 double hi = -1.0);

enum class ReorientOp { FlipX, FlipY, Rot90XY };

struct ReorientResult {
  Volume volume;
  std::vector<ReorientOp> applied;
};

// Axis-aligned flips and 90-degree in-plane rotations only.
ReorientResult reorient(const Volume& v, const std::vector<ReorientOp>& ops);

}  // namespace fact::io
