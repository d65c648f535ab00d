#include "fact/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fact::io {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'A', 'C', 'T', 'V', 'O', 'L', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("volume file: truncated");
  return v;
}

}  // namespace

void write_volume(const std::string& path, const Volume& v, Kind kind, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("volume file: cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, static_cast<uint32_t>(dtype));
  write_pod<uint32_t>(os, static_cast<uint32_t>(kind));
  write_pod<int32_t>(os, v.nx);
  write_pod<int32_t>(os, v.ny);
  write_pod<int32_t>(os, v.nz);
  write_pod<double>(os, v.voxel_mm);
  if (dtype == Dtype::F32) {
    for (double x : v.values) write_pod<float>(os, static_cast<float>(x));
  } else {
    for (double x : v.values)
      write_pod<uint8_t>(os, x != 0.0 ? 1 : 0);
  }
  if (!os) throw std::runtime_error("volume file: write failed: " + path);
}

VolumeFile read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("volume file: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("volume file: bad magic: " + path);

  VolumeFile f;
  const uint32_t dtype = read_pod<uint32_t>(is);
  const uint32_t kind = read_pod<uint32_t>(is);
  if (dtype > 1) throw std::runtime_error("volume file: unknown dtype tag");
  if (kind > 3) throw std::runtime_error("volume file: unknown kind tag");
  f.dtype = static_cast<Dtype>(dtype);
  f.kind = static_cast<Kind>(kind);
  const int nx = read_pod<int32_t>(is);
  const int ny = read_pod<int32_t>(is);
  const int nz = read_pod<int32_t>(is);
  const double voxel = read_pod<double>(is);
  f.volume = Volume(nx, ny, nz, voxel);
  for (double& x : f.volume.values)
    x = f.dtype == Dtype::F32 ? static_cast<double>(read_pod<float>(is))
                              : static_cast<double>(read_pod<uint8_t>(is));
  return f;
}

void write_mask(const std::string& path, const seg::Mask& m) {
  Volume v(m.nx, m.ny, m.nz, m.voxel_mm);
  for (size_t i = 0; i < m.values.size(); ++i) v.values[i] = m.values[i];
  write_volume(path, v, Kind::Mask, Dtype::U8);
}

seg::Mask read_mask(const std::string& path) {
  const VolumeFile f = read_volume(path);
  if (f.kind != Kind::Mask)
    throw std::runtime_error("volume file: not a mask: " + path);
  seg::Mask m(f.volume.nx, f.volume.ny, f.volume.nz, f.volume.voxel_mm);
  for (size_t i = 0; i < m.values.size(); ++i)
    m.values[i] = f.volume.values[i] != 0.0 ? 1 : 0;
  return m;
}

void write_sinogram(const std::string& path, const proj::Sinogram& s) {
  Volume v(s.n_detectors, s.n_views, 1, 1.0);
  v.values = s.values;
  write_volume(path, v, Kind::Sino, Dtype::F32);
}

proj::Sinogram read_sinogram(const std::string& path) {
  const VolumeFile f = read_volume(path);
  if (f.kind != Kind::Sino)
    throw std::runtime_error("volume file: not a sinogram: " + path);
  proj::Sinogram s(f.volume.ny, f.volume.nx, proj::SinoKind::LineIntegral);
  s.values = f.volume.values;
  return s;
}

void write_pgm16(const std::string& path, const Volume& v, int z, double lo,
                 double hi) {
  if (z < 0 || z >= v.nz) throw std::invalid_argument("write_pgm16: bad slice");
  if (lo >= hi) {
    lo = v.at(0, 0, z);
    hi = lo;
    for (int y = 0; y < v.ny; ++y)
      for (int x = 0; x < v.nx; ++x) {
        lo = std::min(lo, v.at(x, y, z));
        hi = std::max(hi, v.at(x, y, z));
      }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot open for write: " + path);
  os << "P5\n" << v.nx << ' ' << v.ny << "\n65535\n";
  for (int y = 0; y < v.ny; ++y)
    for (int x = 0; x < v.nx; ++x) {
      double t = hi > lo ? (v.at(x, y, z) - lo) / (hi - lo) : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const auto s = static_cast<uint16_t>(std::lround(t * 65535.0));
      // PGM stores 16-bit samples most-significant byte first.
      os.put(static_cast<char>(s >> 8));
      os.put(static_cast<char>(s & 0xFF));
    }
  if (!os) throw std::runtime_error("pgm: write failed: " + path);
}

ReorientResult reorient(const Volume& v, const std::vector<ReorientOp>& ops) {
  ReorientResult r{v, ops};
  for (ReorientOp op : ops) {
    const Volume& s = r.volume;
    if (op == ReorientOp::FlipX || op == ReorientOp::FlipY) {
      Volume out(s.nx, s.ny, s.nz, s.voxel_mm);
      for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
          for (int x = 0; x < s.nx; ++x)
            out.at(x, y, z) = op == ReorientOp::FlipX
                                  ? s.at(s.nx - 1 - x, y, z)
                                  : s.at(x, s.ny - 1 - y, z);
      r.volume = std::move(out);
    } else {
      // Counter-clockwise quarter turn in the x/y plane.
      Volume out(s.ny, s.nx, s.nz, s.voxel_mm);
      for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.nx; ++y)
          for (int x = 0; x < s.ny; ++x)
            out.at(x, y, z) = s.at(s.nx - 1 - y, x, z);
      r.volume = std::move(out);
    }
  }
  return r;
}

}  // namespace fact::io
