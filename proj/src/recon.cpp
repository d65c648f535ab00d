#include "fact/recon.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <fftw3.h>

namespace fact::recon {

void FilterSpec::validate() const {
  if (!(cutoff > 0.0 && cutoff <= 1.0))
    throw std::invalid_argument("FilterSpec: cutoff must be in (0, 1]");
}

namespace {

double window_gain(FilterKind kind, double x) {
  // x = frequency / (cutoff * Nyquist), x >= 0
  if (x > 1.0) return 0.0;
  switch (kind) {
    case FilterKind::RamLak:
      return 1.0;
    case FilterKind::SheppLogan: {
      const double a = 0.5 * kPi * x;
      return a == 0.0 ? 1.0 : std::sin(a) / a;
    }
    case FilterKind::Hann:
      return 0.5 * (1.0 + std::cos(kPi * x));
  }
  return 1.0;
}

}  // namespace

std::vector<double> ramp_kernel(int n, double tau, const FilterSpec& spec) {
  spec.validate();
  if (n < 1 || tau <= 0.0) throw std::invalid_argument("ramp_kernel: bad n or tau");
  const int m = 2 * n - 1;
  std::vector<double> taps(m, 0.0);
  for (int k = -(n - 1); k <= n - 1; ++k) {
    double h;
    if (k == 0)
      h = 1.0 / (4.0 * tau * tau);
    else if (k % 2 != 0)
      h = -1.0 / (k * kPi * tau) / (k * kPi * tau);
    else
      h = 0.0;
    taps[k + n - 1] = h;
  }
  if (spec.kind == FilterKind::RamLak && spec.cutoff >= 1.0) return taps;

  // Window in the frequency domain of the tap sequence (cyclic DFT of the
  // symmetric taps is real), then transform back.
  std::vector<double> H(m, 0.0);
  for (int k = 0; k < m; ++k) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j)
      acc += taps[j] * std::cos(2.0 * kPi * k * j / m);
    H[k] = acc;
  }
  for (int k = 0; k < m; ++k) {
    const double nu = std::min(k, m - k) / static_cast<double>(m);  // cycles/sample
    H[k] *= window_gain(spec.kind, nu / (0.5 * spec.cutoff));
  }
  std::vector<double> out(m, 0.0);
  for (int j = 0; j < m; ++j) {
    double acc = 0.0;
    for (int k = 0; k < m; ++k)
      acc += H[k] * std::cos(2.0 * kPi * k * j / m);
    out[j] = acc / m;
  }
  return out;
}

proj::Sinogram ramp_filter(const proj::Sinogram& sino, const FilterSpec& spec,
                           double det_pitch_mm, bool use_fft) {
  if (sino.kind != proj::SinoKind::LineIntegral)
    throw std::invalid_argument(
        "ramp_filter: sinogram must hold line integrals (convert counts first)");
  const int n = sino.n_detectors;
  const double tau = det_pitch_mm;
  const std::vector<double> taps = ramp_kernel(n, tau, spec);

  proj::Sinogram out(sino.n_views, n, proj::SinoKind::LineIntegral);
  out.coverage_warning = sino.coverage_warning;

  if (!use_fft) {
    for (int v = 0; v < sino.n_views; ++v) {
      const double* row = &sino.values[static_cast<size_t>(v) * n];
      double* dst = &out.values[static_cast<size_t>(v) * n];
      for (int k = 0; k < n; ++k) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += taps[k - j + n - 1] * row[j];
        dst[k] = tau * acc;
      }
    }
    return out;
  }

  // FFT fast path: linear convolution via zero-padded cyclic convolution.
  int len = 1;
  while (len < 3 * n - 2) len <<= 1;
  std::vector<std::complex<double>> ker(len), buf(len);
  auto* buf_c = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan fwd = fftw_plan_dft_1d(len, buf_c, buf_c, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan bwd = fftw_plan_dft_1d(len, buf_c, buf_c, FFTW_BACKWARD, FFTW_ESTIMATE);

  for (int i = 0; i < 2 * n - 1; ++i) buf[i] = taps[i];
  for (int i = 2 * n - 1; i < len; ++i) buf[i] = 0.0;
  fftw_execute(fwd);
  ker = buf;

  for (int v = 0; v < sino.n_views; ++v) {
    const double* row = &sino.values[static_cast<size_t>(v) * n];
    for (int i = 0; i < len; ++i) buf[i] = i < n ? row[i] : 0.0;
    fftw_execute(fwd);
    for (int i = 0; i < len; ++i) buf[i] *= ker[i];
    fftw_execute(bwd);
    double* dst = &out.values[static_cast<size_t>(v) * n];
    for (int k = 0; k < n; ++k) dst[k] = tau * buf[k + n - 1].real() / len;
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(bwd);
  return out;
}

Volume backproject(const proj::Sinogram& sino, const proj::ScanGeometry& geom,
                   int out_nx, int out_ny, double voxel_mm, bool weighted) {
  geom.validate();
  if (sino.n_views != geom.n_views || sino.n_detectors != geom.n_detectors)
    throw std::invalid_argument("backproject: sinogram/geometry dims mismatch");

  Volume img(out_nx, out_ny, 1, voxel_mm);

  if (!weighted) {
    // Exact transpose of forward_project: scatter each ray's value along its
    // Siddon path. Ray order is fixed, so the result is deterministic.
    for (int v = 0; v < geom.n_views; ++v) {
      const Vec3 src = geom.source(v, 0.0);
      for (int d = 0; d < geom.n_detectors; ++d) {
        const double val = sino.at(v, d);
        if (val == 0.0) continue;
        const Vec3 dst = geom.detector_bin(v, d, 0.0);
        // Walk the same parametrization used by siddon_line_integral.
        const Vec3 dir = dst - src;
        const double ray_len = dir.norm();
        const double vox = img.voxel_mm;
        const double org[2] = {-img.nx * 0.5 * vox, -img.ny * 0.5 * vox};
        const int dims[2] = {img.nx, img.ny};
        const double s[2] = {src.x, src.y};
        const double dd[2] = {dir.x, dir.y};
        double tmin = 0.0, tmax = 1.0;
        bool miss = false;
        for (int a = 0; a < 2; ++a) {
          const double lo = org[a], hi = org[a] + dims[a] * vox;
          if (dd[a] == 0.0) {
            if (s[a] <= lo || s[a] >= hi) miss = true;
          } else {
            double t0 = (lo - s[a]) / dd[a], t1 = (hi - s[a]) / dd[a];
            if (t0 > t1) std::swap(t0, t1);
            tmin = std::max(tmin, t0);
            tmax = std::min(tmax, t1);
          }
        }
        if (miss || tmax <= tmin) continue;
        double t_next[2], dt[2];
        for (int a = 0; a < 2; ++a) {
          if (dd[a] == 0.0) {
            t_next[a] = 2.0;
            dt[a] = 0.0;
            continue;
          }
          dt[a] = std::abs(vox / dd[a]);
          const double pos = s[a] + tmin * dd[a];
          const double idx = (pos - org[a]) / vox;
          double next_plane;
          if (dd[a] > 0) {
            next_plane = org[a] + std::ceil(idx - 1e-12) * vox;
            if (next_plane <= pos) next_plane += vox;
          } else {
            next_plane = org[a] + std::floor(idx + 1e-12) * vox;
            if (next_plane >= pos) next_plane -= vox;
          }
          t_next[a] = (next_plane - s[a]) / dd[a];
        }
        double t = tmin;
        while (t < tmax - 1e-14) {
          double tn = std::min(tmax, std::min(t_next[0], t_next[1]));
          if (tn <= t) tn = std::min(tmax, t + 1e-14);
          const double tm = 0.5 * (t + tn);
          const int ix = static_cast<int>(std::floor((s[0] + tm * dd[0] - org[0]) / vox));
          const int iy = static_cast<int>(std::floor((s[1] + tm * dd[1] - org[1]) / vox));
          if (ix >= 0 && ix < dims[0] && iy >= 0 && iy < dims[1])
            img.at(ix, iy, 0) += val * (tn - t) * ray_len;
          for (int a = 0; a < 2; ++a)
            if (t_next[a] <= tn + 1e-15 && dt[a] > 0.0) t_next[a] += dt[a];
          t = tn;
        }
      }
    }
    return img;
  }

  // Pixel-driven weighted backprojection on the virtual (isocenter) detector.
  const double D = geom.sod_mm;
  const double tau_v = geom.det_pitch_mm * geom.sod_mm / geom.sdd_mm;
  const double dbeta = geom.step_deg * kPi / 180.0;
  const double scale = 0.5 * dbeta;  // full 2*pi scan covers each ray twice
  const int n = geom.n_detectors;

  std::vector<double> cosb(geom.n_views), sinb(geom.n_views);
  for (int v = 0; v < geom.n_views; ++v) {
    const double beta = v * geom.step_deg * kPi / 180.0;
    cosb[v] = std::cos(beta);
    sinb[v] = std::sin(beta);
  }

  for (int iy = 0; iy < out_ny; ++iy) {
    const double y = (iy - (out_ny - 1) * 0.5) * voxel_mm;
    for (int ix = 0; ix < out_nx; ++ix) {
      const double x = (ix - (out_nx - 1) * 0.5) * voxel_mm;
      double acc = 0.0;
      for (int v = 0; v < geom.n_views; ++v) {
        const double U = D - x * cosb[v] - y * sinb[v];
        if (U <= 1e-9) continue;
        const double s = D * (-x * sinb[v] + y * cosb[v]) / U;
        const double db = s / tau_v + (n - 1) * 0.5;
        const int d0 = static_cast<int>(std::floor(db));
        const double fr = db - d0;
        double g = 0.0;
        if (d0 >= 0 && d0 < n) g += (1.0 - fr) * sino.at(v, d0);
        if (d0 + 1 >= 0 && d0 + 1 < n) g += fr * sino.at(v, d0 + 1);
        acc += (D * D) / (U * U) * g;
      }
      img.at(ix, iy, 0) = scale * acc;
    }
  }
  return img;
}

Volume fbp_reconstruct(const proj::Sinogram& sino, const proj::ScanGeometry& geom,
                       int out_nx, int out_ny, double voxel_mm,
                       const FilterSpec& spec, bool use_fft) {
  if (sino.kind != proj::SinoKind::LineIntegral)
    throw std::invalid_argument("fbp_reconstruct: sinogram must hold line integrals");
  geom.validate();
  if (sino.n_views != geom.n_views || sino.n_detectors != geom.n_detectors)
    throw std::invalid_argument("fbp_reconstruct: sinogram/geometry dims mismatch");

  // Cosine pre-weighting on the virtual detector.
  const double D = geom.sod_mm;
  const double tau_v = geom.det_pitch_mm * geom.sod_mm / geom.sdd_mm;
  proj::Sinogram weighted(sino.n_views, sino.n_detectors, proj::SinoKind::LineIntegral);
  weighted.coverage_warning = sino.coverage_warning;
  for (int v = 0; v < sino.n_views; ++v) {
    for (int d = 0; d < sino.n_detectors; ++d) {
      const double s = (d - (sino.n_detectors - 1) * 0.5) * tau_v;
      weighted.at(v, d) = sino.at(v, d) * D / std::sqrt(D * D + s * s);
    }
  }
  const proj::Sinogram filtered = ramp_filter(weighted, spec, tau_v, use_fft);
  return backproject(filtered, geom, out_nx, out_ny, voxel_mm, /*weighted=*/true);
}

}  // namespace fact::recon
