#include "fact/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace fact::metrics {

void SsimParams::validate() const {
  if (k1 <= 0 || k2 <= 0) throw std::invalid_argument("SsimParams: k1, k2 must be > 0");
  if (window < 1) throw std::invalid_argument("SsimParams: window must be >= 1");
  if (scale_weights.empty())
    throw std::invalid_argument("SsimParams: scale_weights must be non-empty");
  double sum = 0.0;
  for (double w : scale_weights) sum += w;
  // The canonical five-scale weights sum to 1.0001, so allow a loose margin.
  if (std::abs(sum - 1.0) > 1e-3)
    throw std::invalid_argument("SsimParams: scale_weights must sum to 1");
}

double mse(const Volume& a, const Volume& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("mse: dim mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.values.size());
}

double signed_pow(double x, double p) {
  return std::copysign(std::pow(std::abs(x), p), x);
}

namespace {

std::vector<double> window_weights(int w, double sigma) {
  std::vector<double> k(w);
  if (sigma <= 0.0) {
    std::fill(k.begin(), k.end(), 1.0 / w);
    return k;
  }
  const double c = (w - 1) * 0.5;
  double sum = 0.0;
  for (int i = 0; i < w; ++i) {
    k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode weighted sum along one axis; dims shrink by w-1 on that axis.
struct Grid {
  int nx, ny, nz;
  std::vector<double> v;
  double& at(int x, int y, int z) {
    return v[(static_cast<size_t>(z) * ny + y) * nx + x];
  }
  double at(int x, int y, int z) const {
    return v[(static_cast<size_t>(z) * ny + y) * nx + x];
  }
};

Grid conv_axis(const Grid& in, const std::vector<double>& k, int axis) {
  const int w = static_cast<int>(k.size());
  Grid out;
  out.nx = axis == 0 ? in.nx - w + 1 : in.nx;
  out.ny = axis == 1 ? in.ny - w + 1 : in.ny;
  out.nz = axis == 2 ? in.nz - w + 1 : in.nz;
  out.v.assign(static_cast<size_t>(out.nx) * out.ny * out.nz, 0.0);
  for (int z = 0; z < out.nz; ++z)
    for (int y = 0; y < out.ny; ++y)
      for (int x = 0; x < out.nx; ++x) {
        double acc = 0.0;
        for (int i = 0; i < w; ++i)
          acc += k[i] * in.at(x + (axis == 0 ? i : 0), y + (axis == 1 ? i : 0),
                              z + (axis == 2 ? i : 0));
        out.at(x, y, z) = acc;
      }
  return out;
}

Grid windowed_mean(const Grid& in, const std::vector<double>& kx,
                   const std::vector<double>& ky, const std::vector<double>& kz) {
  return conv_axis(conv_axis(conv_axis(in, kx, 0), ky, 1), kz, 2);
}

Grid from_volume(const Volume& v) {
  return Grid{v.nx, v.ny, v.nz, v.values};
}

Grid elem_mul(const Grid& a, const Grid& b) {
  Grid out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

}  // namespace

SsimTerms ssim_terms(const Volume& a, const Volume& b, const SsimParams& params,
                     double dynamic_range) {
  params.validate();
  if (!a.same_dims(b)) throw std::invalid_argument("ssim: dim mismatch");
  const int w = params.window;
  const int wz = a.nz == 1 ? 1 : std::min(w, a.nz);
  if (a.nx < w || a.ny < w || a.nz < wz)
    throw std::invalid_argument("ssim: window larger than image");

  const double L = dynamic_range;
  const double c1 = params.k1 * L * params.k1 * L;
  const double c2 = params.k2 * L * params.k2 * L;

  const auto kx = window_weights(w, params.gaussian_sigma);
  const auto ky = kx;
  const auto kz = window_weights(wz, params.gaussian_sigma > 0 && wz > 1
                                         ? params.gaussian_sigma
                                         : -1.0);

  const Grid ga = from_volume(a), gb = from_volume(b);
  const Grid mu_a = windowed_mean(ga, kx, ky, kz);
  const Grid mu_b = windowed_mean(gb, kx, ky, kz);
  const Grid s_aa = windowed_mean(elem_mul(ga, ga), kx, ky, kz);
  const Grid s_bb = windowed_mean(elem_mul(gb, gb), kx, ky, kz);
  const Grid s_ab = windowed_mean(elem_mul(ga, gb), kx, ky, kz);

  double sum_lcs = 0.0, sum_cs = 0.0;
  const size_t n = mu_a.v.size();
  for (size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = s_aa.v[i] - ma * ma;
    const double vb = s_bb.v[i] - mb * mb;
    const double cov = s_ab.v[i] - ma * mb;
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    const double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    sum_cs += cs;
    sum_lcs += l * cs;
  }
  return {sum_lcs / static_cast<double>(n), sum_cs / static_cast<double>(n)};
}

namespace {

double dynamic_range_of(const Volume& ref, const SsimParams& params) {
  if (params.L > 0.0) return params.L;
  const auto [lo, hi] = std::minmax_element(ref.values.begin(), ref.values.end());
  const double r = *hi - *lo;
  return r > 0.0 ? r : 1.0;
}

}  // namespace

double ssim(const Volume& a, const Volume& b, const SsimParams& params) {
  return ssim_terms(a, b, params, dynamic_range_of(a, params)).mean_lcs;
}

Volume downsample2(const Volume& v) {
  const int nx = std::max(1, v.nx / 2);
  const int ny = std::max(1, v.ny / 2);
  const int nz = v.nz == 1 ? 1 : std::max(1, v.nz / 2);
  const bool pool_z = v.nz > 1;
  Volume out(nx, ny, nz, v.voxel_mm * 2.0);
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dz = 0; dz < (pool_z ? 2 : 1); ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              acc += v.at(2 * x + dx, 2 * y + dy, pool_z ? 2 * z + dz : z);
              ++cnt;
            }
        out.at(x, y, z) = acc / cnt;
      }
  return out;
}

namespace {

double ms_ssim_impl(const Volume& a, const Volume& b, const SsimParams& params) {
  params.validate();
  if (!a.same_dims(b)) throw std::invalid_argument("ms_ssim: dim mismatch");
  const double L = dynamic_range_of(a, params);
  const int n_scales = params.n_scales();

  Volume ca = a, cb = b;
  double result = 1.0;
  for (int s = 0; s < n_scales; ++s) {
    const int wz = ca.nz == 1 ? 1 : std::min(params.window, ca.nz);
    if (ca.nx < params.window || ca.ny < params.window || ca.nz < wz)
      throw std::invalid_argument("ms_ssim: too few scales possible for the size");
    const SsimTerms t = ssim_terms(ca, cb, params, L);
    const double term = (s == n_scales - 1) ? t.mean_lcs : t.mean_cs;
    result *= signed_pow(term, params.scale_weights[s]);
    if (s + 1 < n_scales) {
      ca = downsample2(ca);
      cb = downsample2(cb);
    }
  }
  return result;
}

}  // namespace

double ms_ssim_2d(const Volume& a, const Volume& b, const SsimParams& params) {
  if (a.nz != 1) throw std::invalid_argument("ms_ssim_2d: expects depth-1 volumes");
  return ms_ssim_impl(a, b, params);
}

double ms_ssim_3d(const Volume& a, const Volume& b, const SsimParams& params) {
  return ms_ssim_impl(a, b, params);
}

double ms_ssim(const Volume& a, const Volume& b, const SsimParams& params) {
  return ms_ssim_impl(a, b, params);
}

}  // namespace fact::metrics
