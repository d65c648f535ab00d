// End-to-end acceptance gate: one pass/fail line per criterion, nonzero exit
// if any fails. Criteria may be selected by number on the command line.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fact/classifier.hpp"
#include "fact/config.hpp"
#include "fact/ddnet.hpp"
#include "fact/diagnostics.hpp"
#include "fact/graph.hpp"
#include "fact/loss.hpp"
#include "fact/metrics.hpp"
#include "fact/phantom.hpp"
#include "fact/pipeline.hpp"
#include "fact/projector.hpp"
#include "fact/recon.hpp"

using namespace fact;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

int g_failures = 0;

void report(int idx, const char* name, bool ok, const std::string& detail) {
  std::printf("%s %2d %-38s %s\n", ok ? "PASS" : "FAIL", idx, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// 1. Ray tracer vs. closed-form ellipsoid line integrals.

// Quasi-cylindrical component (huge z semi-axis) so the oracle geometry is
// effectively 2D in the slice plane.
void add_pillar(phantom::Phantom& ph, double cx, double cy, double a, double b,
                double rot, double mu) {
  phantom::EllipsoidSpec e;
  e.center = {cx, cy, 0.0};
  e.semi_axes = {a, b, 1e4};
  e.rotation_deg = rot;
  e.mu_delta = mu;
  ph.components.push_back(e);
}

// True when the ray runs nearly tangent to the component boundary in the
// slice plane. Tangent rays sweep long paths through the one-voxel
// rasterization rim, an error the voxel grid cannot represent, so sampling
// rejects them; everywhere else the discretization error stays below two
// voxel crossings.
bool grazes(const phantom::EllipsoidSpec& e, const Vec3& src, const Vec3& dst) {
  const double th = e.rotation_deg * kPi / 180.0;
  auto to_unit_circle = [&](const Vec3& p) {
    const double dx = p.x - e.center.x, dy = p.y - e.center.y;
    const double qx = std::cos(th) * dx + std::sin(th) * dy;
    const double qy = -std::sin(th) * dx + std::cos(th) * dy;
    return std::pair<double, double>{qx / e.semi_axes.x, qy / e.semi_axes.y};
  };
  const auto [x1, y1] = to_unit_circle(src);
  const auto [x2, y2] = to_unit_circle(dst);
  const double len = std::hypot(x2 - x1, y2 - y1);
  const double d = std::abs((x2 - x1) * y1 - (y2 - y1) * x1) / len;
  return d > 0.85 && d < 1.15;
}

bool criterion_projector_oracle() {
  Timer timer;
  phantom::Phantom ph;
  ph.nx = 128;
  ph.ny = 128;
  ph.nz = 8;
  ph.voxel_mm = 1.0;
  add_pillar(ph, 0, 0, 40, 30, 20, 0.020);
  add_pillar(ph, 15, 5, 12, 12, 0, 0.010);
  add_pillar(ph, -14, -9, 18, 10, -40, -0.005);
  const Volume vol = phantom::rasterize(ph);
  const double mu_max = *std::max_element(vol.values.begin(), vol.values.end());
  const double tol = 2.0 * ph.voxel_mm * mu_max;

  std::mt19937_64 rng(2025);
  std::uniform_real_distribution<double> ux(-70.0, 70.0), uz(-1.0, 1.0);
  double max_err = 0.0;
  int accepted = 0;
  while (accepted < 1000) {
    const Vec3 src{ux(rng), -200.0, uz(rng)};
    const Vec3 dst{ux(rng), 200.0, uz(rng)};
    bool bad = false;
    for (const auto& e : ph.components) bad = bad || grazes(e, src, dst);
    if (bad) continue;
    const double want = phantom::analytic_line_integral(ph, src, dst);
    const double got = proj::siddon_line_integral(vol, src, dst);
    max_err = std::max(max_err, std::abs(got - want));
    ++accepted;
  }
  const double elapsed = timer.secs();
  const bool ok = max_err <= tol && elapsed < 10.0;
  report(1, "ray tracing vs analytic ellipsoids", ok,
         fmt("max |err| %.4g (limit %.4g), 1000 rays, %.1f s (limit 10)", max_err,
             tol, elapsed));
  return ok;
}

// ---------------------------------------------------------------------------
// 2. Photon-count noise model statistics.

bool criterion_poisson_stats() {
  const double b = 1e6;
  const int n = 100000;
  proj::Sinogram s(1, n, proj::SinoKind::LineIntegral);
  std::fill(s.values.begin(), s.values.end(), 1.0);
  const proj::Sinogram counts = proj::apply_beer_poisson(s, b, 424242);

  double mean = 0.0;
  for (double v : counts.values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : counts.values) var += (v - mean) * (v - mean);
  var /= n - 1;

  const double expect = b * std::exp(-1.0);
  const double bound = 4.0 * std::sqrt(expect) / std::sqrt(static_cast<double>(n));
  const double dispersion = var / mean;
  const bool ok =
      std::abs(mean - expect) <= bound && dispersion >= 0.95 && dispersion <= 1.05;
  report(2, "photon-count mean and dispersion", ok,
         fmt("mean %.1f vs %.1f (+-%.1f), dispersion %.4f in [0.95, 1.05]", mean,
             expect, bound, dispersion));
  return ok;
}

// ---------------------------------------------------------------------------
// 3. Reconstruction fidelity at full acquisition resolution.

bool criterion_fbp_fidelity() {
  Timer timer;
  phantom::Phantom ph;
  ph.nx = 256;
  ph.ny = 256;
  ph.nz = 1;
  ph.voxel_mm = 1.0;
  add_pillar(ph, 0, 0, 92, 72, 0, 0.019);
  add_pillar(ph, -34, 6, 30, 20, 15, -0.015);
  add_pillar(ph, 34, 6, 30, 20, -15, -0.015);
  add_pillar(ph, -30, 2, 6, 6, 0, 0.008);
  add_pillar(ph, 38, 14, 5, 5, 0, 0.008);
  add_pillar(ph, 30, -6, 7, 7, 0, 0.008);
  const Volume truth = phantom::rasterize(ph);

  const proj::ScanGeometry geom;  // 1500/1000 mm, 1024 x 0.8 mm, 720 x 0.5 deg
  const proj::Sinogram sino = proj::forward_project(truth, geom, 0);
  const Volume r = recon::fbp_reconstruct(sino, geom, 256, 256, 1.0);

  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < truth.values.size(); ++i) {
    if (truth.values[i] <= 0.0) continue;  // support only
    const double d = r.values[i] - truth.values[i];
    num += d * d;
    den += truth.values[i] * truth.values[i];
  }
  const double rel_rmse = std::sqrt(num / den);
  const double elapsed = timer.secs();
  const bool ok = !sino.coverage_warning && rel_rmse < 0.05 && elapsed < 60.0;
  report(3, "filtered backprojection fidelity", ok,
         fmt("rel RMSE %.4f (limit 0.05) on support, %.1f s (limit 60)", rel_rmse,
             elapsed));
  return ok;
}

// ---------------------------------------------------------------------------
// 4. Forward projector / unweighted backprojector adjointness.

bool criterion_adjoint() {
  proj::ScanGeometry g;
  g.sdd_mm = 600.0;
  g.sod_mm = 400.0;
  g.n_detectors = 64;
  g.det_pitch_mm = 1.5;
  g.n_views = 60;
  g.step_deg = 6.0;

  std::mt19937_64 rng(4040);
  std::uniform_real_distribution<double> u(0.0, 0.04);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Volume x(32, 32, 1, 1.0);
    for (double& v : x.values) v = u(rng);
    const proj::Sinogram ax = proj::forward_project(x, g, 0);
    proj::Sinogram y(g.n_views, g.n_detectors, proj::SinoKind::LineIntegral);
    for (double& v : y.values) v = u(rng);
    const Volume by = recon::backproject(y, g, 32, 32, 1.0, false);

    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < ax.values.size(); ++i) lhs += ax.values[i] * y.values[i];
    for (size_t i = 0; i < x.values.size(); ++i) rhs += x.values[i] * by.values[i];
    worst = std::max(worst, std::abs(lhs - rhs) / std::abs(lhs));
  }
  const bool ok = worst < 1e-3;
  report(4, "projector adjoint identity", ok,
         fmt("max relative mismatch %.3g over 10 pairs (limit 1e-3)", worst));
  return ok;
}

// ---------------------------------------------------------------------------
// 5. Similarity metrics vs. a window-enumeration oracle.

Volume random_volume(int nx, int ny, int nz, uint64_t seed) {
  Volume v(nx, ny, nz, 1.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& x : v.values) x = u(rng);
  return v;
}

// Direct per-window evaluation of multi-scale structural similarity: explicit
// separable window weights, every valid window position, mean pooling between
// scales. Independent of the library implementation.
double msssim_oracle(Volume a, Volume b, const metrics::SsimParams& p, double L) {
  auto axis_weights = [&](int w, bool gauss) {
    std::vector<double> k(w, 1.0);
    if (gauss) {
      const double c = (w - 1) * 0.5;
      for (int i = 0; i < w; ++i)
        k[i] =
            std::exp(-(i - c) * (i - c) / (2.0 * p.gaussian_sigma * p.gaussian_sigma));
    }
    double s = 0.0;
    for (double v : k) s += v;
    for (double& v : k) v /= s;
    return k;
  };
  auto pool = [](const Volume& v) {
    const int nx = std::max(1, v.nx / 2), ny = std::max(1, v.ny / 2);
    const int nz = v.nz == 1 ? 1 : std::max(1, v.nz / 2);
    Volume o(nx, ny, nz, v.voxel_mm * 2);
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          double acc = 0.0;
          int cnt = 0;
          for (int dz = 0; dz < (v.nz > 1 ? 2 : 1); ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                acc += v.at(2 * x + dx, 2 * y + dy, v.nz > 1 ? 2 * z + dz : z);
                ++cnt;
              }
          o.at(x, y, z) = acc / cnt;
        }
    return o;
  };

  const double c1 = p.k1 * L * p.k1 * L;
  const double c2 = p.k2 * L * p.k2 * L;
  double result = 1.0;
  const int n_scales = static_cast<int>(p.scale_weights.size());
  for (int s = 0; s < n_scales; ++s) {
    const int w = p.window;
    const int wz = a.nz == 1 ? 1 : std::min(w, a.nz);
    const bool gauss = p.gaussian_sigma > 0.0;
    const auto kx = axis_weights(w, gauss);
    const auto kz = axis_weights(wz, gauss && wz > 1);
    double sum_lcs = 0.0, sum_cs = 0.0;
    long long n = 0;
    for (int z0 = 0; z0 + wz <= a.nz; ++z0)
      for (int y0 = 0; y0 + w <= a.ny; ++y0)
        for (int x0 = 0; x0 + w <= a.nx; ++x0) {
          double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
          for (int dz = 0; dz < wz; ++dz)
            for (int dy = 0; dy < w; ++dy)
              for (int dx = 0; dx < w; ++dx) {
                const double wt = kx[dx] * kx[dy] * kz[dz];
                const double va = a.at(x0 + dx, y0 + dy, z0 + dz);
                const double vb = b.at(x0 + dx, y0 + dy, z0 + dz);
                ma += wt * va;
                mb += wt * vb;
                saa += wt * va * va;
                sbb += wt * vb * vb;
                sab += wt * va * vb;
              }
          const double var_a = saa - ma * ma, var_b = sbb - mb * mb;
          const double cov = sab - ma * mb;
          const double cs = (2 * cov + c2) / (var_a + var_b + c2);
          sum_cs += cs;
          sum_lcs += cs * (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
          ++n;
        }
    const double term = (s == n_scales - 1) ? sum_lcs / n : sum_cs / n;
    result *= metrics::signed_pow(term, p.scale_weights[s]);
    if (s + 1 < n_scales) {
      a = pool(a);
      b = pool(b);
    }
  }
  return result;
}

bool criterion_metrics_oracle() {
  const Volume a2 = random_volume(64, 64, 1, 501);
  Volume b2 = a2;
  std::mt19937_64 rng(502);
  std::normal_distribution<double> noise(0.0, 0.08);
  for (double& v : b2.values) v += noise(rng);

  metrics::SsimParams p2;
  p2.window = 9;
  p2.scale_weights = {0.4, 0.3, 0.3};
  p2.L = 1.0;
  const bool self_ok = metrics::ssim(a2, a2, p2) == 1.0 &&
                       metrics::ms_ssim_2d(a2, a2, p2) == 1.0;
  const double d2 =
      std::abs(metrics::ms_ssim_2d(a2, b2, p2) - msssim_oracle(a2, b2, p2, 1.0));

  const Volume a3 = random_volume(32, 32, 32, 503);
  Volume b3 = a3;
  for (double& v : b3.values) v += noise(rng);
  metrics::SsimParams p3;
  p3.window = 5;
  p3.gaussian_sigma = -1.0;
  p3.scale_weights = {0.6, 0.4};
  p3.L = 1.0;
  const bool self3_ok = metrics::ms_ssim_3d(a3, a3, p3) == 1.0;
  const double d3 =
      std::abs(metrics::ms_ssim_3d(a3, b3, p3) - msssim_oracle(a3, b3, p3, 1.0));

  const bool ok = self_ok && self3_ok && d2 < 1e-10 && d3 < 1e-10;
  report(5, "similarity metric oracles", ok,
         fmt("self=1 %s, 2D oracle diff %.2g, 3D oracle diff %.2g (limit 1e-10)",
             self_ok && self3_ok ? "exact" : "VIOLATED", d2, d3));
  return ok;
}

// ---------------------------------------------------------------------------
// 6. Finite-difference gradient checks for every graph op.

nn::Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, double lo = -1.0,
                         double hi = 1.0) {
  nn::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data) v = u(rng);
  return t;
}

double max_grad_err(nn::Graph& g, nn::NodeId loss, double h = 1e-5) {
  g.forward(loss);
  g.backward(loss);
  std::vector<nn::Tensor> grads;
  for (nn::NodeId p : g.parameters()) grads.push_back(g.grad(p));
  double worst = 0.0;
  for (size_t pi = 0; pi < g.parameters().size(); ++pi) {
    nn::Tensor& val = g.param_value(g.parameters()[pi]);
    for (size_t i = 0; i < val.data.size(); ++i) {
      const double orig = val.data[i];
      val.data[i] = orig + h;
      const double fp = g.forward(loss).data[0];
      val.data[i] = orig - h;
      const double fm = g.forward(loss).data[0];
      val.data[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double got = grads[pi].data[i];
      worst = std::max(worst, std::abs(got - fd) /
                                  std::max({std::abs(fd), std::abs(got), 1e-3}));
    }
  }
  return worst;
}

bool criterion_gradients() {
  using nn::Graph;
  using nn::kNoNode;
  using nn::NodeId;
  using nn::Tensor;
  double worst_op = 0.0, worst_comp = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::mt19937_64 shape_rng(6000 + rep);
    auto ri = [&](int lo, int hi) {
      return std::uniform_int_distribution<int>(lo, hi)(shape_rng);
    };
    const uint64_t s = 7000 + 97 * rep;
    const int B = ri(1, 2), C = ri(1, 3), F = ri(1, 3), H = ri(4, 6), W = ri(4, 6);

    {  // 2D convolution with bias
      Graph g;
      NodeId x = g.parameter("x", random_tensor({B, C, H, W}, s + 1));
      NodeId w = g.parameter("w", random_tensor({F, C, 3, 3}, s + 2));
      NodeId b = g.parameter("b", random_tensor({F}, s + 3));
      NodeId y = g.conv(x, w, b, 1, 1);
      NodeId loss = g.mean_all(g.mul(y, g.constant(random_tensor({B, F, H, W}, s + 4))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // 3D convolution
      Graph g;
      const int D = ri(3, 4);
      NodeId x = g.parameter("x", random_tensor({1, C, D, H, W}, s + 5));
      NodeId w = g.parameter("w", random_tensor({F, C, 3, 3, 3}, s + 6));
      NodeId y = g.conv(x, w, kNoNode, 1, 1);
      NodeId loss =
          g.mean_all(g.mul(y, g.constant(random_tensor({1, F, D, H, W}, s + 7))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // transposed convolution with a size reference and bias
      Graph g;
      const int n = 2 * H;
      NodeId ref = g.constant(Tensor({1, 1, static_cast<int64_t>(n),
                                      static_cast<int64_t>(n)}, 0.0));
      NodeId x = g.parameter("x", random_tensor({1, C, H, H}, s + 8));
      NodeId w = g.parameter("w", random_tensor({C, 1, 5, 5}, s + 9));
      NodeId b = g.parameter("b", random_tensor({1}, s + 10));
      NodeId y = g.deconv(x, w, b, 2, 2, ref);
      NodeId loss = g.mean_all(g.mul(
          y, g.constant(random_tensor({1, 1, static_cast<int64_t>(n),
                                       static_cast<int64_t>(n)}, s + 11))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // batch normalization in training mode
      Graph g;
      NodeId x = g.parameter("x", random_tensor({3, C, H, W}, s + 12, -2.0, 2.0));
      NodeId y = g.batch_norm(
          "bn", x,
          g.parameter("gamma", random_tensor({C}, s + 13, 0.5, 1.5)),
          g.parameter("beta", random_tensor({C}, s + 14)));
      NodeId loss =
          g.mean_all(g.mul(y, g.constant(random_tensor({3, C, H, W}, s + 15))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // relu away from the kink, then sigmoid
      Graph g;
      Tensor xt = random_tensor({B, C, H, W}, s + 16);
      for (double& v : xt.data) v += (v >= 0 ? 0.3 : -0.3);
      NodeId y = g.sigmoid(g.relu(g.parameter("x", xt)));
      NodeId loss =
          g.mean_all(g.mul(y, g.constant(random_tensor({B, C, H, W}, s + 17))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // max pool
      Graph g;
      NodeId y = g.max_pool(g.parameter("x", random_tensor({B, C, 7, 7}, s + 18)), 3,
                            2, 1);
      NodeId loss =
          g.mean_all(g.mul(y, g.constant(random_tensor({B, C, 4, 4}, s + 19))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // mean pool
      Graph g;
      NodeId y = g.mean_pool2(g.parameter("x", random_tensor({B, C, 6, 6}, s + 20)));
      NodeId loss =
          g.mean_all(g.mul(y, g.constant(random_tensor({B, C, 3, 3}, s + 21))));
      worst_op = std::max(worst_op, max_grad_err(g, loss));
    }
    {  // concat plus elementwise arithmetic
      Graph g;
      NodeId a = g.parameter("a", random_tensor({1, C, 3, 3}, s + 22, 0.5, 1.5));
      NodeId b = g.parameter("b", random_tensor({1, 2, 3, 3}, s + 23, 0.5, 1.5));
      NodeId cat = g.concat({a, b});
      NodeId c = g.parameter(
          "c", random_tensor({1, static_cast<int64_t>(C + 2), 3, 3}, s + 24, 0.5, 1.5));
      NodeId expr = g.div(g.mul(g.add(cat, c), g.sub(cat, c)), g.affine(c, 1.0, 2.0));
      worst_op = std::max(worst_op, max_grad_err(g, g.mean_all(expr)));
    }
    {  // signed power on positive inputs
      Graph g;
      NodeId y = g.spow(g.parameter("x", random_tensor({1, 6}, s + 25, 0.5, 2.0)), 0.3);
      worst_op = std::max(worst_op, max_grad_err(g, g.mean_all(y)));
    }
    {  // global average pool, linear head, binary cross-entropy
      Graph g;
      NodeId x = g.parameter("x", random_tensor({2, C, 4, 4}, s + 26));
      NodeId w = g.parameter("w", random_tensor({C, 1}, s + 27));
      NodeId b = g.parameter("b", random_tensor({1}, s + 28));
      NodeId z = g.linear(g.global_avg_pool(x), w, b);
      NodeId t = g.constant(random_tensor({2, 1}, s + 29, 0.0, 1.0));
      worst_op = std::max(worst_op, max_grad_err(g, g.bce_with_logits(z, t)));
    }
    {  // full composite training loss
      metrics::SsimParams p;
      p.window = 5;
      p.gaussian_sigma = -1.0;
      p.scale_weights = {0.6, 0.4};
      p.L = 1.0;
      Graph g;
      const int n = 12 + 2 * (rep % 3);
      const Tensor t = random_tensor({1, 1, n, n}, s + 30, 0.1, 0.9);
      Tensor pred = t;
      std::mt19937_64 rng(s + 31);
      std::uniform_real_distribution<double> u(-0.05, 0.05);
      for (double& v : pred.data) v += u(rng);
      NodeId loss = nn::composite_loss_node(g, g.constant(t), g.parameter("fx", pred),
                                            0.1, p, 2);
      worst_comp = std::max(worst_comp, max_grad_err(g, loss));
    }
  }
  const bool ok = worst_op <= 1e-4 && worst_comp <= 1e-3;
  report(6, "finite-difference gradient checks", ok,
         fmt("20 reps: op max err %.3g (limit 1e-4), composite %.3g (limit 1e-3)",
             worst_op, worst_comp));
  return ok;
}

// ---------------------------------------------------------------------------
// 7. Enhancement network architecture facts.

bool criterion_architecture() {
  const enh::DDNetConfig c2 = enh::DDNetConfig::paper_faithful(2);
  const enh::DDNetConfig c3 = enh::DDNetConfig::paper_faithful(3);
  const bool constants_ok = c2.n_dense_blocks == 4 && c2.n_deconv_layers == 8 &&
                            c3.n_dense_blocks == 4 && c3.n_deconv_layers == 8;
  enh::EnhancerNet n2 = build_ddnet(c2);
  enh::EnhancerNet n3 = build_ddnet(c3);
  const double ratio = static_cast<double>(n3.parameter_count()) /
                       static_cast<double>(n2.parameter_count());
  const bool ok = constants_ok && ratio >= 4.0 && ratio <= 6.0;
  report(7, "network architecture constants", ok,
         fmt("4 blocks + 8 deconvs %s; 3D/2D params %.2fx (limits [4, 6])",
             constants_ok ? "pinned" : "VIOLATED", ratio));
  return ok;
}

// ---------------------------------------------------------------------------
// 8. Enhancement efficacy after bounded training.

bool criterion_enhancement_efficacy() {
  Timer timer;
  cfg::RunConfig rc = cfg::RunConfig::desk_default();
  rc.low_photons = 1e4;
  const uint64_t seed = 77;

  std::vector<std::pair<Volume, Volume>> train, test;
  for (int i = 0; i < 60; ++i) {
    const Volume mu = phantom::rasterize(phantom::make_lung_phantom(
        hash_combine(seed, i), i % 2 == 0, 64, 64, 4, 1.0, {}));
    const pipe::ScanPair sp =
        pipe::simulate_scan(mu, rc, hash_combine(seed, 1000 + i));
    for (int z = 0; z < 4; ++z) {
      Volume l(64, 64, 1, 1.0), h(64, 64, 1, 1.0);
      std::copy_n(sp.low.values.data() + sp.low.index(0, 0, z), 64 * 64,
                  l.values.data());
      std::copy_n(sp.high.values.data() + sp.high.index(0, 0, z), 64 * 64,
                  h.values.data());
      (i < 50 ? train : test).emplace_back(std::move(l), std::move(h));
    }
  }

  enh::DDNetConfig c = enh::DDNetConfig::desk_2d();
  c.input_scale = 2.0 * kWaterMu;
  enh::TrainHyper h;
  h.lr = 1e-3;
  h.batch = 4;
  h.epochs = 20;
  h.seed = seed;
  const Timer train_timer;
  const enh::TrainResult r = enh::train_enhancer(train, {}, c, h);
  const double train_secs = train_timer.secs();

  enh::EnhancerNet net = r.model.instantiate();
  metrics::SsimParams p;
  p.window = 9;
  p.scale_weights = {0.4, 0.3, 0.3};
  int better_ms = 0, better_mse = 0;
  double mean_low = 0.0, mean_enh = 0.0;
  for (const auto& [low, high] : test) {
    const auto [lo, hi] =
        std::minmax_element(high.values.begin(), high.values.end());
    p.L = *hi - *lo > 0 ? *hi - *lo : 1.0;
    const Volume e = enh::enhance_2d(net, low);
    const double ms_l = metrics::ms_ssim_2d(low, high, p);
    const double ms_e = metrics::ms_ssim_2d(e, high, p);
    mean_low += ms_l;
    mean_enh += ms_e;
    if (ms_e > ms_l) ++better_ms;
    if (metrics::mse(e, high) < metrics::mse(low, high)) ++better_mse;
  }
  const int n = static_cast<int>(test.size());
  mean_low /= n;
  mean_enh /= n;
  const bool ok = !r.aborted_on_nan && train_secs < 1800.0 && mean_enh > mean_low &&
                  better_ms >= (9 * n + 9) / 10 && better_mse >= (9 * n + 9) / 10;
  report(8, "enhancement efficacy", ok,
         fmt("mean similarity %.4f -> %.4f; better on %d/%d (similarity), %d/%d "
             "(MSE); train %.0f s (limit 1800); total %.0f s",
             mean_low, mean_enh, better_ms, n, better_mse, n, train_secs,
             timer.secs()));
  return ok;
}

// ---------------------------------------------------------------------------
// 9. Cross-plane advantage of volumetric enhancement.

enh::DDNetConfig small_enhancer(int dims) {
  enh::DDNetConfig c;
  c.dims = dims;
  c.layers_per_block = 1;
  c.growth_rate = 4;
  c.stem_channels = 8;
  c.kernel = 3;
  c.loss_window = 5;
  c.loss_sigma = -1.0;
  c.loss_scale_weights = {0.6, 0.4};
  c.input_scale = 2.0 * kWaterMu;
  return c;
}

Volume yz_plane(const Volume& v, int x) {
  Volume img(v.ny, v.nz, 1, v.voxel_mm);
  for (int z = 0; z < v.nz; ++z)
    for (int y = 0; y < v.ny; ++y) img.at(y, z, 0) = v.at(x, y, z);
  return img;
}

double yz_msssim(const Volume& a, const Volume& ref) {
  metrics::SsimParams p;
  p.window = 5;
  p.gaussian_sigma = -1.0;
  p.scale_weights = {0.6, 0.4};
  double acc = 0.0;
  int n = 0;
  for (int x = 4; x < a.nx; x += 4) {
    const Volume pa = yz_plane(a, x), pr = yz_plane(ref, x);
    const auto [lo, hi] = std::minmax_element(pr.values.begin(), pr.values.end());
    p.L = *hi - *lo > 0 ? *hi - *lo : 1.0;
    acc += metrics::ms_ssim_2d(pa, pr, p);
    ++n;
  }
  return acc / n;
}

bool criterion_3d_advantage() {
  Timer timer;
  cfg::RunConfig rc = cfg::RunConfig::desk_default();
  rc.nx = rc.ny = 32;
  rc.nz = 16;
  rc.low_photons = 5e3;

  int wins = 0;
  std::string per_seed;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<std::pair<Volume, Volume>> vol_pairs, slice_pairs, tests;
    for (int i = 0; i < 6; ++i) {
      const Volume mu = phantom::rasterize(phantom::make_lung_phantom(
          hash_combine(seed, i), i % 2 == 0, 32, 32, 16, 1.0, {}));
      const pipe::ScanPair sp =
          pipe::simulate_scan(mu, rc, hash_combine(seed, 100 + i));
      if (i < 4) {
        vol_pairs.emplace_back(sp.low, sp.high);
        for (int z = 0; z < 16; ++z) {
          Volume l(32, 32, 1, 1.0), h(32, 32, 1, 1.0);
          std::copy_n(sp.low.values.data() + sp.low.index(0, 0, z), 32 * 32,
                      l.values.data());
          std::copy_n(sp.high.values.data() + sp.high.index(0, 0, z), 32 * 32,
                      h.values.data());
          slice_pairs.emplace_back(std::move(l), std::move(h));
        }
      } else {
        tests.emplace_back(sp.low, sp.high);
      }
    }
    // Equal budgets: both arms see the same slices the same number of times.
    enh::TrainHyper h3;
    h3.lr = 1e-3;
    h3.batch = 2;
    h3.epochs = 60;
    h3.seed = seed;
    const enh::TrainResult r3 =
        enh::train_enhancer(vol_pairs, {}, small_enhancer(3), h3);
    enh::TrainHyper h2 = h3;
    h2.batch = 8;
    const enh::TrainResult r2 =
        enh::train_enhancer(slice_pairs, {}, small_enhancer(2), h2);

    enh::EnhancerNet n3 = r3.model.instantiate();
    enh::EnhancerNet n2 = r2.model.instantiate();
    double gain3 = 0.0, gain2 = 0.0;
    for (const auto& [low, high] : tests) {
      const double base = yz_msssim(low, high);
      gain3 += yz_msssim(enh::enhance_volume(n3, low), high) - base;
      gain2 += yz_msssim(enh::enhance_volume(n2, low), high) - base;
    }
    if (gain3 > gain2) ++wins;
    per_seed += fmt("%s%+.4f/%+.4f", per_seed.empty() ? "" : " ",
                    gain3 / tests.size(), gain2 / tests.size());
  }
  const bool ok = wins >= 3;
  report(9, "volumetric cross-plane advantage", ok,
         fmt("3D beats 2D on %d/5 seeds (need majority); gains 3D/2D: %s; %.0f s",
             wins, per_seed.c_str(), timer.secs()));
  return ok;
}

// ---------------------------------------------------------------------------
// 10. Tiled inference equivalence.

bool criterion_tiling() {
  enh::DDNetConfig c = small_enhancer(2);
  c.growth_rate = 2;
  c.stem_channels = 4;
  c.pool_kernel = 1;  // identity pooling keeps the receptive field at radius
  c.pool_stride = 1;  // 13, below the 16-pixel tile padding
  enh::EnhancerNet net = build_ddnet(c);

  Volume vol(32, 32, 2, 1.0);
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (double& v : vol.values) v = u(rng);

  const Volume whole = enh::enhance_volume(net, vol);
  enh::TilingPlan plan;
  plan.tile_xy = 16;
  plan.pad_px = 16;
  const Volume tiled = enh::enhance_volume_tiled(net, vol, plan);

  double max_diff = 0.0;
  for (size_t i = 0; i < whole.values.size(); ++i)
    max_diff = std::max(max_diff, std::abs(tiled.values[i] - whole.values[i]));
  const bool ok = max_diff < 1e-5;
  report(10, "tiled inference equivalence", ok,
         fmt("max |tiled - untiled| %.3g (limit 1e-5)", max_diff));
  return ok;
}

// ---------------------------------------------------------------------------
// 11. Classifier diagnostics vs. independent oracles.

double mann_whitney(const std::vector<diag::ScoredCase>& cases) {
  double credit = 0.0;
  long long pairs = 0;
  for (const auto& p : cases) {
    if (!p.label) continue;
    for (const auto& n : cases) {
      if (n.label) continue;
      ++pairs;
      if (p.score > n.score) credit += 1.0;
      else if (p.score == n.score) credit += 0.5;
    }
  }
  return credit / static_cast<double>(pairs);
}

double best_accuracy_exhaustive(const std::vector<diag::ScoredCase>& cases) {
  double best = 0.0;
  std::vector<double> probes{0.0};
  for (const auto& c : cases) {
    probes.push_back(c.score);
    probes.push_back(c.score + 1e-9);
    probes.push_back(c.score + 10.0);
  }
  for (double t : probes)
    best = std::max(best, diag::accuracy(diag::confusion_at(cases, t)).value);
  return best;
}

std::vector<diag::ScoredCase> random_cases(std::mt19937_64& rng, bool quantized) {
  std::uniform_int_distribution<int> size(5, 30);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution lbl(0.5);
  const int n = size(rng);
  std::vector<diag::ScoredCase> cases;
  for (int i = 0; i < n; ++i) {
    double s = u(rng);
    if (quantized) s = std::floor(s * 10.0) / 10.0;
    const int label = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(lbl(rng));
    cases.push_back({"c" + std::to_string(i), s, label});
  }
  return cases;
}

bool criterion_diagnostics() {
  std::mt19937_64 rng(1111);
  double worst_auc = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto cases = random_cases(rng, rep % 2 == 0);
    worst_auc = std::max(worst_auc, std::abs(diag::auc(cases) - mann_whitney(cases)));
  }
  double worst_thr = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto cases = random_cases(rng, rep % 2 == 0);
    const diag::ThresholdResult best = diag::optimal_threshold(cases);
    worst_thr = std::max(
        worst_thr, std::abs(best.accuracy - best_accuracy_exhaustive(cases)));
    worst_thr = std::max(
        worst_thr,
        std::abs(diag::accuracy(diag::confusion_at(cases, best.threshold)).value -
                 best.accuracy));
  }
  const bool ok = worst_auc < 1e-12 && worst_thr < 1e-12;
  report(11, "ranking statistics oracles", ok,
         fmt("AUC vs pair statistic diff %.2g (100 sets), threshold scan diff %.2g "
             "(50 sets), limits 1e-12",
             worst_auc, worst_thr));
  return ok;
}

// ---------------------------------------------------------------------------
// 12. End-to-end directional improvement.

bool criterion_end_to_end() {
  namespace fs = std::filesystem;
  Timer timer;
  bool ok = true;
  std::string detail;
  for (uint64_t seed : {301ULL, 302ULL, 303ULL}) {
    cfg::RunConfig c = cfg::RunConfig::desk_default();
    c.seed = seed;
    c.out_dir = "acceptance_e2e_" + std::to_string(seed);
    fs::remove_all(c.out_dir);
    const pipe::ExperimentResult r = pipe::run_experiment(c);
    const bool seed_ok = r.report.enhanced.auc >= r.report.original.auc &&
                         r.report.enhanced.accuracy >= r.report.original.accuracy;
    ok = ok && seed_ok;
    detail += fmt("%sseed %llu: AUC %.3f>=%.3f acc %.3f>=%.3f %s",
                  detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed),
                  r.report.enhanced.auc, r.report.original.auc,
                  r.report.enhanced.accuracy, r.report.original.accuracy,
                  seed_ok ? "ok" : "VIOLATED");
    fs::remove_all(c.out_dir);
  }
  const double elapsed = timer.secs();
  ok = ok && elapsed < 7200.0;
  report(12, "end-to-end directional improvement", ok,
         detail + fmt("; %.0f s (limit 7200)", elapsed));
  return ok;
}

// ---------------------------------------------------------------------------
// 13. Bitwise reproducibility of manifests and checkpoints.

bool criterion_determinism() {
  namespace fs = std::filesystem;
  auto make_config = [](const std::string& dir) {
    cfg::RunConfig c = cfg::RunConfig::desk_default();
    c.seed = 99;
    c.out_dir = dir;
    c.scans_train = 2;
    c.scans_val = 1;
    c.scans_test = 2;
    c.nx = c.ny = 32;
    c.nz = 2;
    c.geometry.n_detectors = 96;
    c.geometry.n_views = 60;
    c.geometry.step_deg = 6.0;
    c.enhancer.layers_per_block = 1;
    c.enhancer.growth_rate = 2;
    c.enhancer.stem_channels = 4;
    c.enhancer.loss_window = 5;
    c.enhancer.loss_sigma = -1.0;
    c.enhancer.loss_scale_weights = {0.6, 0.4};
    c.enhancer_train.epochs = 1;
    c.enhancer_train.batch = 2;
    c.classifier.input_size = 16;
    c.classifier_train.epochs = 2;
    c.classifier_train.batch = 3;
    return c;
  };
  const std::string d1 = "acceptance_rep1", d2 = "acceptance_rep2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  const pipe::ExperimentResult a = pipe::run_experiment(make_config(d1));
  const pipe::ExperimentResult b = pipe::run_experiment(make_config(d2));
  const bool manifests_ok = a.manifest_json == b.manifest_json;
  const bool ckpts_ok =
      slurp(d1 + "/enhancer.ckpt") == slurp(d2 + "/enhancer.ckpt") &&
      slurp(d1 + "/classifier.ckpt") == slurp(d2 + "/classifier.ckpt");
  fs::remove_all(d1);
  fs::remove_all(d2);
  const bool ok = manifests_ok && ckpts_ok;
  report(13, "bitwise reproducibility", ok,
         fmt("manifests %s, checkpoints %s", manifests_ok ? "identical" : "DIFFER",
             ckpts_ok ? "identical" : "DIFFER"));
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto want = [&](int idx) { return selected.empty() || selected.count(idx) > 0; };

  struct Entry {
    int idx;
    const char* name;
    bool (*fn)();
  };
  const std::vector<Entry> criteria = {
      {1, "ray tracing vs analytic ellipsoids", criterion_projector_oracle},
      {2, "photon-count mean and dispersion", criterion_poisson_stats},
      {3, "filtered backprojection fidelity", criterion_fbp_fidelity},
      {4, "projector adjoint identity", criterion_adjoint},
      {5, "similarity metric oracles", criterion_metrics_oracle},
      {6, "finite-difference gradient checks", criterion_gradients},
      {7, "network architecture constants", criterion_architecture},
      {8, "enhancement efficacy", criterion_enhancement_efficacy},
      {9, "volumetric cross-plane advantage", criterion_3d_advantage},
      {10, "tiled inference equivalence", criterion_tiling},
      {11, "ranking statistics oracles", criterion_diagnostics},
      {12, "end-to-end directional improvement", criterion_end_to_end},
      {13, "bitwise reproducibility", criterion_determinism},
  };
  for (const Entry& e : criteria) {
    if (!want(e.idx)) continue;
    try {
      e.fn();
    } catch (const std::exception& ex) {
      report(e.idx, e.name, false, std::string("exception: ") + ex.what());
    }
  }
  if (g_failures > 0) std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
