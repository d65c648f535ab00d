#include "fact/loss.hpp"

#include <cmath>

namespace fact::nn {

namespace {

std::vector<double> axis_weights(int w, double sigma) {
  std::vector<double> k(w, 1.0 / w);
  if (sigma > 0.0) {
    const double c = (w - 1) * 0.5;
    double sum = 0.0;
    for (int i = 0; i < w; ++i) {
      k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
  }
  return k;
}

Tensor window_kernel(const metrics::SsimParams& p, int spatial_dims) {
  const auto k1d = axis_weights(p.window, p.gaussian_sigma);
  const int w = p.window;
  if (spatial_dims == 2) {
    Tensor t({1, 1, w, w});
    for (int y = 0; y < w; ++y)
      for (int x = 0; x < w; ++x) t.data[y * w + x] = k1d[y] * k1d[x];
    return t;
  }
  Tensor t({1, 1, w, w, w});
  for (int z = 0; z < w; ++z)
    for (int y = 0; y < w; ++y)
      for (int x = 0; x < w; ++x)
        t.data[(z * w + y) * w + x] = k1d[z] * k1d[y] * k1d[x];
  return t;
}

}  // namespace

NodeId ms_ssim_node(Graph& g, NodeId x, NodeId y, const metrics::SsimParams& params,
                    int spatial_dims) {
  params.validate();
  if (params.L <= 0.0)
    throw std::invalid_argument("ms_ssim_node: loss-facing MS-SSIM needs fixed L > 0");
  if (spatial_dims != 2 && spatial_dims != 3)
    throw std::invalid_argument("ms_ssim_node: spatial_dims must be 2 or 3");

  const double c1 = params.k1 * params.L * params.k1 * params.L;
  const double c2 = params.k2 * params.L * params.k2 * params.L;
  const NodeId win = g.constant(window_kernel(params, spatial_dims));
  const int n_scales = params.n_scales();

  NodeId cx = x, cy = y;
  NodeId result = kNoNode;
  for (int s = 0; s < n_scales; ++s) {
    const NodeId mu_x = g.conv(cx, win, kNoNode, 1, 0);
    const NodeId mu_y = g.conv(cy, win, kNoNode, 1, 0);
    const NodeId sxx = g.conv(g.mul(cx, cx), win, kNoNode, 1, 0);
    const NodeId syy = g.conv(g.mul(cy, cy), win, kNoNode, 1, 0);
    const NodeId sxy = g.conv(g.mul(cx, cy), win, kNoNode, 1, 0);
    const NodeId va = g.sub(sxx, g.mul(mu_x, mu_x));
    const NodeId vb = g.sub(syy, g.mul(mu_y, mu_y));
    const NodeId cov = g.sub(sxy, g.mul(mu_x, mu_y));
    const NodeId cs =
        g.div(g.affine(cov, 2.0, c2), g.affine(g.add(va, vb), 1.0, c2));

    NodeId term;
    if (s == n_scales - 1) {
      const NodeId lum = g.div(g.affine(g.mul(mu_x, mu_y), 2.0, c1),
                               g.affine(g.add(g.mul(mu_x, mu_x), g.mul(mu_y, mu_y)),
                                        1.0, c1));
      term = g.mean_all(g.mul(lum, cs));
    } else {
      term = g.mean_all(cs);
    }
    const NodeId powed = g.spow(term, params.scale_weights[s]);
    result = result == kNoNode ? powed : g.mul(result, powed);
    if (s + 1 < n_scales) {
      cx = g.mean_pool2(cx);
      cy = g.mean_pool2(cy);
    }
  }
  return result;
}

NodeId composite_loss_node(Graph& g, NodeId target, NodeId pred, double lambda,
                           const metrics::SsimParams& params, int spatial_dims,
                           NodeId* mse_term, NodeId* msssim_term) {
  const NodeId diff = g.sub(target, pred);
  const NodeId mse = g.mean_all(g.mul(diff, diff));
  if (mse_term) *mse_term = mse;
  if (lambda == 0.0) {
    if (msssim_term) *msssim_term = kNoNode;
    return mse;
  }
  const NodeId ms = ms_ssim_node(g, target, pred, params, spatial_dims);
  if (msssim_term) *msssim_term = ms;
  // lambda * (1 - ms) == -lambda * ms + lambda
  return g.add(mse, g.affine(ms, -lambda, lambda));
}

}  // namespace fact::nn
