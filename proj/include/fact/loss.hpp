#pragma once

#include "fact/graph.hpp"
#include "fact/metrics.hpp"

namespace fact::nn {

// Differentiable MS-SSIM between two (B,1,spatial...) nodes, built from
// primitive graph ops so reverse-mode gradients exist everywhere. params.L
// must be fixed (> 0) here; windows are Gaussian (sigma > 0) or uniform.
// spatial_dims selects the 2D or 3D variant.
NodeId ms_ssim_node(Graph& g, NodeId x, NodeId y, const metrics::SsimParams& params,
                    int spatial_dims);

// Composite training loss: mean squared error plus lambda * (1 - MS-SSIM).
NodeId composite_loss_node(Graph& g, NodeId target, NodeId pred, double lambda,
                           const metrics::SsimParams& params, int spatial_dims,
                           NodeId* mse_term = nullptr, NodeId* msssim_term = nullptr);

}  // namespace fact::nn
