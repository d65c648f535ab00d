#include "fact/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fact::nn {

void adam_step(Tensor& param, const Tensor& grad, AdamParamState& slot,
               const AdamHyper& hyper, long long t) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adam_step: param/grad shape mismatch");
  if (slot.m.empty()) {
    slot.m.assign(param.data.size(), 0.0);
    slot.v.assign(param.data.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    slot.m[i] = hyper.beta1 * slot.m[i] + (1.0 - hyper.beta1) * g;
    slot.v[i] = hyper.beta2 * slot.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = slot.m[i] / bc1;
    const double vhat = slot.v[i] / bc2;
    param.data[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

Adam::Adam(Graph& graph, AdamHyper hyper) : graph_(graph) {
  state_.hyper = hyper;
  state_.slots.resize(graph.parameters().size());
}

void Adam::step() {
  const auto& params = graph_.parameters();
  ++state_.t;

  double clip_scale = 1.0;
  if (state_.hyper.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (NodeId p : params)
      for (double g : graph_.grad(p).data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > state_.hyper.grad_clip_norm)
      clip_scale = state_.hyper.grad_clip_norm / norm;
  }

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor grad = graph_.grad(params[i]);
    if (clip_scale != 1.0)
      for (double& g : grad.data) g *= clip_scale;
    adam_step(graph_.param_value(params[i]), grad, state_.slots[i], state_.hyper,
              state_.t);
  }
}

}  // namespace fact::nn
