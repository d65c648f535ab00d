#pragma once

#include <vector>

#include "fact/graph.hpp"
#include "fact/tensor.hpp"

namespace fact::nn {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip_norm = 0.0;  // <= 0 disables global-norm clipping
};

// Per-parameter first/second moment state.
struct AdamParamState {
  std::vector<double> m, v;
};

struct AdamState {
  AdamHyper hyper;
  long long t = 0;
  std::vector<AdamParamState> slots;
};

// One bias-corrected ADAM update of a single tensor.
void adam_step(Tensor& param, const Tensor& grad, AdamParamState& slot,
               const AdamHyper& hyper, long long t);

// Optimizer over all parameters of a graph.
class Adam {
 public:
  Adam(Graph& graph, AdamHyper hyper);
  // Applies one update from the gradients of the last backward pass.
  void step();
  long long iterations() const { return state_.t; }
  AdamState& state() { return state_; }

 private:
  Graph& graph_;
  AdamState state_;
};

}  // namespace fact::nn
