#pragma once

#include <map>
#include <string>
#include <vector>

#include "fact/tensor.hpp"

namespace fact::nn {

using NodeId = int;
constexpr NodeId kNoNode = -1;

enum class OpKind {
  Input,
  Param,
  Const,
  Conv,
  Deconv,
  BatchNorm,
  Relu,
  Sigmoid,
  MaxPool,
  MeanPool2,
  Concat,
  Add,
  Sub,
  Mul,
  Div,
  Affine,
  SPow,
  MeanAll,
  GlobalAvgPool,
  Linear,
  BceWithLogits,
};

struct Node {
  OpKind kind;
  std::vector<NodeId> inputs;
  std::string name;  // set for Param, Input, BatchNorm

  // hyper-parameters (meaning depends on kind)
  int stride = 1;
  int pad = 0;
  int k = 0;              // pooling kernel
  double a = 0.0;         // Affine scale / SPow exponent
  double b = 0.0;         // Affine shift
  NodeId size_ref = kNoNode;  // Deconv: node whose spatial size to match
  double momentum = 0.1;  // BatchNorm
  double eps = 1e-5;

  // state
  Tensor value;
  Tensor grad;
  std::vector<double> running_mean, running_var;  // BatchNorm buffers
  std::vector<int64_t> argmax;                    // MaxPool routing cache
  std::vector<double> bn_xhat, bn_inv_std;        // BatchNorm backward cache
};

// Static differentiable computation graph. Nodes are appended in
// construction order, which is topological by design; forward evaluates in
// order, backward in reverse. Shapes are re-inferred on every forward, so
// one graph serves varying batch and spatial sizes.
class Graph {
 public:
  NodeId input(const std::string& name);
  NodeId parameter(const std::string& name, Tensor init);
  NodeId constant(Tensor value);

  // Cross-correlation. Weight layout (F, C, k...) with 2 or 3 trailing
  // kernel axes; x is (B, C, spatial...). bias (F) optional.
  NodeId conv(NodeId x, NodeId w, NodeId bias, int stride, int pad);
  // Transposed convolution, the exact adjoint of conv with the same weight
  // tensor and hyper-params: x is (B, F, spatial...), output (B, C, ...).
  // Output spatial size defaults to (in-1)*stride - 2*pad + k; size_ref
  // overrides it with the spatial size of another node's value.
  NodeId deconv(NodeId x, NodeId w, NodeId bias, int stride, int pad,
                NodeId size_ref = kNoNode);
  NodeId batch_norm(const std::string& name, NodeId x, NodeId gamma, NodeId beta,
                    double momentum = 0.1, double eps = 1e-5);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId max_pool(NodeId x, int k, int stride, int pad);
  NodeId mean_pool2(NodeId x);  // 2x mean-pool per spatial axis (floor)
  NodeId concat(const std::vector<NodeId>& xs);  // channel axis
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId affine(NodeId x, double scale, double shift);
  NodeId spow(NodeId x, double exponent);  // sign(x)*|x|^p
  NodeId mean_all(NodeId x);               // scalar, shape {1}
  NodeId global_avg_pool(NodeId x);        // (B, C)
  NodeId linear(NodeId x, NodeId w, NodeId bias);  // x (B,C) * w (C,F) + b
  NodeId bce_with_logits(NodeId logits, NodeId targets);  // scalar mean BCE

  void set_input(const std::string& name, Tensor value);
  // Evaluates all ancestors of `out` and returns its value.
  const Tensor& forward(NodeId out);
  // Reverse-mode gradients into every parameter's grad. Requires a fresh
  // forward; throws if called twice without re-running forward.
  void backward(NodeId loss);

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  Tensor& param_value(NodeId id);
  Node& node(NodeId id) { return nodes_[id]; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  size_t node_count() const { return nodes_.size(); }

  // Named trainable parameters, in registration order.
  const std::vector<NodeId>& parameters() const { return params_; }
  // Named non-trainable state (batch-norm running statistics).
  std::map<std::string, std::vector<double>*> buffers();

 private:
  NodeId add_node(Node n);
  void eval_node(NodeId id);
  void backprop_node(NodeId id);
  void check_finite(NodeId id, const Tensor& t, const char* what) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
  std::map<std::string, NodeId> inputs_;
  bool training_ = true;
  bool forward_fresh_ = false;
  NodeId last_forward_out_ = kNoNode;
};

}  // namespace fact::nn
