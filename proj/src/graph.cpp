#include "fact/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace fact::nn {

Tensor init_gaussian(const std::vector<int64_t>& shape, double mean, double stddev,
                     uint64_t seed) {
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : t.data) v = dist(rng);
  return t;
}

namespace {

// Unified 2D/3D convolution bookkeeping: 2D runs as 3D with a unit depth
// axis (kernel 1, stride 1, pad 0).
struct ConvDims {
  int64_t B, C, F;
  int64_t in[3], k[3], st[3], pd[3], out[3];
  bool is3d;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad,
                   bool transposed, const int64_t* out_override) {
  ConvDims d{};
  d.is3d = w.rank() == 5;
  if (w.rank() != 4 && w.rank() != 5)
    throw std::invalid_argument("conv: weight rank must be 4 (2D) or 5 (3D)");
  if (x.rank() != w.rank())
    throw std::invalid_argument("conv: input/weight rank mismatch");
  d.B = x.shape[0];
  d.F = w.shape[0];
  d.C = w.shape[1];
  const int64_t xc = x.shape[1];
  if (!transposed && xc != d.C)
    throw std::invalid_argument("conv: input channels do not match weights");
  if (transposed && xc != d.F)
    throw std::invalid_argument("deconv: input channels do not match weights");
  const int sp = d.is3d ? 3 : 2;
  for (int a = 0; a < 3; ++a) {
    const int src = a - (3 - sp);
    if (src < 0) {
      d.k[a] = 1;
      d.st[a] = 1;
      d.pd[a] = 0;
      d.in[a] = 1;
      d.out[a] = 1;
      continue;
    }
    d.k[a] = w.shape[2 + src];
    d.st[a] = stride;
    d.pd[a] = pad;
    d.in[a] = x.shape[2 + src];
    if (!transposed) {
      const int64_t o = (d.in[a] + 2 * pad - d.k[a]) / stride + 1;
      if (d.in[a] + 2 * pad < d.k[a])
        throw std::invalid_argument("conv: kernel does not fit padded input");
      d.out[a] = o;
    } else {
      d.out[a] = out_override ? out_override[src]
                              : (d.in[a] - 1) * stride - 2 * pad + d.k[a];
      if (d.out[a] < 1) throw std::invalid_argument("deconv: non-positive output size");
    }
  }
  return d;
}

// y[b,f,o] = bias[f] + sum_{c,k} w[f,c,k] * x[b,c,o*st-pd+k]
void conv_gather(const ConvDims& d, const double* x, const double* w,
                 const double* bias, double* y) {
  const int64_t xs2 = d.in[1] * d.in[2], xs1 = d.in[2];
  const int64_t ws = d.k[0] * d.k[1] * d.k[2];
  const int64_t ys2 = d.out[1] * d.out[2], ys1 = d.out[2];
  const int64_t xcs = d.in[0] * xs2, ycs = d.out[0] * ys2;
  for (int64_t b = 0; b < d.B; ++b) {
    const double* xb = x + b * d.C * xcs;
    double* yb = y + b * d.F * ycs;
    for (int64_t f = 0; f < d.F; ++f) {
      const double* wf = w + f * d.C * ws;
      double* yf = yb + f * ycs;
      for (int64_t od = 0; od < d.out[0]; ++od)
        for (int64_t oh = 0; oh < d.out[1]; ++oh)
          for (int64_t ow = 0; ow < d.out[2]; ++ow) {
            double acc = bias ? bias[f] : 0.0;
            const int64_t id0 = od * d.st[0] - d.pd[0];
            const int64_t ih0 = oh * d.st[1] - d.pd[1];
            const int64_t iw0 = ow * d.st[2] - d.pd[2];
            for (int64_t c = 0; c < d.C; ++c) {
              const double* xc = xb + c * xcs;
              const double* wc = wf + c * ws;
              for (int64_t kd = 0; kd < d.k[0]; ++kd) {
                const int64_t id = id0 + kd;
                if (id < 0 || id >= d.in[0]) continue;
                for (int64_t kh = 0; kh < d.k[1]; ++kh) {
                  const int64_t ih = ih0 + kh;
                  if (ih < 0 || ih >= d.in[1]) continue;
                  const double* xrow = xc + id * xs2 + ih * xs1;
                  const double* wrow = wc + (kd * d.k[1] + kh) * d.k[2];
                  for (int64_t kw = 0; kw < d.k[2]; ++kw) {
                    const int64_t iw = iw0 + kw;
                    if (iw < 0 || iw >= d.in[2]) continue;
                    acc += wrow[kw] * xrow[iw];
                  }
                }
              }
            }
            yf[od * ys2 + oh * ys1 + ow] += acc;  // dest is zero-initialized
          }
    }
  }
}

// gx[b,c,i] += sum_{f,k} w[f,c,k] * gy[b,f,o] with i = o*st-pd+k.
// Also the transposed-convolution forward (gy := deconv input).
void conv_scatter(const ConvDims& d, const double* gy, const double* w, double* gx) {
  const int64_t xs2 = d.in[1] * d.in[2], xs1 = d.in[2];
  const int64_t ws = d.k[0] * d.k[1] * d.k[2];
  const int64_t ys2 = d.out[1] * d.out[2], ys1 = d.out[2];
  const int64_t xcs = d.in[0] * xs2, ycs = d.out[0] * ys2;
  for (int64_t b = 0; b < d.B; ++b) {
    double* xb = gx + b * d.C * xcs;
    const double* yb = gy + b * d.F * ycs;
    for (int64_t f = 0; f < d.F; ++f) {
      const double* wf = w + f * d.C * ws;
      const double* yf = yb + f * ycs;
      for (int64_t od = 0; od < d.out[0]; ++od)
        for (int64_t oh = 0; oh < d.out[1]; ++oh)
          for (int64_t ow = 0; ow < d.out[2]; ++ow) {
            const double g = yf[od * ys2 + oh * ys1 + ow];
            if (g == 0.0) continue;
            const int64_t id0 = od * d.st[0] - d.pd[0];
            const int64_t ih0 = oh * d.st[1] - d.pd[1];
            const int64_t iw0 = ow * d.st[2] - d.pd[2];
            for (int64_t c = 0; c < d.C; ++c) {
              double* xc = xb + c * xcs;
              const double* wc = wf + c * ws;
              for (int64_t kd = 0; kd < d.k[0]; ++kd) {
                const int64_t id = id0 + kd;
                if (id < 0 || id >= d.in[0]) continue;
                for (int64_t kh = 0; kh < d.k[1]; ++kh) {
                  const int64_t ih = ih0 + kh;
                  if (ih < 0 || ih >= d.in[1]) continue;
                  double* xrow = xc + id * xs2 + ih * xs1;
                  const double* wrow = wc + (kd * d.k[1] + kh) * d.k[2];
                  for (int64_t kw = 0; kw < d.k[2]; ++kw) {
                    const int64_t iw = iw0 + kw;
                    if (iw < 0 || iw >= d.in[2]) continue;
                    xrow[iw] += g * wrow[kw];
                  }
                }
              }
            }
          }
    }
  }
}

// gw[f,c,k] += sum_{b,o} gy[b,f,o] * x[b,c,o*st-pd+k]; gb[f] += sum gy.
void conv_grad_weights(const ConvDims& d, const double* x, const double* gy,
                       double* gw, double* gb) {
  const int64_t xs2 = d.in[1] * d.in[2], xs1 = d.in[2];
  const int64_t ws = d.k[0] * d.k[1] * d.k[2];
  const int64_t ys2 = d.out[1] * d.out[2], ys1 = d.out[2];
  const int64_t xcs = d.in[0] * xs2, ycs = d.out[0] * ys2;
  for (int64_t b = 0; b < d.B; ++b) {
    const double* xb = x + b * d.C * xcs;
    const double* yb = gy + b * d.F * ycs;
    for (int64_t f = 0; f < d.F; ++f) {
      const double* yf = yb + f * ycs;
      double* wf = gw + f * d.C * ws;
      for (int64_t od = 0; od < d.out[0]; ++od)
        for (int64_t oh = 0; oh < d.out[1]; ++oh)
          for (int64_t ow = 0; ow < d.out[2]; ++ow) {
            const double g = yf[od * ys2 + oh * ys1 + ow];
            if (gb) gb[f] += g;
            if (g == 0.0) continue;
            const int64_t id0 = od * d.st[0] - d.pd[0];
            const int64_t ih0 = oh * d.st[1] - d.pd[1];
            const int64_t iw0 = ow * d.st[2] - d.pd[2];
            for (int64_t c = 0; c < d.C; ++c) {
              const double* xc = xb + c * xcs;
              double* wc = wf + c * ws;
              for (int64_t kd = 0; kd < d.k[0]; ++kd) {
                const int64_t id = id0 + kd;
                if (id < 0 || id >= d.in[0]) continue;
                for (int64_t kh = 0; kh < d.k[1]; ++kh) {
                  const int64_t ih = ih0 + kh;
                  if (ih < 0 || ih >= d.in[1]) continue;
                  const double* xrow = xc + id * xs2 + ih * xs1;
                  double* wrow = wc + (kd * d.k[1] + kh) * d.k[2];
                  for (int64_t kw = 0; kw < d.k[2]; ++kw) {
                    const int64_t iw = iw0 + kw;
                    if (iw < 0 || iw >= d.in[2]) continue;
                    wrow[kw] += g * xrow[iw];
                  }
                }
              }
            }
          }
    }
  }
}

std::vector<int64_t> spatial_of(const Tensor& t) {
  return {t.shape.begin() + 2, t.shape.end()};
}

}  // namespace

NodeId Graph::add_node(Node n) {
  nodes_.push_back(std::move(n));
  forward_fresh_ = false;
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(const std::string& name) {
  Node n;
  n.kind = OpKind::Input;
  n.name = name;
  const NodeId id = add_node(std::move(n));
  inputs_[name] = id;
  return id;
}

NodeId Graph::parameter(const std::string& name, Tensor init) {
  Node n;
  n.kind = OpKind::Param;
  n.name = name;
  n.value = std::move(init);
  const NodeId id = add_node(std::move(n));
  params_.push_back(id);
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Const;
  n.value = std::move(value);
  return add_node(std::move(n));
}

NodeId Graph::conv(NodeId x, NodeId w, NodeId bias, int stride, int pad) {
  Node n;
  n.kind = OpKind::Conv;
  n.inputs = bias == kNoNode ? std::vector<NodeId>{x, w}
                             : std::vector<NodeId>{x, w, bias};
  n.stride = stride;
  n.pad = pad;
  return add_node(std::move(n));
}

NodeId Graph::deconv(NodeId x, NodeId w, NodeId bias, int stride, int pad,
                     NodeId size_ref) {
  Node n;
  n.kind = OpKind::Deconv;
  n.inputs = bias == kNoNode ? std::vector<NodeId>{x, w}
                             : std::vector<NodeId>{x, w, bias};
  n.stride = stride;
  n.pad = pad;
  n.size_ref = size_ref;
  return add_node(std::move(n));
}

NodeId Graph::batch_norm(const std::string& name, NodeId x, NodeId gamma,
                         NodeId beta, double momentum, double eps) {
  Node n;
  n.kind = OpKind::BatchNorm;
  n.name = name;
  n.inputs = {x, gamma, beta};
  n.momentum = momentum;
  n.eps = eps;
  return add_node(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  return add_node(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {x};
  return add_node(std::move(n));
}

NodeId Graph::max_pool(NodeId x, int k, int stride, int pad) {
  Node n;
  n.kind = OpKind::MaxPool;
  n.inputs = {x};
  n.k = k;
  n.stride = stride;
  n.pad = pad;
  return add_node(std::move(n));
}

NodeId Graph::mean_pool2(NodeId x) {
  Node n;
  n.kind = OpKind::MeanPool2;
  n.inputs = {x};
  return add_node(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: needs inputs");
  Node n;
  n.kind = OpKind::Concat;
  n.inputs = xs;
  return add_node(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::Sub;
  n.inputs = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::div(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::Div;
  n.inputs = {a, b};
  return add_node(std::move(n));
}

NodeId Graph::affine(NodeId x, double scale, double shift) {
  Node n;
  n.kind = OpKind::Affine;
  n.inputs = {x};
  n.a = scale;
  n.b = shift;
  return add_node(std::move(n));
}

NodeId Graph::spow(NodeId x, double exponent) {
  Node n;
  n.kind = OpKind::SPow;
  n.inputs = {x};
  n.a = exponent;
  return add_node(std::move(n));
}

NodeId Graph::mean_all(NodeId x) {
  Node n;
  n.kind = OpKind::MeanAll;
  n.inputs = {x};
  return add_node(std::move(n));
}

NodeId Graph::global_avg_pool(NodeId x) {
  Node n;
  n.kind = OpKind::GlobalAvgPool;
  n.inputs = {x};
  return add_node(std::move(n));
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId bias) {
  Node n;
  n.kind = OpKind::Linear;
  n.inputs = bias == kNoNode ? std::vector<NodeId>{x, w}
                             : std::vector<NodeId>{x, w, bias};
  return add_node(std::move(n));
}

NodeId Graph::bce_with_logits(NodeId logits, NodeId targets) {
  Node n;
  n.kind = OpKind::BceWithLogits;
  n.inputs = {logits, targets};
  return add_node(std::move(n));
}

void Graph::set_input(const std::string& name, Tensor value) {
  auto it = inputs_.find(name);
  if (it == inputs_.end())
    throw std::invalid_argument("set_input: unknown input '" + name + "'");
  nodes_[it->second].value = std::move(value);
  forward_fresh_ = false;
}

Tensor& Graph::param_value(NodeId id) {
  if (nodes_[id].kind != OpKind::Param)
    throw std::invalid_argument("param_value: node is not a parameter");
  return nodes_[id].value;
}

std::map<std::string, std::vector<double>*> Graph::buffers() {
  std::map<std::string, std::vector<double>*> out;
  for (auto& n : nodes_) {
    if (n.kind == OpKind::BatchNorm) {
      out[n.name + ".running_mean"] = &n.running_mean;
      out[n.name + ".running_var"] = &n.running_var;
    }
  }
  return out;
}

void Graph::check_finite(NodeId id, const Tensor& t, const char* what) const {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite ") + what + " at node " +
                               std::to_string(id));
}

void Graph::eval_node(NodeId id) {
  Node& n = nodes_[id];
  auto in = [&](int i) -> const Tensor& { return nodes_[n.inputs[i]].value; };

  switch (n.kind) {
    case OpKind::Input:
      if (n.value.data.empty())
        throw std::runtime_error("forward: input '" + n.name + "' not set");
      return;  // value already present
    case OpKind::Param:
    case OpKind::Const:
      return;
    case OpKind::Conv: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const double* bias = n.inputs.size() > 2 ? in(2).data.data() : nullptr;
      const ConvDims d = conv_dims(x, w, n.stride, n.pad, false, nullptr);
      std::vector<int64_t> shape = {d.B, d.F};
      if (d.is3d) shape.push_back(d.out[0]);
      shape.push_back(d.out[1]);
      shape.push_back(d.out[2]);
      n.value = Tensor(shape);
      conv_gather(d, x.data.data(), w.data.data(), bias, n.value.data.data());
      break;
    }
    case OpKind::Deconv: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      std::vector<int64_t> ov;
      const int64_t* ovp = nullptr;
      if (n.size_ref != kNoNode) {
        ov = spatial_of(nodes_[n.size_ref].value);
        ovp = ov.data();
      }
      const ConvDims d = conv_dims(x, w, n.stride, n.pad, true, ovp);
      // Output lives in the conv *input* space: dims swap roles.
      ConvDims ds = d;
      for (int a = 0; a < 3; ++a) std::swap(ds.in[a], ds.out[a]);
      std::vector<int64_t> shape = {d.B, d.C};
      if (d.is3d) shape.push_back(ds.in[0]);
      shape.push_back(ds.in[1]);
      shape.push_back(ds.in[2]);
      n.value = Tensor(shape);
      conv_scatter(ds, x.data.data(), w.data.data(), n.value.data.data());
      if (n.inputs.size() > 2) {
        const Tensor& bias = in(2);
        const int64_t cs = n.value.numel() / (d.B * d.C);
        for (int64_t b = 0; b < d.B; ++b)
          for (int64_t c = 0; c < d.C; ++c) {
            double* p = n.value.data.data() + (b * d.C + c) * cs;
            for (int64_t i = 0; i < cs; ++i) p[i] += bias.data[c];
          }
      }
      break;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& beta = in(2);
      const int64_t B = x.shape[0], C = x.shape[1];
      const int64_t sp = x.numel() / (B * C);
      if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("batch_norm: gamma/beta size mismatch");
      if (n.running_mean.empty()) {
        n.running_mean.assign(C, 0.0);
        n.running_var.assign(C, 1.0);
      }
      n.value = Tensor(x.shape);
      n.bn_xhat.assign(x.data.size(), 0.0);
      n.bn_inv_std.assign(C, 0.0);
      for (int64_t c = 0; c < C; ++c) {
        double mean, var;
        if (training_) {
          double s = 0.0;
          for (int64_t b = 0; b < B; ++b) {
            const double* p = x.data.data() + (b * C + c) * sp;
            for (int64_t i = 0; i < sp; ++i) s += p[i];
          }
          mean = s / (B * sp);
          double sv = 0.0;
          for (int64_t b = 0; b < B; ++b) {
            const double* p = x.data.data() + (b * C + c) * sp;
            for (int64_t i = 0; i < sp; ++i) {
              const double d = p[i] - mean;
              sv += d * d;
            }
          }
          var = sv / (B * sp);
          n.running_mean[c] = (1.0 - n.momentum) * n.running_mean[c] + n.momentum * mean;
          n.running_var[c] = (1.0 - n.momentum) * n.running_var[c] + n.momentum * var;
        } else {
          mean = n.running_mean[c];
          var = n.running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + n.eps);
        n.bn_inv_std[c] = inv;
        for (int64_t b = 0; b < B; ++b) {
          const double* p = x.data.data() + (b * C + c) * sp;
          double* xh = n.bn_xhat.data() + (b * C + c) * sp;
          double* o = n.value.data.data() + (b * C + c) * sp;
          for (int64_t i = 0; i < sp; ++i) {
            xh[i] = (p[i] - mean) * inv;
            o[i] = gamma.data[c] * xh[i] + beta.data[c];
          }
        }
      }
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
      break;
    }
    case OpKind::Sigmoid: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
      break;
    }
    case OpKind::MaxPool: {
      const Tensor& x = in(0);
      const int sp = x.spatial_rank();
      if (sp != 2 && sp != 3) throw std::invalid_argument("max_pool: rank");
      const int64_t B = x.shape[0], C = x.shape[1];
      int64_t isz[3] = {1, 1, 1}, osz[3] = {1, 1, 1};
      for (int a = 0; a < sp; ++a) {
        isz[3 - sp + a] = x.shape[2 + a];
        const int64_t o = (isz[3 - sp + a] + 2 * n.pad - n.k) / n.stride + 1;
        if (isz[3 - sp + a] + 2 * n.pad < n.k)
          throw std::invalid_argument("max_pool: kernel larger than padded input");
        osz[3 - sp + a] = o;
      }
      std::vector<int64_t> shape = {B, C};
      for (int a = 0; a < sp; ++a) shape.push_back(osz[3 - sp + a]);
      n.value = Tensor(shape);
      n.argmax.assign(n.value.data.size(), -1);
      const int64_t ics = isz[0] * isz[1] * isz[2];
      const int64_t ocs = osz[0] * osz[1] * osz[2];
      const int kd0 = sp == 3 ? n.k : 1;
      const int sd0 = sp == 3 ? n.stride : 1;
      const int pd0 = sp == 3 ? n.pad : 0;
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* xi = x.data.data() + bc * ics;
        double* yo = n.value.data.data() + bc * ocs;
        int64_t* am = n.argmax.data() + bc * ocs;
        for (int64_t od = 0; od < osz[0]; ++od)
          for (int64_t oh = 0; oh < osz[1]; ++oh)
            for (int64_t ow = 0; ow < osz[2]; ++ow) {
              double best = -std::numeric_limits<double>::infinity();
              int64_t besti = -1;
              for (int kd = 0; kd < kd0; ++kd) {
                const int64_t id = od * sd0 - pd0 + kd;
                if (id < 0 || id >= isz[0]) continue;
                for (int kh = 0; kh < n.k; ++kh) {
                  const int64_t ih = oh * n.stride - n.pad + kh;
                  if (ih < 0 || ih >= isz[1]) continue;
                  for (int kw = 0; kw < n.k; ++kw) {
                    const int64_t iw = ow * n.stride - n.pad + kw;
                    if (iw < 0 || iw >= isz[2]) continue;
                    const int64_t idx = (id * isz[1] + ih) * isz[2] + iw;
                    if (xi[idx] > best) {
                      best = xi[idx];
                      besti = idx;
                    }
                  }
                }
              }
              const int64_t oidx = (od * osz[1] + oh) * osz[2] + ow;
              // All-padding windows contribute zero.
              yo[oidx] = besti >= 0 ? best : 0.0;
              am[oidx] = besti >= 0 ? bc * ics + besti : -1;
            }
      }
      break;
    }
    case OpKind::MeanPool2: {
      const Tensor& x = in(0);
      const int sp = x.spatial_rank();
      if (sp != 2 && sp != 3) throw std::invalid_argument("mean_pool2: rank");
      const int64_t B = x.shape[0], C = x.shape[1];
      int64_t isz[3] = {1, 1, 1}, osz[3] = {1, 1, 1};
      for (int a = 0; a < sp; ++a) {
        isz[3 - sp + a] = x.shape[2 + a];
        osz[3 - sp + a] = std::max<int64_t>(1, isz[3 - sp + a] / 2);
      }
      std::vector<int64_t> shape = {B, C};
      for (int a = 0; a < sp; ++a) shape.push_back(osz[3 - sp + a]);
      n.value = Tensor(shape);
      const int64_t ics = isz[0] * isz[1] * isz[2];
      const int64_t ocs = osz[0] * osz[1] * osz[2];
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* xi = x.data.data() + bc * ics;
        double* yo = n.value.data.data() + bc * ocs;
        for (int64_t od = 0; od < osz[0]; ++od)
          for (int64_t oh = 0; oh < osz[1]; ++oh)
            for (int64_t ow = 0; ow < osz[2]; ++ow) {
              const int wd = isz[0] > 1 ? 2 : 1;
              const int wh = isz[1] > 1 ? 2 : 1;
              const int ww = isz[2] > 1 ? 2 : 1;
              double acc = 0.0;
              for (int kd = 0; kd < wd; ++kd)
                for (int kh = 0; kh < wh; ++kh)
                  for (int kw = 0; kw < ww; ++kw)
                    acc += xi[((od * wd + kd) * isz[1] + oh * wh + kh) * isz[2] +
                              ow * ww + kw];
              yo[(od * osz[1] + oh) * osz[2] + ow] = acc / (wd * wh * ww);
            }
      }
      break;
    }
    case OpKind::Concat: {
      const Tensor& x0 = in(0);
      int64_t ctotal = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& xi = in(static_cast<int>(i));
        if (xi.rank() != x0.rank() || xi.shape[0] != x0.shape[0])
          throw std::invalid_argument("concat: rank/batch mismatch");
        for (int a = 2; a < x0.rank(); ++a)
          if (xi.shape[a] != x0.shape[a])
            throw std::invalid_argument("concat: spatial mismatch");
        ctotal += xi.shape[1];
      }
      std::vector<int64_t> shape = x0.shape;
      shape[1] = ctotal;
      n.value = Tensor(shape);
      const int64_t B = x0.shape[0];
      const int64_t sp = x0.numel() / (B * x0.shape[1]);
      for (int64_t b = 0; b < B; ++b) {
        int64_t coff = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& xi = in(static_cast<int>(i));
          const int64_t ci = xi.shape[1];
          std::copy_n(xi.data.data() + b * ci * sp, ci * sp,
                      n.value.data.data() + (b * ctotal + coff) * sp);
          coff += ci;
        }
      }
      break;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (!a.same_shape(b)) throw std::invalid_argument("elementwise: shape mismatch");
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i) {
        switch (n.kind) {
          case OpKind::Add: n.value.data[i] = a.data[i] + b.data[i]; break;
          case OpKind::Sub: n.value.data[i] = a.data[i] - b.data[i]; break;
          case OpKind::Mul: n.value.data[i] = a.data[i] * b.data[i]; break;
          default: n.value.data[i] = a.data[i] / b.data[i]; break;
        }
      }
      break;
    }
    case OpKind::Affine: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = n.a * x.data[i] + n.b;
      break;
    }
    case OpKind::SPow: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i)
        n.value.data[i] = std::copysign(std::pow(std::abs(x.data[i]), n.a), x.data[i]);
      break;
    }
    case OpKind::MeanAll: {
      const Tensor& x = in(0);
      double s = 0.0;
      for (double v : x.data) s += v;
      n.value = Tensor({1});
      n.value.data[0] = s / static_cast<double>(x.numel());
      break;
    }
    case OpKind::GlobalAvgPool: {
      const Tensor& x = in(0);
      const int64_t B = x.shape[0], C = x.shape[1];
      const int64_t sp = x.numel() / (B * C);
      n.value = Tensor({B, C});
      for (int64_t bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        const double* p = x.data.data() + bc * sp;
        for (int64_t i = 0; i < sp; ++i) s += p[i];
        n.value.data[bc] = s / sp;
      }
      break;
    }
    case OpKind::Linear: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[0])
        throw std::invalid_argument("linear: shape mismatch");
      const int64_t B = x.shape[0], C = x.shape[1], F = w.shape[1];
      n.value = Tensor({B, F});
      for (int64_t b = 0; b < B; ++b)
        for (int64_t f = 0; f < F; ++f) {
          double acc = n.inputs.size() > 2 ? in(2).data[f] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            acc += x.data[b * C + c] * w.data[c * F + f];
          n.value.data[b * F + f] = acc;
        }
      break;
    }
    case OpKind::BceWithLogits: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      if (!z.same_shape(t))
        throw std::invalid_argument("bce_with_logits: shape mismatch");
      double s = 0.0;
      for (size_t i = 0; i < z.data.size(); ++i) {
        const double zi = z.data[i], ti = t.data[i];
        s += std::max(zi, 0.0) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
      }
      n.value = Tensor({1});
      n.value.data[0] = s / static_cast<double>(z.numel());
      break;
    }
  }
  check_finite(id, n.value, "value");
}

const Tensor& Graph::forward(NodeId out) {
  if (out < 0 || out >= static_cast<NodeId>(nodes_.size()))
    throw std::invalid_argument("forward: bad node id");
  // Ancestor set of `out`.
  std::vector<char> needed(nodes_.size(), 0);
  needed[out] = 1;
  for (NodeId id = out; id >= 0; --id)
    if (needed[id])
      for (NodeId in : nodes_[id].inputs) needed[in] = 1;
  for (NodeId id = 0; id <= out; ++id)
    if (needed[id]) eval_node(id);
  forward_fresh_ = true;
  last_forward_out_ = out;
  return nodes_[out].value;
}

void Graph::backprop_node(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) return;
  auto in = [&](int i) -> Node& { return nodes_[n.inputs[i]]; };
  auto ensure_grad = [&](Node& m) {
    if (m.grad.data.empty() || !m.grad.same_shape(m.value))
      m.grad = Tensor(m.value.shape);
  };
  const Tensor& gy = n.grad;

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
    case OpKind::Const:
      return;
    case OpKind::Conv: {
      Node& x = in(0);
      Node& w = in(1);
      ensure_grad(x);
      ensure_grad(w);
      const ConvDims d = conv_dims(x.value, w.value, n.stride, n.pad, false, nullptr);
      conv_scatter(d, gy.data.data(), w.value.data.data(), x.grad.data.data());
      double* gb = nullptr;
      if (n.inputs.size() > 2) {
        ensure_grad(in(2));
        gb = in(2).grad.data.data();
      }
      conv_grad_weights(d, x.value.data.data(), gy.data.data(),
                        w.grad.data.data(), gb);
      break;
    }
    case OpKind::Deconv: {
      Node& x = in(0);
      Node& w = in(1);
      ensure_grad(x);
      ensure_grad(w);
      // Forward was a scatter in the conv-input space; the input gradient is
      // the matching gather, and the weight gradient swaps x and gy roles.
      std::vector<int64_t> ov = spatial_of(n.value);
      ConvDims d = conv_dims(x.value, w.value, n.stride, n.pad, true, ov.data());
      ConvDims ds = d;
      for (int a = 0; a < 3; ++a) std::swap(ds.in[a], ds.out[a]);
      // ds: "in" = deconv output space, "out" = deconv input space.
      conv_gather(ds, gy.data.data(), w.value.data.data(), nullptr,
                  x.grad.data.data());
      // gw[f,c,k] = sum_{b,i} x[b,f,i] * gy[b,c, i*st-pd+k]
      conv_grad_weights(ds, gy.data.data(), x.value.data.data(),
                        w.grad.data.data(), nullptr);
      if (n.inputs.size() > 2) {
        Node& bias = in(2);
        ensure_grad(bias);
        const int64_t B = n.value.shape[0], C = n.value.shape[1];
        const int64_t cs = n.value.numel() / (B * C);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const double* p = gy.data.data() + (b * C + c) * cs;
            double acc = 0.0;
            for (int64_t i = 0; i < cs; ++i) acc += p[i];
            bias.grad.data[c] += acc;
          }
      }
      break;
    }
    case OpKind::BatchNorm: {
      Node& x = in(0);
      Node& gamma = in(1);
      Node& beta = in(2);
      ensure_grad(x);
      ensure_grad(gamma);
      ensure_grad(beta);
      const int64_t B = x.value.shape[0], C = x.value.shape[1];
      const int64_t sp = x.value.numel() / (B * C);
      const double N = static_cast<double>(B * sp);
      for (int64_t c = 0; c < C; ++c) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int64_t b = 0; b < B; ++b) {
          const double* g = gy.data.data() + (b * C + c) * sp;
          const double* xh = n.bn_xhat.data() + (b * C + c) * sp;
          for (int64_t i = 0; i < sp; ++i) {
            sum_gy += g[i];
            sum_gy_xhat += g[i] * xh[i];
          }
        }
        gamma.grad.data[c] += sum_gy_xhat;
        beta.grad.data[c] += sum_gy;
        const double ginv = gamma.value.data[c] * n.bn_inv_std[c];
        for (int64_t b = 0; b < B; ++b) {
          const double* g = gy.data.data() + (b * C + c) * sp;
          const double* xh = n.bn_xhat.data() + (b * C + c) * sp;
          double* gx = x.grad.data.data() + (b * C + c) * sp;
          if (training_) {
            for (int64_t i = 0; i < sp; ++i)
              gx[i] += ginv * (g[i] - sum_gy / N - xh[i] * sum_gy_xhat / N);
          } else {
            for (int64_t i = 0; i < sp; ++i) gx[i] += ginv * g[i];
          }
        }
      }
      break;
    }
    case OpKind::Relu: {
      Node& x = in(0);
      ensure_grad(x);
      for (size_t i = 0; i < gy.data.size(); ++i)
        if (x.value.data[i] > 0.0) x.grad.data[i] += gy.data[i];
      break;
    }
    case OpKind::Sigmoid: {
      Node& x = in(0);
      ensure_grad(x);
      for (size_t i = 0; i < gy.data.size(); ++i) {
        const double y = n.value.data[i];
        x.grad.data[i] += gy.data[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::MaxPool: {
      Node& x = in(0);
      ensure_grad(x);
      for (size_t i = 0; i < gy.data.size(); ++i)
        if (n.argmax[i] >= 0) x.grad.data[n.argmax[i]] += gy.data[i];
      break;
    }
    case OpKind::MeanPool2: {
      Node& x = in(0);
      ensure_grad(x);
      const int sp = x.value.spatial_rank();
      const int64_t B = x.value.shape[0], C = x.value.shape[1];
      int64_t isz[3] = {1, 1, 1}, osz[3] = {1, 1, 1};
      for (int a = 0; a < sp; ++a) {
        isz[3 - sp + a] = x.value.shape[2 + a];
        osz[3 - sp + a] = std::max<int64_t>(1, isz[3 - sp + a] / 2);
      }
      const int64_t ics = isz[0] * isz[1] * isz[2];
      const int64_t ocs = osz[0] * osz[1] * osz[2];
      for (int64_t bc = 0; bc < B * C; ++bc) {
        double* gx = x.grad.data.data() + bc * ics;
        const double* g = gy.data.data() + bc * ocs;
        for (int64_t od = 0; od < osz[0]; ++od)
          for (int64_t oh = 0; oh < osz[1]; ++oh)
            for (int64_t ow = 0; ow < osz[2]; ++ow) {
              const int wd = isz[0] > 1 ? 2 : 1;
              const int wh = isz[1] > 1 ? 2 : 1;
              const int ww = isz[2] > 1 ? 2 : 1;
              const double gv = g[(od * osz[1] + oh) * osz[2] + ow] / (wd * wh * ww);
              for (int kd = 0; kd < wd; ++kd)
                for (int kh = 0; kh < wh; ++kh)
                  for (int kw = 0; kw < ww; ++kw)
                    gx[((od * wd + kd) * isz[1] + oh * wh + kh) * isz[2] + ow * ww +
                       kw] += gv;
            }
      }
      break;
    }
    case OpKind::Concat: {
      const int64_t B = n.value.shape[0];
      const int64_t ctotal = n.value.shape[1];
      const int64_t sp = n.value.numel() / (B * ctotal);
      for (int64_t b = 0; b < B; ++b) {
        int64_t coff = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          Node& xi = in(static_cast<int>(i));
          ensure_grad(xi);
          const int64_t ci = xi.value.shape[1];
          const double* src = gy.data.data() + (b * ctotal + coff) * sp;
          double* dst = xi.grad.data.data() + b * ci * sp;
          for (int64_t j = 0; j < ci * sp; ++j) dst[j] += src[j];
          coff += ci;
        }
      }
      break;
    }
    case OpKind::Add: {
      Node& a = in(0);
      Node& b = in(1);
      ensure_grad(a);
      ensure_grad(b);
      for (size_t i = 0; i < gy.data.size(); ++i) {
        a.grad.data[i] += gy.data[i];
        b.grad.data[i] += gy.data[i];
      }
      break;
    }
    case OpKind::Sub: {
      Node& a = in(0);
      Node& b = in(1);
      ensure_grad(a);
      ensure_grad(b);
      for (size_t i = 0; i < gy.data.size(); ++i) {
        a.grad.data[i] += gy.data[i];
        b.grad.data[i] -= gy.data[i];
      }
      break;
    }
    case OpKind::Mul: {
      Node& a = in(0);
      Node& b = in(1);
      ensure_grad(a);
      ensure_grad(b);
      for (size_t i = 0; i < gy.data.size(); ++i) {
        a.grad.data[i] += gy.data[i] * b.value.data[i];
        b.grad.data[i] += gy.data[i] * a.value.data[i];
      }
      break;
    }
    case OpKind::Div: {
      Node& a = in(0);
      Node& b = in(1);
      ensure_grad(a);
      ensure_grad(b);
      for (size_t i = 0; i < gy.data.size(); ++i) {
        const double bi = b.value.data[i];
        a.grad.data[i] += gy.data[i] / bi;
        b.grad.data[i] -= gy.data[i] * a.value.data[i] / (bi * bi);
      }
      break;
    }
    case OpKind::Affine: {
      Node& x = in(0);
      ensure_grad(x);
      for (size_t i = 0; i < gy.data.size(); ++i) x.grad.data[i] += n.a * gy.data[i];
      break;
    }
    case OpKind::SPow: {
      Node& x = in(0);
      ensure_grad(x);
      for (size_t i = 0; i < gy.data.size(); ++i) {
        const double xv = std::abs(x.value.data[i]);
        x.grad.data[i] += gy.data[i] * n.a * std::pow(xv, n.a - 1.0);
      }
      break;
    }
    case OpKind::MeanAll: {
      Node& x = in(0);
      ensure_grad(x);
      const double g = gy.data[0] / static_cast<double>(x.value.numel());
      for (double& v : x.grad.data) v += g;
      break;
    }
    case OpKind::GlobalAvgPool: {
      Node& x = in(0);
      ensure_grad(x);
      const int64_t B = x.value.shape[0], C = x.value.shape[1];
      const int64_t sp = x.value.numel() / (B * C);
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double g = gy.data[bc] / sp;
        double* p = x.grad.data.data() + bc * sp;
        for (int64_t i = 0; i < sp; ++i) p[i] += g;
      }
      break;
    }
    case OpKind::Linear: {
      Node& x = in(0);
      Node& w = in(1);
      ensure_grad(x);
      ensure_grad(w);
      const int64_t B = x.value.shape[0], C = x.value.shape[1], F = w.value.shape[1];
      for (int64_t b = 0; b < B; ++b)
        for (int64_t f = 0; f < F; ++f) {
          const double g = gy.data[b * F + f];
          for (int64_t c = 0; c < C; ++c) {
            x.grad.data[b * C + c] += g * w.value.data[c * F + f];
            w.grad.data[c * F + f] += g * x.value.data[b * C + c];
          }
        }
      if (n.inputs.size() > 2) {
        Node& bias = in(2);
        ensure_grad(bias);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t f = 0; f < F; ++f) bias.grad.data[f] += gy.data[b * F + f];
      }
      break;
    }
    case OpKind::BceWithLogits: {
      Node& z = in(0);
      Node& t = in(1);
      ensure_grad(z);
      ensure_grad(t);
      const double g = gy.data[0] / static_cast<double>(z.value.numel());
      for (size_t i = 0; i < z.value.data.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-z.value.data[i]));
        z.grad.data[i] += g * (s - t.value.data[i]);
        t.grad.data[i] += g * (-z.value.data[i]);
      }
      break;
    }
  }
}

void Graph::backward(NodeId loss) {
  if (!forward_fresh_)
    throw std::runtime_error("backward: requires a fresh forward pass");
  if (loss != last_forward_out_)
    throw std::runtime_error("backward: target must match the last forward output");
  if (nodes_[loss].value.numel() != 1)
    throw std::runtime_error("backward: loss must be scalar");

  std::vector<char> needed(nodes_.size(), 0);
  needed[loss] = 1;
  for (NodeId id = loss; id >= 0; --id)
    if (needed[id])
      for (NodeId in : nodes_[id].inputs) needed[in] = 1;

  // Zero gradients; unused parameters keep zero gradients of their own shape.
  for (auto& nd : nodes_) nd.grad = Tensor();
  for (NodeId p : params_) nodes_[p].grad = Tensor(nodes_[p].value.shape);
  for (NodeId id = 0; id <= loss; ++id)
    if (needed[id] && nodes_[id].kind != OpKind::Param)
      nodes_[id].grad = Tensor(nodes_[id].value.shape);

  nodes_[loss].grad.data[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id)
    if (needed[id]) backprop_node(id);

  for (NodeId p : params_) check_finite(p, nodes_[p].grad, "gradient");
  forward_fresh_ = false;
}

}  // namespace fact::nn
