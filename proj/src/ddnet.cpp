#include "fact/ddnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "fact/loss.hpp"
#include "nlohmann/json.hpp"

namespace fact::enh {

using nn::Graph;
using nn::kNoNode;
using nn::NodeId;
using nn::Tensor;

void DDNetConfig::validate() const {
  if (dims != 2 && dims != 3)
    throw std::invalid_argument("DDNetConfig: dims must be 2 or 3");
  if (n_dense_blocks != 4 || n_deconv_layers != 8)
    throw std::invalid_argument(
        "DDNetConfig: 4 dense blocks and 8 deconv layers are architectural "
        "constants");
  if (layers_per_block < 1 || growth_rate < 1 || stem_channels < 1)
    throw std::invalid_argument("DDNetConfig: bad block sizing");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("DDNetConfig: kernel must be odd");
  if (pool_kernel < 1 || pool_stride < 1)
    throw std::invalid_argument("DDNetConfig: bad pooling");
  if (init_std <= 0 || input_scale <= 0 || loss_dynamic_range <= 0)
    throw std::invalid_argument("DDNetConfig: non-positive scale");
}

DDNetConfig DDNetConfig::paper_faithful(int dims_) {
  DDNetConfig c;
  c.dims = dims_;
  c.layers_per_block = 4;
  c.growth_rate = 16;
  c.stem_channels = 16;
  c.kernel = 5;
  return c;
}

DDNetConfig DDNetConfig::desk_2d() { return {}; }

DDNetConfig DDNetConfig::desk_3d() {
  DDNetConfig c;
  c.dims = 3;
  c.layers_per_block = 1;
  c.growth_rate = 4;
  c.stem_channels = 8;
  c.loss_window = 5;
  c.loss_sigma = -1.0;
  c.loss_scale_weights = {0.5, 0.5};
  return c;
}

std::string DDNetConfig::to_json() const {
  nlohmann::json j;
  j["dims"] = dims;
  j["n_dense_blocks"] = n_dense_blocks;
  j["layers_per_block"] = layers_per_block;
  j["growth_rate"] = growth_rate;
  j["stem_channels"] = stem_channels;
  j["n_deconv_layers"] = n_deconv_layers;
  j["kernel"] = kernel;
  j["pool_kernel"] = pool_kernel;
  j["pool_stride"] = pool_stride;
  j["init_std"] = init_std;
  j["init_seed"] = init_seed;
  j["bn_momentum"] = bn_momentum;
  j["input_scale"] = input_scale;
  j["loss_lambda"] = loss_lambda;
  j["loss_window"] = loss_window;
  j["loss_sigma"] = loss_sigma;
  j["loss_scale_weights"] = loss_scale_weights;
  j["loss_dynamic_range"] = loss_dynamic_range;
  return j.dump();
}

DDNetConfig DDNetConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DDNetConfig c;
  c.dims = j.at("dims");
  c.n_dense_blocks = j.at("n_dense_blocks");
  c.layers_per_block = j.at("layers_per_block");
  c.growth_rate = j.at("growth_rate");
  c.stem_channels = j.at("stem_channels");
  c.n_deconv_layers = j.at("n_deconv_layers");
  c.kernel = j.at("kernel");
  c.pool_kernel = j.at("pool_kernel");
  c.pool_stride = j.at("pool_stride");
  c.init_std = j.at("init_std");
  c.init_seed = j.at("init_seed");
  c.bn_momentum = j.at("bn_momentum");
  c.input_scale = j.at("input_scale");
  c.loss_lambda = j.at("loss_lambda");
  c.loss_window = j.at("loss_window");
  c.loss_sigma = j.at("loss_sigma");
  c.loss_scale_weights = j.at("loss_scale_weights").get<std::vector<double>>();
  c.loss_dynamic_range = j.at("loss_dynamic_range");
  c.validate();
  return c;
}

namespace {

std::vector<int64_t> conv_weight_shape(int dims, int out_c, int in_c, int k) {
  if (dims == 2) return {out_c, in_c, k, k};
  return {out_c, in_c, k, k, k};
}

struct Builder {
  Graph& g;
  const DDNetConfig& cfg;
  int param_idx = 0;

  uint64_t next_seed() {
    return hash_combine(cfg.init_seed, static_cast<uint64_t>(param_idx++));
  }

  NodeId weight(const std::string& name, int out_c, int in_c) {
    return g.parameter(name, nn::init_gaussian(
                                 conv_weight_shape(cfg.dims, out_c, in_c, cfg.kernel),
                                 0.0, cfg.init_std, next_seed()));
  }
  NodeId bias(const std::string& name, int c) {
    return g.parameter(name, Tensor({c}, 0.0));
  }
  NodeId bn(const std::string& name, NodeId x, int c) {
    const NodeId gamma = g.parameter(name + ".gamma", Tensor({c}, 1.0));
    const NodeId beta = g.parameter(name + ".beta", Tensor({c}, 0.0));
    return g.batch_norm(name, x, gamma, beta, cfg.bn_momentum);
  }
};

}  // namespace

EnhancerNet build_ddnet(const DDNetConfig& config) {
  config.validate();
  EnhancerNet net;
  net.config = config;
  Graph& g = net.graph;
  Builder b{g, config};
  const int k = config.kernel;
  const int pad = k / 2;

  net.in = g.input("x");
  net.target = g.input("y");

  // Stem
  NodeId cur = g.conv(net.in, b.weight("stem.w", config.stem_channels, 1),
                      b.bias("stem.b", config.stem_channels), 1, pad);
  cur = g.relu(b.bn("stem.bn", cur, config.stem_channels));
  int ch = config.stem_channels;

  // Encoder: 4 dense blocks with pooling transitions. Convolutions inside
  // dense blocks run at stride 1 so channel concatenation stays aligned;
  // downsampling happens in the pooling transitions.
  std::vector<NodeId> pre_pool;
  for (int bi = 0; bi < config.n_dense_blocks; ++bi) {
    for (int li = 0; li < config.layers_per_block; ++li) {
      const std::string base =
          "enc.b" + std::to_string(bi) + ".l" + std::to_string(li);
      NodeId c = g.conv(cur, b.weight(base + ".w", config.growth_rate, ch),
                        b.bias(base + ".b", config.growth_rate), 1, pad);
      c = g.relu(b.bn(base + ".bn", c, config.growth_rate));
      cur = g.concat({cur, c});
      ch += config.growth_rate;
    }
    pre_pool.push_back(cur);
    cur = g.max_pool(cur, config.pool_kernel, config.pool_stride,
                     config.pool_kernel / 2);
  }

  // Decoder: 8 deconv layers, two per level; the stride-pool_stride deconv
  // restores each pre-pool spatial size exactly via a size reference.
  const int per_level = config.n_deconv_layers / config.n_dense_blocks;
  for (int level = config.n_dense_blocks - 1; level >= 0; --level) {
    const bool last_level = level == 0;
    int out_ch = std::max(4, ch / 2);
    for (int d = 0; d < per_level; ++d) {
      const bool final_layer = last_level && d == per_level - 1;
      if (final_layer) out_ch = 1;
      const std::string base =
          "dec.l" + std::to_string(level) + ".d" + std::to_string(d);
      // Deconv weights have layout (in_c, out_c, kernel...).
      const NodeId w = g.parameter(
          base + ".w", nn::init_gaussian(conv_weight_shape(config.dims, ch, out_ch, k),
                                         0.0, config.init_std, b.next_seed()));
      const NodeId bias = g.parameter(base + ".b", Tensor({out_ch}, 0.0));
      if (d == 0) {
        cur = g.deconv(cur, w, bias, config.pool_stride, pad, pre_pool[level]);
      } else {
        cur = g.deconv(cur, w, bias, 1, pad);
      }
      ch = out_ch;
      if (!final_layer) {
        cur = g.relu(b.bn(base + ".bn", cur, ch));
        out_ch = std::max(4, ch / 2);
      }
    }
  }

  // Residual output: the network predicts the correction added to the input.
  net.out = g.add(net.in, cur);

  metrics::SsimParams sp;
  sp.window = config.loss_window;
  sp.gaussian_sigma = config.loss_sigma;
  sp.scale_weights = config.loss_scale_weights;
  sp.L = config.loss_dynamic_range;
  net.loss = nn::composite_loss_node(g, net.target, net.out, config.loss_lambda, sp,
                                     config.dims, &net.mse_term, &net.msssim_term);
  return net;
}

int64_t EnhancerNet::parameter_count() {
  int64_t n = 0;
  for (NodeId p : graph.parameters()) n += graph.value(p).numel();
  return n;
}

void EnhancerModel::save(const std::string& path) const {
  nn::Checkpoint c = checkpoint;
  c.arch_json = config.to_json();
  nn::save_checkpoint(path, c);
}

EnhancerModel EnhancerModel::load(const std::string& path) {
  EnhancerModel m;
  m.checkpoint = nn::load_checkpoint(path);
  m.config = DDNetConfig::from_json(m.checkpoint.arch_json);
  return m;
}

EnhancerNet EnhancerModel::instantiate() const {
  EnhancerNet net = build_ddnet(config);
  nn::load_into_graph(checkpoint, net.graph);
  return net;
}

namespace {

Tensor volume_to_tensor(const Volume& v, int dims, double scale) {
  std::vector<int64_t> shape =
      dims == 3 ? std::vector<int64_t>{1, 1, v.nz, v.ny, v.nx}
                : std::vector<int64_t>{1, 1, v.ny, v.nx};
  if (dims == 2 && v.nz != 1)
    throw std::invalid_argument("enhancer: 2D model expects depth-1 volumes");
  Tensor t(shape);
  for (size_t i = 0; i < v.values.size(); ++i) t.data[i] = v.values[i] / scale;
  return t;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  std::vector<int64_t> shape = items[0].shape;
  shape[0] = static_cast<int64_t>(items.size());
  Tensor out(shape);
  const size_t per = items[0].data.size();
  for (size_t i = 0; i < items.size(); ++i)
    std::copy_n(items[i].data.data(), per, out.data.data() + i * per);
  return out;
}

}  // namespace

TrainResult train_enhancer(const std::vector<std::pair<Volume, Volume>>& train_pairs,
                           const std::vector<std::pair<Volume, Volume>>& val_pairs,
                           const DDNetConfig& config, const TrainHyper& hyper) {
  config.validate();
  if (train_pairs.empty()) throw std::invalid_argument("train_enhancer: no data");
  if (config.dims == 3 && hyper.batch < 2)
    throw std::invalid_argument("train_enhancer: 3D training requires batch >= 2");

  EnhancerNet net = build_ddnet(config);
  nn::AdamHyper ah;
  ah.lr = hyper.lr;
  ah.grad_clip_norm = hyper.grad_clip_norm;
  nn::Adam adam(net.graph, ah);

  std::ofstream log;
  if (!hyper.log_csv_path.empty()) {
    log.open(hyper.log_csv_path);
    log << "iteration,loss,mse_term,msssim_term\n";
  }

  auto batch_tensors = [&](const std::vector<std::pair<Volume, Volume>>& pairs,
                           const std::vector<size_t>& idx, size_t lo, size_t hi) {
    std::vector<Tensor> xs, ys;
    for (size_t i = lo; i < hi; ++i) {
      xs.push_back(volume_to_tensor(pairs[idx[i]].first, config.dims, config.input_scale));
      ys.push_back(volume_to_tensor(pairs[idx[i]].second, config.dims, config.input_scale));
    }
    return std::make_pair(stack_batch(xs), stack_batch(ys));
  };

  TrainResult result;
  result.model.config = config;
  nn::Checkpoint stable = nn::checkpoint_from_graph(net.graph, config.to_json());
  nn::Checkpoint best = stable;
  double best_val = std::numeric_limits<double>::infinity();

  std::mt19937_64 rng(splitmix64(hyper.seed ^ 0xDD4E7ULL));
  std::vector<size_t> order(train_pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  long long iteration = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    net.graph.set_training(true);
    double epoch_loss = 0.0;
    int n_batches = 0;
    bool nan_abort = false;
    for (size_t lo = 0; lo < order.size(); lo += hyper.batch) {
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(hyper.batch));
      if (config.dims == 3 && hi - lo < 2) continue;
      auto [x, y] = batch_tensors(train_pairs, order, lo, hi);
      net.graph.set_input("x", std::move(x));
      net.graph.set_input("y", std::move(y));
      try {
        const double l = net.graph.forward(net.loss).data[0];
        if (log.is_open())
          log << iteration << ',' << l << ','
              << net.graph.value(net.mse_term).data[0] << ','
              << (net.msssim_term != kNoNode
                      ? net.graph.value(net.msssim_term).data[0]
                      : 1.0)
              << '\n';
        net.graph.backward(net.loss);
        adam.step();
        epoch_loss += l;
        ++n_batches;
        ++iteration;
      } catch (const std::runtime_error&) {
        nan_abort = true;
        break;
      }
    }
    if (nan_abort) {
      result.aborted_on_nan = true;
      result.model.checkpoint = stable;
      return result;
    }
    result.epoch_train_loss.push_back(n_batches ? epoch_loss / n_batches : 0.0);
    stable = nn::checkpoint_from_graph(net.graph, config.to_json());

    // Validation at running statistics.
    double val_loss = 0.0;
    if (!val_pairs.empty()) {
      net.graph.set_training(false);
      std::vector<size_t> vidx(val_pairs.size());
      for (size_t i = 0; i < vidx.size(); ++i) vidx[i] = i;
      int vb = 0;
      for (size_t lo = 0; lo < vidx.size(); lo += hyper.batch) {
        const size_t hi = std::min(vidx.size(), lo + static_cast<size_t>(hyper.batch));
        auto [x, y] = batch_tensors(val_pairs, vidx, lo, hi);
        net.graph.set_input("x", std::move(x));
        net.graph.set_input("y", std::move(y));
        val_loss += net.graph.forward(net.loss).data[0];
        ++vb;
      }
      val_loss /= std::max(1, vb);
    } else {
      val_loss = result.epoch_train_loss.back();
    }
    result.epoch_val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = stable;
    }
  }

  result.model.checkpoint = hyper.epochs > 0 ? best : stable;
  return result;
}

Volume enhance_2d(EnhancerNet& net, const Volume& image) {
  if (net.config.dims != 2)
    throw std::invalid_argument("enhance_2d: model is not 2D");
  net.graph.set_training(false);
  net.graph.set_input("x", volume_to_tensor(image, 2, net.config.input_scale));
  const Tensor& out = net.graph.forward(net.out);
  Volume result(image.nx, image.ny, 1, image.voxel_mm);
  for (size_t i = 0; i < result.values.size(); ++i)
    result.values[i] = std::max(0.0, out.data[i] * net.config.input_scale);
  return result;
}

Volume enhance_volume(EnhancerNet& net, const Volume& volume) {
  if (net.config.dims == 2) {
    Volume out(volume.nx, volume.ny, volume.nz, volume.voxel_mm);
    for (int z = 0; z < volume.nz; ++z) {
      Volume slice(volume.nx, volume.ny, 1, volume.voxel_mm);
      std::copy_n(volume.values.data() + volume.index(0, 0, z), slice.size(),
                  slice.values.data());
      const Volume es = enhance_2d(net, slice);
      std::copy_n(es.values.data(), es.size(),
                  out.values.data() + out.index(0, 0, z));
    }
    return out;
  }
  net.graph.set_training(false);
  net.graph.set_input("x", volume_to_tensor(volume, 3, net.config.input_scale));
  const Tensor& out = net.graph.forward(net.out);
  Volume result(volume.nx, volume.ny, volume.nz, volume.voxel_mm);
  for (size_t i = 0; i < result.values.size(); ++i)
    result.values[i] = std::max(0.0, out.data[i] * net.config.input_scale);
  return result;
}

SubsampleResult subsample_slices(const Volume& volume, int target_n) {
  if (target_n < 1) throw std::invalid_argument("subsample_slices: target_n >= 1");
  if (volume.nz < target_n)
    throw std::invalid_argument("subsample_slices: depth < target_n");
  const int stride = volume.nz / target_n;
  SubsampleResult r;
  r.stride = stride;
  r.homogeneous = stride * target_n == volume.nz;
  r.volume = Volume(volume.nx, volume.ny, target_n, volume.voxel_mm);
  const size_t slice_sz = static_cast<size_t>(volume.nx) * volume.ny;
  for (int i = 0; i < target_n; ++i)
    std::copy_n(volume.values.data() + volume.index(0, 0, i * stride), slice_sz,
                r.volume.values.data() + r.volume.index(0, 0, i));
  return r;
}

void TilingPlan::validate() const {
  if (tile_xy < 1 || pad_px < 0 || n_slices < 1)
    throw std::invalid_argument("TilingPlan: bad sizes");
}

Volume enhance_volume_tiled(EnhancerNet& net, const Volume& volume,
                            const TilingPlan& plan) {
  plan.validate();
  if (volume.nx % plan.tile_xy != 0 || volume.ny % plan.tile_xy != 0)
    throw std::invalid_argument(
        "enhance_volume_tiled: volume x/y not divisible by tile size");
  const int tiles_x = volume.nx / plan.tile_xy;
  const int tiles_y = volume.ny / plan.tile_xy;
  const int t = plan.tile_xy, p = plan.pad_px;

  Volume out(volume.nx, volume.ny, volume.nz, volume.voxel_mm);
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      Volume tile(t + 2 * p, t + 2 * p, volume.nz, volume.voxel_mm);
      for (int z = 0; z < volume.nz; ++z)
        for (int y = 0; y < t + 2 * p; ++y)
          for (int x = 0; x < t + 2 * p; ++x) {
            const int sx = tx * t + x - p;
            const int sy = ty * t + y - p;
            // Pad from real neighboring data where it exists, zero outside.
            tile.at(x, y, z) = (sx >= 0 && sx < volume.nx && sy >= 0 && sy < volume.ny)
                                   ? volume.at(sx, sy, z)
                                   : 0.0;
          }
      const Volume enhanced = enhance_volume(net, tile);
      for (int z = 0; z < volume.nz; ++z)
        for (int y = 0; y < t; ++y)
          for (int x = 0; x < t; ++x)
            out.at(tx * t + x, ty * t + y, z) = enhanced.at(x + p, y + p, z);
    }
  }
  return out;
}

}  // namespace fact::enh
