#include "fact/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "fact/optim.hpp"
#include "nlohmann/json.hpp"

namespace fact::cls {

using nn::Graph;
using nn::NodeId;
using nn::Tensor;

void ClassifierConfig::validate() const {
  if (n_blocks < 1 || layers_per_block < 1 || growth_rate < 1 || stem_channels < 1)
    throw std::invalid_argument("ClassifierConfig: bad block sizing");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("ClassifierConfig: kernel must be odd");
  if (input_size < 4) throw std::invalid_argument("ClassifierConfig: input too small");
  if (hu_hi <= hu_lo) throw std::invalid_argument("ClassifierConfig: bad HU window");
  if (init_std <= 0) throw std::invalid_argument("ClassifierConfig: bad init_std");
}

ClassifierConfig ClassifierConfig::paper_faithful() {
  ClassifierConfig c;
  c.growth_rate = 16;
  c.stem_channels = 16;
  return c;
}

ClassifierConfig ClassifierConfig::desk() { return {}; }

std::string ClassifierConfig::to_json() const {
  nlohmann::json j;
  j["n_blocks"] = n_blocks;
  j["layers_per_block"] = layers_per_block;
  j["growth_rate"] = growth_rate;
  j["stem_channels"] = stem_channels;
  j["kernel"] = kernel;
  j["input_size"] = input_size;
  j["init_std"] = init_std;
  j["init_seed"] = init_seed;
  j["bn_momentum"] = bn_momentum;
  j["hu_lo"] = hu_lo;
  j["hu_hi"] = hu_hi;
  return j.dump();
}

ClassifierConfig ClassifierConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ClassifierConfig c;
  c.n_blocks = j.at("n_blocks");
  c.layers_per_block = j.at("layers_per_block");
  c.growth_rate = j.at("growth_rate");
  c.stem_channels = j.at("stem_channels");
  c.kernel = j.at("kernel");
  c.input_size = j.at("input_size");
  c.init_std = j.at("init_std");
  c.init_seed = j.at("init_seed");
  c.bn_momentum = j.at("bn_momentum");
  c.hu_lo = j.at("hu_lo");
  c.hu_hi = j.at("hu_hi");
  c.validate();
  return c;
}

void AugmentationSpec::validate() const {
  if (noise_probability < 0 || noise_probability > 1 || contrast_probability < 0 ||
      contrast_probability > 1)
    throw std::invalid_argument("AugmentationSpec: probabilities must be in [0,1]");
  if (noise_variance < 0 || oscillation_magnitude < 0)
    throw std::invalid_argument("AugmentationSpec: negative magnitude");
}

ClassifierNet build_classifier(const ClassifierConfig& config) {
  config.validate();
  ClassifierNet net;
  net.config = config;
  Graph& g = net.graph;
  const int k = config.kernel;
  const int pad = k / 2;
  int param_idx = 0;
  auto next_seed = [&] {
    return hash_combine(config.init_seed, static_cast<uint64_t>(param_idx++));
  };

  net.in = g.input("x");
  net.target = g.input("y");

  NodeId cur = g.conv(
      net.in,
      g.parameter("stem.w", nn::init_gaussian({config.stem_channels, 1, k, k, k},
                                              0.0, config.init_std, next_seed())),
      g.parameter("stem.b", Tensor({config.stem_channels}, 0.0)), 1, pad);
  cur = g.relu(g.batch_norm(
      "stem.bn", cur, g.parameter("stem.bn.gamma", Tensor({config.stem_channels}, 1.0)),
      g.parameter("stem.bn.beta", Tensor({config.stem_channels}, 0.0)),
      config.bn_momentum));
  int ch = config.stem_channels;
  cur = g.max_pool(cur, 2, 2, 0);

  for (int bi = 0; bi < config.n_blocks; ++bi) {
    for (int li = 0; li < config.layers_per_block; ++li) {
      const std::string base = "b" + std::to_string(bi) + ".l" + std::to_string(li);
      NodeId c = g.conv(
          cur,
          g.parameter(base + ".w", nn::init_gaussian({config.growth_rate, ch, k, k, k},
                                                     0.0, config.init_std, next_seed())),
          g.parameter(base + ".b", Tensor({config.growth_rate}, 0.0)), 1, pad);
      c = g.relu(g.batch_norm(
          base + ".bn", c,
          g.parameter(base + ".bn.gamma", Tensor({config.growth_rate}, 1.0)),
          g.parameter(base + ".bn.beta", Tensor({config.growth_rate}, 0.0)),
          config.bn_momentum));
      cur = g.concat({cur, c});
      ch += config.growth_rate;
    }
    if (bi + 1 < config.n_blocks) cur = g.max_pool(cur, 2, 2, 0);
  }

  cur = g.global_avg_pool(cur);
  // Zero-initialized head: a fresh classifier scores exactly 0.5.
  net.logit = g.linear(cur, g.parameter("head.w", Tensor({ch, 1}, 0.0)),
                       g.parameter("head.b", Tensor({1}, 0.0)));
  net.score = g.sigmoid(net.logit);
  net.loss = g.bce_with_logits(net.logit, net.target);
  return net;
}

int64_t ClassifierNet::parameter_count() {
  int64_t n = 0;
  for (NodeId p : graph.parameters()) n += graph.value(p).numel();
  return n;
}

void ClassifierModel::save(const std::string& path) const {
  nn::Checkpoint c = checkpoint;
  c.arch_json = config.to_json();
  nn::save_checkpoint(path, c);
}

ClassifierModel ClassifierModel::load(const std::string& path) {
  ClassifierModel m;
  m.checkpoint = nn::load_checkpoint(path);
  m.config = ClassifierConfig::from_json(m.checkpoint.arch_json);
  return m;
}

ClassifierNet ClassifierModel::instantiate() const {
  ClassifierNet net = build_classifier(config);
  nn::load_into_graph(checkpoint, net.graph);
  return net;
}

Volume resample_to_cube(const Volume& v, int n) {
  if (n < 1) throw std::invalid_argument("resample_to_cube: n >= 1");
  Volume out(n, n, n, v.voxel_mm * v.nx / n);
  auto sample = [&](double fx, double fy, double fz) {
    // Trilinear interpolation at fractional voxel coordinates, clamped edges.
    const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, v.nx - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, v.ny - 1);
    const int z0 = std::clamp(static_cast<int>(std::floor(fz)), 0, v.nz - 1);
    const int x1 = std::min(x0 + 1, v.nx - 1);
    const int y1 = std::min(y0 + 1, v.ny - 1);
    const int z1 = std::min(z0 + 1, v.nz - 1);
    const double tx = std::clamp(fx - x0, 0.0, 1.0);
    const double ty = std::clamp(fy - y0, 0.0, 1.0);
    const double tz = std::clamp(fz - z0, 0.0, 1.0);
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(v.at(x0, y0, z0), v.at(x1, y0, z0), tx);
    const double c10 = lerp(v.at(x0, y1, z0), v.at(x1, y1, z0), tx);
    const double c01 = lerp(v.at(x0, y0, z1), v.at(x1, y0, z1), tx);
    const double c11 = lerp(v.at(x0, y1, z1), v.at(x1, y1, z1), tx);
    return lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz);
  };
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        out.at(x, y, z) = sample((x + 0.5) * v.nx / n - 0.5,
                                 (y + 0.5) * v.ny / n - 0.5,
                                 (z + 0.5) * v.nz / n - 0.5);
  return out;
}

nn::Tensor preprocess_case(const Volume& volume, const seg::Mask& mask,
                           const ClassifierConfig& config) {
  // Mask fill of mu = 0 maps to HU -1000 (air), i.e. normalized 0.
  const Volume masked = seg::mask_apply(volume, mask, 0.0);
  const Volume cube = resample_to_cube(masked, config.input_size);
  const int n = config.input_size;
  Tensor t({1, 1, n, n, n});
  const double span = config.hu_hi - config.hu_lo;
  for (size_t i = 0; i < cube.values.size(); ++i) {
    const double hu = hu_from_mu(cube.values[i]);
    t.data[i] = std::clamp((hu - config.hu_lo) / span, 0.0, 1.0);
  }
  return t;
}

nn::Tensor augment(const nn::Tensor& x, const AugmentationSpec& spec, uint64_t seed) {
  spec.validate();
  if (x.rank() != 5) throw std::invalid_argument("augment: expected a 5D tensor");
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Tensor out = x;

  const bool add_noise = u01(rng) < spec.noise_probability;
  const bool shift_contrast = u01(rng) < spec.contrast_probability;
  if (add_noise) {
    std::normal_distribution<double> noise(0.0, std::sqrt(spec.noise_variance));
    for (double& v : out.data) v += noise(rng);
  }
  if (shift_contrast) {
    const double gain = 0.8 + 0.4 * u01(rng);
    for (double& v : out.data) v *= gain;
  }
  if (spec.oscillation_magnitude > 0.0) {
    // Low-frequency multiplicative wave across the volume.
    const double phase = 2.0 * kPi * u01(rng);
    const double fx = 1.0 + u01(rng), fy = 1.0 + u01(rng), fz = 1.0 + u01(rng);
    const int64_t nz = x.shape[2], ny = x.shape[3], nx = x.shape[4];
    size_t i = 0;
    for (int64_t b = 0; b < x.shape[0] * x.shape[1]; ++b)
      for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y)
          for (int64_t xx = 0; xx < nx; ++xx, ++i) {
            const double w = std::sin(
                2.0 * kPi * (fx * xx / nx + fy * y / ny + fz * z / nz) + phase);
            out.data[i] *= 1.0 + spec.oscillation_magnitude * w;
          }
  }
  return out;
}

ClassifierTrainResult train_classifier(const std::vector<LabeledCase>& dataset,
                                       const ClassifierConfig& config,
                                       const ClassifierTrainHyper& hyper) {
  config.validate();
  bool has_pos = false, has_neg = false;
  for (const auto& c : dataset) (c.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train_classifier: both classes required");

  std::vector<Tensor> inputs;
  std::vector<double> labels;
  inputs.reserve(dataset.size());
  for (const auto& c : dataset) {
    inputs.push_back(preprocess_case(c.volume, c.mask, config));
    labels.push_back(c.label ? 1.0 : 0.0);
  }

  ClassifierNet net = build_classifier(config);
  nn::AdamHyper ah;
  ah.lr = hyper.lr;
  nn::Adam adam(net.graph, ah);

  std::ofstream log;
  if (!hyper.log_csv_path.empty()) {
    log.open(hyper.log_csv_path);
    log << "iteration,loss\n";
  }

  std::mt19937_64 rng(splitmix64(hyper.seed ^ 0xC1A55ULL));
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  ClassifierTrainResult result;
  long long iteration = 0;
  net.graph.set_training(true);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (size_t lo = 0; lo < order.size(); lo += hyper.batch) {
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(hyper.batch));
      if (hi - lo < 2) continue;  // batch norm needs at least 2 samples
      const int64_t bsz = static_cast<int64_t>(hi - lo);
      const int n = config.input_size;
      Tensor x({bsz, 1, n, n, n});
      Tensor y({bsz, 1});
      const size_t per = inputs[0].data.size();
      for (size_t i = lo; i < hi; ++i) {
        Tensor item = inputs[order[i]];
        if (hyper.augment_enabled)
          item = augment(item, hyper.augmentation,
                         hash_combine(hyper.seed, hash_combine(epoch, order[i])));
        std::copy_n(item.data.data(), per, x.data.data() + (i - lo) * per);
        y.data[i - lo] = labels[order[i]];
      }
      net.graph.set_input("x", std::move(x));
      net.graph.set_input("y", std::move(y));
      const double l = net.graph.forward(net.loss).data[0];
      if (log.is_open()) log << iteration << ',' << l << '\n';
      net.graph.backward(net.loss);
      adam.step();
      epoch_loss += l;
      ++n_batches;
      ++iteration;
    }
    result.epoch_loss.push_back(n_batches ? epoch_loss / n_batches : 0.0);
  }

  result.model.config = config;
  result.model.checkpoint = nn::checkpoint_from_graph(net.graph, config.to_json());
  return result;
}

double predict(ClassifierNet& net, const Volume& volume, const seg::Mask& mask) {
  net.graph.set_training(false);
  net.graph.set_input("x", preprocess_case(volume, mask, net.config));
  return net.graph.forward(net.score).data[0];
}

}  // namespace fact::cls
