#include "fact/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fact::cfg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_quote = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_quote = !in_quote;
    if (line[i] == '#' && !in_quote) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
    return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cf;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    auto& sec = cf.sections_[section];
    if (sec.count(key))
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " +
                        section + "." + key);
    sec[key] = value;
  }
  return cf;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   std::optional<std::string> fallback) const {
  const auto s = sections_.find(section);
  if (s != sections_.end()) {
    const auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  if (fallback) return *fallback;
  throw ConfigError("config: missing required key " + section + "." + key);
}

long long ConfigFile::get_int(const std::string& section, const std::string& key,
                              std::optional<long long> fallback) const {
  if (!has(section, key)) {
    if (fallback) return *fallback;
    throw ConfigError("config: missing required key " + section + "." + key);
  }
  const std::string v = get_string(section, key);
  try {
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: " + section + "." + key + ": not an integer: " + v);
  }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              std::optional<double> fallback) const {
  if (!has(section, key)) {
    if (fallback) return *fallback;
    throw ConfigError("config: missing required key " + section + "." + key);
  }
  const std::string v = get_string(section, key);
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: " + section + "." + key + ": not a number: " + v);
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          std::optional<bool> fallback) const {
  if (!has(section, key)) {
    if (fallback) return *fallback;
    throw ConfigError("config: missing required key " + section + "." + key);
  }
  std::string v = get_string(section, key);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + section + "." + key + ": not a boolean: " + v);
}

std::vector<double> ConfigFile::get_double_list(
    const std::string& section, const std::string& key,
    std::optional<std::vector<double>> fallback) const {
  if (!has(section, key)) {
    if (fallback) return *fallback;
    throw ConfigError("config: missing required key " + section + "." + key);
  }
  const std::string v = get_string(section, key);
  std::vector<double> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config: " + section + "." + key + ": bad list element: " + item);
    }
  }
  if (out.empty())
    throw ConfigError("config: " + section + "." + key + ": empty list");
  return out;
}

void RunConfig::validate() const {
  if (scans_train < 1 || scans_test < 2)
    throw ConfigError("run config: need >= 1 training and >= 2 test scans");
  if (nx < 8 || ny < 8 || nz < 1 || voxel_mm <= 0)
    throw ConfigError("run config: bad image grid");
  if (low_photons <= 0) throw ConfigError("run config: low_photons must be > 0");
  if (out_dir.empty()) throw ConfigError("run config: empty out_dir");
  geometry.validate();
  filter.validate();
  phantom_params.validate();
  enhancer.validate();
  classifier.validate();
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  // Acquisition scaled so the fan covers the 64 mm desk grid.
  c.geometry.sdd_mm = 1500.0;
  c.geometry.sod_mm = 1000.0;
  c.geometry.n_detectors = 192;
  c.geometry.det_pitch_mm = 1.0;
  c.geometry.n_views = 180;
  c.geometry.step_deg = 2.0;

  c.enhancer = enh::DDNetConfig::desk_2d();
  // Reconstructions live around water mu; map them near [0, 1] for the net.
  c.enhancer.input_scale = 2.0 * kWaterMu;
  c.enhancer_train.epochs = 6;
  c.enhancer_train.batch = 4;
  c.enhancer_train.lr = 1e-3;

  c.classifier = cls::ClassifierConfig::desk();
  c.classifier_train.epochs = 30;
  c.classifier_train.lr = 1e-3;
  return c;
}

RunConfig RunConfig::from_text(const std::string& text) {
  const ConfigFile f = ConfigFile::parse(text);
  RunConfig c = desk_default();

  if (!f.has("run", "seed")) throw ConfigError("config: [run] seed is required");
  const long long seed = f.get_int("run", "seed");
  if (seed < 0) throw ConfigError("config: seed must be >= 0");
  c.seed = static_cast<uint64_t>(seed);
  c.out_dir = f.get_string("run", "out_dir", c.out_dir);
  c.scans_train = static_cast<int>(f.get_int("run", "scans_train", c.scans_train));
  c.scans_val = static_cast<int>(f.get_int("run", "scans_val", c.scans_val));
  c.scans_test = static_cast<int>(f.get_int("run", "scans_test", c.scans_test));

  c.nx = static_cast<int>(f.get_int("image", "nx", c.nx));
  c.ny = static_cast<int>(f.get_int("image", "ny", c.ny));
  c.nz = static_cast<int>(f.get_int("image", "nz", c.nz));
  c.voxel_mm = f.get_double("image", "voxel_mm", c.voxel_mm);

  c.geometry.sdd_mm = f.get_double("geometry", "sdd_mm", c.geometry.sdd_mm);
  c.geometry.sod_mm = f.get_double("geometry", "sod_mm", c.geometry.sod_mm);
  c.geometry.n_detectors =
      static_cast<int>(f.get_int("geometry", "n_detectors", c.geometry.n_detectors));
  c.geometry.det_pitch_mm =
      f.get_double("geometry", "det_pitch_mm", c.geometry.det_pitch_mm);
  c.geometry.n_views =
      static_cast<int>(f.get_int("geometry", "n_views", c.geometry.n_views));
  c.geometry.step_deg = f.get_double("geometry", "step_deg", c.geometry.step_deg);

  c.low_photons = f.get_double("dose", "low_photons", c.low_photons);

  const std::string fk = f.get_string("filter", "kind", "ramlak");
  if (fk == "ramlak") c.filter.kind = recon::FilterKind::RamLak;
  else if (fk == "shepp") c.filter.kind = recon::FilterKind::SheppLogan;
  else if (fk == "hann") c.filter.kind = recon::FilterKind::Hann;
  else throw ConfigError("config: unknown filter kind: " + fk);
  c.filter.cutoff = f.get_double("filter", "cutoff", c.filter.cutoff);

  c.air_threshold_mu =
      f.get_double("segment", "air_threshold_mu", c.air_threshold_mu);

  auto& pp = c.phantom_params;
  pp.min_blobs = static_cast<int>(f.get_int("phantom", "min_blobs", pp.min_blobs));
  pp.max_blobs = static_cast<int>(f.get_int("phantom", "max_blobs", pp.max_blobs));
  pp.blob_radius_min_mm =
      f.get_double("phantom", "blob_radius_min_mm", pp.blob_radius_min_mm);
  pp.blob_radius_max_mm =
      f.get_double("phantom", "blob_radius_max_mm", pp.blob_radius_max_mm);
  pp.blob_mu_min = f.get_double("phantom", "blob_mu_min", pp.blob_mu_min);
  pp.blob_mu_max = f.get_double("phantom", "blob_mu_max", pp.blob_mu_max);
  pp.body_mu = f.get_double("phantom", "body_mu", pp.body_mu);
  pp.lung_mu_fraction =
      f.get_double("phantom", "lung_mu_fraction", pp.lung_mu_fraction);

  auto& e = c.enhancer;
  e.dims = static_cast<int>(f.get_int("enhancer", "dims", e.dims));
  e.layers_per_block =
      static_cast<int>(f.get_int("enhancer", "layers_per_block", e.layers_per_block));
  e.growth_rate = static_cast<int>(f.get_int("enhancer", "growth_rate", e.growth_rate));
  e.stem_channels =
      static_cast<int>(f.get_int("enhancer", "stem_channels", e.stem_channels));
  e.kernel = static_cast<int>(f.get_int("enhancer", "kernel", e.kernel));
  e.pool_kernel = static_cast<int>(f.get_int("enhancer", "pool_kernel", e.pool_kernel));
  e.pool_stride = static_cast<int>(f.get_int("enhancer", "pool_stride", e.pool_stride));
  e.init_seed = static_cast<uint64_t>(f.get_int("enhancer", "init_seed",
                                                static_cast<long long>(e.init_seed)));
  e.input_scale = f.get_double("enhancer", "input_scale", e.input_scale);
  e.loss_lambda = f.get_double("enhancer", "loss_lambda", e.loss_lambda);
  e.loss_window = static_cast<int>(f.get_int("enhancer", "loss_window", e.loss_window));
  e.loss_sigma = f.get_double("enhancer", "loss_sigma", e.loss_sigma);
  e.loss_scale_weights =
      f.get_double_list("enhancer", "loss_scale_weights", e.loss_scale_weights);
  e.loss_dynamic_range =
      f.get_double("enhancer", "loss_dynamic_range", e.loss_dynamic_range);

  auto& et = c.enhancer_train;
  et.lr = f.get_double("enhancer_train", "lr", et.lr);
  et.batch = static_cast<int>(f.get_int("enhancer_train", "batch", et.batch));
  et.epochs = static_cast<int>(f.get_int("enhancer_train", "epochs", et.epochs));
  et.grad_clip_norm =
      f.get_double("enhancer_train", "grad_clip_norm", et.grad_clip_norm);

  auto& cl = c.classifier;
  cl.n_blocks = static_cast<int>(f.get_int("classifier", "n_blocks", cl.n_blocks));
  cl.layers_per_block =
      static_cast<int>(f.get_int("classifier", "layers_per_block", cl.layers_per_block));
  cl.growth_rate =
      static_cast<int>(f.get_int("classifier", "growth_rate", cl.growth_rate));
  cl.stem_channels =
      static_cast<int>(f.get_int("classifier", "stem_channels", cl.stem_channels));
  cl.input_size = static_cast<int>(f.get_int("classifier", "input_size", cl.input_size));

  auto& ct = c.classifier_train;
  ct.lr = f.get_double("classifier_train", "lr", ct.lr);
  ct.batch = static_cast<int>(f.get_int("classifier_train", "batch", ct.batch));
  ct.epochs = static_cast<int>(f.get_int("classifier_train", "epochs", ct.epochs));
  ct.augment_enabled = f.get_bool("classifier_train", "augment", ct.augment_enabled);

  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_text(buf.str());
}

}  // namespace fact::cfg
