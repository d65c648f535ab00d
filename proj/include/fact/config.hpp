#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fact/classifier.hpp"
#include "fact/core.hpp"
#include "fact/ddnet.hpp"
#include "fact/phantom.hpp"
#include "fact/projector.hpp"
#include "fact/recon.hpp"

namespace fact::cfg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Minimal TOML-style config text: [section] headers, key = value lines,
// '#' comments. Values are scalars or comma-separated number lists.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         std::optional<std::string> fallback = {}) const;
  long long get_int(const std::string& section, const std::string& key,
                    std::optional<long long> fallback = {}) const;
  double get_double(const std::string& section, const std::string& key,
                    std::optional<double> fallback = {}) const;
  bool get_bool(const std::string& section, const std::string& key,
                std::optional<bool> fallback = {}) const;
  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key,
                                      std::optional<std::vector<double>> fallback = {}) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

// Full experiment description: phantom family, acquisition, dose, both
// networks and their training hyper-parameters, dataset sizes.
struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "out";
  int scans_train = 8, scans_val = 2, scans_test = 10;
  int nx = 64, ny = 64, nz = 8;
  double voxel_mm = 1.0;

  proj::ScanGeometry geometry;
  double low_photons = 2e4;  // blank scan factor b of the low-quality arm
  recon::FilterSpec filter;
  phantom::LungPhantomParams phantom_params;
  double air_threshold_mu = 0.3 * kWaterMu;

  enh::DDNetConfig enhancer;
  enh::TrainHyper enhancer_train;
  cls::ClassifierConfig classifier;
  cls::ClassifierTrainHyper classifier_train;

  void validate() const;
  static RunConfig desk_default();
  // Seed is mandatory in the file ([run] seed = ...); everything else
  // defaults to the desk-scale configuration.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace fact::cfg
