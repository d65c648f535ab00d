#pragma once

#include <iosfwd>
#include <string>

#include "fact/config.hpp"
#include "fact/diagnostics.hpp"

namespace fact::pipe {

// Raised when one experiment stage fails; earlier artifacts stay on disk.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_, const std::string& what)
      : std::runtime_error("stage '" + stage_ + "' failed: " + what),
        stage(std::move(stage_)) {}
};

struct ExperimentResult {
  diag::DiagnosticReport report;
  std::string manifest_json;
  std::string out_dir;
};

// Full simulate -> enhance -> classify-both-arms -> compare experiment.
// Stages: (1) labeled phantom generation, (2) high-quality (noiseless) and
// low-quality (Poisson) reconstructions, (3) enhancer training, (4)
// classifier training on the high-quality arm, (5) segmentation of the
// pre-enhancement volumes, (6) scoring both arms with the same classifier
// and masks, (7) report + manifest emission.
ExperimentResult run_experiment(const cfg::RunConfig& config,
                                std::ostream* log = nullptr);

// Simulation helper shared with the CLI: one scan's high/low quality
// reconstruction pair from a phantom.
struct ScanPair {
  Volume high;  // noiseless FBP
  Volume low;   // Poisson-noised FBP at config.low_photons
};
ScanPair simulate_scan(const Volume& mu, const cfg::RunConfig& config,
                       uint64_t noise_seed);

}  // namespace fact::pipe
