#include "fact/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <vector>

#include "fact/io.hpp"
#include "fact/recon.hpp"
#include "nlohmann/json.hpp"

namespace fact::pipe {

namespace fs = std::filesystem;

namespace {

uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("manifest: cannot hash missing file: " + path);
  uint64_t h = 0xCBF29CE484222325ULL;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
  return h;
}

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Canonical config serialization used for the manifest's config hash.
std::string config_fingerprint(const cfg::RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["scans"] = {c.scans_train, c.scans_val, c.scans_test};
  j["image"] = {c.nx, c.ny, c.nz, c.voxel_mm};
  j["geometry"] = {c.geometry.sdd_mm,       c.geometry.sod_mm,
                   c.geometry.n_detectors,  c.geometry.det_pitch_mm,
                   c.geometry.n_views,      c.geometry.step_deg};
  j["low_photons"] = c.low_photons;
  j["filter"] = {static_cast<int>(c.filter.kind), c.filter.cutoff};
  j["air_threshold_mu"] = c.air_threshold_mu;
  j["phantom"] = {c.phantom_params.min_blobs,          c.phantom_params.max_blobs,
                  c.phantom_params.blob_radius_min_mm, c.phantom_params.blob_radius_max_mm,
                  c.phantom_params.blob_mu_min,        c.phantom_params.blob_mu_max,
                  c.phantom_params.body_mu,            c.phantom_params.lung_mu_fraction};
  j["enhancer"] = nlohmann::json::parse(c.enhancer.to_json());
  j["enhancer_train"] = {c.enhancer_train.lr, c.enhancer_train.batch,
                         c.enhancer_train.epochs, c.enhancer_train.grad_clip_norm};
  j["classifier"] = nlohmann::json::parse(c.classifier.to_json());
  j["classifier_train"] = {c.classifier_train.lr, c.classifier_train.batch,
                           c.classifier_train.epochs,
                           c.classifier_train.augment_enabled};
  return j.dump();
}

struct Scan {
  int id = 0;
  bool positive = false;
  Volume mu;  // rasterized ground truth
  Volume high, low;
  seg::Mask mask;  // always from the pre-enhancement volume
};

void note(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << '\n';
}

}  // namespace

ScanPair simulate_scan(const Volume& mu, const cfg::RunConfig& config,
                       uint64_t noise_seed) {
  ScanPair pair;
  pair.high = Volume(mu.nx, mu.ny, mu.nz, mu.voxel_mm);
  pair.low = Volume(mu.nx, mu.ny, mu.nz, mu.voxel_mm);
  for (int z = 0; z < mu.nz; ++z) {
    const proj::Sinogram sino = proj::forward_project(mu, config.geometry, z);
    const Volume hq = recon::fbp_reconstruct(sino, config.geometry, mu.nx, mu.ny,
                                             mu.voxel_mm, config.filter);
    const proj::Sinogram counts = proj::apply_beer_poisson(
        sino, config.low_photons, hash_combine(noise_seed, static_cast<uint64_t>(z)));
    const proj::Sinogram noisy =
        proj::counts_to_line_integrals(counts, config.low_photons);
    const Volume lq = recon::fbp_reconstruct(noisy, config.geometry, mu.nx, mu.ny,
                                             mu.voxel_mm, config.filter);
    std::copy_n(hq.values.data(), hq.size(),
                pair.high.values.data() + pair.high.index(0, 0, z));
    std::copy_n(lq.values.data(), lq.size(),
                pair.low.values.data() + pair.low.index(0, 0, z));
  }
  return pair;
}

ExperimentResult run_experiment(const cfg::RunConfig& config, std::ostream* log) {
  config.validate();
  fs::create_directories(config.out_dir);
  const std::string dir = config.out_dir;
  std::vector<std::pair<std::string, std::string>> artifacts;  // name, path
  auto emit = [&](const std::string& name, const std::string& text) {
    const std::string path = dir + "/" + name;
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path);
    artifacts.emplace_back(name, path);
  };
  auto track = [&](const std::string& name) {
    artifacts.emplace_back(name, dir + "/" + name);
  };

  const int n_total = config.scans_train + config.scans_val + config.scans_test;
  std::vector<Scan> scans(n_total);

  // Stage 1: labeled phantoms.
  try {
    for (int i = 0; i < n_total; ++i) {
      scans[i].id = i;
      scans[i].positive = i % 2 == 0;
      const phantom::Phantom ph = phantom::make_lung_phantom(
          hash_combine(config.seed, 0x100 + i), scans[i].positive, config.nx,
          config.ny, config.nz, config.voxel_mm, config.phantom_params);
      scans[i].mu = phantom::rasterize(ph);
    }
    note(log, "stage phantoms: generated " + std::to_string(n_total) + " scans");
  } catch (const std::exception& e) {
    throw StageError("phantoms", e.what());
  }

  // Stage 2: high/low quality reconstructions.
  try {
    for (auto& s : scans) {
      ScanPair p = simulate_scan(s.mu, config,
                                 hash_combine(config.seed, 0x200 + s.id));
      s.high = std::move(p.high);
      s.low = std::move(p.low);
    }
    note(log, "stage simulate: reconstructed both arms");
  } catch (const std::exception& e) {
    throw StageError("simulate", e.what());
  }

  const int t0 = 0, v0 = config.scans_train, e0 = v0 + config.scans_val;

  // Stage 3: enhancer training on (low, high) pairs.
  enh::EnhancerModel enhancer;
  try {
    auto slice_pairs = [&](int lo, int hi) {
      std::vector<std::pair<Volume, Volume>> pairs;
      for (int i = lo; i < hi; ++i)
        for (int z = 0; z < config.nz; ++z) {
          Volume l(config.nx, config.ny, 1, config.voxel_mm);
          Volume h(config.nx, config.ny, 1, config.voxel_mm);
          std::copy_n(scans[i].low.values.data() + scans[i].low.index(0, 0, z),
                      l.size(), l.values.data());
          std::copy_n(scans[i].high.values.data() + scans[i].high.index(0, 0, z),
                      h.size(), h.values.data());
          pairs.emplace_back(std::move(l), std::move(h));
        }
      return pairs;
    };
    std::vector<std::pair<Volume, Volume>> train_pairs, val_pairs;
    if (config.enhancer.dims == 2) {
      train_pairs = slice_pairs(t0, v0);
      val_pairs = slice_pairs(v0, e0);
    } else {
      for (int i = t0; i < v0; ++i)
        train_pairs.emplace_back(scans[i].low, scans[i].high);
      for (int i = v0; i < e0; ++i)
        val_pairs.emplace_back(scans[i].low, scans[i].high);
    }
    enh::TrainHyper th = config.enhancer_train;
    th.seed = hash_combine(config.seed, 0x300);
    th.log_csv_path = dir + "/enhancer_train.csv";
    track("enhancer_train.csv");
    const enh::TrainResult tr =
        enh::train_enhancer(train_pairs, val_pairs, config.enhancer, th);
    if (tr.aborted_on_nan)
      throw std::runtime_error("training aborted on non-finite loss");
    enhancer = tr.model;
    enhancer.save(dir + "/enhancer.ckpt");
    track("enhancer.ckpt");
    note(log, "stage train-enhance: done, final train loss " +
                  std::to_string(tr.epoch_train_loss.empty()
                                     ? 0.0
                                     : tr.epoch_train_loss.back()));
  } catch (const std::exception& e) {
    throw StageError("train-enhance", e.what());
  }

  // Stage 4+5: segmentation of pre-enhancement volumes, classifier training
  // on the high-quality arm.
  cls::ClassifierModel classifier;
  try {
    for (auto& s : scans) {
      // Masks come from the original (never enhanced) reconstruction; the
      // high-quality arm is used where available (train/val), the low-quality
      // arm for test scans, matching what reaches the classifier.
      const Volume& src = s.id < e0 ? s.high : s.low;
      s.mask = seg::segment_lung(src, config.air_threshold_mu);
    }
    note(log, "stage segment: masks from pre-enhancement volumes");
  } catch (const std::exception& e) {
    throw StageError("segment", e.what());
  }
  try {
    std::vector<cls::LabeledCase> dataset;
    for (int i = t0; i < e0; ++i)
      dataset.push_back({scans[i].high, scans[i].mask, scans[i].positive ? 1 : 0});
    cls::ClassifierTrainHyper th = config.classifier_train;
    th.seed = hash_combine(config.seed, 0x400);
    th.log_csv_path = dir + "/classifier_train.csv";
    track("classifier_train.csv");
    classifier = cls::train_classifier(dataset, config.classifier, th).model;
    classifier.save(dir + "/classifier.ckpt");
    track("classifier.ckpt");
    note(log, "stage train-classify: done");
  } catch (const std::exception& e) {
    throw StageError("train-classify", e.what());
  }

  // Stage 6: score the test split twice with the same classifier and masks.
  std::vector<diag::ScoredCase> orig_cases, enh_cases;
  try {
    enh::EnhancerNet enh_net = enhancer.instantiate();
    cls::ClassifierNet cls_net = classifier.instantiate();
    for (int i = e0; i < n_total; ++i) {
      Scan& s = scans[i];
      const std::string sid = "scan" + std::to_string(s.id);
      const Volume enhanced = enh::enhance_volume(enh_net, s.low);
      orig_cases.push_back({sid, cls::predict(cls_net, s.low, s.mask),
                            s.positive ? 1 : 0});
      enh_cases.push_back({sid, cls::predict(cls_net, enhanced, s.mask),
                           s.positive ? 1 : 0});
      io::write_volume(dir + "/" + sid + "_low.vol", s.low, io::Kind::Mu);
      io::write_volume(dir + "/" + sid + "_enhanced.vol", enhanced, io::Kind::Mu);
      io::write_mask(dir + "/" + sid + "_mask.vol", s.mask);
      track(sid + "_low.vol");
      track(sid + "_enhanced.vol");
      track(sid + "_mask.vol");
    }
    std::ostringstream scores;
    scores << "id,label,score_original,score_enhanced\n";
    for (size_t i = 0; i < orig_cases.size(); ++i)
      scores << orig_cases[i].id << ',' << orig_cases[i].label << ','
             << orig_cases[i].score << ',' << enh_cases[i].score << '\n';
    emit("scores.csv", scores.str());
    note(log, "stage score: scored " + std::to_string(orig_cases.size()) +
                  " test scans twice");
  } catch (const std::exception& e) {
    throw StageError("score", e.what());
  }

  // Stage 7: report and manifest.
  ExperimentResult result;
  result.out_dir = dir;
  try {
    result.report = diag::compare_runs(orig_cases, enh_cases);
    emit("report.json", result.report.to_json());
    emit("metrics.csv", result.report.metrics_csv());
    emit("roc.csv", result.report.roc_csv());
    emit("comparison.txt", result.report.comparison_table());

    nlohmann::json manifest;
    manifest["config_hash"] = hex64(fnv1a64(config_fingerprint(config).data(),
                                            config_fingerprint(config).size()));
    manifest["seed"] = config.seed;
    manifest["stage_seeds"] = {
        {"phantoms_base", hash_combine(config.seed, 0x100)},
        {"noise_base", hash_combine(config.seed, 0x200)},
        {"enhancer_train", hash_combine(config.seed, 0x300)},
        {"classifier_train", hash_combine(config.seed, 0x400)}};
    manifest["mask_source"] = "pre_enhancement";
    manifest["checkpoints"] = {
        {"enhancer", hex64(hash_file(dir + "/enhancer.ckpt"))},
        {"classifier", hex64(hash_file(dir + "/classifier.ckpt"))}};
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [name, path] : artifacts) files[name] = hex64(hash_file(path));
    manifest["files"] = files;
    result.manifest_json = manifest.dump(2);
    std::ofstream os(dir + "/manifest.json", std::ios::binary);
    os << result.manifest_json;
    if (!os) throw std::runtime_error("cannot write manifest");
    note(log, "stage report: manifest written");
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("report", e.what());
  }
  return result;
}

}  // namespace fact::pipe
