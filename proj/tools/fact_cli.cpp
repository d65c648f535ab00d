#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fact/classifier.hpp"
#include "fact/config.hpp"
#include "fact/ddnet.hpp"
#include "fact/diagnostics.hpp"
#include "fact/io.hpp"
#include "fact/metrics.hpp"
#include "fact/phantom.hpp"
#include "fact/pipeline.hpp"
#include "fact/projector.hpp"
#include "fact/recon.hpp"
#include "fact/segment.hpp"

namespace {

using namespace fact;

constexpr int kOk = 0, kConfigError = 2, kStageError = 3;

struct Common {
  std::string config_path;
  long long seed = -1;  // -1 = take the config's seed
};

cfg::RunConfig load_config(const Common& c) {
  cfg::RunConfig rc;
  if (!c.config_path.empty()) {
    rc = cfg::RunConfig::from_file(c.config_path);
  } else {
    rc = cfg::RunConfig::desk_default();
    if (c.seed < 0)
      throw cfg::ConfigError("either --config or --seed is required");
  }
  if (c.seed >= 0) rc.seed = static_cast<uint64_t>(c.seed);
  return rc;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "run configuration file");
  cmd->add_option("--seed", c.seed, "seed override");
}

// Stage 1+2 of the experiment, shared by the training subcommands.
struct SimSet {
  std::vector<pipe::ScanPair> pairs;
  std::vector<seg::Mask> masks_high;
  std::vector<int> labels;
};

SimSet simulate_scans(const cfg::RunConfig& rc, int count) {
  SimSet s;
  for (int i = 0; i < count; ++i) {
    const bool positive = i % 2 == 0;
    const phantom::Phantom ph = phantom::make_lung_phantom(
        hash_combine(rc.seed, 0x100 + i), positive, rc.nx, rc.ny, rc.nz,
        rc.voxel_mm, rc.phantom_params);
    const Volume mu = phantom::rasterize(ph);
    s.pairs.push_back(pipe::simulate_scan(mu, rc, hash_combine(rc.seed, 0x200 + i)));
    s.masks_high.push_back(seg::segment_lung(s.pairs.back().high, rc.air_threshold_mu));
    s.labels.push_back(positive ? 1 : 0);
  }
  return s;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Simulated-CT enhancement and diagnosis toolkit"};
  app.require_subcommand(1);

  // phantom
  auto* c_ph = app.add_subcommand("phantom", "generate a labeled lung phantom volume");
  Common ph_common;
  add_common(c_ph, ph_common);
  bool ph_positive = false;
  std::string ph_out, ph_json;
  c_ph->add_flag("--positive", ph_positive, "add lesion blobs");
  c_ph->add_option("--out", ph_out, "output volume file")->required();
  c_ph->add_option("--json", ph_json, "also write the phantom spec as JSON");

  // project
  auto* c_pr = app.add_subcommand("project", "fan-beam forward projection of one slice");
  Common pr_common;
  add_common(c_pr, pr_common);
  std::string pr_in, pr_out;
  int pr_slice = 0;
  c_pr->add_option("--in", pr_in, "input volume")->required();
  c_pr->add_option("--slice", pr_slice, "slice index");
  c_pr->add_option("--out", pr_out, "output sinogram")->required();

  // noise
  auto* c_no = app.add_subcommand("noise", "apply Poisson noise to a sinogram");
  Common no_common;
  add_common(c_no, no_common);
  std::string no_in, no_out;
  double no_photons = 0.0;
  c_no->add_option("--in", no_in, "input line-integral sinogram")->required();
  c_no->add_option("--photons", no_photons, "blank scan factor override");
  c_no->add_option("--out", no_out, "output noisy line-integral sinogram")->required();

  // fbp
  auto* c_fbp = app.add_subcommand("fbp", "filtered backprojection of a sinogram");
  Common fbp_common;
  add_common(c_fbp, fbp_common);
  std::string fbp_in, fbp_out;
  c_fbp->add_option("--in", fbp_in, "input sinogram")->required();
  c_fbp->add_option("--out", fbp_out, "output slice volume")->required();

  // train-enhance
  auto* c_te = app.add_subcommand("train-enhance",
                                  "simulate training data and train the enhancer");
  Common te_common;
  add_common(c_te, te_common);
  std::string te_out;
  c_te->add_option("--out", te_out, "output checkpoint")->required();

  // enhance
  auto* c_en = app.add_subcommand("enhance", "run the enhancer on a volume");
  Common en_common;
  add_common(c_en, en_common);
  std::string en_model, en_in, en_out;
  bool en_tiled = false;
  c_en->add_option("--model", en_model, "enhancer checkpoint")->required();
  c_en->add_option("--in", en_in, "input volume")->required();
  c_en->add_option("--out", en_out, "output volume")->required();
  c_en->add_flag("--tiled", en_tiled, "tile the volume in x/y");

  // metrics
  auto* c_me = app.add_subcommand("metrics", "MSE / SSIM / MS-SSIM between volumes");
  Common me_common;
  add_common(c_me, me_common);
  std::string me_a, me_b;
  c_me->add_option("--a", me_a, "reference volume")->required();
  c_me->add_option("--b", me_b, "test volume")->required();

  // segment
  auto* c_se = app.add_subcommand("segment", "classical lung segmentation");
  Common se_common;
  add_common(c_se, se_common);
  std::string se_in, se_out;
  double se_thr = -1.0;
  c_se->add_option("--in", se_in, "input mu volume")->required();
  c_se->add_option("--out", se_out, "output mask")->required();
  c_se->add_option("--threshold", se_thr, "air threshold in mu units");

  // train-classify
  auto* c_tc = app.add_subcommand("train-classify",
                                  "simulate training data and train the classifier");
  Common tc_common;
  add_common(c_tc, tc_common);
  std::string tc_out;
  c_tc->add_option("--out", tc_out, "output checkpoint")->required();

  // score
  auto* c_sc = app.add_subcommand("score", "classifier probability for one volume");
  Common sc_common;
  add_common(c_sc, sc_common);
  std::string sc_model, sc_in, sc_mask;
  c_sc->add_option("--model", sc_model, "classifier checkpoint")->required();
  c_sc->add_option("--in", sc_in, "input volume")->required();
  c_sc->add_option("--mask", sc_mask, "lung mask")->required();

  // evaluate
  auto* c_ev = app.add_subcommand("evaluate",
                                  "diagnostic comparison from a scores CSV");
  Common ev_common;
  add_common(c_ev, ev_common);
  std::string ev_scores, ev_out;
  c_ev->add_option("--scores", ev_scores,
                   "CSV with id,label,score_original,score_enhanced")->required();
  c_ev->add_option("--out", ev_out, "directory for report files");

  // run
  auto* c_run = app.add_subcommand("run", "end-to-end experiment");
  Common run_common;
  add_common(c_run, run_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*c_ph) {
      const cfg::RunConfig rc = load_config(ph_common);
      const phantom::Phantom ph = phantom::make_lung_phantom(
          hash_combine(rc.seed, 0x100), ph_positive, rc.nx, rc.ny, rc.nz,
          rc.voxel_mm, rc.phantom_params);
      io::write_volume(ph_out, phantom::rasterize(ph), io::Kind::Mu);
      if (!ph_json.empty()) {
        std::ofstream os(ph_json);
        os << phantom::to_json(ph);
      }
      std::cout << "phantom written to " << ph_out << "\n";
    } else if (*c_pr) {
      const cfg::RunConfig rc = load_config(pr_common);
      const io::VolumeFile f = io::read_volume(pr_in);
      io::write_sinogram(pr_out,
                         proj::forward_project(f.volume, rc.geometry, pr_slice));
      std::cout << "sinogram written to " << pr_out << "\n";
    } else if (*c_no) {
      const cfg::RunConfig rc = load_config(no_common);
      const double photons = no_photons > 0 ? no_photons : rc.low_photons;
      const proj::Sinogram s = io::read_sinogram(no_in);
      const proj::Sinogram counts =
          proj::apply_beer_poisson(s, photons, hash_combine(rc.seed, 0x200));
      io::write_sinogram(no_out, proj::counts_to_line_integrals(counts, photons));
      std::cout << "noisy sinogram written to " << no_out << "\n";
    } else if (*c_fbp) {
      const cfg::RunConfig rc = load_config(fbp_common);
      const proj::Sinogram s = io::read_sinogram(fbp_in);
      io::write_volume(fbp_out,
                       recon::fbp_reconstruct(s, rc.geometry, rc.nx, rc.ny,
                                              rc.voxel_mm, rc.filter),
                       io::Kind::Mu);
      std::cout << "reconstruction written to " << fbp_out << "\n";
    } else if (*c_te) {
      const cfg::RunConfig rc = load_config(te_common);
      const SimSet sim = simulate_scans(rc, rc.scans_train + rc.scans_val);
      std::vector<std::pair<Volume, Volume>> train, val;
      for (int i = 0; i < static_cast<int>(sim.pairs.size()); ++i) {
        auto& dst = i < rc.scans_train ? train : val;
        if (rc.enhancer.dims == 3) {
          dst.emplace_back(sim.pairs[i].low, sim.pairs[i].high);
          continue;
        }
        for (int z = 0; z < rc.nz; ++z) {
          Volume l(rc.nx, rc.ny, 1, rc.voxel_mm), h(rc.nx, rc.ny, 1, rc.voxel_mm);
          std::copy_n(sim.pairs[i].low.values.data() + sim.pairs[i].low.index(0, 0, z),
                      l.size(), l.values.data());
          std::copy_n(sim.pairs[i].high.values.data() + sim.pairs[i].high.index(0, 0, z),
                      h.size(), h.values.data());
          dst.emplace_back(std::move(l), std::move(h));
        }
      }
      enh::TrainHyper th = rc.enhancer_train;
      th.seed = hash_combine(rc.seed, 0x300);
      const enh::TrainResult tr = enh::train_enhancer(train, val, rc.enhancer, th);
      if (tr.aborted_on_nan) {
        std::cerr << "training aborted on non-finite loss\n";
        return kStageError;
      }
      tr.model.save(te_out);
      std::cout << "enhancer checkpoint written to " << te_out << "\n";
    } else if (*c_en) {
      const enh::EnhancerModel model = enh::EnhancerModel::load(en_model);
      enh::EnhancerNet net = model.instantiate();
      const io::VolumeFile f = io::read_volume(en_in);
      const Volume out = en_tiled
                             ? enh::enhance_volume_tiled(net, f.volume, {})
                             : enh::enhance_volume(net, f.volume);
      io::write_volume(en_out, out, f.kind);
      std::cout << "enhanced volume written to " << en_out << "\n";
    } else if (*c_me) {
      const Volume a = io::read_volume(me_a).volume;
      const Volume b = io::read_volume(me_b).volume;
      const metrics::SsimParams p = a.nz > 1 ? metrics::SsimParams::defaults_3d()
                                             : metrics::SsimParams::defaults_2d();
      std::cout << "mse " << metrics::mse(a, b) << "\n"
                << "ssim " << metrics::ssim(a, b, p) << "\n";
      try {
        std::cout << "ms_ssim " << metrics::ms_ssim(a, b, p) << "\n";
      } catch (const std::exception& e) {
        std::cout << "ms_ssim unavailable: " << e.what() << "\n";
      }
    } else if (*c_se) {
      const double thr = se_thr > 0 ? se_thr : 0.3 * kWaterMu;
      const io::VolumeFile f = io::read_volume(se_in);
      const seg::Mask m = seg::segment_lung(f.volume, thr);
      io::write_mask(se_out, m);
      if (m.empty_warning)
        std::cerr << "warning: no interior air component found; mask is empty\n";
      std::cout << "mask written to " << se_out << " (voxels " << m.sum() << ")\n";
    } else if (*c_tc) {
      const cfg::RunConfig rc = load_config(tc_common);
      const SimSet sim = simulate_scans(rc, rc.scans_train + rc.scans_val);
      std::vector<cls::LabeledCase> dataset;
      for (size_t i = 0; i < sim.pairs.size(); ++i)
        dataset.push_back({sim.pairs[i].high, sim.masks_high[i], sim.labels[i]});
      cls::ClassifierTrainHyper th = rc.classifier_train;
      th.seed = hash_combine(rc.seed, 0x400);
      cls::train_classifier(dataset, rc.classifier, th).model.save(tc_out);
      std::cout << "classifier checkpoint written to " << tc_out << "\n";
    } else if (*c_sc) {
      const cls::ClassifierModel model = cls::ClassifierModel::load(sc_model);
      cls::ClassifierNet net = model.instantiate();
      const Volume v = io::read_volume(sc_in).volume;
      const seg::Mask m = io::read_mask(sc_mask);
      std::cout << cls::predict(net, v, m) << "\n";
    } else if (*c_ev) {
      std::ifstream is(ev_scores);
      if (!is) throw std::runtime_error("cannot open scores file: " + ev_scores);
      std::string line;
      std::getline(is, line);  // header
      std::vector<diag::ScoredCase> orig, enh_cases;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, label, so, se;
        if (!std::getline(ls, id, ',') || !std::getline(ls, label, ',') ||
            !std::getline(ls, so, ',') || !std::getline(ls, se, ','))
          throw std::runtime_error("malformed scores row: " + line);
        orig.push_back({id, std::stod(so), std::stoi(label)});
        enh_cases.push_back({id, std::stod(se), std::stoi(label)});
      }
      const diag::DiagnosticReport report = diag::compare_runs(orig, enh_cases);
      std::cout << report.comparison_table();
      if (!ev_out.empty()) {
        std::filesystem::create_directories(ev_out);
        std::ofstream(ev_out + "/report.json") << report.to_json();
        std::ofstream(ev_out + "/metrics.csv") << report.metrics_csv();
        std::ofstream(ev_out + "/roc.csv") << report.roc_csv();
      }
    } else if (*c_run) {
      const cfg::RunConfig rc = load_config(run_common);
      const pipe::ExperimentResult res = pipe::run_experiment(rc, &std::cout);
      std::cout << res.report.comparison_table()
                << "artifacts in " << res.out_dir << "\n";
    }
  } catch (const cfg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const pipe::StageError& e) {
    std::cerr << e.what() << "\n";
    return kStageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }
