#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "fact/config.hpp"

using namespace fact;
using namespace fact::cfg;

TEST_CASE("config file parsing: sections, comments, quoting, lists") {
  const ConfigFile f = ConfigFile::parse(
      "# leading comment\n"
      "[run]\n"
      "seed = 42   # trailing comment\n"
      "out_dir = \"my out # dir\"\n"
      "flag = true\n"
      "\n"
      "[filter]\n"
      "cutoff = 0.85\n"
      "weights = 0.5, 0.3, 0.2\n");
  CHECK(f.has("run", "seed"));
  CHECK_FALSE(f.has("run", "missing"));
  CHECK_FALSE(f.has("nosuch", "seed"));
  CHECK(f.get_int("run", "seed") == 42);
  // A '#' inside quotes is data, not a comment.
  CHECK(f.get_string("run", "out_dir") == "my out # dir");
  CHECK(f.get_bool("run", "flag"));
  CHECK(f.get_double("filter", "cutoff") == 0.85);
  CHECK(f.get_double_list("filter", "weights") ==
        std::vector<double>{0.5, 0.3, 0.2});

  // Fallbacks apply only when the key is absent.
  CHECK(f.get_int("run", "absent", 7) == 7);
  CHECK(f.get_string("run", "absent", "dflt") == "dflt");
  CHECK(f.get_bool("run", "absent", false) == false);
  CHECK(f.get_double("run", "absent", 1.5) == 1.5);
  CHECK(f.get_double_list("run", "absent", {{1.0}}) == std::vector<double>{1.0});
  CHECK(f.get_int("run", "seed", 7) == 42);
}

TEST_CASE("parse errors carry the offending line number") {
  CHECK_THROWS_WITH_AS(ConfigFile::parse("[run]\nnonsense line\n"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("\n\n[broken\n"),
                       doctest::Contains("line 3"), ConfigError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("[]\n"), doctest::Contains("line 1"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("[a]\n= 3\n"), doctest::Contains("empty key"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("[a]\nk = 1\nk = 2\n"),
                       doctest::Contains("duplicate key a.k"), ConfigError);
}

TEST_CASE("typed getters reject malformed values") {
  const ConfigFile f = ConfigFile::parse(
      "[s]\n"
      "notint = 3.5\n"
      "notnum = abc\n"
      "notbool = yes\n"
      "badlist = 1, x, 3\n"
      "emptylist = ,\n");
  CHECK_THROWS_WITH_AS(f.get_int("s", "notint"), doctest::Contains("not an integer"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(f.get_double("s", "notnum"), doctest::Contains("not a number"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(f.get_bool("s", "notbool"), doctest::Contains("not a boolean"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(f.get_double_list("s", "badlist"),
                       doctest::Contains("bad list element"), ConfigError);
  CHECK_THROWS_WITH_AS(f.get_double_list("s", "emptylist"),
                       doctest::Contains("empty list"), ConfigError);
  CHECK_THROWS_WITH_AS(f.get_int("s", "missing"),
                       doctest::Contains("missing required key s.missing"), ConfigError);
}

TEST_CASE("run config requires a seed and fills everything else from defaults") {
  CHECK_THROWS_WITH_AS(RunConfig::from_text("[run]\nout_dir = x\n"),
                       doctest::Contains("seed is required"), ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_text("[run]\nseed = -1\n"),
                       doctest::Contains("seed must be >= 0"), ConfigError);

  const RunConfig c = RunConfig::from_text("[run]\nseed = 9\n");
  const RunConfig d = RunConfig::desk_default();
  CHECK(c.seed == 9);
  CHECK(c.out_dir == d.out_dir);
  CHECK(c.nx == d.nx);
  CHECK(c.geometry.n_views == d.geometry.n_views);
  CHECK(c.enhancer.to_json() == d.enhancer.to_json());
  CHECK(c.classifier.to_json() == d.classifier.to_json());
  CHECK(c.low_photons == d.low_photons);
}

TEST_CASE("run config overrides land in the right fields") {
  const RunConfig c = RunConfig::from_text(
      "[run]\n"
      "seed = 3\n"
      "out_dir = results\n"
      "scans_train = 5\n"
      "scans_test = 4\n"
      "[image]\n"
      "nx = 32\n"
      "ny = 32\n"
      "nz = 2\n"
      "voxel_mm = 2.0\n"
      "[geometry]\n"
      "n_views = 90\n"
      "step_deg = 4.0\n"
      "[dose]\n"
      "low_photons = 5e3\n"
      "[filter]\n"
      "kind = hann\n"
      "cutoff = 0.8\n"
      "[enhancer]\n"
      "growth_rate = 4\n"
      "loss_scale_weights = 0.6, 0.4\n"
      "loss_window = 5\n"
      "[enhancer_train]\n"
      "epochs = 2\n"
      "[classifier]\n"
      "input_size = 16\n"
      "[classifier_train]\n"
      "augment = false\n");
  CHECK(c.seed == 3);
  CHECK(c.out_dir == "results");
  CHECK(c.scans_train == 5);
  CHECK(c.scans_test == 4);
  CHECK(c.nx == 32);
  CHECK(c.nz == 2);
  CHECK(c.voxel_mm == 2.0);
  CHECK(c.geometry.n_views == 90);
  CHECK(c.geometry.step_deg == 4.0);
  CHECK(c.low_photons == 5e3);
  CHECK(c.filter.kind == recon::FilterKind::Hann);
  CHECK(c.filter.cutoff == 0.8);
  CHECK(c.enhancer.growth_rate == 4);
  CHECK(c.enhancer.loss_scale_weights == std::vector<double>{0.6, 0.4});
  CHECK(c.enhancer_train.epochs == 2);
  CHECK(c.classifier.input_size == 16);
  CHECK_FALSE(c.classifier_train.augment_enabled);

  CHECK_THROWS_WITH_AS(
      RunConfig::from_text("[run]\nseed = 1\n[filter]\nkind = butterworth\n"),
      doctest::Contains("unknown filter kind"), ConfigError);
}

TEST_CASE("run config validation rejects inconsistent settings") {
  CHECK_THROWS(RunConfig::from_text("[run]\nseed = 1\nscans_test = 1\n"));
  CHECK_THROWS(RunConfig::from_text("[run]\nseed = 1\n[image]\nnx = 4\n"));
  CHECK_THROWS(RunConfig::from_text("[run]\nseed = 1\n[dose]\nlow_photons = 0\n"));
  CHECK_THROWS(RunConfig::from_text("[run]\nseed = 1\n[enhancer]\nkernel = 4\n"));
  RunConfig bad = RunConfig::desk_default();
  bad.out_dir = "";
  CHECK_THROWS(bad.validate());
  RunConfig ok = RunConfig::desk_default();
  ok.validate();
}

TEST_CASE("file loading matches in-memory parsing") {
  const std::string path = "test_config_tmp.toml";
  {
    std::ofstream os(path);
    os << "[run]\nseed = 123\n[image]\nnx = 48\n";
  }
  const RunConfig c = RunConfig::from_file(path);
  CHECK(c.seed == 123);
  CHECK(c.nx == 48);
  const ConfigFile f = ConfigFile::parse_file(path);
  CHECK(f.get_int("image", "nx") == 48);
  std::remove(path.c_str());
  CHECK_THROWS_WITH_AS(RunConfig::from_file(path), doctest::Contains("cannot open"),
                       ConfigError);
  CHECK_THROWS(ConfigFile::parse_file(path));
}
