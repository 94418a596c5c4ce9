#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blife/pipeline.hpp"

using namespace blife;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "blife");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

PipelineConfig parse(const std::string& text) {
  std::istringstream in(text);
  return PipelineConfig::parse(in);
}

}  // namespace

TEST_CASE("feature set expressions") {
  CHECK(feature_set_parse("F1") == std::vector<int>{1});
  CHECK(feature_set_parse("F1,F10-F12") == std::vector<int>{1, 10, 11, 12});
  CHECK(feature_set_parse("F1-F21").size() == 21);
  CHECK(feature_set_parse(" F3 , F1-F2 ,F3") == std::vector<int>{3, 1, 2});
  CHECK_THROWS_AS(feature_set_parse("F22"), BadGroupId);
  CHECK_THROWS_AS(feature_set_parse("F0"), BadGroupId);
  CHECK_THROWS_AS(feature_set_parse(""), BadGroupId);
  CHECK_THROWS_AS(feature_set_parse("F5-F2"), BadGroupId);
  CHECK_THROWS_AS(feature_set_parse("G1"), BadGroupId);
}

TEST_CASE("config text") {
  const auto c = parse(
      "# run settings\n"
      "[general]\nseed = 9\n\n"
      "[synth]\nn_users = 6   # trailing comment\nregimes = commuter\n"
      "[train]\nfeature_sets = F1; F1-F18\nmodels = linear\n");
  CHECK(c.seed() == 9);
  CHECK(c.synth().n_users == 6);
  CHECK(c.regimes().has_schedule);
  const auto ex = c.experiments();
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].name() == "F1__linear");
  CHECK(ex[1].name() == "F1-F18__linear");
  CHECK(ex[1].groups.size() == 18);
  CHECK(c.get("n_estimators") == "100");
  CHECK_THROWS_AS(parse("[synth]\nno_such_key = 1\n"), ConfigInvalid);
  CHECK_THROWS_AS(parse("[train]\nseed = 1\n"), ConfigInvalid);
  CHECK_THROWS_AS(parse("seed 1\n"), ConfigInvalid);
}

TEST_CASE("config defaults and typed values") {
  PipelineConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.test_fraction() == doctest::Approx(1.0 / 6));
  CHECK(c.segmentation().gap_threshold == 600);
  CHECK(c.features().n_users == 51);
  CHECK(c.c_index_variant() == CIndexVariant::Paper);
  CHECK(c.stability_sets().size() == 3);
  CHECK(c.model(ModelKind::Boost).n_estimators == 100);
  const auto names = c.experiments();
  REQUIRE(names.size() == 8);
  CHECK(names[2].name() == "F1_F10-F12__linear");
  c.set("feature_sets", "F1; F30");
  CHECK_THROWS(c.validate());
  c.set("feature_sets", "F1");
  c.set("test_fraction", "2");
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  CHECK_THROWS_AS(c.set("bogus", "1"), ConfigInvalid);
}

TEST_CASE("config dump parses back to the same settings") {
  PipelineConfig c;
  c.set("seed", "77");
  c.set("charge_hours", "7, 19");
  std::ostringstream a;
  c.write(a);
  std::istringstream in(a.str());
  const auto back = PipelineConfig::parse(in);
  std::ostringstream b;
  back.write(b);
  CHECK(a.str() == b.str());
  CHECK(back.synth().charge_hours == std::vector<int>{7, 19});
}

TEST_CASE("stage seeds differ and are stable") {
  const StageSeeds a(1), b(1), c(2);
  CHECK(a.synth == b.synth);
  CHECK(a.model == b.model);
  CHECK(a.synth != a.query);
  CHECK(a.split != a.bootstrap);
  CHECK(a.synth != c.synth);
}

TEST_CASE("command line usage errors") {
  std::string out, err;
  CHECK(cli({"--version"}, &out) == 0);
  CHECK(out.find(std::string("blife ") + kToolVersion) != std::string::npos);
  CHECK(cli({}, &out, &err) == 1);
  CHECK(cli({"frobnicate"}, &out, &err) == 1);
  CHECK(cli({"synth", "--no_such_key", "3"}, &out, &err) == 1);
  CHECK(cli({"synth", "--config", "/nonexistent/blife.cfg"}, &out, &err) == 1);
  CHECK(cli({"synth", "--help"}, &out, &err) == 0);
}

TEST_CASE("missing artifacts are data errors") {
  const auto dir = fs::temp_directory_path() / "blife_cli_missing";
  fs::remove_all(dir);
  std::string err;
  CHECK(cli({"train", "--work_dir", (dir / "work").string(), "--data_dir", (dir / "data").string()},
            nullptr, &err) == 2);
  CHECK(err.find("train") != std::string::npos);
  CHECK(cli({"ingest", "--work_dir=" + (dir / "work").string(), "--data_dir=" + (dir / "none").string()}) == 2);
  fs::remove_all(dir);
}

TEST_CASE("small end-to-end run") {
  const auto dir = fs::temp_directory_path() / "blife_cli_e2e";
  fs::remove_all(dir);
  std::ofstream(fs::path(dir.string() + ".cfg"))
      << "[paths]\ndata_dir = " << (dir / "data").string() << "\nwork_dir = " << (dir / "work").string()
      << "\n[synth]\nn_users = 3\ndays = 6\nt2_period = 600\n"
      << "[train]\nfeature_sets = F1; F1,F10-F12\nmodels = linear, boost\nn_estimators = 20\n"
      << "[evaluate]\nbootstrap_replicates = 50\nstability_sets = F1-F4; F1-F12; F1-F21\n";
  std::string out, err;
  const int code = cli({"all", "-c", dir.string() + ".cfg"}, &out, &err);
  INFO(err);
  REQUIRE(code == 0);
  for (const char* f : {"sessions.csv", "split.csv", "schema.txt", "metrics.csv", "bootstrap.txt",
                        "run_synth.txt", "run_evaluate.txt", "models/F1__linear.model",
                        "predictions/F1_F10-F12__boost.csv"})
    CHECK(fs::exists(dir / "work" / f));
  CHECK(fs::exists(dir / "data" / "battery.csv"));
  CHECK(out.find("F1_F10-F12") != std::string::npos);
  // stages can be rerun one at a time against the same artifacts
  CHECK(cli({"evaluate", "-c", dir.string() + ".cfg"}) == 0);
  fs::remove_all(dir);
  fs::remove(dir.string() + ".cfg");
}
