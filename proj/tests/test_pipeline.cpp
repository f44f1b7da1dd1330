#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "concausal/error.hpp"
#include "tiny_pipeline.hpp"

using namespace concausal;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CONCAUSAL_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config JSON round trip and strictness") {
  PipelineConfig c;
  c.seed = 42;
  c.bins = 3;
  c.prune_threshold = 0.01;
  c.variant = EffectVariant::Max;
  const auto back = pipeline_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  const auto partial = pipeline_config_from_json(Json{{"seed", 9}});
  CHECK(partial.seed == 9);
  CHECK(partial.passes == PipelineConfig{}.passes);

  CHECK_THROWS_AS(pipeline_config_from_json(Json{{"sede", 9}}), ValidationError);
  CHECK_THROWS_AS(pipeline_config_from_json(Json{{"intervention_p", 1.5}}), ValidationError);
  CHECK_THROWS_AS(pipeline_config_from_json(Json{{"variant", "median"}}), ValidationError);
}

TEST_CASE("config hash ignores the artifact directory only") {
  PipelineConfig a, b;
  a.artifact_dir = "x";
  b.artifact_dir = "y";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.seed = a.seed + 1;
  CHECK(config_hash(a) != config_hash(b));

  const auto p = provenance(a, "rank");
  CHECK(p.at("config_hash") == config_hash(a));
  CHECK(p.at("seed") == a.seed);
  CHECK(p.at("stage") == "rank");
  CHECK(p.at("version") == kVersion);
}

TEST_CASE("stages report missing prerequisites") {
  const auto dir = fresh_dir("missing");
  auto c = tiny_config(dir);
  try {
    run_stage("rank", c);
    FAIL("expected MissingArtifact");
  } catch (const MissingArtifact& e) {
    CHECK(std::string(e.what()).find("fit-bn") != std::string::npos);
  }
  CHECK_THROWS_AS(run_stage("train-target", c), MissingArtifact);
  CHECK_THROWS_AS(run_stage("no-such-stage", c), ValidationError);
  CHECK_THROWS_AS(load_artifacts(c), MissingArtifact);
  fs::remove_all(dir);
}

TEST_CASE("CLI exit codes") {
  const auto dir = fresh_dir("cli_codes");
  CHECK(run_cli("--stage rank --out " + (dir / "art").string()) == 2);
  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"seed": 1, "unknown_key": true})";
  }
  CHECK(run_cli("--stage gen-data --config " + (dir / "bad.json").string()) == 3);
  CHECK(run_cli("--stage frobnicate --out " + (dir / "art").string()) == 3);
  CHECK(run_cli("--stage gen-data --config " + (dir / "nope.json").string()) != 0);
  fs::remove_all(dir);
}

TEST_CASE("spearman with ties") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(4.5 / std::sqrt(22.5)));
  CHECK(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
  CHECK_THROWS_AS(spearman({1}, {1}), ValidationError);
}

TEST_CASE("concept net groups by level and skips empty levels") {
  DiscretizationSpec spec;
  spec.active = {{0, 1}, {0, 3}, {2, 0}};
  spec.edges = {{0.5}, {0.5}, {0.1, 0.2}};
  spec.effective_bins = {2, 2, 3};
  spec.collapsed = {false, false, false};
  const auto net = build_concept_net(spec, 2);
  REQUIRE(net.levels.size() == 2);
  CHECK(net.levels[0].size() == 2);
  CHECK(net.bn.node(net.levels[1][0]).cardinality == 3);
  CHECK(net.bn.node(net.levels[1][0]).parents.size() == 2);
  CHECK(net.bn.node(net.prediction).parents == net.levels[1]);
}

TEST_CASE("tiny pipeline end to end is deterministic") {
  const auto dir_a = fresh_dir("pipe_a"), dir_b = fresh_dir("pipe_b");
  std::ostringstream log;
  run_pipeline(tiny_config(dir_a), &log);
  run_pipeline(tiny_config(dir_b));
  CHECK(log.str().find("fit-bn") != std::string::npos);

  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), dir_a);
    INFO(rel.string());
    CHECK(slurp(e.path()) == slurp(dir_b / rel));
  }
  CHECK(files > 8);

  const auto rank = Json::parse(slurp(ArtifactPaths{dir_a}.reports() / "rank.json"));
  CHECK(rank.at("provenance").at("config_hash") == config_hash(tiny_config(dir_a)));
  const auto& rows = rank.at("rows");
  REQUIRE(rows.size() > 0);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i - 1].at("score") >= rows[i].at("score"));

  // Follow-up stages reuse the artifacts.
  StageOptions opt;
  opt.k = 3;
  run_stage("explain-instance", tiny_config(dir_a), opt);
  run_stage("nn", tiny_config(dir_a), opt);
  bool have_nn = false;
  for (const auto& e : fs::directory_iterator(ArtifactPaths{dir_a}.reports()))
    have_nn = have_nn || e.path().filename().string().rfind("nn_", 0) == 0;
  CHECK(have_nn);

  const auto loaded = load_artifacts(tiny_config(dir_a));
  const auto& inst = loaded.data.instances.at(loaded.data.test_ids.front());
  const auto obs = observe_instance(loaded.model, inst);
  for (const auto& level : obs.intervened)
    for (bool f : level) CHECK_FALSE(f);

  // A different seed gives a different provenance stamp.
  CHECK(config_hash(tiny_config(dir_a, 4)) != config_hash(tiny_config(dir_a)));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}
