// concausal: run pipeline stages or serve the fitted artifacts.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 missing prerequisite artifact,
// 3 validation failure.

#include <iostream>

#include "CLI11.hpp"

#include "concausal/error.hpp"
#include "concausal/pipeline.hpp"

using namespace concausal;

int main(int argc, char** argv) {
  CLI::App app{"Causal concept explanations for a small CNN"};
  std::string config_path, stage, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> instance, level, channel;
  StageOptions options;
  app.add_option("--config", config_path, "pipeline config JSON (defaults when omitted)");
  app.add_option("--stage", stage, "stage to run, or 'all' for gen-data through rank")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out, "artifact directory (overrides the config)");
  app.add_option("--port", options.port, "port for the serve stage");
  app.add_option("--instance", instance, "instance id for explain-instance and nn");
  app.add_option("--level", level, "autoencoder level for nn");
  app.add_option("--channel", channel, "code channel for nn");
  app.add_option("--k", options.k, "top-k rows or neighbors");
  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig config = config_path.empty() ? PipelineConfig{} : load_pipeline_config(config_path);
    if (seed) config.seed = *seed;
    if (!out.empty()) config.artifact_dir = out;
    options.instance = instance;
    options.level = level;
    options.channel = channel;
    if (stage == "all")
      run_pipeline(config, &std::cout);
    else
      run_stage(stage, config, options, &std::cout);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
