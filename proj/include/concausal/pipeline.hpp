#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "concausal/bayes_net.hpp"
#include "concausal/concept_ae.hpp"
#include "concausal/concept_vars.hpp"
#include "concausal/explain.hpp"
#include "concausal/interventions.hpp"
#include "concausal/synth_data.hpp"
#include "concausal/target_net.hpp"

namespace concausal {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineConfig {
  std::uint64_t seed = 7;
  SynthConfig data;
  ArchitectureSpec arch;
  TrainConfig train;
  std::vector<std::size_t> ae_levels{5, 10, 14};  // activation indices in the target net
  AeTrainConfig ae;
  double intervention_p = 0.1;
  std::size_t passes = 10;
  std::optional<double> prune_threshold;  // unset: 1e-6 * max pooled value^2
  std::size_t level_cap = 10;
  std::size_t bins = 2;
  double alpha = 1.0;
  EffectVariant variant = EffectVariant::ExpectedAbs;
  std::filesystem::path artifact_dir = "artifacts";

  void validate() const;
};

Json to_json(const PipelineConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig pipeline_config_from_json(const Json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// FNV-1a of the canonical config JSON, artifact_dir excluded, as 16 hex digits.
std::string config_hash(const PipelineConfig& c);
Json provenance(const PipelineConfig& c, const std::string& stage);

// Artifact locations relative to the artifact directory.
struct ArtifactPaths {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path target() const { return root / "target"; }
  std::filesystem::path target_report() const { return root / "target" / "train_report.json"; }
  std::filesystem::path stack() const { return root / "autoencoders"; }
  std::filesystem::path stack_report() const { return root / "autoencoders" / "train_report.json"; }
  std::filesystem::path interventions() const { return root / "interventions" / "records.jsonl"; }
  std::filesystem::path discretization() const { return root / "concepts" / "discretization.json"; }
  std::filesystem::path discrete_records() const { return root / "concepts" / "records.jsonl"; }
  std::filesystem::path bayes_net() const { return root / "bn" / "net.json"; }
  std::filesystem::path fit_report() const { return root / "bn" / "fit_report.json"; }
  std::filesystem::path reports() const { return root / "reports"; }
};

const std::vector<std::string>& stage_names();

struct StageOptions {
  std::optional<std::size_t> instance;  // explain-instance / nn; default first test instance
  std::optional<std::size_t> level;     // nn; default top-ranked concept
  std::optional<std::size_t> channel;
  std::size_t k = 5;
  int port = 8080;                      // serve
};

// Runs one stage. Throws MissingArtifact when a prerequisite is absent and
// ValidationError on bad input. Messages go to `log` when non-null.
void run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options = {},
               std::ostream* log = nullptr);

// gen-data through rank.
void run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

// Everything the query side needs, loaded from disk.
struct LoadedArtifacts {
  PipelineConfig config;
  Json provenance;
  Dataset data;
  AutoencodedModel model;
  DiscretizationSpec spec;
  LayeredNet net;
};

LoadedArtifacts load_artifacts(const PipelineConfig& config);

// Groups active concepts by level (empty levels skipped) into a layered net.
LayeredNet build_concept_net(const DiscretizationSpec& spec, std::size_t class_count);
BnDataset to_bn_dataset(const LayeredNet& net, const std::vector<DiscreteRecord>& records);

// Observational (unintervened) record for one instance.
InterventionRecord observe_instance(const AutoencodedModel& model, const SynthInstance& instance);

// Mean |P(c | zeroed) - P(c | intact)| over the instances, where c is the
// intact autoencoded model's predicted class; one value per channel.
std::vector<double> ablation_effects(const AutoencodedModel& model,
                                     const std::vector<const SynthInstance*>& instances,
                                     const std::vector<ChannelId>& channels);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace concausal
