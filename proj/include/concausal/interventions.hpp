#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "concausal/concept_ae.hpp"

namespace concausal {

// (autoencoder level, code channel); ordered level-major.
struct ChannelId {
  std::size_t level = 0;
  std::size_t channel = 0;
  friend auto operator<=>(const ChannelId&, const ChannelId&) = default;
  std::string name() const { return concept_name(level, channel); }
};

struct InterventionRecord {
  std::size_t instance_id = 0;
  std::size_t pass = 0;
  InterventionMask intervened;               // [level][channel]
  std::vector<std::vector<double>> pooled;   // [level][channel]
  int true_label = 0;
  std::size_t predicted = 0;
  std::vector<double> predicted_distribution;

  friend bool operator==(const InterventionRecord&, const InterventionRecord&) = default;
};

// Copy of a (C, H, W) code with one channel set to zero.
Tensor intervene_zero_channel(const Tensor& code, std::size_t channel);

double mean_pool(const Tensor& map);
double mean_pool(const ConceptFeatureImage& feature);

// Every channel of every code, mean-pooled.
std::vector<std::vector<double>> pool_codes(const std::vector<Tensor>& codes);

// The per-instance mask depends only on (seed, pass, instance id).
InterventionMask draw_intervention_mask(const AutoencodedModel& model, double p, std::uint64_t seed,
                                        std::size_t pass, std::size_t instance_id);

// One record per instance. Each (level, channel) is zeroed independently with
// probability p; the zeroed code is decoded and propagated, so shallow
// interventions reach every deeper level.
std::vector<InterventionRecord> generate_interventional_dataset(
    const AutoencodedModel& model, const std::vector<const SynthInstance*>& instances, double p,
    std::uint64_t seed, std::size_t pass = 0);

// Concatenates `passes` generation passes with distinct sub-seeds.
std::vector<InterventionRecord> generate_interventional_passes(
    const AutoencodedModel& model, const std::vector<const SynthInstance*>& instances, double p,
    std::uint64_t seed, std::size_t passes);

struct InterventionFile {
  std::uint64_t seed = 0;
  double p = 0.0;
  std::size_t passes = 0;
  std::vector<std::size_t> code_channels;  // per level
  Json provenance;
  std::vector<InterventionRecord> records;
};

Json to_json(const InterventionRecord& r);
InterventionRecord intervention_record_from_json(const Json& j);

// JSON lines: a header object (seed, p, passes, channel registry) then one
// record per line.
void save_interventions(const std::filesystem::path& path, const InterventionFile& file);
InterventionFile load_interventions(const std::filesystem::path& path);

}  // namespace concausal
