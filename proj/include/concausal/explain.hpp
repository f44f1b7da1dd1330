#pragma once

#include <optional>
#include <string>
#include <vector>

#include "concausal/bayes_net.hpp"
#include "concausal/concept_vars.hpp"

namespace concausal {

struct EffectRow {
  std::string name;
  double score = 0.0;
};

struct EffectReport {
  std::vector<EffectRow> rows;  // descending score, name ascending on ties
  EffectVariant variant = EffectVariant::ExpectedAbs;
  std::string target;           // e.g. "prediction=1"
  Json evidence = Json::object();
  std::uint64_t seed = 0;

  // Aligned plain text under an "Expected Causal Effect" header, scores with
  // nine decimals.
  std::string to_text() const;
  Json to_json() const;
};

void sort_rows(std::vector<EffectRow>& rows);

// Evidence in JSON form, keyed by node name.
Json evidence_json(const BayesNet& bn, const Evidence& evidence);

// One row per concept node, scored against prediction = target_value. Without
// an explicit target the most probable prediction given the evidence is used.
EffectReport rank_concepts(const LayeredNet& net, const Evidence& evidence,
                           EffectVariant variant = EffectVariant::ExpectedAbs,
                           std::optional<std::size_t> target_value = std::nullopt);

// Concept bins of one discretized record as evidence, optionally with its
// prediction.
Evidence instance_evidence(const LayeredNet& net, const DiscreteRecord& record, bool with_prediction = true);

struct InstanceEffects {
  std::vector<EffectRow> rows;  // top-k
  std::size_t target_value = 0;
  bool fell_back = false;       // instance evidence was impossible; prior used
};

// Expected |effect| of each concept on prediction = target_value under the
// instance's evidence; top k by score.
InstanceEffects instance_top_effects(const LayeredNet& net, const Evidence& evidence, std::size_t target_value,
                                     std::size_t k);

// Sum of absolute elementwise differences.
double l1_distance(const Tensor& a, const Tensor& b);

struct EncodedMap {
  std::size_t instance_id = 0;
  Tensor map;
};

struct Neighbor {
  std::size_t instance_id = 0;
  double distance = 0.0;
};

// The query first, then the k nearest other corpus entries, ascending distance
// with ties broken by instance id. `active` lists the unpruned channels.
std::vector<Neighbor> concept_nearest_neighbors(const std::vector<EncodedMap>& corpus,
                                                const std::vector<ChannelId>& active, const ChannelId& channel,
                                                std::size_t query_id, std::size_t k);

}  // namespace concausal
