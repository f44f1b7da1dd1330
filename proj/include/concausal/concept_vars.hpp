#pragma once

#include <filesystem>
#include <limits>
#include <vector>

#include "concausal/interventions.hpp"

namespace concausal {

struct PruneResult {
  std::vector<ChannelId> active;     // (level, channel) order
  std::vector<double> variances;     // parallel to active
};

// Population variance of each channel's pooled value over the records where
// that channel was not intervened. Keeps channels above `threshold`, then at
// most `per_level_cap` highest-variance channels per level (0 = no cap).
PruneResult prune_by_variance(const std::vector<InterventionRecord>& records, double threshold,
                              std::size_t per_level_cap = 0);

// 1e-6 * (largest pooled value)^2 over non-intervened occurrences.
double default_variance_threshold(const std::vector<InterventionRecord>& records);

struct DiscretizationSpec {
  std::size_t k = 2;
  std::vector<ChannelId> active;
  std::vector<std::vector<double>> edges;  // strictly increasing, per active variable
  std::vector<std::size_t> effective_bins; // edges.size() + 1
  std::vector<bool> collapsed;             // fewer than k - 1 distinct edges

  std::size_t variable_count() const { return active.size(); }
};

// Equal-frequency edges. Each cut is moved to the nearest boundary between
// distinct sorted values and placed at the midpoint of that gap; cuts that
// land on the same gap collapse. Throws on a constant column.
std::vector<double> quantile_edges(std::vector<double> values, std::size_t k, bool* collapsed = nullptr);

// Number of edges <= value: a value equal to an edge goes to the upper bin.
std::size_t bin_index(double value, const std::vector<double>& edges);

// Fits on non-intervened occurrences only.
DiscretizationSpec fit_bins(const std::vector<InterventionRecord>& records,
                            const std::vector<ChannelId>& active, std::size_t k = 2);

struct DiscreteRecord {
  std::size_t instance_id = 0;
  std::vector<std::size_t> bins;   // per active variable
  std::vector<bool> intervened;    // per active variable
  int label = 0;
  std::size_t predicted = 0;

  friend bool operator==(const DiscreteRecord&, const DiscreteRecord&) = default;
};

DiscreteRecord discretize(const InterventionRecord& record, const DiscretizationSpec& spec);
std::vector<DiscreteRecord> discretize_all(const std::vector<InterventionRecord>& records,
                                           const DiscretizationSpec& spec);

Json to_json(const DiscretizationSpec& spec);
DiscretizationSpec discretization_from_json(const Json& j);
Json to_json(const DiscreteRecord& r);
DiscreteRecord discrete_record_from_json(const Json& j);

void save_discrete_records(const std::filesystem::path& path, const std::vector<DiscreteRecord>& records,
                           const Json& header);
std::vector<DiscreteRecord> load_discrete_records(const std::filesystem::path& path);

}  // namespace concausal
