#include "concausal/concept_vars.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "concausal/error.hpp"

namespace concausal {

namespace {

std::vector<double> observational_values(const std::vector<InterventionRecord>& records, const ChannelId& id) {
  std::vector<double> out;
  for (const auto& r : records)
    if (!r.intervened.at(id.level).at(id.channel)) out.push_back(r.pooled[id.level][id.channel]);
  return out;
}

double population_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

}  // namespace

PruneResult prune_by_variance(const std::vector<InterventionRecord>& records, double threshold,
                              std::size_t per_level_cap) {
  if (records.size() < 2) throw ValidationError("variance pruning needs at least 2 records");
  const auto& shape = records.front().pooled;
  PruneResult out;
  for (std::size_t l = 0; l < shape.size(); ++l) {
    std::vector<std::pair<ChannelId, double>> kept;
    for (std::size_t c = 0; c < shape[l].size(); ++c) {
      const ChannelId id{l, c};
      const double var = population_variance(observational_values(records, id));
      if (var > threshold) kept.emplace_back(id, var);
    }
    if (per_level_cap > 0 && kept.size() > per_level_cap) {
      std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      kept.resize(per_level_cap);
      std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    }
    for (const auto& [id, var] : kept) {
      out.active.push_back(id);
      out.variances.push_back(var);
    }
  }
  if (out.active.empty()) throw ValidationError("no active concepts");
  return out;
}

double default_variance_threshold(const std::vector<InterventionRecord>& records) {
  double mx = 0.0;
  for (const auto& r : records)
    for (std::size_t l = 0; l < r.pooled.size(); ++l)
      for (std::size_t c = 0; c < r.pooled[l].size(); ++c)
        if (!r.intervened[l][c]) mx = std::max(mx, std::abs(r.pooled[l][c]));
  return 1e-6 * mx * mx;
}

std::vector<double> quantile_edges(std::vector<double> values, std::size_t k, bool* collapsed) {
  if (k < 2) throw ValidationError("bin count must be at least 2");
  if (values.empty()) throw ValidationError("cannot fit bins to an empty column");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("non-finite value in bin fitting");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::vector<std::size_t> gaps;  // i such that values[i-1] < values[i]
  for (std::size_t i = 1; i < n; ++i)
    if (values[i - 1] < values[i]) gaps.push_back(i);
  if (gaps.empty()) throw ValidationError("constant column reached bin fitting (pruning contract violated)");

  std::vector<std::size_t> chosen;
  for (std::size_t j = 1; j < k; ++j) {
    const double target = static_cast<double>(j * n) / static_cast<double>(k);
    std::size_t best = gaps.front();
    double best_dist = std::abs(static_cast<double>(best) - target);
    for (std::size_t g : gaps) {
      const double d = std::abs(static_cast<double>(g) - target);
      if (d < best_dist) {
        best = g;
        best_dist = d;
      }
    }
    if (chosen.empty() || chosen.back() != best) chosen.push_back(best);
  }
  std::sort(chosen.begin(), chosen.end());
  chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
  if (collapsed) *collapsed = chosen.size() < k - 1;
  std::vector<double> edges;
  for (std::size_t g : chosen) edges.push_back(0.5 * (values[g - 1] + values[g]));
  return edges;
}

std::size_t bin_index(double value, const std::vector<double>& edges) {
  if (!std::isfinite(value)) throw ValidationError("non-finite pooled value");
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), value) - edges.begin());
}

DiscretizationSpec fit_bins(const std::vector<InterventionRecord>& records, const std::vector<ChannelId>& active,
                            std::size_t k) {
  if (k < 2) throw ValidationError("bin count must be at least 2");
  DiscretizationSpec spec;
  spec.k = k;
  spec.active = active;
  for (const auto& id : active) {
    bool collapsed = false;
    auto edges = quantile_edges(observational_values(records, id), k, &collapsed);
    spec.effective_bins.push_back(edges.size() + 1);
    spec.collapsed.push_back(collapsed);
    spec.edges.push_back(std::move(edges));
  }
  return spec;
}

DiscreteRecord discretize(const InterventionRecord& record, const DiscretizationSpec& spec) {
  DiscreteRecord d;
  d.instance_id = record.instance_id;
  d.label = record.true_label;
  d.predicted = record.predicted;
  for (std::size_t v = 0; v < spec.active.size(); ++v) {
    const auto& id = spec.active[v];
    d.bins.push_back(bin_index(record.pooled.at(id.level).at(id.channel), spec.edges[v]));
    d.intervened.push_back(record.intervened.at(id.level).at(id.channel));
  }
  return d;
}

std::vector<DiscreteRecord> discretize_all(const std::vector<InterventionRecord>& records,
                                           const DiscretizationSpec& spec) {
  std::vector<DiscreteRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(discretize(r, spec));
  return out;
}

Json to_json(const DiscretizationSpec& spec) {
  Json vars = Json::array();
  for (std::size_t v = 0; v < spec.active.size(); ++v)
    vars.push_back(Json{{"name", spec.active[v].name()},
                        {"level", spec.active[v].level},
                        {"channel", spec.active[v].channel},
                        {"edges", spec.edges[v]},
                        {"effective_bins", spec.effective_bins[v]},
                        {"collapsed", static_cast<bool>(spec.collapsed[v])}});
  return Json{{"format", "concausal-discretization-v1"}, {"k", spec.k}, {"variables", vars}};
}

DiscretizationSpec discretization_from_json(const Json& j) {
  DiscretizationSpec spec;
  spec.k = j.at("k").get<std::size_t>();
  for (const auto& v : j.at("variables")) {
    spec.active.push_back({v.at("level").get<std::size_t>(), v.at("channel").get<std::size_t>()});
    auto edges = v.at("edges").get<std::vector<double>>();
    for (std::size_t i = 1; i < edges.size(); ++i)
      if (!(edges[i - 1] < edges[i])) throw ValidationError("bin edges must be strictly increasing");
    spec.edges.push_back(std::move(edges));
    spec.effective_bins.push_back(v.at("effective_bins").get<std::size_t>());
    spec.collapsed.push_back(v.at("collapsed").get<bool>());
  }
  return spec;
}

Json to_json(const DiscreteRecord& r) {
  Json flags = Json::array();
  for (bool b : r.intervened) flags.push_back(b ? 1 : 0);
  return Json{{"instance_id", r.instance_id},
              {"bins", r.bins},
              {"intervened", flags},
              {"label", r.label},
              {"predicted", r.predicted}};
}

DiscreteRecord discrete_record_from_json(const Json& j) {
  DiscreteRecord r;
  r.instance_id = j.at("instance_id").get<std::size_t>();
  r.bins = j.at("bins").get<std::vector<std::size_t>>();
  for (const auto& b : j.at("intervened")) r.intervened.push_back(b.get<int>() != 0);
  r.label = j.at("label").get<int>();
  r.predicted = j.at("predicted").get<std::size_t>();
  return r;
}

void save_discrete_records(const std::filesystem::path& path, const std::vector<DiscreteRecord>& records,
                           const Json& header) {
  std::string text = header.dump() + "\n";
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  write_text(path, text);
}

std::vector<DiscreteRecord> load_discrete_records(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);  // header
  std::vector<DiscreteRecord> out;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(discrete_record_from_json(Json::parse(line)));
  return out;
}

}  // namespace concausal
