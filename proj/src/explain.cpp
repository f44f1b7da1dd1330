#include "concausal/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "concausal/error.hpp"

namespace concausal {

namespace {

std::string fixed9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

}  // namespace

void sort_rows(std::vector<EffectRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const EffectRow& a, const EffectRow& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.name < b.name;
  });
}

std::string EffectReport::to_text() const {
  std::size_t width = std::string("Variable").size();
  for (const auto& r : rows) width = std::max(width, r.name.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  std::string out = "# variant: " + to_string(variant) + "  target: " + target + "  evidence: " + evidence.dump() +
                    "  seed: " + std::to_string(seed) + "\n";
  out += pad("Variable") + "Expected Causal Effect\n";
  for (const auto& r : rows) out += pad(r.name) + fixed9(r.score) + "\n";
  return out;
}

Json EffectReport::to_json() const {
  Json rs = Json::array();
  for (const auto& r : rows) rs.push_back(Json{{"name", r.name}, {"score", r.score}});
  return Json{{"variant", to_string(variant)}, {"target", target}, {"evidence", evidence}, {"seed", seed},
              {"rows", rs}};
}

Json evidence_json(const BayesNet& bn, const Evidence& evidence) {
  Json j = Json::object();
  for (const auto& [n, v] : evidence.values) j[bn.node(n).name] = v;
  return j;
}

EffectReport rank_concepts(const LayeredNet& net, const Evidence& evidence, EffectVariant variant,
                           std::optional<std::size_t> target_value) {
  const auto& bn = net.bn;
  std::size_t target;
  if (target_value) {
    target = *target_value;
    if (target >= bn.node(net.prediction).cardinality) throw ValidationError("target class out of range");
  } else {
    const auto dist = infer(bn, net.prediction, evidence);
    target = argmax(dist);
  }
  EffectReport report;
  report.variant = variant;
  report.target = bn.node(net.prediction).name + "=" + std::to_string(target);
  report.evidence = evidence_json(bn, evidence);
  for (std::size_t n : net.concept_nodes()) {
    double score = expected_causal_effect(bn, n, net.prediction, target, evidence, variant);
    if (!std::isfinite(score)) throw ValidationError("non-finite effect for " + bn.node(n).name);
    if (score == 0.0) score = 0.0;  // no negative zero in reports
    report.rows.push_back({bn.node(n).name, score});
  }
  sort_rows(report.rows);
  return report;
}

Evidence instance_evidence(const LayeredNet& net, const DiscreteRecord& record, bool with_prediction) {
  const auto nodes = net.concept_nodes();
  if (record.bins.size() != nodes.size())
    throw ValidationError("record has " + std::to_string(record.bins.size()) + " concept bins, net has " +
                          std::to_string(nodes.size()) + " concept nodes");
  Evidence ev;
  for (std::size_t i = 0; i < nodes.size(); ++i) ev.values[nodes[i]] = record.bins[i];
  if (with_prediction) ev.values[net.prediction] = record.predicted;
  return ev;
}

InstanceEffects instance_top_effects(const LayeredNet& net, const Evidence& evidence, std::size_t target_value,
                                     std::size_t k) {
  InstanceEffects out;
  out.target_value = target_value;
  if (k == 0) return out;
  Evidence ev = evidence;
  if (!(evidence_probability(net.bn, ev) > 0.0)) {
    ev = Evidence{};
    out.fell_back = true;
  }
  for (std::size_t n : net.concept_nodes()) {
    double score = expected_causal_effect(net.bn, n, net.prediction, target_value, ev, EffectVariant::ExpectedAbs);
    if (score == 0.0) score = 0.0;
    out.rows.push_back({net.bn.node(n).name, score});
  }
  sort_rows(out.rows);
  if (out.rows.size() > k) out.rows.resize(k);
  return out;
}

double l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

std::vector<Neighbor> concept_nearest_neighbors(const std::vector<EncodedMap>& corpus,
                                                const std::vector<ChannelId>& active, const ChannelId& channel,
                                                std::size_t query_id, std::size_t k) {
  if (std::find(active.begin(), active.end(), channel) == active.end())
    throw ValidationError("channel " + channel.name() + " was pruned (not an active concept)");
  if (k > corpus.size()) throw ValidationError("k exceeds corpus size");
  auto q = std::find_if(corpus.begin(), corpus.end(), [&](const EncodedMap& e) { return e.instance_id == query_id; });
  if (q == corpus.end()) throw ValidationError("instance " + std::to_string(query_id) + " is not in the corpus");

  std::vector<Neighbor> others;
  for (const auto& e : corpus)
    if (e.instance_id != query_id) others.push_back({e.instance_id, l1_distance(q->map, e.map)});
  std::sort(others.begin(), others.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.instance_id < b.instance_id;
  });
  std::vector<Neighbor> out{{query_id, 0.0}};
  for (std::size_t i = 0; i < others.size() && i < k; ++i) out.push_back(others[i]);
  return out;
}

}  // namespace concausal
