#include "concausal/bayes_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "concausal/error.hpp"

namespace concausal {

std::size_t BayesNet::add_node(std::string name, std::size_t cardinality, std::vector<std::size_t> parents) {
  if (cardinality == 0) throw ValidationError("node " + name + " needs a positive cardinality");
  if (by_name_.count(name)) throw ValidationError("duplicate node name " + name);
  for (std::size_t p : parents)
    if (p >= nodes_.size()) throw ValidationError("parent of " + name + " does not exist yet");
  std::vector<std::size_t> sorted = parents;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("duplicate parent for " + name);

  const std::size_t idx = nodes_.size();
  BnNode node{std::move(name), cardinality, std::move(parents), {}};
  std::size_t rows = 1;
  for (std::size_t p : node.parents) rows *= nodes_[p].cardinality;
  node.cpt.assign(rows * cardinality, 1.0 / static_cast<double>(cardinality));
  for (std::size_t p : node.parents) children_[p].push_back(idx);
  by_name_[node.name] = idx;
  nodes_.push_back(std::move(node));
  children_.emplace_back();
  return idx;
}

std::size_t BayesNet::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValidationError("unknown node " + name);
  return it->second;
}

bool BayesNet::contains(const std::string& name) const { return by_name_.count(name) > 0; }

std::size_t BayesNet::edge_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes_) n += node.parents.size();
  return n;
}

std::size_t BayesNet::parent_rows(std::size_t i) const { return nodes_.at(i).row_count(); }

void BayesNet::set_cpt(std::size_t i, std::vector<double> cpt) {
  auto& node = nodes_.at(i);
  if (cpt.size() != node.cpt.size())
    throw ValidationError("CPT for " + node.name + " has " + std::to_string(cpt.size()) + " entries, expected " +
                          std::to_string(node.cpt.size()));
  node.cpt = std::move(cpt);
}

double BayesNet::probability(std::size_t i, std::size_t value, const std::vector<std::size_t>& full) const {
  const auto& node = nodes_[i];
  std::size_t row = 0;
  for (std::size_t p : node.parents) row = row * nodes_[p].cardinality + full[p];
  return node.cpt[row * node.cardinality + value];
}

std::vector<bool> BayesNet::descendants(std::size_t i) const {
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<std::size_t> stack(children_.at(i).begin(), children_.at(i).end());
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    if (seen[n]) continue;
    seen[n] = true;
    for (std::size_t c : children_[n]) stack.push_back(c);
  }
  return seen;
}

std::vector<bool> BayesNet::ancestors_of(const std::vector<std::size_t>& targets) const {
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<std::size_t> stack(targets);
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    if (seen[n]) continue;
    seen[n] = true;
    for (std::size_t p : nodes_[n].parents) stack.push_back(p);
  }
  return seen;
}

void BayesNet::validate(double tol) const {
  for (const auto& node : nodes_)
    for (std::size_t r = 0; r < node.row_count(); ++r) {
      double s = 0.0;
      for (std::size_t v = 0; v < node.cardinality; ++v) {
        const double p = node.cpt[r * node.cardinality + v];
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("CPT entry outside [0, 1] in " + node.name);
        s += p;
      }
      if (std::abs(s - 1.0) > tol)
        throw ValidationError("CPT row " + std::to_string(r) + " of " + node.name + " sums to " + std::to_string(s));
    }
}

BayesNet BayesNet::mutilated(const DoAssignment& forced) const {
  BayesNet out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto it = forced.values.find(i);
    if (it == forced.values.end()) {
      out.add_node(nodes_[i].name, nodes_[i].cardinality, nodes_[i].parents);
      out.nodes_[i].cpt = nodes_[i].cpt;
    } else {
      if (it->second >= nodes_[i].cardinality)
        throw ValidationError("forced value out of range for " + nodes_[i].name);
      out.add_node(nodes_[i].name, nodes_[i].cardinality, {});
      std::vector<double> point(nodes_[i].cardinality, 0.0);
      point[it->second] = 1.0;
      out.nodes_[i].cpt = std::move(point);
    }
  }
  for (const auto& [n, v] : forced.values)
    if (n >= nodes_.size()) throw ValidationError("do() on unknown node " + std::to_string(n));
  return out;
}

std::vector<std::size_t> LayeredNet::concept_nodes() const {
  std::vector<std::size_t> out;
  for (const auto& level : levels) out.insert(out.end(), level.begin(), level.end());
  return out;
}

LayeredNet build_layered_structure(const std::vector<std::vector<std::string>>& names,
                                   const std::vector<std::vector<std::size_t>>& cardinalities,
                                   std::size_t label_cardinality, std::size_t prediction_cardinality) {
  if (names.empty()) throw ValidationError("layered structure needs at least one concept level");
  if (names.size() != cardinalities.size()) throw ValidationError("names and cardinalities disagree");
  LayeredNet net;
  net.label = net.bn.add_node("label", label_cardinality, {});
  std::vector<std::size_t> previous{net.label};
  for (std::size_t l = 0; l < names.size(); ++l) {
    if (names[l].empty()) throw ValidationError("concept level " + std::to_string(l) + " is empty");
    if (names[l].size() != cardinalities[l].size()) throw ValidationError("names and cardinalities disagree");
    std::vector<std::size_t> level;
    for (std::size_t i = 0; i < names[l].size(); ++i)
      level.push_back(net.bn.add_node(names[l][i], cardinalities[l][i], previous));
    net.levels.push_back(level);
    previous = level;
  }
  net.prediction = net.bn.add_node("prediction", prediction_cardinality, previous);
  return net;
}

LayeredNet build_layered_structure(const std::vector<std::size_t>& level_sizes, std::size_t label_cardinality,
                                   std::size_t prediction_cardinality, std::size_t concept_cardinality) {
  if (level_sizes.empty()) throw ValidationError("layered structure needs at least one concept level");
  std::vector<std::vector<std::string>> names;
  std::vector<std::vector<std::size_t>> cards;
  for (std::size_t l = 0; l < level_sizes.size(); ++l) {
    if (level_sizes[l] == 0) throw ValidationError("concept level " + std::to_string(l) + " is empty");
    names.emplace_back();
    cards.emplace_back(level_sizes[l], concept_cardinality);
    for (std::size_t i = 0; i < level_sizes[l]; ++i)
      names.back().push_back("level" + std::to_string(l) + "_feat" + std::to_string(i));
  }
  return build_layered_structure(names, cards, label_cardinality, prediction_cardinality);
}

void fit_cpds(BayesNet& bn, const BnDataset& data, double alpha, FitReport* report) {
  if (!(alpha >= 0.0)) throw ValidationError("smoothing alpha must be nonnegative");
  if (data.rows.size() != data.intervened.size()) throw ValidationError("row and flag counts differ");
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    if (data.rows[r].size() != bn.size() || data.intervened[r].size() != bn.size())
      throw ValidationError("record " + std::to_string(r) + " does not cover every node");
    for (std::size_t i = 0; i < bn.size(); ++i)
      if (data.rows[r][i] >= bn.node(i).cardinality)
        throw ValidationError("record " + std::to_string(r) + " has an out-of-range value for " + bn.node(i).name);
  }
  for (std::size_t i = 0; i < bn.size(); ++i) {
    const auto& node = bn.node(i);
    const std::size_t card = node.cardinality;
    std::vector<double> counts(node.cpt.size(), 0.0);
    for (std::size_t r = 0; r < data.rows.size(); ++r) {
      if (data.intervened[r][i]) continue;
      std::size_t row = 0;
      for (std::size_t p : node.parents) row = row * bn.node(p).cardinality + data.rows[r][p];
      counts[row * card + data.rows[r][i]] += 1.0;
    }
    std::vector<double> cpt(counts.size());
    for (std::size_t row = 0; row < node.row_count(); ++row) {
      double total = 0.0;
      for (std::size_t v = 0; v < card; ++v) total += counts[row * card + v];
      const double denom = total + alpha * static_cast<double>(card);
      if (denom <= 0.0) {
        for (std::size_t v = 0; v < card; ++v) cpt[row * card + v] = 1.0 / static_cast<double>(card);
        if (report)
          report->warnings.push_back(node.name + ": parent configuration " + std::to_string(row) +
                                     " has no data; row set uniform");
        continue;
      }
      for (std::size_t v = 0; v < card; ++v) cpt[row * card + v] = (counts[row * card + v] + alpha) / denom;
    }
    bn.set_cpt(i, std::move(cpt));
  }
}

namespace {

struct Factor {
  std::vector<std::size_t> vars;  // ascending
  std::vector<std::size_t> cards;
  std::vector<double> values;
};

// CPT of node i restricted to the evidence.
Factor cpt_factor(const BayesNet& bn, std::size_t i, const Evidence& ev) {
  const auto& node = bn.node(i);
  std::vector<std::size_t> scope = node.parents;
  scope.push_back(i);
  std::sort(scope.begin(), scope.end());
  Factor f;
  for (std::size_t v : scope)
    if (!ev.values.count(v)) {
      f.vars.push_back(v);
      f.cards.push_back(bn.node(v).cardinality);
    }
  std::size_t total = 1;
  for (auto c : f.cards) total *= c;
  f.values.resize(total);

  std::vector<std::size_t> full(bn.size(), 0);
  for (const auto& [n, v] : ev.values) full[n] = v;
  std::vector<std::size_t> odo(f.vars.size(), 0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    for (std::size_t k = 0; k < f.vars.size(); ++k) full[f.vars[k]] = odo[k];
    f.values[idx] = bn.probability(i, full[i], full);
    for (std::size_t k = f.vars.size(); k-- > 0;) {
      if (++odo[k] < f.cards[k]) break;
      odo[k] = 0;
    }
  }
  return f;
}

std::vector<std::size_t> strides_for(const Factor& f) {
  std::vector<std::size_t> s(f.vars.size());
  std::size_t acc = 1;
  for (std::size_t k = f.vars.size(); k-- > 0;) {
    s[k] = acc;
    acc *= f.cards[k];
  }
  return s;
}

// Multiplies `factors` and sums out `var` (if var is SIZE_MAX nothing is summed).
Factor multiply_sum_out(const std::vector<const Factor*>& factors, std::size_t var, std::size_t var_card) {
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::map<std::size_t, std::size_t> scope_cards;
  for (const auto* f : factors)
    for (std::size_t k = 0; k < f->vars.size(); ++k) scope_cards[f->vars[k]] = f->cards[k];
  scope_cards.erase(var);

  Factor out;
  for (const auto& [v, c] : scope_cards) {
    out.vars.push_back(v);
    out.cards.push_back(c);
  }
  std::size_t total = 1;
  for (auto c : out.cards) total *= c;
  out.values.assign(total, 0.0);

  const std::size_t nf = factors.size(), nv = out.vars.size();
  // stride[f][k]: step in factor f when output var k increments.
  std::vector<std::vector<std::size_t>> stride(nf, std::vector<std::size_t>(nv, 0));
  std::vector<std::size_t> var_stride(nf, 0);
  for (std::size_t fi = 0; fi < nf; ++fi) {
    const auto s = strides_for(*factors[fi]);
    for (std::size_t k = 0; k < factors[fi]->vars.size(); ++k) {
      const std::size_t v = factors[fi]->vars[k];
      if (v == var) {
        var_stride[fi] = s[k];
        continue;
      }
      const auto pos = static_cast<std::size_t>(std::lower_bound(out.vars.begin(), out.vars.end(), v) - out.vars.begin());
      stride[fi][pos] = s[k];
    }
  }
  const std::size_t inner = var == kNone ? 1 : var_card;
  std::vector<std::size_t> idx(nf, 0), odo(nv, 0);
  for (std::size_t r = 0; r < total; ++r) {
    double sum = 0.0;
    for (std::size_t x = 0; x < inner; ++x) {
      double prod = 1.0;
      for (std::size_t fi = 0; fi < nf; ++fi) prod *= factors[fi]->values[idx[fi] + x * var_stride[fi]];
      sum += prod;
    }
    out.values[r] = sum;
    for (std::size_t k = nv; k-- > 0;) {
      ++odo[k];
      for (std::size_t fi = 0; fi < nf; ++fi) idx[fi] += stride[fi][k];
      if (odo[k] < out.cards[k]) break;
      for (std::size_t fi = 0; fi < nf; ++fi) idx[fi] -= stride[fi][k] * out.cards[k];
      odo[k] = 0;
    }
  }
  return out;
}

// Eliminates every relevant non-evidence variable except `keep` (SIZE_MAX to
// eliminate all) and returns the product of what remains.
Factor eliminate(const BayesNet& bn, const Evidence& ev, std::size_t keep) {
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  for (const auto& [n, v] : ev.values) {
    if (n >= bn.size()) throw ValidationError("evidence on unknown node " + std::to_string(n));
    if (v >= bn.node(n).cardinality) throw ValidationError("evidence value out of range for " + bn.node(n).name);
  }
  std::vector<std::size_t> targets;
  for (const auto& [n, v] : ev.values) targets.push_back(n);
  if (keep != kNone) targets.push_back(keep);
  const auto relevant = bn.ancestors_of(targets);

  std::vector<Factor> factors;
  std::vector<std::size_t> to_eliminate;
  for (std::size_t i = 0; i < bn.size(); ++i) {
    if (!relevant[i]) continue;
    factors.push_back(cpt_factor(bn, i, ev));
    if (i != keep && !ev.values.count(i)) to_eliminate.push_back(i);
  }

  while (!to_eliminate.empty()) {
    // Min-degree, ties by smallest resulting table, then index.
    std::size_t best_pos = 0, best_degree = kNone, best_weight = kNone;
    for (std::size_t pos = 0; pos < to_eliminate.size(); ++pos) {
      const std::size_t v = to_eliminate[pos];
      std::map<std::size_t, std::size_t> nb;
      for (const auto& f : factors)
        if (std::binary_search(f.vars.begin(), f.vars.end(), v))
          for (std::size_t k = 0; k < f.vars.size(); ++k)
            if (f.vars[k] != v) nb[f.vars[k]] = f.cards[k];
      std::size_t weight = 1;
      for (const auto& [u, c] : nb) weight = weight > (kNone / c) ? kNone : weight * c;
      if (nb.size() < best_degree || (nb.size() == best_degree && weight < best_weight)) {
        best_pos = pos;
        best_degree = nb.size();
        best_weight = weight;
      }
    }
    const std::size_t v = to_eliminate[best_pos];
    to_eliminate.erase(to_eliminate.begin() + static_cast<std::ptrdiff_t>(best_pos));

    std::vector<const Factor*> involved;
    std::vector<Factor> rest;
    for (const auto& f : factors)
      if (std::binary_search(f.vars.begin(), f.vars.end(), v)) involved.push_back(&f);
    Factor merged = multiply_sum_out(involved, v, bn.node(v).cardinality);
    for (auto& f : factors)
      if (!std::binary_search(f.vars.begin(), f.vars.end(), v)) rest.push_back(std::move(f));
    rest.push_back(std::move(merged));
    factors = std::move(rest);
  }

  std::vector<const Factor*> all;
  for (const auto& f : factors) all.push_back(&f);
  return multiply_sum_out(all, kNone, 1);
}

}  // namespace

double evidence_probability(const BayesNet& bn, const Evidence& evidence) {
  const Factor f = eliminate(bn, evidence, std::numeric_limits<std::size_t>::max());
  return f.values.at(0);
}

std::vector<double> infer(const BayesNet& bn, std::size_t query, const Evidence& evidence) {
  if (query >= bn.size()) throw ValidationError("unknown query node");
  const std::size_t card = bn.node(query).cardinality;
  auto it = evidence.values.find(query);
  if (it != evidence.values.end()) {
    if (!(evidence_probability(bn, evidence) > 0.0)) throw ValidationError("impossible evidence");
    std::vector<double> point(card, 0.0);
    point.at(it->second) = 1.0;
    return point;
  }
  const Factor f = eliminate(bn, evidence, query);
  if (f.vars.size() != 1 || f.vars[0] != query) throw std::logic_error("elimination left unexpected scope");
  double z = 0.0;
  for (double v : f.values) z += v;
  if (!(z > 0.0)) throw ValidationError("impossible evidence");
  std::vector<double> out(f.values);
  for (auto& v : out) v /= z;
  return out;
}

std::vector<double> do_infer(const BayesNet& bn, std::size_t query, const DoAssignment& forced,
                             const Evidence& evidence) {
  for (const auto& [n, v] : forced.values)
    if (evidence.values.count(n)) throw ValidationError("do() and evidence overlap on " + bn.node(n).name);
  return infer(bn.mutilated(forced), query, evidence);
}

namespace {

Evidence non_descendant_evidence(const BayesNet& bn, std::size_t cause, const Evidence& evidence) {
  const auto desc = bn.descendants(cause);
  Evidence kept;
  for (const auto& [n, v] : evidence.values)
    if (n != cause && !desc[n]) kept.values[n] = v;
  return kept;
}

void check_effect_args(const BayesNet& bn, std::size_t cause, std::size_t target, std::size_t target_value) {
  if (cause >= bn.size() || target >= bn.size()) throw ValidationError("unknown node in effect query");
  if (cause == target) throw ValidationError("cause and target must differ");
  if (target_value >= bn.node(target).cardinality) throw ValidationError("target value out of range");
}

}  // namespace

double causal_effect(const BayesNet& bn, std::size_t cause, std::size_t cause_value, std::size_t target,
                     std::size_t target_value, const Evidence& evidence) {
  check_effect_args(bn, cause, target, target_value);
  if (cause_value >= bn.node(cause).cardinality) throw ValidationError("intervention value out of range");
  const Evidence z = non_descendant_evidence(bn, cause, evidence);
  const double with_do = do_infer(bn, target, DoAssignment{{{cause, cause_value}}}, z)[target_value];
  const double without = infer(bn, target, z)[target_value];
  return with_do - without;
}

std::string to_string(EffectVariant v) {
  switch (v) {
    case EffectVariant::ExpectedAbs: return "expected_abs";
    case EffectVariant::Signed: return "signed";
    case EffectVariant::Max: return "max";
  }
  return "expected_abs";
}

EffectVariant effect_variant_from_string(const std::string& s) {
  if (s == "expected_abs") return EffectVariant::ExpectedAbs;
  if (s == "signed") return EffectVariant::Signed;
  if (s == "max") return EffectVariant::Max;
  throw ValidationError("unknown effect variant '" + s + "' (expected expected_abs, signed or max)");
}

double expected_causal_effect(const BayesNet& bn, std::size_t cause, std::size_t target, std::size_t target_value,
                              const Evidence& evidence, EffectVariant variant) {
  check_effect_args(bn, cause, target, target_value);
  auto observed = evidence.values.find(target);
  if (observed != evidence.values.end() && observed->second != target_value) {
    // Outcome ruled out by the evidence itself; still reject impossible Z.
    if (!(evidence_probability(bn, evidence) > 0.0)) throw ValidationError("impossible evidence");
    return 0.0;
  }
  const std::vector<double> weights = infer(bn, cause, evidence);
  const Evidence z = non_descendant_evidence(bn, cause, evidence);
  const double baseline = infer(bn, target, z)[target_value];
  const BayesNet* base = &bn;
  double score = 0.0;
  for (std::size_t x = 0; x < weights.size(); ++x) {
    if (variant != EffectVariant::Max && weights[x] == 0.0) continue;
    const double effect = infer(base->mutilated(DoAssignment{{{cause, x}}}), target, z)[target_value] - baseline;
    switch (variant) {
      case EffectVariant::ExpectedAbs: score += weights[x] * std::abs(effect); break;
      case EffectVariant::Signed: score += weights[x] * effect; break;
      case EffectVariant::Max: score = std::max(score, std::abs(effect)); break;
    }
  }
  return score;
}

std::vector<double> brute_force_joint(const BayesNet& bn) {
  std::size_t total = 1;
  for (const auto& node : bn.nodes()) {
    total *= node.cardinality;
    if (total > (std::size_t{1} << 20)) throw ValidationError("state space too large for brute force");
  }
  std::vector<double> joint(total);
  std::vector<std::size_t> a(bn.size(), 0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    double p = 1.0;
    for (std::size_t i = 0; i < bn.size(); ++i) p *= bn.probability(i, a[i], a);
    joint[idx] = p;
    for (std::size_t k = bn.size(); k-- > 0;) {
      if (++a[k] < bn.node(k).cardinality) break;
      a[k] = 0;
    }
  }
  return joint;
}

Json to_json(const LayeredNet& net) {
  const auto& bn = net.bn;
  Json nodes = Json::array();
  for (const auto& node : bn.nodes()) {
    Json parents = Json::array();
    for (std::size_t p : node.parents) parents.push_back(bn.node(p).name);
    Json rows = Json::array();
    for (std::size_t r = 0; r < node.row_count(); ++r)
      rows.push_back(std::vector<double>(node.cpt.begin() + static_cast<std::ptrdiff_t>(r * node.cardinality),
                                         node.cpt.begin() + static_cast<std::ptrdiff_t>((r + 1) * node.cardinality)));
    nodes.push_back(Json{{"name", node.name}, {"cardinality", node.cardinality}, {"parents", parents}, {"cpt", rows}});
  }
  Json levels = Json::array();
  for (const auto& level : net.levels) {
    Json names = Json::array();
    for (std::size_t n : level) names.push_back(bn.node(n).name);
    levels.push_back(names);
  }
  return Json{{"format", "concausal-bayes-net-v1"},
              {"cpt_layout", "row-major; rows by parent assignment in mixed radix, first parent most significant"},
              {"label", bn.node(net.label).name},
              {"prediction", bn.node(net.prediction).name},
              {"levels", levels},
              {"nodes", nodes}};
}

LayeredNet layered_net_from_json(const Json& j) {
  LayeredNet net;
  for (const auto& node : j.at("nodes")) {
    std::vector<std::size_t> parents;
    for (const auto& p : node.at("parents")) parents.push_back(net.bn.index_of(p.get<std::string>()));
    const std::size_t idx = net.bn.add_node(node.at("name").get<std::string>(), node.at("cardinality").get<std::size_t>(),
                                            std::move(parents));
    std::vector<double> cpt;
    for (const auto& row : node.at("cpt"))
      for (const auto& v : row) cpt.push_back(v.get<double>());
    net.bn.set_cpt(idx, std::move(cpt));
  }
  net.label = net.bn.index_of(j.at("label").get<std::string>());
  net.prediction = net.bn.index_of(j.at("prediction").get<std::string>());
  for (const auto& level : j.at("levels")) {
    std::vector<std::size_t> ids;
    for (const auto& n : level) ids.push_back(net.bn.index_of(n.get<std::string>()));
    net.levels.push_back(std::move(ids));
  }
  net.bn.validate(1e-9);
  return net;
}

void save_bayes_net(const std::filesystem::path& path, const LayeredNet& net, const Json& provenance) {
  Json j = to_json(net);
  j["provenance"] = provenance;
  write_text(path, j.dump(1) + "\n");
}

LayeredNet load_bayes_net(const std::filesystem::path& path, Json* provenance) {
  const Json j = Json::parse(read_text(path));
  if (provenance) *provenance = j.value("provenance", Json::object());
  return layered_net_from_json(j);
}

}  // namespace concausal
