#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "concausal/checkpoint.hpp"

namespace concausal {

// Discrete node with a conditional probability table. Rows are indexed by the
// parent assignment in mixed radix, first parent most significant; each row
// holds `cardinality` probabilities.
struct BnNode {
  std::string name;
  std::size_t cardinality = 2;
  std::vector<std::size_t> parents;
  std::vector<double> cpt;

  std::size_t row_count() const { return cpt.size() / cardinality; }
};

// Observed values, keyed by node index.
struct Evidence {
  std::map<std::size_t, std::size_t> values;
};

// Forced values for do(); keyed by node index.
struct DoAssignment {
  std::map<std::size_t, std::size_t> values;
};

// Nodes are stored in insertion order, and parents must already exist, so
// index order is a topological order.
class BayesNet {
 public:
  std::size_t add_node(std::string name, std::size_t cardinality, std::vector<std::size_t> parents);

  std::size_t size() const { return nodes_.size(); }
  const BnNode& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<BnNode>& nodes() const { return nodes_; }
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t edge_count() const;

  std::size_t parent_rows(std::size_t i) const;
  void set_cpt(std::size_t i, std::vector<double> cpt);
  double probability(std::size_t i, std::size_t value, const std::vector<std::size_t>& full_assignment) const;

  const std::vector<std::size_t>& children(std::size_t i) const { return children_.at(i); }
  // Strict descendants.
  std::vector<bool> descendants(std::size_t i) const;
  std::vector<bool> ancestors_of(const std::vector<std::size_t>& nodes) const;

  // Every row sums to 1 within tol and all entries are in [0, 1].
  void validate(double tol = 1e-12) const;

  // Copy with each forced node's parents removed and its CPT replaced by a
  // point mass at the forced value.
  BayesNet mutilated(const DoAssignment& forced) const;

 private:
  std::vector<BnNode> nodes_;
  std::vector<std::vector<std::size_t>> children_;
  std::map<std::string, std::size_t> by_name_;
};

// Label root, full bipartite edges between consecutive concept levels,
// prediction sink. CPTs start uniform.
struct LayeredNet {
  BayesNet bn;
  std::size_t label = 0;
  std::vector<std::vector<std::size_t>> levels;
  std::size_t prediction = 0;

  std::vector<std::size_t> concept_nodes() const;
};

LayeredNet build_layered_structure(const std::vector<std::size_t>& level_sizes, std::size_t label_cardinality,
                                   std::size_t prediction_cardinality, std::size_t concept_cardinality = 2);

// Variant with explicit node names and cardinalities per level.
LayeredNet build_layered_structure(const std::vector<std::vector<std::string>>& names,
                                   const std::vector<std::vector<std::size_t>>& cardinalities,
                                   std::size_t label_cardinality, std::size_t prediction_cardinality);

// Fully observed rows in node order, with a per-node intervention flag.
struct BnDataset {
  std::vector<std::vector<std::size_t>> rows;
  std::vector<std::vector<bool>> intervened;
};

struct FitReport {
  std::vector<std::string> warnings;  // rows left uniform for lack of data
};

// Smoothed counts. A node's own CPT ignores rows where that node was
// intervened; such rows still count as parent values for its children.
void fit_cpds(BayesNet& bn, const BnDataset& data, double alpha, FitReport* report = nullptr);

// Exact posterior by variable elimination (min-degree order). Throws
// ValidationError("impossible evidence") when P(evidence) = 0.
std::vector<double> infer(const BayesNet& bn, std::size_t query, const Evidence& evidence);
// P(evidence).
double evidence_probability(const BayesNet& bn, const Evidence& evidence);

std::vector<double> do_infer(const BayesNet& bn, std::size_t query, const DoAssignment& forced,
                             const Evidence& evidence);

// P(x_j | do(x_i'), Z_i) - P(x_j | Z_i), where Z_i keeps only evidence on
// nodes that are neither X_i nor its descendants.
double causal_effect(const BayesNet& bn, std::size_t cause, std::size_t cause_value, std::size_t target,
                     std::size_t target_value, const Evidence& evidence);

enum class EffectVariant { ExpectedAbs, Signed, Max };
std::string to_string(EffectVariant v);
EffectVariant effect_variant_from_string(const std::string& s);

// ExpectedAbs: sum_x P(X_i = x | Z) |Effect(do(X_i = x))|; Signed drops the
// absolute value; Max is max_x |Effect|. Weights use all of Z. When Z makes
// the target outcome impossible the score is 0.
double expected_causal_effect(const BayesNet& bn, std::size_t cause, std::size_t target,
                              std::size_t target_value, const Evidence& evidence,
                              EffectVariant variant = EffectVariant::ExpectedAbs);

// Explicit product of all CPTs, index order = node order with node 0 most
// significant. Test oracle; rejects state spaces above 2^20.
std::vector<double> brute_force_joint(const BayesNet& bn);

Json to_json(const LayeredNet& net);
LayeredNet layered_net_from_json(const Json& j);
void save_bayes_net(const std::filesystem::path& path, const LayeredNet& net, const Json& provenance);
LayeredNet load_bayes_net(const std::filesystem::path& path, Json* provenance = nullptr);

}  // namespace concausal
