#pragma once
// Independent reference computations used by the tests: brute-force joint
// marginals, random layered nets, and small hand-built networks.

#include <cmath>
#include <vector>

#include "concausal/bayes_net.hpp"
#include "concausal/rng.hpp"

namespace oracle {

using namespace concausal;

// Index into the brute-force joint: node 0 most significant.
inline std::vector<std::size_t> decode_state(const BayesNet& bn, std::size_t idx) {
  std::vector<std::size_t> a(bn.size());
  for (std::size_t k = bn.size(); k-- > 0;) {
    a[k] = idx % bn.node(k).cardinality;
    idx /= bn.node(k).cardinality;
  }
  return a;
}

inline bool consistent(const std::vector<std::size_t>& a, const std::map<std::size_t, std::size_t>& ev) {
  for (const auto& [n, v] : ev)
    if (a[n] != v) return false;
  return true;
}

// P(query | evidence) by summing the explicit joint.
inline std::vector<double> conditional(const BayesNet& bn, std::size_t query, const Evidence& ev) {
  const auto joint = brute_force_joint(bn);
  std::vector<double> out(bn.node(query).cardinality, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    const auto a = decode_state(bn, i);
    if (!consistent(a, ev.values)) continue;
    out[a[query]] += joint[i];
    z += joint[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

// Same, on the mutilated net: the truncated factorization written out.
inline std::vector<double> do_conditional(const BayesNet& bn, std::size_t query, const DoAssignment& forced,
                                          const Evidence& ev) {
  std::vector<double> out(bn.node(query).cardinality, 0.0);
  double z = 0.0;
  std::size_t total = 1;
  for (const auto& n : bn.nodes()) total *= n.cardinality;
  for (std::size_t i = 0; i < total; ++i) {
    const auto a = decode_state(bn, i);
    if (!consistent(a, ev.values) || !consistent(a, forced.values)) continue;
    double p = 1.0;
    for (std::size_t n = 0; n < bn.size(); ++n)
      if (!forced.values.count(n)) p *= bn.probability(n, a[n], a);
    out[a[query]] += p;
    z += p;
  }
  for (auto& v : out) v /= z;
  return out;
}

inline std::vector<double> random_row(Rng& rng, std::size_t card) {
  std::vector<double> row(card);
  double s = 0.0;
  for (auto& v : row) {
    v = 0.05 + rng.uniform();
    s += v;
  }
  for (auto& v : row) v /= s;
  return row;
}

inline void randomize_cpts(BayesNet& bn, Rng& rng) {
  for (std::size_t i = 0; i < bn.size(); ++i) {
    std::vector<double> cpt;
    for (std::size_t r = 0; r < bn.parent_rows(i); ++r) {
      auto row = random_row(rng, bn.node(i).cardinality);
      cpt.insert(cpt.end(), row.begin(), row.end());
    }
    bn.set_cpt(i, std::move(cpt));
  }
}

// Layered binary net with at most 10 nodes in total (label + concepts +
// prediction) and random CPTs.
inline LayeredNet random_layered_net(std::uint64_t seed) {
  Rng rng(seed, "oracle.net");
  const std::size_t levels = static_cast<std::size_t>(rng.uniform_int(1, 3));
  std::vector<std::size_t> sizes;
  std::size_t budget = 8;  // concept nodes
  for (std::size_t l = 0; l < levels && budget > 0; ++l) {
    const auto s = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(std::min<std::size_t>(3, budget))));
    sizes.push_back(s);
    budget -= s;
  }
  LayeredNet net = build_layered_structure(sizes, 2, 2);
  randomize_cpts(net.bn, rng);
  return net;
}

// A -> B with P(A=1) = 0.6, P(B=1|A=1) = 0.9, P(B=1|A=0) = 0.2.
inline BayesNet chain() {
  BayesNet bn;
  const auto a = bn.add_node("A", 2, {});
  const auto b = bn.add_node("B", 2, {a});
  bn.set_cpt(a, {0.4, 0.6});
  bn.set_cpt(b, {0.8, 0.2, 0.1, 0.9});
  return bn;
}

}  // namespace oracle
