#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "concausal/concept_vars.hpp"
#include "concausal/error.hpp"
#include "concausal/rng.hpp"

using namespace concausal;

namespace {

// One level; pooled[c] per record, nothing intervened unless flagged.
InterventionRecord record(std::vector<double> pooled, std::vector<bool> flags = {}) {
  InterventionRecord r;
  if (flags.empty()) flags.assign(pooled.size(), false);
  r.pooled = {std::move(pooled)};
  r.intervened = {std::move(flags)};
  r.predicted_distribution = {0.5, 0.5};
  return r;
}

}  // namespace

TEST_CASE("variance pruning") {
  std::vector<InterventionRecord> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(record({0.0, static_cast<double>(i % 2), 0.3 * i}));
  const auto kept = prune_by_variance(rs, 0.2499);
  REQUIRE(kept.active.size() == 2);
  CHECK(kept.active[0] == ChannelId{0, 1});
  CHECK(kept.variances[0] == doctest::Approx(0.25));
  CHECK(kept.active[1] == ChannelId{0, 2});

  CHECK(prune_by_variance(rs, 0.25).active.size() == 1);
  CHECK_THROWS_WITH_AS(prune_by_variance(rs, std::numeric_limits<double>::infinity()), "no active concepts",
                       ValidationError);
  CHECK_THROWS_AS(prune_by_variance({rs[0]}, 0.0), ValidationError);

  const auto capped = prune_by_variance(rs, 0.0, 1);
  REQUIRE(capped.active.size() == 1);
  CHECK(capped.active[0] == ChannelId{0, 2});  // larger variance wins
}

TEST_CASE("variance ignores intervened occurrences") {
  std::vector<InterventionRecord> rs;
  for (int i = 0; i < 6; ++i) rs.push_back(record({1.0}));
  rs.push_back(record({0.0}, {true}));
  CHECK_THROWS_AS(prune_by_variance(rs, 0.0), ValidationError);
}

TEST_CASE("quantile edges") {
  bool collapsed = true;
  const auto e = quantile_edges({0, 0, 0, 5, 6}, 2, &collapsed);
  REQUIRE(e.size() == 1);
  CHECK(e[0] > 0.0);
  CHECK(e[0] <= 5.0);
  CHECK_FALSE(collapsed);
  std::vector<std::size_t> bins;
  for (double v : {0.0, 0.0, 0.0, 5.0, 6.0}) bins.push_back(bin_index(v, e));
  CHECK(bins == std::vector<std::size_t>{0, 0, 0, 1, 1});

  std::vector<double> sym;
  for (int i = 0; i < 10; ++i) sym.push_back(i % 2 ? 1.0 : -1.0);
  const auto s = quantile_edges(sym, 2);
  REQUIRE(s.size() == 1);
  CHECK(s[0] == 0.0);

  const auto c = quantile_edges({1, 1, 2, 2}, 4, &collapsed);
  CHECK(collapsed);
  CHECK(c.size() == 1);

  CHECK_THROWS_AS(quantile_edges({3, 3, 3}, 2), ValidationError);
  CHECK_THROWS_AS(quantile_edges({1, 2}, 1), ValidationError);
  CHECK_THROWS_AS(quantile_edges({1, NAN}, 2), ValidationError);
}

TEST_CASE("bin assignment rules") {
  const std::vector<double> edges{2.5};
  CHECK(bin_index(0.0, edges) == 0);
  CHECK(bin_index(2.5, edges) == 1);  // tie goes to the upper bin
  CHECK(bin_index(7.0, edges) == 1);
  CHECK_THROWS_AS(bin_index(NAN, edges), ValidationError);

  const std::vector<double> three{-1.0, 0.0, 4.0};
  std::size_t prev = 0;
  for (double v = -3.0; v < 6.0; v += 0.25) {
    const auto b = bin_index(v, three);
    CHECK(b < 4);
    CHECK(b >= prev);
    prev = b;
  }
}

TEST_CASE("equal-frequency bins on distinct values") {
  Rng rng(4);
  std::vector<InterventionRecord> rs;
  for (int i = 0; i < 101; ++i) rs.push_back(record({rng.normal()}));
  for (std::size_t k = 2; k <= 5; ++k) {
    const auto spec = fit_bins(rs, {{0, 0}}, k);
    std::vector<std::size_t> counts(k, 0);
    for (const auto& d : discretize_all(rs, spec)) ++counts.at(d.bins[0]);
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
  }
}

TEST_CASE("pruning and binning are invariant to record order") {
  Rng rng(8);
  std::vector<InterventionRecord> rs;
  for (int i = 0; i < 60; ++i) rs.push_back(record({rng.uniform(), 0.0, rng.normal()}, {rng.bernoulli(0.1), false, false}));
  auto shuffled = rs;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto a = prune_by_variance(rs, 1e-9), b = prune_by_variance(shuffled, 1e-9);
  CHECK(a.active == b.active);
  CHECK(fit_bins(rs, a.active).edges == fit_bins(shuffled, b.active).edges);
}

TEST_CASE("discretize carries flags and places zeroed channels in bin 0") {
  std::vector<InterventionRecord> rs;
  for (int i = 1; i <= 10; ++i) rs.push_back(record({static_cast<double>(i)}));
  rs.push_back(record({0.0}, {true}));
  rs.back().true_label = 1;
  rs.back().predicted = 1;
  const auto spec = fit_bins(rs, {{0, 0}}, 2);
  CHECK(spec.edges[0][0] == 5.5);  // fitted without the intervened zero
  const auto d = discretize(rs.back(), spec);
  CHECK(d.bins == std::vector<std::size_t>{0});
  CHECK(d.intervened == std::vector<bool>{true});
  CHECK(d.label == 1);
  CHECK(d.predicted == 1);
}

TEST_CASE("spec and discrete records round trip") {
  std::vector<InterventionRecord> rs;
  for (int i = 0; i < 8; ++i) rs.push_back(record({0.1 * i, 1.0 * (i % 3)}, {i == 2, false}));
  const auto spec = fit_bins(rs, {{0, 0}, {0, 1}}, 3);
  const auto back = discretization_from_json(to_json(spec));
  CHECK(back.edges == spec.edges);
  CHECK(back.active == spec.active);
  CHECK(back.effective_bins == spec.effective_bins);

  const auto records = discretize_all(rs, spec);
  const auto path = std::filesystem::temp_directory_path() / "concausal_cv_test" / "records.jsonl";
  save_discrete_records(path, records, Json{{"format", "test"}});
  CHECK(load_discrete_records(path) == records);
  std::filesystem::remove_all(path.parent_path());

  Json bad = to_json(spec);
  bad["variables"][0]["edges"] = Json::array({1.0, 1.0});
  CHECK_THROWS_AS(discretization_from_json(bad), ValidationError);
}
