// Acceptance suite: one PASS/FAIL line per primary criterion.
//
// usage: acceptance [work_dir]
// The desk-scale pipeline runs twice under work_dir (run_a, run_b).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "concausal/error.hpp"
#include "concausal/pipeline.hpp"
#include "oracles.hpp"

using namespace concausal;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* id, const char* title, bool pass, const std::string& detail) {
  std::printf("%s %s: %s (%s)\n", id, pass ? "PASS" : "FAIL", title, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <typename Fn>
void guarded(const char* id, const char* title, Fn fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

double net_check(Network net, const Tensor& input, Rng& rng, bool cross_entropy_loss) {
  OutputLoss loss;
  if (cross_entropy_loss) {
    loss = [](const Tensor& y, Tensor* g) { return cross_entropy(y, 0, g); };
  } else {
    Tensor w = random_tensor(net.output_shape(), rng);
    loss = [w](const Tensor& y, Tensor* g) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
      if (g) *g = w;
      return s;
    };
  }
  return gradient_check(net, loss, input, 1e-5).max_relative_error;
}

void p1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  const Tensor image = random_tensor({2, 6, 6}, rng);
  double worst = 0.0;
  std::string worst_name;
  auto track = [&](const std::string& name, double err) {
    if (err > worst || worst_name.empty()) {
      worst = std::max(worst, err);
      worst_name = name;
    }
  };
  track("conv", net_check(Network({2, 6, 6}, {make_conv(2, 3, 3, 1, 1, rng)}), image, rng, false));
  track("conv-stride2", net_check(Network({2, 6, 6}, {make_conv(2, 3, 3, 2, 0, rng)}), image, rng, false));
  track("relu", net_check(Network({2, 6, 6}, {make_conv(2, 3, 3, 1, 1, rng), Relu{}, make_conv(3, 2, 3, 1, 1, rng)}),
                          image, rng, false));
  track("maxpool", net_check(Network({2, 6, 6}, {make_conv(2, 3, 3, 1, 1, rng), MaxPool2d{2}}), image, rng, false));
  track("gap+dense", net_check(Network({2, 6, 6}, {make_conv(2, 3, 3, 1, 1, rng), GlobalAvgPool{},
                                                   make_dense(3, 4, rng)}),
                               image, rng, false));
  track("softmax", net_check(Network({2, 6, 6}, {GlobalAvgPool{}, make_dense(2, 3, rng), Softmax{}}), image, rng,
                             true));
  track("composed", net_check(Network({2, 6, 6}, {make_conv(2, 4, 3, 1, 1, rng), Relu{}, MaxPool2d{2},
                                                  make_conv(4, 4, 3, 1, 1, rng), Relu{}, GlobalAvgPool{},
                                                  make_dense(4, 2, rng), Softmax{}}),
                              image, rng, true));

  // Composite autoencoder loss (shallow + deep + interpretability terms).
  Network host({1, 8, 8}, {make_conv(1, 4, 3, 1, 1, rng), Relu{}, MaxPool2d{2}, make_conv(4, 4, 3, 1, 1, rng),
                           Relu{}, GlobalAvgPool{}, make_dense(4, 2, rng), Softmax{}});
  Tensor input({1, 8, 8});
  for (auto& v : input.values()) v = rng.uniform();
  const Tensor act = host.forward_range(input, 0, 3).back();
  ConceptAutoencoder ae = make_autoencoder(act.shape(), 3, AutoencoderSpec{4, 4, 3}, 55);
  const LossWeights w;
  auto enc_g = ae.encoder.zero_gradients();
  auto dec_g = ae.decoder.zero_gradients();
  autoencoder_loss(host, ae, act, Tensor{}, w, &enc_g, &dec_g);
  std::vector<Tensor*> params = ae.encoder.parameters();
  for (Tensor* t : ae.decoder.parameters()) params.push_back(t);
  std::vector<Tensor> analytic = enc_g;
  analytic.insert(analytic.end(), dec_g.begin(), dec_g.end());
  const auto composite = gradient_check(
      params, analytic, [&] { return autoencoder_loss(host, ae, act, Tensor{}, w, nullptr, nullptr).total; }, 1e-5);
  track("autoencoder-loss", composite.max_relative_error);

  const double secs = seconds_since(t0);
  report("P1", "gradient correctness", worst < 1e-4 && secs < 60.0,
         "max rel err " + fmt(worst) + " at " + worst_name + ", " + fmt(secs) + " s");
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void p2() {
  double worst = 0.0;
  std::size_t queries = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const LayeredNet net = oracle::random_layered_net(s);
    const BayesNet& bn = net.bn;
    Rng rng(s, "acceptance.p2");
    for (std::size_t q = 0; q < bn.size(); ++q) {
      Evidence ev;
      for (std::size_t n = 0; n < bn.size(); ++n)
        if (n != q && rng.bernoulli(0.3)) ev.values[n] = static_cast<std::size_t>(rng.uniform_int(0, 1));
      worst = std::max(worst, max_diff(infer(bn, q, {}), oracle::conditional(bn, q, {})));
      worst = std::max(worst, max_diff(infer(bn, q, ev), oracle::conditional(bn, q, ev)));
      queries += 2;
      for (std::size_t f = 0; f < bn.size(); ++f) {
        if (f == q) continue;
        Evidence rest = ev;
        rest.values.erase(f);
        for (std::size_t v = 0; v < 2; ++v) {
          const DoAssignment forced{{{f, v}}};
          worst = std::max(worst, max_diff(do_infer(bn, q, forced, rest), oracle::do_conditional(bn, q, forced, rest)));
          ++queries;
        }
      }
    }
  }
  report("P2", "inference oracle", worst <= 1e-9,
         "100 nets, " + std::to_string(queries) + " queries, max abs diff " + fmt(worst));
}

void p3() {
  const BayesNet bn = oracle::chain();
  const double effect = causal_effect(bn, 0, 1, 1, 1, {});
  const double expected = expected_causal_effect(bn, 0, 1, 1, {});
  const bool pass = std::abs(effect - 0.28) <= 1e-12 && std::abs(expected - 0.336) <= 1e-12;
  char buf[128];
  std::snprintf(buf, sizeof buf, "effect %.15f, expected |effect| %.15f", effect, expected);
  report("P3", "chain hand cases", pass, buf);
}

void p4() {
  double worst_nd = 0.0, worst_root = 0.0, worst_signed = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const LayeredNet net = oracle::random_layered_net(s);
    const BayesNet& bn = net.bn;
    for (std::size_t i = 0; i < bn.size(); ++i) {
      const auto desc = bn.descendants(i);
      for (std::size_t j = 0; j < bn.size(); ++j) {
        if (j == i || desc[j]) continue;
        for (std::size_t x = 0; x < 2; ++x)
          for (std::size_t y = 0; y < 2; ++y) worst_nd = std::max(worst_nd, std::abs(causal_effect(bn, i, x, j, y, {})));
      }
    }
    for (std::size_t q = 0; q < bn.size(); ++q) {
      if (q == net.label) continue;
      for (std::size_t x = 0; x < 2; ++x)
        worst_root = std::max(worst_root, max_diff(do_infer(bn, q, DoAssignment{{{net.label, x}}}, {}),
                                                   infer(bn, q, Evidence{{{net.label, x}}})));
      for (std::size_t y = 0; y < 2; ++y)
        worst_signed = std::max(worst_signed,
                                std::abs(expected_causal_effect(bn, net.label, q, y, {}, EffectVariant::Signed)));
    }
  }
  const bool pass = worst_nd <= 1e-12 && worst_root <= 1e-12 && worst_signed <= 1e-12;
  report("P4", "structural zero effects", pass,
         "non-descendant " + fmt(worst_nd) + ", do-vs-condition on root " + fmt(worst_root) +
             ", signed root effect " + fmt(worst_signed));
}

struct RunResult {
  bool ok = false;
  double seconds = 0.0;
  std::string error;
};

RunResult run_full(const PipelineConfig& config) {
  RunResult r;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::remove_all(config.artifact_dir);
    std::ostringstream log;
    run_pipeline(config, &log);
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = seconds_since(t0);
  return r;
}

void p5(const PipelineConfig& config, const RunResult& run) {
  if (!run.ok) {
    report("P5", "desk-scale pipeline", false, "pipeline failed: " + run.error);
    return;
  }
  const ArtifactPaths paths{config.artifact_dir};
  const Json target = Json::parse(read_text(paths.target_report()));
  const Json stack = Json::parse(read_text(paths.stack_report()));
  const Json disc = Json::parse(read_text(paths.discretization()));
  const double acc = target.at("test_accuracy").get<double>();
  const double agreement = stack.at("final_agreement").get<double>();
  bool counts_ok = disc.at("active_per_level").size() == config.ae_levels.size();
  std::string counts;
  for (const auto& c : disc.at("active_per_level")) {
    const auto n = c.get<std::size_t>();
    counts_ok = counts_ok && n >= 1 && n <= 10;
    counts += (counts.empty() ? "" : "/") + std::to_string(n);
  }
  const bool pass = run.seconds < 1800.0 && acc >= 0.95 && agreement >= 0.90 && counts_ok;
  report("P5", "desk-scale pipeline", pass,
         fmt(run.seconds) + " s, held-out accuracy " + fmt(acc) + ", agreement " + fmt(agreement) +
             ", active per level " + counts);
}

void p6(const PipelineConfig& config) {
  const LoadedArtifacts a = load_artifacts(config);
  const EffectReport ranked = rank_concepts(a.net, Evidence{}, EffectVariant::ExpectedAbs);
  std::vector<double> bn_scores, oracle_scores;
  const auto ablation = ablation_effects(a.model, a.data.split(a.data.test_ids), a.spec.active);
  for (std::size_t v = 0; v < a.spec.active.size(); ++v) {
    const std::string name = a.spec.active[v].name();
    for (const auto& row : ranked.rows)
      if (row.name == name) bn_scores.push_back(row.score);
    oracle_scores.push_back(ablation[v]);
  }
  const double rho = spearman(bn_scores, oracle_scores);
  report("P6", "causal-ranking fidelity", rho >= 0.5,
         "Spearman " + fmt(rho) + " over " + std::to_string(bn_scores.size()) + " concepts");
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void p7(const PipelineConfig& a, const RunResult& ra, const PipelineConfig& b, const RunResult& rb) {
  if (!ra.ok || !rb.ok) {
    report("P7", "determinism", false, "a pipeline run failed");
    return;
  }
  std::size_t compared = 0;
  std::string mismatch;
  for (const auto& entry : fs::recursive_directory_iterator(a.artifact_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.artifact_dir);
    ++compared;
    if (!fs::exists(b.artifact_dir / rel) || file_bytes(entry.path()) != file_bytes(b.artifact_dir / rel)) {
      mismatch = rel.string();
      break;
    }
  }
  const bool core = fs::exists(a.artifact_dir / "reports" / "rank.txt") && fs::exists(a.artifact_dir / "bn" / "net.json");
  report("P7", "determinism", mismatch.empty() && core && compared > 0,
         mismatch.empty() ? std::to_string(compared) + " artifact files byte-identical across two runs"
                          : "differs: " + mismatch);
}

void p8(const PipelineConfig& config) {
  const ArtifactPaths paths{config.artifact_dir};
  const InterventionFile file = load_interventions(paths.interventions());
  const Dataset data = load_dataset(paths.data());
  const AutoencodedModel model = load_stack(paths.stack(), load_checkpoint(paths.target()));

  std::size_t n = 0, hits = 0;
  for (const auto& r : file.records)
    for (const auto& level : r.intervened)
      for (bool b : level) {
        ++n;
        hits += b ? 1 : 0;
      }
  const double mean = 0.1 * static_cast<double>(n);
  const double sigma = std::sqrt(static_cast<double>(n) * 0.1 * 0.9);
  const bool binomial_ok = std::abs(static_cast<double>(hits) - mean) <= 3.0 * sigma;

  // Observational pooled values per instance; every level shallower than the
  // shallowest intervened level must match them exactly.
  std::map<std::size_t, std::vector<std::vector<double>>> observed;
  std::size_t violations = 0, checked_levels = 0;
  for (const auto& r : file.records) {
    auto it = observed.find(r.instance_id);
    if (it == observed.end())
      it = observed.emplace(r.instance_id, observe_instance(model, data.instances.at(r.instance_id)).pooled).first;
    std::size_t first = r.intervened.size();
    for (std::size_t l = 0; l < r.intervened.size() && first == r.intervened.size(); ++l)
      for (bool b : r.intervened[l])
        if (b) {
          first = l;
          break;
        }
    for (std::size_t l = 0; l < first; ++l) {
      ++checked_levels;
      if (r.pooled[l] != it->second[l]) ++violations;
    }
    for (std::size_t l = 0; l < r.intervened.size(); ++l)
      for (std::size_t c = 0; c < r.intervened[l].size(); ++c)
        if (r.intervened[l][c] && r.pooled[l][c] != 0.0) ++violations;
  }
  report("P8", "interventional-dataset statistics", binomial_ok && violations == 0,
         std::to_string(hits) + " of " + std::to_string(n) + " flags (expected " + fmt(mean) + " +/- " +
             fmt(3 * sigma) + "), " + std::to_string(checked_levels) + " upstream levels checked, " +
             std::to_string(violations) + " violations");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  guarded("P1", "gradient correctness", p1);
  guarded("P2", "inference oracle", p2);
  guarded("P3", "chain hand cases", p3);
  guarded("P4", "structural zero effects", p4);

  PipelineConfig a;
  a.artifact_dir = work / "run_a";
  PipelineConfig b = a;
  b.artifact_dir = work / "run_b";
  const RunResult ra = run_full(a);
  guarded("P5", "desk-scale pipeline", [&] { p5(a, ra); });
  guarded("P6", "causal-ranking fidelity", [&] {
    if (!ra.ok) throw ValidationError("pipeline failed: " + ra.error);
    p6(a);
  });
  const RunResult rb = run_full(b);
  guarded("P7", "determinism", [&] { p7(a, ra, b, rb); });
  guarded("P8", "interventional-dataset statistics", [&] {
    if (!ra.ok) throw ValidationError("pipeline failed: " + ra.error);
    p8(a);
  });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
