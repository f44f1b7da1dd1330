#include "concausal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "concausal/error.hpp"
#include "concausal/service.hpp"

namespace fs = std::filesystem;

namespace concausal {

void PipelineConfig::validate() const {
  data.validate();
  if (!(intervention_p >= 0.0 && intervention_p <= 1.0)) throw ValidationError("intervention p must lie in [0, 1]");
  if (passes == 0) throw ValidationError("passes must be positive");
  if (bins < 2) throw ValidationError("k (bins) must be at least 2");
  if (!(alpha >= 0.0)) throw ValidationError("smoothing alpha must be nonnegative");
  if (ae_levels.empty()) throw ValidationError("at least one autoencoder level is required");
  for (std::size_t i = 1; i < ae_levels.size(); ++i)
    if (ae_levels[i] <= ae_levels[i - 1]) throw ValidationError("autoencoder levels must be strictly increasing");
  if (prune_threshold && !(*prune_threshold >= 0.0)) throw ValidationError("prune threshold must be nonnegative");
  if (ae.enforce_deep_ratio) ae.weights.validate();
}

Json to_json(const PipelineConfig& c) {
  return Json{{"seed", c.seed},
              {"data", to_json(c.data)},
              {"architecture", to_json(c.arch)},
              {"train", to_json(c.train)},
              {"ae_levels", c.ae_levels},
              {"autoencoder", to_json(c.ae)},
              {"intervention_p", c.intervention_p},
              {"passes", c.passes},
              {"prune_threshold", c.prune_threshold ? Json(*c.prune_threshold) : Json(nullptr)},
              {"level_cap", c.level_cap},
              {"bins", c.bins},
              {"alpha", c.alpha},
              {"variant", to_string(c.variant)},
              {"artifact_dir", c.artifact_dir.string()}};
}

PipelineConfig pipeline_config_from_json(const Json& j) {
  static const std::vector<std::string> known{"seed", "data", "architecture", "train", "ae_levels",
                                              "autoencoder", "intervention_p", "passes", "prune_threshold",
                                              "level_cap", "bins", "alpha", "variant", "artifact_dir"};
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("unknown config key '" + key + "'");
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) c.data = synth_config_from_json(j.at("data"));
    if (j.contains("architecture")) c.arch = architecture_from_json(j.at("architecture"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.ae_levels = j.value("ae_levels", c.ae_levels);
    if (j.contains("autoencoder")) c.ae = ae_train_config_from_json(j.at("autoencoder"));
    c.intervention_p = j.value("intervention_p", c.intervention_p);
    c.passes = j.value("passes", c.passes);
    if (j.contains("prune_threshold") && !j.at("prune_threshold").is_null())
      c.prune_threshold = j.at("prune_threshold").get<double>();
    c.level_cap = j.value("level_cap", c.level_cap);
    c.bins = j.value("bins", c.bins);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("variant")) c.variant = effect_variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("artifact_dir")) c.artifact_dir = j.at("artifact_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const PipelineConfig& c) {
  Json j = to_json(c);
  j.erase("artifact_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

Json provenance(const PipelineConfig& c, const std::string& stage) {
  return Json{{"config_hash", config_hash(c)}, {"seed", c.seed}, {"version", kVersion}, {"stage", stage}};
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"gen-data", "train-target", "train-ae", "interventions",
                                              "discretize", "fit-bn",       "rank",     "explain-instance",
                                              "nn",         "serve"};
  return names;
}

LayeredNet build_concept_net(const DiscretizationSpec& spec, std::size_t class_count) {
  std::vector<std::vector<std::string>> names;
  std::vector<std::vector<std::size_t>> cards;
  std::size_t current = std::numeric_limits<std::size_t>::max();
  for (std::size_t v = 0; v < spec.active.size(); ++v) {
    if (spec.active[v].level != current) {
      names.emplace_back();
      cards.emplace_back();
      current = spec.active[v].level;
    }
    names.back().push_back(spec.active[v].name());
    cards.back().push_back(spec.effective_bins[v]);
  }
  return build_layered_structure(names, cards, class_count, class_count);
}

BnDataset to_bn_dataset(const LayeredNet& net, const std::vector<DiscreteRecord>& records) {
  const auto nodes = net.concept_nodes();
  BnDataset data;
  for (const auto& r : records) {
    if (r.bins.size() != nodes.size()) throw ValidationError("discrete record does not match the concept net");
    std::vector<std::size_t> row(net.bn.size(), 0);
    std::vector<bool> flags(net.bn.size(), false);
    if (r.label < 0) throw ValidationError("negative label in discrete record");
    row[net.label] = static_cast<std::size_t>(r.label);
    row[net.prediction] = r.predicted;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      row[nodes[i]] = r.bins[i];
      flags[nodes[i]] = r.intervened[i];
    }
    data.rows.push_back(std::move(row));
    data.intervened.push_back(std::move(flags));
  }
  return data;
}

InterventionRecord observe_instance(const AutoencodedModel& model, const SynthInstance& instance) {
  InterventionRecord r;
  r.instance_id = instance.id;
  r.intervened = model.empty_mask();
  const auto trace = model.run(instance.image, &r.intervened);
  r.pooled = pool_codes(trace.codes);
  r.true_label = instance.label;
  r.predicted = argmax(trace.output.values());
  r.predicted_distribution.assign(trace.output.values().begin(), trace.output.values().end());
  return r;
}

std::vector<double> ablation_effects(const AutoencodedModel& model,
                                     const std::vector<const SynthInstance*>& instances,
                                     const std::vector<ChannelId>& channels) {
  if (instances.empty()) throw ValidationError("ablation needs at least one instance");
  std::vector<double> out(channels.size(), 0.0);
  for (const auto* inst : instances) {
    const Tensor base = model.run(inst->image).output;
    const std::size_t c = argmax(base.values());
    for (std::size_t i = 0; i < channels.size(); ++i) {
      auto mask = model.empty_mask();
      mask.at(channels[i].level).at(channels[i].channel) = true;
      out[i] += std::abs(model.run(inst->image, &mask).output[c] - base[c]);
    }
  }
  for (auto& v : out) v /= static_cast<double>(instances.size());
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ValidationError("spearman needs two equal-length samples (n >= 2)");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

namespace {

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifact(path.string() + " (produced by stage " + producer + ")");
}

void say(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << "\n" << std::flush;
}

Network load_target(const ArtifactPaths& paths) {
  require(paths.target() / "manifest.json", "train-target");
  return load_checkpoint(paths.target());
}

AutoencodedModel load_model(const ArtifactPaths& paths) {
  Network net = load_target(paths);
  require(paths.stack() / "stack.json", "train-ae");
  return load_stack(paths.stack(), std::move(net));
}

Dataset load_data(const ArtifactPaths& paths) {
  require(paths.data() / "manifest.json", "gen-data");
  return load_dataset(paths.data());
}

DiscretizationSpec load_spec(const ArtifactPaths& paths) {
  require(paths.discretization(), "discretize");
  return discretization_from_json(Json::parse(read_text(paths.discretization())).at("discretization"));
}

LayeredNet load_net(const ArtifactPaths& paths) {
  require(paths.bayes_net(), "fit-bn");
  return load_bayes_net(paths.bayes_net());
}

void stage_gen_data(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  const Dataset data = generate_dataset(c.data, derive_seed(c.seed, "data"));
  save_dataset(paths.data(), data, provenance(c, "gen-data"));
  say(log, "gen-data: " + std::to_string(data.instances.size()) + " instances");
}

void stage_train_target(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  const Dataset data = load_data(paths);
  const auto trained = train_target(data.split(data.train_ids), data.split(data.test_ids), c.arch, c.train,
                                    derive_seed(c.seed, "target"));
  Json meta{{"architecture", to_json(c.arch)}, {"provenance", provenance(c, "train-target")}};
  save_checkpoint(paths.target(), trained.net, meta);
  Json report = to_json(trained.report);
  report["provenance"] = provenance(c, "train-target");
  write_text(paths.target_report(), report.dump(2) + "\n");
  say(log, "train-target: held-out accuracy " + std::to_string(trained.report.test_accuracy));
}

void stage_train_ae(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  const Dataset data = load_data(paths);
  const Network net = load_target(paths);
  StackReport report;
  const AutoencodedModel model = train_autoencoder_stack(net, data.split(data.train_ids), data.split(data.test_ids),
                                                         c.ae_levels, c.ae, derive_seed(c.seed, "autoencoders"),
                                                         &report);
  save_stack(paths.stack(), model, Json{{"provenance", provenance(c, "train-ae")}});
  Json rj = to_json(report);
  rj["provenance"] = provenance(c, "train-ae");
  write_text(paths.stack_report(), rj.dump(2) + "\n");
  say(log, "train-ae: agreement " + std::to_string(report.final_agreement) +
               (report.below_floor ? " (below floor)" : ""));
}

void stage_interventions(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  const Dataset data = load_data(paths);
  const AutoencodedModel model = load_model(paths);
  InterventionFile file;
  file.seed = derive_seed(c.seed, "interventions");
  file.p = c.intervention_p;
  file.passes = c.passes;
  for (const auto& ae : model.stack) file.code_channels.push_back(ae.code_channels());
  file.provenance = provenance(c, "interventions");
  file.records = generate_interventional_passes(model, data.split(data.train_ids), c.intervention_p, file.seed,
                                                c.passes);
  save_interventions(paths.interventions(), file);
  say(log, "interventions: " + std::to_string(file.records.size()) + " records");
}

void stage_discretize(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  require(paths.interventions(), "interventions");
  const InterventionFile file = load_interventions(paths.interventions());
  const double threshold = c.prune_threshold ? *c.prune_threshold : default_variance_threshold(file.records);
  const PruneResult pruned = prune_by_variance(file.records, threshold, c.level_cap);
  const DiscretizationSpec spec = fit_bins(file.records, pruned.active, c.bins);
  const auto discrete = discretize_all(file.records, spec);

  Json variances = Json::array();
  for (std::size_t i = 0; i < pruned.active.size(); ++i)
    variances.push_back(Json{{"name", pruned.active[i].name()}, {"variance", pruned.variances[i]}});
  Json per_level = Json::array();
  for (std::size_t l = 0; l < file.code_channels.size(); ++l)
    per_level.push_back(std::count_if(pruned.active.begin(), pruned.active.end(),
                                      [&](const ChannelId& id) { return id.level == l; }));
  Json doc{{"provenance", provenance(c, "discretize")},
           {"threshold", threshold},
           {"level_cap", c.level_cap},
           {"active_per_level", per_level},
           {"variances", variances},
           {"discretization", to_json(spec)}};
  write_text(paths.discretization(), doc.dump(2) + "\n");
  save_discrete_records(paths.discrete_records(), discrete,
                        Json{{"format", "concausal-discrete-records-v1"},
                             {"variables", to_json(spec).at("variables").size()},
                             {"provenance", provenance(c, "discretize")}});
  say(log, "discretize: " + std::to_string(spec.active.size()) + " active concepts");
}

void stage_fit_bn(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  const DiscretizationSpec spec = load_spec(paths);
  require(paths.discrete_records(), "discretize");
  const auto records = load_discrete_records(paths.discrete_records());
  LayeredNet net = build_concept_net(spec, c.arch.class_count);
  FitReport fit;
  fit_cpds(net.bn, to_bn_dataset(net, records), c.alpha, &fit);
  net.bn.validate(1e-9);
  save_bayes_net(paths.bayes_net(), net, provenance(c, "fit-bn"));
  Json fr{{"provenance", provenance(c, "fit-bn")},
          {"records", records.size()},
          {"alpha", c.alpha},
          {"nodes", net.bn.size()},
          {"edges", net.bn.edge_count()},
          {"warnings", fit.warnings}};
  write_text(paths.fit_report(), fr.dump(2) + "\n");
  say(log, "fit-bn: " + std::to_string(net.bn.size()) + " nodes, " + std::to_string(net.bn.edge_count()) +
               " edges, " + std::to_string(fit.warnings.size()) + " warnings");
}

void stage_rank(const PipelineConfig& c, const ArtifactPaths& paths, std::ostream* log) {
  const LayeredNet net = load_net(paths);
  EffectReport report = rank_concepts(net, Evidence{}, c.variant);
  report.seed = c.seed;
  Json j = report.to_json();
  j["provenance"] = provenance(c, "rank");
  write_text(paths.reports() / "rank.txt", report.to_text());
  write_text(paths.reports() / "rank.json", j.dump(2) + "\n");
  if (log) *log << report.to_text() << std::flush;
}

std::size_t pick_instance(const Dataset& data, const StageOptions& o) {
  if (data.test_ids.empty()) throw ValidationError("dataset has no test instances");
  const std::size_t id = o.instance.value_or(data.test_ids.front());
  if (id >= data.instances.size()) throw ValidationError("unknown instance id " + std::to_string(id));
  return id;
}

void stage_explain_instance(const PipelineConfig& c, const ArtifactPaths& paths, const StageOptions& o,
                            std::ostream* log) {
  const LayeredNet net = load_net(paths);
  const DiscretizationSpec spec = load_spec(paths);
  const Dataset data = load_data(paths);
  const AutoencodedModel model = load_model(paths);
  const std::size_t id = pick_instance(data, o);
  const DiscreteRecord record = discretize(observe_instance(model, data.instances[id]), spec);
  const auto result = instance_top_effects(net, instance_evidence(net, record), record.predicted, o.k);

  EffectReport report;
  report.rows = result.rows;
  report.target = net.bn.node(net.prediction).name + "=" + std::to_string(result.target_value);
  report.evidence = evidence_json(net.bn, result.fell_back ? Evidence{} : instance_evidence(net, record));
  report.seed = c.seed;
  Json j = report.to_json();
  j["instance_id"] = id;
  j["fell_back_to_prior"] = result.fell_back;
  j["provenance"] = provenance(c, "explain-instance");
  const std::string stem = "instance_" + std::to_string(id);
  write_text(paths.reports() / (stem + ".txt"), "# instance " + std::to_string(id) + "\n" + report.to_text());
  write_text(paths.reports() / (stem + ".json"), j.dump(2) + "\n");
  if (log) *log << report.to_text() << std::flush;
}

void stage_nn(const PipelineConfig& c, const ArtifactPaths& paths, const StageOptions& o, std::ostream* log) {
  const DiscretizationSpec spec = load_spec(paths);
  const Dataset data = load_data(paths);
  const AutoencodedModel model = load_model(paths);
  const std::size_t id = pick_instance(data, o);
  ChannelId channel;
  if (o.level && o.channel) {
    channel = {*o.level, *o.channel};
  } else {
    const auto ranked = rank_concepts(load_net(paths), Evidence{}, c.variant);
    const auto& top = ranked.rows.front().name;
    auto it = std::find_if(spec.active.begin(), spec.active.end(), [&](const ChannelId& a) { return a.name() == top; });
    channel = *it;
  }
  if (channel.level >= model.stack.size()) throw ValidationError("level out of range");
  std::vector<EncodedMap> corpus;
  auto ids = data.test_ids;
  if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.insert(ids.begin(), id);
  for (std::size_t i : ids) {
    auto feats = encode(model, data.instances[i].image, channel.level);
    if (channel.channel >= feats.size()) throw ValidationError("channel out of range");
    corpus.push_back({i, feats[channel.channel].map});
  }
  const auto neighbors = concept_nearest_neighbors(corpus, spec.active, channel, id, o.k);
  Json rows = Json::array();
  for (const auto& n : neighbors) rows.push_back(Json{{"instance_id", n.instance_id}, {"distance", n.distance}});
  Json j{{"concept", channel.name()}, {"query", id}, {"k", o.k}, {"neighbors", rows},
         {"provenance", provenance(c, "nn")}};
  write_text(paths.reports() / ("nn_" + channel.name() + "_id" + std::to_string(id) + ".json"), j.dump(2) + "\n");
  if (log)
    for (const auto& n : neighbors) *log << n.instance_id << "  " << n.distance << "\n";
}

}  // namespace

void run_stage(const std::string& stage, const PipelineConfig& c, const StageOptions& options, std::ostream* log) {
  c.validate();
  const ArtifactPaths paths{c.artifact_dir};
  if (stage == "gen-data") return stage_gen_data(c, paths, log);
  if (stage == "train-target") return stage_train_target(c, paths, log);
  if (stage == "train-ae") return stage_train_ae(c, paths, log);
  if (stage == "interventions") return stage_interventions(c, paths, log);
  if (stage == "discretize") return stage_discretize(c, paths, log);
  if (stage == "fit-bn") return stage_fit_bn(c, paths, log);
  if (stage == "rank") return stage_rank(c, paths, log);
  if (stage == "explain-instance") return stage_explain_instance(c, paths, options, log);
  if (stage == "nn") return stage_nn(c, paths, options, log);
  if (stage == "serve") {
    const QueryService service(load_artifacts(c));
    say(log, "serving on port " + std::to_string(options.port));
    serve(service, "0.0.0.0", options.port);
    return;
  }
  throw ValidationError("unknown stage '" + stage + "'");
}

void run_pipeline(const PipelineConfig& config, std::ostream* log) {
  for (const char* s : {"gen-data", "train-target", "train-ae", "interventions", "discretize", "fit-bn", "rank"})
    run_stage(s, config, {}, log);
}

LoadedArtifacts load_artifacts(const PipelineConfig& config) {
  const ArtifactPaths paths{config.artifact_dir};
  LoadedArtifacts a;
  a.config = config;
  a.data = load_data(paths);
  a.model = load_model(paths);
  a.spec = load_spec(paths);
  require(paths.bayes_net(), "fit-bn");
  Json prov;
  a.net = load_bayes_net(paths.bayes_net(), &prov);
  a.provenance = prov;
  return a;
}

}  // namespace concausal
