#include "concausal/service.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "httplib.h"

#include "concausal/error.hpp"

namespace concausal {

namespace {

std::optional<std::size_t> parse_index(const std::string& s) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

Json matrix(const Tensor& map) {
  Json rows = Json::array();
  for (std::size_t y = 0; y < map.dim(0); ++y) {
    Json row = Json::array();
    for (std::size_t x = 0; x < map.dim(1); ++x) row.push_back(map[y * map.dim(1) + x]);
    rows.push_back(row);
  }
  return rows;
}

Json distribution(const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); }

}  // namespace

QueryService::QueryService(LoadedArtifacts artifacts) : a_(std::move(artifacts)) {
  hash_ = a_.provenance.value("config_hash", std::string("unknown"));
  for (std::size_t id : a_.data.test_ids) {
    const auto& inst = a_.data.instances.at(id);
    Observed o;
    o.id = id;
    auto mask = a_.model.empty_mask();
    auto trace = a_.model.run(inst.image, &mask);
    o.codes = std::move(trace.codes);
    o.output = std::move(trace.output);
    o.net_predicted = argmax(a_.model.net.forward(inst.image).values());
    InterventionRecord r;
    r.instance_id = id;
    r.intervened = mask;
    r.pooled = pool_codes(o.codes);
    r.true_label = inst.label;
    r.predicted = argmax(o.output.values());
    o.record = discretize(r, a_.spec);
    observed_.push_back(std::move(o));
  }
  std::sort(observed_.begin(), observed_.end(), [](const Observed& x, const Observed& y) { return x.id < y.id; });
}

Reply QueryService::error(int status, const std::string& code, const std::string& message,
                          const std::string& field) const {
  return {status, Json{{"code", code}, {"message", message}, {"field", field}, {"provenance_hash", hash_}}};
}

Reply QueryService::ok(Json body) const {
  body["provenance_hash"] = hash_;
  return {200, std::move(body)};
}

const QueryService::Observed* QueryService::find(std::size_t id) const {
  auto it = std::lower_bound(observed_.begin(), observed_.end(), id,
                             [](const Observed& o, std::size_t v) { return o.id < v; });
  return it != observed_.end() && it->id == id ? &*it : nullptr;
}

Reply QueryService::health() const {
  return ok(Json{{"status", "ok"}, {"version", kVersion}, {"instances", observed_.size()},
                 {"concepts", a_.spec.active.size()}});
}

Reply QueryService::instances() const {
  Json list = Json::array();
  for (const auto& o : observed_)
    list.push_back(Json{{"id", o.id},
                        {"label", o.record.label},
                        {"predicted", o.record.predicted},
                        {"network_predicted", o.net_predicted}});
  return ok(Json{{"instances", list}});
}

Reply QueryService::concepts(const std::string& id_text) const {
  const auto id = parse_index(id_text);
  if (!id) return error(400, "bad_request", "instance id must be a nonnegative integer", "id");
  const Observed* o = find(*id);
  if (!o) return error(404, "not_found", "unknown instance " + id_text, "id");
  Json list = Json::array();
  for (std::size_t v = 0; v < a_.spec.active.size(); ++v) {
    const auto& ch = a_.spec.active[v];
    const Tensor map = o->codes.at(ch.level).channel(ch.channel);
    list.push_back(Json{{"name", ch.name()},
                        {"level", ch.level},
                        {"channel", ch.channel},
                        {"bin", o->record.bins[v]},
                        {"pooled", mean_pool(map)},
                        {"map", matrix(map)}});
  }
  const Tensor& image = a_.data.instances.at(*id).image;
  return ok(Json{{"id", *id},
                 {"label", o->record.label},
                 {"predicted", o->record.predicted},
                 {"image", matrix(image.reshaped({image.dim(1), image.dim(2)}))},
                 {"levels", a_.model.stack.size()},
                 {"concepts", list}});
}

Reply QueryService::rank(const QueryParams& params) const {
  EffectVariant variant = a_.config.variant;
  if (auto it = params.find("variant"); it != params.end()) {
    try {
      variant = effect_variant_from_string(it->second);
    } catch (const ValidationError& e) {
      return error(400, "bad_request", e.what(), "variant");
    }
  }
  EffectReport report = rank_concepts(a_.net, Evidence{}, variant);
  report.seed = a_.config.seed;
  return ok(report.to_json());
}

Reply QueryService::query(const std::string& body) const {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    return error(400, "bad_request", "body is not valid JSON", "body");
  }
  if (!j.is_object()) return error(400, "bad_request", "body must be a JSON object", "body");
  if (!j.contains("instance_id") || !j.at("instance_id").is_number_unsigned())
    return error(400, "bad_request", "instance_id must be a nonnegative integer", "instance_id");
  const auto id = j.at("instance_id").get<std::size_t>();
  const Observed* o = find(id);
  if (!o) return error(404, "not_found", "unknown instance " + std::to_string(id), "instance_id");

  const auto& bn = a_.net.bn;
  const auto nodes = a_.net.concept_nodes();
  std::set<ChannelId> chosen;
  const Json interventions = j.value("interventions", Json::array());
  if (!interventions.is_array()) return error(400, "bad_request", "interventions must be an array", "interventions");
  for (std::size_t i = 0; i < interventions.size(); ++i) {
    const std::string field = "interventions[" + std::to_string(i) + "]";
    const Json& item = interventions[i];
    ChannelId ch;
    if (item.is_array() && item.size() == 2 && item[0].is_number_unsigned() && item[1].is_number_unsigned()) {
      ch = {item[0].get<std::size_t>(), item[1].get<std::size_t>()};
    } else if (item.is_object() && item.contains("level") && item.contains("channel") &&
               item["level"].is_number_unsigned() && item["channel"].is_number_unsigned()) {
      ch = {item["level"].get<std::size_t>(), item["channel"].get<std::size_t>()};
    } else {
      return error(400, "bad_request", "expected [level, channel] or {level, channel}", field);
    }
    if (std::find(a_.spec.active.begin(), a_.spec.active.end(), ch) == a_.spec.active.end())
      return error(400, "bad_request", ch.name() + " is not an active concept", field);
    chosen.insert(ch);
  }
  const std::size_t classes = o->output.size();
  std::size_t target = o->record.predicted;
  if (j.contains("target") && !j.at("target").is_null()) {
    if (!j.at("target").is_number_unsigned() || j.at("target").get<std::size_t>() >= classes)
      return error(400, "bad_request", "target must be a class index below " + std::to_string(classes), "target");
    target = j.at("target").get<std::size_t>();
  }

  // BN side: concept bins as evidence; intervened nodes forced to the bin of
  // a zeroed (pooled 0) channel, their descendants' evidence dropped.
  Evidence z = instance_evidence(a_.net, o->record, false);
  bool fell_back = false;
  if (!(evidence_probability(bn, z) > 0.0)) {
    z = Evidence{};
    fell_back = true;
  }
  const auto pre_bn = infer(bn, a_.net.prediction, z);
  std::vector<double> post_bn = pre_bn;
  InterventionMask mask = a_.model.empty_mask();
  if (!chosen.empty()) {
    DoAssignment forced;
    std::vector<bool> dropped(bn.size(), false);
    for (const auto& ch : chosen) {
      const auto v = static_cast<std::size_t>(std::find(a_.spec.active.begin(), a_.spec.active.end(), ch) -
                                              a_.spec.active.begin());
      forced.values[nodes[v]] = bin_index(0.0, a_.spec.edges[v]);
      dropped[nodes[v]] = true;
      const auto d = bn.descendants(nodes[v]);
      for (std::size_t n = 0; n < d.size(); ++n) dropped[n] = dropped[n] || d[n];
      mask.at(ch.level).at(ch.channel) = true;
    }
    Evidence kept;
    for (const auto& [n, v] : z.values)
      if (!dropped[n]) kept.values[n] = v;
    post_bn = do_infer(bn, a_.net.prediction, forced, kept);
  }
  const Tensor& pre_net = o->output;
  const Tensor post_net = chosen.empty() ? pre_net : a_.model.run(a_.data.instances.at(id).image, &mask).output;

  Evidence with_pred = fell_back ? Evidence{} : instance_evidence(a_.net, o->record, true);
  const auto effects = instance_top_effects(a_.net, with_pred, target, nodes.size());
  Json rows = Json::array();
  for (const auto& r : effects.rows) rows.push_back(Json{{"name", r.name}, {"score", r.score}});
  Json applied = Json::array();
  for (const auto& ch : chosen)
    applied.push_back(Json{{"level", ch.level}, {"channel", ch.channel}, {"name", ch.name()}});

  return ok(Json{{"instance_id", id},
                 {"target", target},
                 {"interventions", applied},
                 {"bn", Json{{"pre", pre_bn}, {"post", post_bn}}},
                 {"network", Json{{"pre", distribution(pre_net)}, {"post", distribution(post_net)}}},
                 {"effects", rows},
                 {"fell_back_to_prior", fell_back || effects.fell_back}});
}

Reply QueryService::nn(const QueryParams& params) const {
  std::size_t values[3] = {0, 0, 0};
  const char* names[3] = {"level", "channel", "id"};
  for (int i = 0; i < 3; ++i) {
    auto it = params.find(names[i]);
    if (it == params.end()) return error(400, "bad_request", std::string("missing parameter ") + names[i], names[i]);
    const auto v = parse_index(it->second);
    if (!v) return error(400, "bad_request", std::string(names[i]) + " must be a nonnegative integer", names[i]);
    values[i] = *v;
  }
  std::size_t k = 5;
  if (auto it = params.find("k"); it != params.end()) {
    const auto v = parse_index(it->second);
    if (!v) return error(400, "bad_request", "k must be a nonnegative integer", "k");
    k = *v;
  }
  const ChannelId ch{values[0], values[1]};
  if (!find(values[2])) return error(404, "not_found", "unknown instance " + std::to_string(values[2]), "id");
  if (std::find(a_.spec.active.begin(), a_.spec.active.end(), ch) == a_.spec.active.end())
    return error(400, "bad_request", "channel " + ch.name() + " was pruned or does not exist", "channel");
  if (k > observed_.size()) return error(400, "bad_request", "k exceeds corpus size", "k");

  std::vector<EncodedMap> corpus;
  for (const auto& o : observed_) corpus.push_back({o.id, o.codes.at(ch.level).channel(ch.channel)});
  const auto neighbors = concept_nearest_neighbors(corpus, a_.spec.active, ch, values[2], k);
  Json list = Json::array();
  for (const auto& n : neighbors)
    list.push_back(Json{{"instance_id", n.instance_id},
                        {"distance", n.distance},
                        {"map", matrix(find(n.instance_id)->codes.at(ch.level).channel(ch.channel))}});
  return ok(Json{{"concept", ch.name()}, {"query", values[2]}, {"k", k}, {"neighbors", list}});
}

namespace {

void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

QueryParams params_of(const httplib::Request& req) {
  QueryParams out;
  for (const auto& [k, v] : req.params) out[k] = v;
  return out;
}

}  // namespace

std::unique_ptr<httplib::Server> make_server(const QueryService& service) {
  auto srv = std::make_unique<httplib::Server>();
  const QueryService* s = &service;
  auto guarded = [s](auto&& fn) {
    return [s, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const std::exception& e) {
        send(res, Reply{500, Json{{"code", "internal"}, {"message", e.what()}, {"field", nullptr},
                                  {"provenance_hash", s->provenance_hash()}}});
      }
    };
  };
  srv->Get("/health", guarded([s](const httplib::Request&) { return s->health(); }));
  srv->Get("/instances", guarded([s](const httplib::Request&) { return s->instances(); }));
  srv->Get(R"(/instances/([^/]+)/concepts)",
           guarded([s](const httplib::Request& req) { return s->concepts(req.matches[1].str()); }));
  srv->Get("/rank", guarded([s](const httplib::Request& req) { return s->rank(params_of(req)); }));
  srv->Get("/nn", guarded([s](const httplib::Request& req) { return s->nn(params_of(req)); }));
  srv->Post("/query", guarded([s](const httplib::Request& req) { return s->query(req.body); }));
  srv->set_error_handler([s](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    send(res, Reply{res.status, Json{{"code", res.status == 404 ? "not_found" : "error"},
                                     {"message", "no route for " + req.method + " " + req.path},
                                     {"field", nullptr},
                                     {"provenance_hash", s->provenance_hash()}}});
  });
  return srv;
}

void serve(const QueryService& service, const std::string& host, int port) {
  auto srv = make_server(service);
  if (!srv->listen(host, port)) throw ValidationError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace concausal
