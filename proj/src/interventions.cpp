#include "concausal/interventions.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "concausal/error.hpp"

namespace concausal {

Tensor intervene_zero_channel(const Tensor& code, std::size_t channel) {
  if (code.rank() != 3) throw ValidationError("code must be (C, H, W)");
  if (channel >= code.dim(0))
    throw ValidationError("channel " + std::to_string(channel) + " out of range for " +
                          std::to_string(code.dim(0)) + " code channels");
  Tensor out = code;
  const std::size_t plane = code.dim(1) * code.dim(2);
  std::fill_n(out.data() + channel * plane, plane, 0.0);
  return out;
}

double mean_pool(const Tensor& map) {
  if (map.empty()) throw ValidationError("cannot pool an empty map");
  double s = 0.0;
  for (double v : map.values()) s += v;
  return s / static_cast<double>(map.size());
}

double mean_pool(const ConceptFeatureImage& feature) { return mean_pool(feature.map); }

std::vector<std::vector<double>> pool_codes(const std::vector<Tensor>& codes) {
  std::vector<std::vector<double>> pooled;
  for (const auto& code : codes) {
    const std::size_t plane = code.dim(1) * code.dim(2);
    std::vector<double> row(code.dim(0));
    for (std::size_t c = 0; c < code.dim(0); ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += code[c * plane + i];
      row[c] = s / static_cast<double>(plane);
    }
    pooled.push_back(std::move(row));
  }
  return pooled;
}

InterventionMask draw_intervention_mask(const AutoencodedModel& model, double p, std::uint64_t seed,
                                        std::size_t pass, std::size_t instance_id) {
  Rng rng(derive_seed(seed, "interventions.pass", pass), "instance", instance_id);
  InterventionMask mask = model.empty_mask();
  for (auto& level : mask)
    for (std::size_t c = 0; c < level.size(); ++c) level[c] = rng.bernoulli(p);
  return mask;
}

std::vector<InterventionRecord> generate_interventional_dataset(
    const AutoencodedModel& model, const std::vector<const SynthInstance*>& instances, double p,
    std::uint64_t seed, std::size_t pass) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("intervention probability must lie in [0, 1]");
  if (model.stack.empty()) throw ValidationError("no trained autoencoders");
  std::vector<InterventionRecord> records;
  records.reserve(instances.size());
  for (const auto* inst : instances) {
    InterventionRecord r;
    r.instance_id = inst->id;
    r.pass = pass;
    r.intervened = draw_intervention_mask(model, p, seed, pass, inst->id);
    auto trace = model.run(inst->image, &r.intervened);
    r.pooled = pool_codes(trace.codes);
    r.true_label = inst->label;
    r.predicted = argmax(trace.output.values());
    r.predicted_distribution.assign(trace.output.values().begin(), trace.output.values().end());
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<InterventionRecord> generate_interventional_passes(
    const AutoencodedModel& model, const std::vector<const SynthInstance*>& instances, double p,
    std::uint64_t seed, std::size_t passes) {
  std::vector<InterventionRecord> all;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    auto part = generate_interventional_dataset(model, instances, p, seed, pass);
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  return all;
}

Json to_json(const InterventionRecord& r) {
  Json flags = Json::array();
  for (const auto& level : r.intervened) {
    Json row = Json::array();
    for (bool b : level) row.push_back(b ? 1 : 0);
    flags.push_back(row);
  }
  return Json{{"instance_id", r.instance_id},
              {"pass", r.pass},
              {"intervened", flags},
              {"pooled", r.pooled},
              {"true_label", r.true_label},
              {"predicted", r.predicted},
              {"predicted_distribution", r.predicted_distribution}};
}

InterventionRecord intervention_record_from_json(const Json& j) {
  InterventionRecord r;
  r.instance_id = j.at("instance_id").get<std::size_t>();
  r.pass = j.at("pass").get<std::size_t>();
  for (const auto& level : j.at("intervened")) {
    std::vector<bool> row;
    for (const auto& b : level) row.push_back(b.get<int>() != 0);
    r.intervened.push_back(std::move(row));
  }
  r.pooled = j.at("pooled").get<std::vector<std::vector<double>>>();
  r.true_label = j.at("true_label").get<int>();
  r.predicted = j.at("predicted").get<std::size_t>();
  r.predicted_distribution = j.at("predicted_distribution").get<std::vector<double>>();
  return r;
}

void save_interventions(const std::filesystem::path& path, const InterventionFile& file) {
  Json registry = Json::array();
  for (std::size_t l = 0; l < file.code_channels.size(); ++l)
    for (std::size_t c = 0; c < file.code_channels[l]; ++c)
      registry.push_back(Json{{"level", l}, {"channel", c}, {"name", concept_name(l, c)}});
  Json header{{"format", "concausal-interventions-v1"},
              {"seed", file.seed},
              {"p", file.p},
              {"passes", file.passes},
              {"record_count", file.records.size()},
              {"code_channels", file.code_channels},
              {"channels", registry},
              {"provenance", file.provenance}};
  std::string text = header.dump() + "\n";
  for (const auto& r : file.records) text += to_json(r).dump() + "\n";
  write_text(path, text);
}

InterventionFile load_interventions(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty interventions file");
  const Json header = Json::parse(line);
  InterventionFile file;
  file.seed = header.at("seed").get<std::uint64_t>();
  file.p = header.at("p").get<double>();
  file.passes = header.at("passes").get<std::size_t>();
  file.code_channels = header.at("code_channels").get<std::vector<std::size_t>>();
  file.provenance = header.value("provenance", Json::object());
  while (std::getline(in, line))
    if (!line.empty()) file.records.push_back(intervention_record_from_json(Json::parse(line)));
  if (file.records.size() != header.at("record_count").get<std::size_t>())
    throw ValidationError(path.string() + ": record count does not match header");
  return file;
}

}  // namespace concausal
