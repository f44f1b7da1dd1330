#include "concausal/concept_ae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "concausal/error.hpp"
#include "concausal/target_net.hpp"

namespace concausal {
namespace fs = std::filesystem;

namespace {

Tensor run_layers(const Network& net, Tensor x, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i) x = forward(net.layer(i), x);
  return x;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ConceptAutoencoder make_autoencoder(const Shape& host_shape, std::size_t host_level,
                                    const AutoencoderSpec& spec, std::uint64_t seed) {
  if (host_shape.size() != 3)
    throw ValidationError("autoencoders attach to (C, H, W) activations, got " + shape_string(host_shape));
  if (spec.code_channels == 0 || spec.hidden_channels == 0 || spec.kernel % 2 == 0)
    throw ValidationError("invalid autoencoder spec");
  Rng rng(seed, "ae.init", host_level);
  const std::size_t c = host_shape[0], h = spec.hidden_channels, k = spec.kernel, pad = k / 2;
  std::vector<Layer> enc{make_conv(c, h, k, 1, pad, rng), Relu{}, make_conv(h, h, k, 1, pad, rng), Relu{},
                         make_conv(h, spec.code_channels, k, 1, pad, rng), Relu{}};
  const Shape code_shape{spec.code_channels, host_shape[1], host_shape[2]};
  std::vector<Layer> dec{make_conv(spec.code_channels, h, k, 1, pad, rng), Relu{},
                         make_conv(h, h, k, 1, pad, rng), Relu{}, make_conv(h, c, k, 1, pad, rng)};
  ConceptAutoencoder ae{host_level, Network(host_shape, std::move(enc)), Network(code_shape, std::move(dec))};
  return ae;
}

std::string concept_name(std::size_t level, std::size_t channel) {
  return "level" + std::to_string(level) + "_feat" + std::to_string(channel);
}

AutoencodedModel::Trace AutoencodedModel::run(const Tensor& image, const InterventionMask* mask) const {
  if (mask && mask->size() != stack.size()) throw ValidationError("intervention mask does not match stack");
  Trace trace;
  Tensor x = image;
  if (x.shape() != net.input_shape())
    throw ValidationError("input shape " + shape_string(x.shape()) + " does not match " +
                          shape_string(net.input_shape()));
  std::size_t pos = 0;
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& ae = stack[i];
    x = run_layers(net, std::move(x), pos, ae.host_level);
    Tensor code = ae.encode(x);
    if (mask) {
      const auto& m = (*mask)[i];
      if (m.size() != code.dim(0)) throw ValidationError("intervention mask width does not match code");
      const std::size_t plane = code.dim(1) * code.dim(2);
      for (std::size_t c = 0; c < m.size(); ++c)
        if (m[c]) std::fill_n(code.data() + c * plane, plane, 0.0);
    }
    x = ae.decode(code);
    trace.codes.push_back(std::move(code));
    pos = ae.host_level;
  }
  trace.output = run_layers(net, std::move(x), pos, net.layer_count());
  return trace;
}

Tensor AutoencodedModel::output_with(const Tensor& image, std::size_t depth) const {
  Tensor x = image;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < std::min(depth, stack.size()); ++i) {
    x = run_layers(net, std::move(x), pos, stack[i].host_level);
    x = stack[i].decode(stack[i].encode(x));
    pos = stack[i].host_level;
  }
  return run_layers(net, std::move(x), pos, net.layer_count());
}

Tensor AutoencodedModel::activation_at(const Tensor& image, std::size_t host_level) const {
  Tensor x = image;
  std::size_t pos = 0;
  for (const auto& ae : stack) {
    if (ae.host_level >= host_level) break;
    x = run_layers(net, std::move(x), pos, ae.host_level);
    x = ae.decode(ae.encode(x));
    pos = ae.host_level;
  }
  return run_layers(net, std::move(x), pos, host_level);
}

InterventionMask AutoencodedModel::empty_mask() const {
  InterventionMask m;
  for (const auto& ae : stack) m.emplace_back(ae.code_channels(), false);
  return m;
}

std::vector<ConceptFeatureImage> encode(const AutoencodedModel& model, const Tensor& image,
                                        std::size_t level) {
  if (level >= model.stack.size())
    throw ValidationError("no trained autoencoder at level " + std::to_string(level));
  const auto& ae = model.stack[level];
  const Tensor code = ae.encode(model.activation_at(image, ae.host_level));
  std::vector<ConceptFeatureImage> out;
  for (std::size_t c = 0; c < code.dim(0); ++c) out.push_back({level, c, code.channel(c)});
  return out;
}

double shallow_loss(const Tensor& activation, const Tensor& reconstruction, Tensor* grad) {
  require_same_shape(activation, reconstruction, "shallow_loss");
  const double n = static_cast<double>(activation.size());
  double s = 0.0;
  if (grad) *grad = Tensor(activation.shape());
  for (std::size_t i = 0; i < activation.size(); ++i) {
    const double d = reconstruction[i] - activation[i];
    s += std::abs(d);
    if (grad) (*grad)[i] = sign(d) / n;
  }
  return s / n;
}

double deep_loss(const Network& net, std::size_t level, const Tensor& activation,
                 const Tensor& reconstruction, Tensor* grad) {
  if (level >= net.activation_shapes().size())
    throw ValidationError("level " + std::to_string(level) + " out of range");
  require_same_shape(activation, reconstruction, "deep_loss");
  const Tensor p = net.forward_from(activation, level);
  if (!grad) return kl_divergence(p.values(), net.forward_from(reconstruction, level).values());
  const auto acts = net.forward_range(reconstruction, level, net.layer_count());
  const Tensor& q = acts.back();
  Tensor gq(q.shape(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i)
    if (p[i] > 0.0 && q[i] > kProbabilityClamp) gq[i] = -p[i] / q[i];
  *grad = net.backward_range(acts, gq, level, nullptr);
  return kl_divergence(p.values(), q.values());
}

double deep_loss(const Network& net, std::size_t level, std::span<const Tensor> activations,
                 std::span<const Tensor> reconstructions) {
  if (activations.size() != reconstructions.size() || activations.empty())
    throw ValidationError("deep_loss batch size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < activations.size(); ++i)
    s += deep_loss(net, level, activations[i], reconstructions[i]);
  return s / static_cast<double>(activations.size());
}

namespace {

// Accumulates per-term gradients scaled by the given weights.
InterpretabilityTerms interpretability_impl(const Tensor& code, const LossWeights* w, Tensor* grad) {
  if (code.rank() != 3) throw ValidationError("code must be (C, H, W), got " + shape_string(code.shape()));
  const std::size_t channels = code.dim(0), h = code.dim(1), wd = code.dim(2), plane = h * wd;
  InterpretabilityTerms t;
  if (grad) *grad = Tensor(code.shape(), 0.0);

  const double n = static_cast<double>(code.size());
  for (std::size_t i = 0; i < code.size(); ++i) {
    t.sparsity += std::abs(code[i]);
    if (grad) (*grad)[i] += w->sparsity * sign(code[i]) / n;
  }
  t.sparsity /= n;

  const std::size_t pairs = channels * (h * (wd - 1) + (h - 1) * wd);
  if (pairs > 0) {
    const double inv = 1.0 / static_cast<double>(pairs);
    auto pair = [&](std::size_t a, std::size_t b) {
      const double d = code[a] - code[b];
      t.tv += std::abs(d);
      if (grad) {
        (*grad)[a] += w->tv * sign(d) * inv;
        (*grad)[b] -= w->tv * sign(d) * inv;
      }
    };
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < wd; ++x) {
          const std::size_t i = c * plane + y * wd + x;
          if (x + 1 < wd) pair(i, i + 1);
          if (y + 1 < h) pair(i, i + wd);
        }
    t.tv *= inv;
  }

  const double inv_plane = 1.0 / static_cast<double>(plane);
  for (std::size_t loc = 0; loc < plane; ++loc) {
    double mass = 0.0;
    for (std::size_t c = 0; c < channels; ++c) mass += std::abs(code[c * plane + loc]);
    if (mass < 1e-8) continue;
    double ent = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double q = std::abs(code[c * plane + loc]) / mass;
      if (q > 0.0) ent -= q * std::log(q);
    }
    t.entropy += ent;
    if (grad)
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = code[c * plane + loc];
        const double q = std::abs(v) / mass;
        if (q <= 0.0) continue;
        (*grad)[c * plane + loc] += w->entropy * inv_plane * sign(v) * (-(std::log(q) + ent) / mass);
      }
  }
  t.entropy *= inv_plane;
  return t;
}

}  // namespace

InterpretabilityTerms interpretability_terms(const Tensor& code) {
  return interpretability_impl(code, nullptr, nullptr);
}

double interpretability_loss(const Tensor& code, const LossWeights& w, Tensor* grad) {
  const auto t = interpretability_impl(code, &w, grad);
  return w.sparsity * t.sparsity + w.tv * t.tv + w.entropy * t.entropy;
}

AeLossBreakdown autoencoder_loss(const Network& net, const ConceptAutoencoder& ae,
                                 const Tensor& activation, const Tensor& reference,
                                 const LossWeights& w, std::vector<Tensor>* encoder_grads,
                                 std::vector<Tensor>* decoder_grads) {
  const bool want_grad = encoder_grads || decoder_grads;
  AeLossBreakdown out;
  const auto enc_acts = ae.encoder.forward_all(activation);
  const Tensor& code = enc_acts.back();
  const auto dec_acts = ae.decoder.forward_all(code);
  const Tensor& recon = dec_acts.back();

  Tensor g_shallow;
  out.shallow = shallow_loss(activation, recon, want_grad ? &g_shallow : nullptr);

  const Tensor p = reference.empty() ? net.forward_from(activation, ae.host_level) : reference;
  const auto r_acts = net.forward_range(recon, ae.host_level, net.layer_count());
  const Tensor& q = r_acts.back();
  out.deep = kl_divergence(p.values(), q.values());

  Tensor g_code;
  const double interp = interpretability_loss(code, w, want_grad ? &g_code : nullptr);
  out.terms = interpretability_terms(code);
  out.total = w.shallow * out.shallow + w.deep * out.deep + interp;
  if (!want_grad) return out;

  Tensor gq(q.shape(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i)
    if (p[i] > 0.0 && q[i] > kProbabilityClamp) gq[i] = -w.deep * p[i] / q[i];
  Tensor g_recon = net.backward_range(r_acts, gq, ae.host_level, nullptr);
  for (std::size_t i = 0; i < g_recon.size(); ++i) g_recon[i] += w.shallow * g_shallow[i];

  std::vector<Tensor> scratch_dec;
  std::vector<Tensor>* dg = decoder_grads;
  if (!dg) {
    scratch_dec = ae.decoder.zero_gradients();
    dg = &scratch_dec;
  }
  g_code += ae.decoder.backward_range(dec_acts, g_recon, 0, dg);
  if (encoder_grads) ae.encoder.backward_range(enc_acts, g_code, 0, encoder_grads);
  return out;
}

Json to_json(const AeTrainConfig& c) {
  return Json{{"code_channels", c.spec.code_channels},
              {"hidden_channels", c.spec.hidden_channels},
              {"kernel", c.spec.kernel},
              {"lambda_shallow", c.weights.shallow},
              {"lambda_deep", c.weights.deep},
              {"lambda_sparsity", c.weights.sparsity},
              {"lambda_tv", c.weights.tv},
              {"lambda_entropy", c.weights.entropy},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"clip_norm", c.clip_norm},
              {"agreement_floor", c.agreement_floor},
              {"enforce_deep_ratio", c.enforce_deep_ratio}};
}

AeTrainConfig ae_train_config_from_json(const Json& j) {
  AeTrainConfig c;
  c.spec.code_channels = j.value("code_channels", c.spec.code_channels);
  c.spec.hidden_channels = j.value("hidden_channels", c.spec.hidden_channels);
  c.spec.kernel = j.value("kernel", c.spec.kernel);
  c.weights.shallow = j.value("lambda_shallow", c.weights.shallow);
  c.weights.deep = j.value("lambda_deep", c.weights.deep);
  c.weights.sparsity = j.value("lambda_sparsity", c.weights.sparsity);
  c.weights.tv = j.value("lambda_tv", c.weights.tv);
  c.weights.entropy = j.value("lambda_entropy", c.weights.entropy);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.agreement_floor = j.value("agreement_floor", c.agreement_floor);
  c.enforce_deep_ratio = j.value("enforce_deep_ratio", c.enforce_deep_ratio);
  return c;
}

Json to_json(const StackReport& r) {
  Json levels = Json::array();
  for (const auto& l : r.levels)
    levels.push_back(Json{{"host_level", l.host_level},
                          {"epoch_losses", l.epoch_losses},
                          {"agreement", l.agreement},
                          {"median_kl", l.median_kl},
                          {"shallow_error", l.shallow_error},
                          {"below_floor", l.below_floor}});
  return Json{{"levels", levels},
              {"final_agreement", r.final_agreement},
              {"final_median_kl", r.final_median_kl},
              {"below_floor", r.below_floor}};
}

AgreementStats measure_agreement(const AutoencodedModel& model, std::size_t depth,
                                 const std::vector<const SynthInstance*>& instances) {
  if (instances.empty()) throw ValidationError("no instances");
  std::size_t agree = 0;
  std::vector<double> kls;
  for (const auto* inst : instances) {
    const Tensor base = model.net.forward(inst->image);
    const Tensor ins = model.output_with(inst->image, depth);
    if (argmax(base.values()) == argmax(ins.values())) ++agree;
    kls.push_back(kl_divergence(base.values(), ins.values()));
  }
  return {static_cast<double>(agree) / static_cast<double>(instances.size()), median(std::move(kls))};
}

double mean_shallow_error(const ConceptAutoencoder& ae, const std::vector<Tensor>& activations) {
  if (activations.empty()) throw ValidationError("no activations");
  double s = 0.0;
  for (const auto& a : activations) s += shallow_loss(a, ae.decode(ae.encode(a)));
  return s / static_cast<double>(activations.size());
}

void train_autoencoder(const Network& net, ConceptAutoencoder& ae, const std::vector<Tensor>& activations,
                       const AeTrainConfig& config, std::uint64_t seed, LevelReport* report) {
  if (activations.empty()) throw ValidationError("no activations to train on");
  if (config.batch_size == 0 || config.epochs < 0) throw ValidationError("invalid autoencoder training config");
  config.weights.validate(config.enforce_deep_ratio ? 10.0 : 0.0);

  std::vector<Tensor> references;
  references.reserve(activations.size());
  for (const auto& a : activations) references.push_back(net.forward_from(a, ae.host_level));

  Sgd opt(config.learning_rate, config.momentum, config.clip_norm);
  std::vector<std::size_t> order(activations.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "ae.shuffle", ae.host_level), "epoch", static_cast<std::uint64_t>(epoch));
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto eg = ae.encoder.zero_gradients();
      auto dg = ae.decoder.zero_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const auto loss = autoencoder_loss(net, ae, activations[order[k]], references[order[k]],
                                           config.weights, &eg, &dg);
        if (!std::isfinite(loss.total))
          throw DivergenceError("non-finite autoencoder loss at epoch " + std::to_string(epoch), epoch);
        epoch_loss += loss.total;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : eg) g *= scale;
      for (auto& g : dg) g *= scale;
      auto params = ae.encoder.parameters();
      for (auto* p : ae.decoder.parameters()) params.push_back(p);
      for (auto& g : dg) eg.push_back(std::move(g));
      opt.step(params, eg);
    }
    if (report) report->epoch_losses.push_back(epoch_loss / static_cast<double>(activations.size()));
  }
  round_to_float32(ae.encoder);
  round_to_float32(ae.decoder);
}

AutoencodedModel train_autoencoder_stack(const Network& net, const std::vector<const SynthInstance*>& train,
                                         const std::vector<const SynthInstance*>& held_out,
                                         const std::vector<std::size_t>& levels, const AeTrainConfig& config,
                                         std::uint64_t seed, StackReport* report) {
  if (levels.empty()) throw ValidationError("autoencoder level list is empty");
  if (train.empty() || held_out.empty()) throw ValidationError("autoencoder training needs data");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i && levels[i] <= levels[i - 1]) throw ValidationError("autoencoder levels must be strictly increasing");
    if (levels[i] == 0 || levels[i] >= net.layer_count())
      throw ValidationError("autoencoder level " + std::to_string(levels[i]) + " out of range");
  }
  config.weights.validate(config.enforce_deep_ratio ? 10.0 : 0.0);

  AutoencodedModel model{net, {}};
  StackReport local;
  for (std::size_t level : levels) {
    std::vector<Tensor> acts;
    acts.reserve(train.size());
    for (const auto* inst : train) acts.push_back(model.activation_at(inst->image, level));

    ConceptAutoencoder ae = make_autoencoder(net.activation_shapes()[level], level, config.spec, seed);
    LevelReport lr;
    lr.host_level = level;
    train_autoencoder(net, ae, acts, config, seed, &lr);
    model.stack.push_back(std::move(ae));

    std::vector<Tensor> held_acts;
    for (const auto* inst : held_out) held_acts.push_back(model.activation_at(inst->image, level));
    lr.shallow_error = mean_shallow_error(model.stack.back(), held_acts);
    const auto stats = measure_agreement(model, model.stack.size(), held_out);
    lr.agreement = stats.agreement;
    lr.median_kl = stats.median_kl;
    lr.below_floor = stats.agreement < config.agreement_floor;
    local.levels.push_back(std::move(lr));
  }
  local.final_agreement = local.levels.back().agreement;
  local.final_median_kl = local.levels.back().median_kl;
  local.below_floor = local.levels.back().below_floor;
  if (report) *report = std::move(local);
  return model;
}

void save_stack(const fs::path& dir, const AutoencodedModel& model, const Json& metadata) {
  fs::create_directories(dir);
  Json levels = Json::array();
  for (std::size_t i = 0; i < model.stack.size(); ++i) {
    const auto& ae = model.stack[i];
    const std::string sub = "level_" + std::to_string(i);
    save_checkpoint(dir / sub / "encoder", ae.encoder, Json{{"role", "encoder"}, {"host_level", ae.host_level}});
    save_checkpoint(dir / sub / "decoder", ae.decoder, Json{{"role", "decoder"}, {"host_level", ae.host_level}});
    levels.push_back(Json{{"level", i},
                          {"host_level", ae.host_level},
                          {"code_channels", ae.code_channels()},
                          {"directory", sub}});
  }
  Json manifest{{"format", "concausal-ae-stack-v1"},
                {"levels", levels},
                {"insertion_order", Json::array()},
                {"metadata", metadata}};
  for (std::size_t i = 0; i < model.stack.size(); ++i) manifest["insertion_order"].push_back(i);
  write_text(dir / "stack.json", manifest.dump(2) + "\n");
}

AutoencodedModel load_stack(const fs::path& dir, Network net, Json* metadata) {
  const Json manifest = Json::parse(read_text(dir / "stack.json"));
  AutoencodedModel model{std::move(net), {}};
  for (const auto& entry : manifest.at("levels")) {
    const auto sub = entry.at("directory").get<std::string>();
    ConceptAutoencoder ae{entry.at("host_level").get<std::size_t>(), load_checkpoint(dir / sub / "encoder"),
                          load_checkpoint(dir / sub / "decoder")};
    if (ae.host_level >= model.net.activation_shapes().size() ||
        ae.encoder.input_shape() != model.net.activation_shapes()[ae.host_level] ||
        ae.decoder.output_shape() != ae.encoder.input_shape())
      throw ValidationError("autoencoder at host level " + std::to_string(ae.host_level) +
                            " does not fit the target net");
    model.stack.push_back(std::move(ae));
  }
  if (metadata) *metadata = manifest.value("metadata", Json::object());
  return model;
}

}  // namespace concausal
