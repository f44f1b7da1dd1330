#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "concausal/checkpoint.hpp"
#include "concausal/network.hpp"
#include "concausal/synth_data.hpp"

namespace concausal {

struct AutoencoderSpec {
  std::size_t code_channels = 16;
  std::size_t hidden_channels = 16;
  std::size_t kernel = 3;
};

// Encoder: three same-padded conv layers, ReLU after each (the code is
// nonnegative). Decoder: three conv layers, ReLU between, linear output.
struct ConceptAutoencoder {
  std::size_t host_level = 0;  // activation index in the target net
  Network encoder;
  Network decoder;

  std::size_t code_channels() const { return encoder.output_shape().at(0); }
  Tensor encode(const Tensor& activation) const { return encoder.forward(activation); }
  Tensor decode(const Tensor& code) const { return decoder.forward(code); }
};

ConceptAutoencoder make_autoencoder(const Shape& host_shape, std::size_t host_level,
                                    const AutoencoderSpec& spec, std::uint64_t seed);

// One code channel at one autoencoder. `level` is the autoencoder's position
// in the stack (shallowest = 0), which is how concepts are named.
struct ConceptFeatureImage {
  std::size_t level = 0;
  std::size_t channel = 0;
  Tensor map;  // (H, W)
};

std::string concept_name(std::size_t level, std::size_t channel);

// Per-channel zeroing flags for every autoencoder in a stack.
using InterventionMask = std::vector<std::vector<bool>>;

// The target net with a stack of autoencoders inserted at increasing levels.
struct AutoencodedModel {
  Network net;
  std::vector<ConceptAutoencoder> stack;

  struct Trace {
    std::vector<Tensor> codes;  // one per autoencoder, after interventions
    Tensor output;
  };

  // Forward pass with every autoencoder inserted. Channels flagged in `mask`
  // are zeroed in the code before decoding.
  Trace run(const Tensor& image, const InterventionMask* mask = nullptr) const;
  // Only the first `depth` autoencoders inserted.
  Tensor output_with(const Tensor& image, std::size_t depth) const;
  // Activation at `host_level` with every shallower autoencoder inserted.
  Tensor activation_at(const Tensor& image, std::size_t host_level) const;

  InterventionMask empty_mask() const;
};

// One code channel per feature image, ordered by channel.
std::vector<ConceptFeatureImage> encode(const AutoencodedModel& model, const Tensor& image,
                                        std::size_t level);

// Mean absolute difference.
double shallow_loss(const Tensor& activation, const Tensor& reconstruction, Tensor* grad = nullptr);

// KL(r(a) || r(a_hat)) where r runs the net from `level` to the output.
// Optional grad is w.r.t. a_hat; net parameters are never touched.
double deep_loss(const Network& net, std::size_t level, const Tensor& activation,
                 const Tensor& reconstruction, Tensor* grad = nullptr);
// Batch form: arithmetic mean over items.
double deep_loss(const Network& net, std::size_t level, std::span<const Tensor> activations,
                 std::span<const Tensor> reconstructions);

struct InterpretabilityTerms {
  double sparsity = 0.0;
  double tv = 0.0;
  double entropy = 0.0;
};

// code is (C, H, W). sparsity = mean |x|; tv = mean |difference| over all
// horizontally and vertically adjacent pairs; entropy = mean over locations
// of the Shannon entropy of |x| normalized across channels (locations with
// mass < 1e-8 contribute 0).
InterpretabilityTerms interpretability_terms(const Tensor& code);
// Weighted total; gradient w.r.t. code written to grad when non-null.
double interpretability_loss(const Tensor& code, const LossWeights& w, Tensor* grad = nullptr);

struct AeLossBreakdown {
  double shallow = 0.0;
  double deep = 0.0;
  InterpretabilityTerms terms;
  double total = 0.0;
};

// Composite loss for one host activation. `reference` is r(activation); pass an
// empty tensor to have it computed. Gradients accumulate into encoder_grads
// and decoder_grads when non-null.
AeLossBreakdown autoencoder_loss(const Network& net, const ConceptAutoencoder& ae,
                                 const Tensor& activation, const Tensor& reference,
                                 const LossWeights& w, std::vector<Tensor>* encoder_grads,
                                 std::vector<Tensor>* decoder_grads);

struct AeTrainConfig {
  AutoencoderSpec spec;
  LossWeights weights;
  int epochs = 2;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double clip_norm = 1.0;
  double agreement_floor = 0.90;
  bool enforce_deep_ratio = true;
};

Json to_json(const AeTrainConfig& c);
AeTrainConfig ae_train_config_from_json(const Json& j);

struct LevelReport {
  std::size_t host_level = 0;
  std::vector<double> epoch_losses;
  double agreement = 0.0;        // all autoencoders up to this one inserted
  double median_kl = 0.0;
  double shallow_error = 0.0;    // mean held-out shallow loss
  bool below_floor = false;
};

struct StackReport {
  std::vector<LevelReport> levels;
  double final_agreement = 0.0;
  double final_median_kl = 0.0;
  bool below_floor = false;
};

Json to_json(const StackReport& r);

struct AgreementStats {
  double agreement = 0.0;
  double median_kl = 0.0;
};

// Compares the first `depth` inserted autoencoders against the bare net.
AgreementStats measure_agreement(const AutoencodedModel& model, std::size_t depth,
                                 const std::vector<const SynthInstance*>& instances);

// Trains shallowest first; each later level sees activations produced with
// the shallower autoencoders already inserted. The net stays frozen.
AutoencodedModel train_autoencoder_stack(const Network& net,
                                         const std::vector<const SynthInstance*>& train,
                                         const std::vector<const SynthInstance*>& held_out,
                                         const std::vector<std::size_t>& levels,
                                         const AeTrainConfig& config, std::uint64_t seed,
                                         StackReport* report);

// Single-level trainer used by the stack; exposed for baseline comparisons.
void train_autoencoder(const Network& net, ConceptAutoencoder& ae,
                       const std::vector<Tensor>& activations, const AeTrainConfig& config,
                       std::uint64_t seed, LevelReport* report);

// Mean held-out shallow loss of `ae` on the given activations.
double mean_shallow_error(const ConceptAutoencoder& ae, const std::vector<Tensor>& activations);

// <dir>/stack.json plus <dir>/level_<i>/{encoder,decoder}/ checkpoints.
void save_stack(const std::filesystem::path& dir, const AutoencodedModel& model, const Json& metadata);
// The target net is loaded separately and passed in.
AutoencodedModel load_stack(const std::filesystem::path& dir, Network net, Json* metadata = nullptr);

}  // namespace concausal
