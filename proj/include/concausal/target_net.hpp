#pragma once

#include <cstdint>
#include <vector>

#include "concausal/checkpoint.hpp"
#include "concausal/network.hpp"
#include "concausal/synth_data.hpp"

namespace concausal {

// Default target net: six 3x3 same-padded conv+ReLU blocks with 2x max pooling after
// the listed blocks, then global average pooling, a dense layer and softmax.
struct ArchitectureSpec {
  std::vector<std::size_t> conv_channels{8, 8, 16, 16, 32, 32};
  std::vector<std::size_t> pool_after{2, 4};  // 1-based block indices
  std::size_t kernel = 3;
  std::size_t class_count = 2;
};

struct TrainConfig {
  int epochs = 4;
  std::size_t batch_size = 16;
  double learning_rate = 0.002;
  double momentum = 0.9;
};

Json to_json(const ArchitectureSpec& a);
ArchitectureSpec architecture_from_json(const Json& j);
Json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const Json& j);

Network build_target_net(const Shape& input_shape, const ArchitectureSpec& arch, std::uint64_t seed);

// Activation level after each conv block's ReLU (or its pool, when pooled).
std::vector<std::size_t> block_output_levels(const ArchitectureSpec& arch);

struct Evaluation {
  double accuracy = 0.0;
  std::vector<Tensor> distributions;
  std::vector<std::size_t> predictions;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Evaluation evaluate(const Network& net, const std::vector<const SynthInstance*>& instances);

struct TrainReport {
  std::vector<double> epoch_losses;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // on the test split
  std::uint64_t seed = 0;
  bool loss_increase_flagged = false;  // some epoch rose more than 5% over its predecessor
};

Json to_json(const TrainReport& r);

struct TrainedTarget {
  Network net;
  TrainReport report;
};

// Cross-entropy SGD. Weights are rounded to float32 after training so the
// in-memory net equals its checkpoint.
TrainedTarget train_target(const std::vector<const SynthInstance*>& train,
                           const std::vector<const SynthInstance*>& test, const ArchitectureSpec& arch,
                           const TrainConfig& config, std::uint64_t seed);

// Fisher-Yates with the project RNG.
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng);

}  // namespace concausal
