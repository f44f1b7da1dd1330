#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "concausal/checkpoint.hpp"
#include "concausal/tensor.hpp"

namespace concausal {

// Procedural "figure vs background" images. A figure is a filled torso
// rectangle with an optional head disc above it and optional leg bars below;
// background images carry clutter only, padded with extra blobs so that the
// two classes have similar mean intensity.
struct SynthConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  double figure_probability = 0.5;
  double head_probability = 0.6;
  double legs_probability = 0.6;
  std::size_t torso_min_width = 6, torso_max_width = 10;
  std::size_t torso_min_height = 8, torso_max_height = 12;
  std::size_t head_radius = 3;
  std::size_t leg_length = 6;
  std::size_t clutter_count = 4;
  double noise_std = 0.04;

  void validate() const;
};

Json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const Json& j);

struct SynthLatents {
  bool head = false;
  bool torso = false;
  bool legs = false;
  int torso_x = 0, torso_y = 0;
  int torso_width = 0, torso_height = 0;
  double intensity = 0.0;
  std::uint64_t noise_seed = 0;

  friend bool operator==(const SynthLatents&, const SynthLatents&) = default;
};

struct SynthInstance {
  std::size_t id = 0;
  Tensor image;  // (1, H, W), values in [0, 1]
  int label = 0; // 1 iff torso present
  SynthLatents latents;
};

struct Dataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<SynthInstance> instances;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;

  std::vector<const SynthInstance*> split(const std::vector<std::size_t>& ids) const;
};

// Deterministic in (config, seed). The first train_count instances form the
// training split and the rest the test split.
Dataset generate_dataset(const SynthConfig& config, std::uint64_t seed);

// Renders an image from its latents; generate_dataset uses this.
Tensor render_instance(const SynthConfig& config, const SynthLatents& latents);

// <dir>/manifest.json, <dir>/images.f32, <dir>/latents.jsonl
void save_dataset(const std::filesystem::path& dir, const Dataset& data, const Json& provenance);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace concausal
