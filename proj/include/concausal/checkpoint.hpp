#pragma once

#include <filesystem>

#include "json.hpp"

#include "concausal/network.hpp"

namespace concausal {

using Json = nlohmann::ordered_json;

// Checkpoint layout:
//   <dir>/manifest.json          layer list, input shape, plus caller metadata
//   <dir>/layer_<i>_weight.f32   raw little-endian float32, row-major
//   <dir>/layer_<i>_bias.f32
// Weights are narrowed to float32 on save; round_to_float32 applies the same
// rounding in memory so a saved-then-loaded net is bitwise identical.
void save_checkpoint(const std::filesystem::path& dir, const Network& net, const Json& metadata);
Network load_checkpoint(const std::filesystem::path& dir, Json* metadata = nullptr);

void round_to_float32(Network& net);

Json layer_spec(const Layer& layer);

// Small file helpers shared by the artifact writers.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
void write_floats(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_floats(const std::filesystem::path& path, std::size_t expected);

}  // namespace concausal
