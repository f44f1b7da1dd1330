#include "concausal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "concausal/error.hpp"

namespace concausal {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "blob format assumes little-endian host");

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_floats(const fs::path& path, std::span<const double> values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<float> narrow(values.begin(), values.end());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(narrow.data()),
            static_cast<std::streamsize>(narrow.size() * sizeof(float)));
}

std::vector<double> read_floats(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw MissingArtifact(path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(float))
    throw ValidationError(path.string() + ": expected " + std::to_string(expected) +
                          " floats, found " + std::to_string(bytes) + " bytes");
  in.seekg(0);
  std::vector<float> narrow(expected);
  in.read(reinterpret_cast<char*>(narrow.data()), static_cast<std::streamsize>(bytes));
  return {narrow.begin(), narrow.end()};
}

Json layer_spec(const Layer& layer) {
  Json j;
  j["type"] = layer_kind(layer);
  if (auto* c = std::get_if<Conv2d>(&layer)) {
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["padding"] = c->padding;
  } else if (auto* d = std::get_if<Dense>(&layer)) {
    j["in_features"] = d->in_features;
    j["out_features"] = d->out_features;
  } else if (auto* p = std::get_if<MaxPool2d>(&layer)) {
    j["size"] = p->size;
  }
  return j;
}

namespace {

Layer layer_from_spec(const Json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "conv2d") {
    Conv2d c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.padding = j.at("padding").get<std::size_t>();
    c.weight = Tensor({c.out_channels, c.in_channels, c.kernel, c.kernel});
    c.bias = Tensor({c.out_channels});
    return c;
  }
  if (type == "dense") {
    Dense d;
    d.in_features = j.at("in_features").get<std::size_t>();
    d.out_features = j.at("out_features").get<std::size_t>();
    d.weight = Tensor({d.out_features, d.in_features});
    d.bias = Tensor({d.out_features});
    return d;
  }
  if (type == "relu") return Relu{};
  if (type == "maxpool2d") return MaxPool2d{j.at("size").get<std::size_t>()};
  if (type == "global_avg_pool") return GlobalAvgPool{};
  if (type == "softmax") return Softmax{};
  throw ValidationError("unknown layer type in checkpoint: " + type);
}

}  // namespace

void round_to_float32(Network& net) {
  for (auto* p : net.parameters())
    for (auto& v : p->values()) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const fs::path& dir, const Network& net, const Json& metadata) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = "concausal-checkpoint-v1";
  manifest["input_shape"] = net.input_shape();
  Json layers = Json::array();
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const Layer& layer = net.layer(i);
    Json spec = layer_spec(layer);
    if (has_parameters(layer)) {
      const Tensor* w = nullptr;
      const Tensor* b = nullptr;
      if (auto* c = std::get_if<Conv2d>(&layer)) {
        w = &c->weight;
        b = &c->bias;
      } else {
        const auto& d = std::get<Dense>(layer);
        w = &d.weight;
        b = &d.bias;
      }
      const std::string stem = "layer_" + std::to_string(i);
      spec["weight_blob"] = stem + "_weight.f32";
      spec["bias_blob"] = stem + "_bias.f32";
      write_floats(dir / (stem + "_weight.f32"), w->values());
      write_floats(dir / (stem + "_bias.f32"), b->values());
    }
    layers.push_back(spec);
  }
  manifest["layers"] = layers;
  manifest["metadata"] = metadata;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Network load_checkpoint(const fs::path& dir, Json* metadata) {
  const Json manifest = Json::parse(read_text(dir / "manifest.json"));
  std::vector<Layer> layers;
  for (const auto& spec : manifest.at("layers")) {
    Layer layer = layer_from_spec(spec);
    Tensor* w = nullptr;
    Tensor* b = nullptr;
    if (auto* c = std::get_if<Conv2d>(&layer)) {
      w = &c->weight;
      b = &c->bias;
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      w = &d->weight;
      b = &d->bias;
    }
    if (w) {
      *w = Tensor(w->shape(), read_floats(dir / spec.at("weight_blob").get<std::string>(), w->size()));
      *b = Tensor(b->shape(), read_floats(dir / spec.at("bias_blob").get<std::string>(), b->size()));
    }
    layers.push_back(std::move(layer));
  }
  if (metadata) *metadata = manifest.value("metadata", Json::object());
  return Network(manifest.at("input_shape").get<Shape>(), std::move(layers));
}

}  // namespace concausal
