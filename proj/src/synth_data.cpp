#include "concausal/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "concausal/error.hpp"
#include "concausal/rng.hpp"

namespace concausal {
namespace fs = std::filesystem;

namespace {

std::size_t head_space(const SynthConfig& c) { return 2 * c.head_radius + 2; }

void paint(Tensor& img, int y, int x, double value) {
  const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  if (y < 0 || x < 0 || y >= h || x >= w) return;
  double& px = img.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  px = std::max(px, value);
}

void paint_rect(Tensor& img, int y, int x, int rh, int rw, double value) {
  for (int dy = 0; dy < rh; ++dy)
    for (int dx = 0; dx < rw; ++dx) paint(img, y + dy, x + dx, value);
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 16 || width < 16) throw ValidationError("image size must be at least 16x16");
  if (!(figure_probability > 0.0 && figure_probability < 1.0))
    throw ValidationError("figure_probability must lie in (0, 1)");
  for (double p : {head_probability, legs_probability})
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("part probabilities must lie in [0, 1]");
  if (torso_min_width == 0 || torso_min_height == 0 || torso_min_width > torso_max_width ||
      torso_min_height > torso_max_height)
    throw ValidationError("invalid torso size range");
  if (head_space(*this) + torso_max_height + leg_length + 2 > height ||
      torso_max_width + 2 > width)
    throw ValidationError("degenerate geometry: figure parts do not fit on a " +
                          std::to_string(height) + "x" + std::to_string(width) + " canvas");
  if (train_count + test_count == 0) throw ValidationError("dataset must contain instances");
  if (noise_std < 0.0) throw ValidationError("noise_std must be nonnegative");
}

Json to_json(const SynthConfig& c) {
  return Json{{"height", c.height},
              {"width", c.width},
              {"train_count", c.train_count},
              {"test_count", c.test_count},
              {"figure_probability", c.figure_probability},
              {"head_probability", c.head_probability},
              {"legs_probability", c.legs_probability},
              {"torso_min_width", c.torso_min_width},
              {"torso_max_width", c.torso_max_width},
              {"torso_min_height", c.torso_min_height},
              {"torso_max_height", c.torso_max_height},
              {"head_radius", c.head_radius},
              {"leg_length", c.leg_length},
              {"clutter_count", c.clutter_count},
              {"noise_std", c.noise_std}};
}

SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.train_count = j.value("train_count", c.train_count);
  c.test_count = j.value("test_count", c.test_count);
  c.figure_probability = j.value("figure_probability", c.figure_probability);
  c.head_probability = j.value("head_probability", c.head_probability);
  c.legs_probability = j.value("legs_probability", c.legs_probability);
  c.torso_min_width = j.value("torso_min_width", c.torso_min_width);
  c.torso_max_width = j.value("torso_max_width", c.torso_max_width);
  c.torso_min_height = j.value("torso_min_height", c.torso_min_height);
  c.torso_max_height = j.value("torso_max_height", c.torso_max_height);
  c.head_radius = j.value("head_radius", c.head_radius);
  c.leg_length = j.value("leg_length", c.leg_length);
  c.clutter_count = j.value("clutter_count", c.clutter_count);
  c.noise_std = j.value("noise_std", c.noise_std);
  return c;
}

Tensor render_instance(const SynthConfig& config, const SynthLatents& z) {
  Tensor img({1, config.height, config.width}, 0.0);
  const int h = static_cast<int>(config.height), w = static_cast<int>(config.width);
  Rng rng(z.noise_seed);

  for (std::size_t i = 0; i < config.clutter_count; ++i) {
    const bool horizontal = rng.bernoulli(0.5);
    const int len = static_cast<int>(rng.uniform_int(3, 6));
    const int y = static_cast<int>(rng.uniform_int(0, h - 1));
    const int x = static_cast<int>(rng.uniform_int(0, w - 1));
    const double v = rng.uniform(0.3, 0.8);
    if (horizontal)
      paint_rect(img, y, x, 1, len, v);
    else
      paint_rect(img, y, x, len, 1, v);
  }

  if (!z.torso) {
    // Intensity matching: scatter 2x2 blobs covering roughly the torso area.
    const int blobs = std::max(1, z.torso_width * z.torso_height / 4);
    for (int i = 0; i < blobs; ++i) {
      const int y = static_cast<int>(rng.uniform_int(0, h - 2));
      const int x = static_cast<int>(rng.uniform_int(0, w - 2));
      paint_rect(img, y, x, 2, 2, z.intensity * rng.uniform(0.7, 1.0));
    }
  } else {
    paint_rect(img, z.torso_y, z.torso_x, z.torso_height, z.torso_width, z.intensity);
  }

  const int cx = z.torso_x + z.torso_width / 2;
  if (z.head) {
    const int r = static_cast<int>(config.head_radius);
    const int cy = z.torso_y - 1 - r;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy <= r * r) paint(img, cy + dy, cx + dx, z.intensity);
  }
  if (z.legs) {
    const int len = static_cast<int>(config.leg_length);
    const int top = z.torso_y + z.torso_height;
    paint_rect(img, top, z.torso_x + 1, len, 2, z.intensity);
    paint_rect(img, top, z.torso_x + z.torso_width - 3, len, 2, z.intensity);
  }

  for (auto& v : img.values()) {
    v = std::clamp(v + config.noise_std * rng.normal(), 0.0, 1.0);
    v = static_cast<double>(static_cast<float>(v));
  }
  return img;
}

Dataset generate_dataset(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset data;
  data.config = config;
  data.seed = seed;
  const std::size_t total = config.train_count + config.test_count;
  data.instances.reserve(total);
  const int h = static_cast<int>(config.height), w = static_cast<int>(config.width);
  for (std::size_t id = 0; id < total; ++id) {
    Rng rng(seed, "synth.latents", id);
    SynthLatents z;
    z.torso = rng.bernoulli(config.figure_probability);
    z.head = rng.bernoulli(config.head_probability);
    z.legs = rng.bernoulli(config.legs_probability);
    z.torso_width = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(config.torso_min_width),
                                                     static_cast<std::int64_t>(config.torso_max_width)));
    z.torso_height = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(config.torso_min_height),
                                                      static_cast<std::int64_t>(config.torso_max_height)));
    z.torso_x = static_cast<int>(rng.uniform_int(1, w - 1 - z.torso_width));
    const int y_lo = 1 + static_cast<int>(head_space(config));
    const int y_hi = h - 1 - static_cast<int>(config.leg_length) - z.torso_height;
    z.torso_y = static_cast<int>(rng.uniform_int(y_lo, y_hi));
    z.intensity = static_cast<double>(static_cast<float>(rng.uniform(0.6, 1.0)));
    z.noise_seed = derive_seed(seed, "synth.noise", id);

    SynthInstance inst;
    inst.id = id;
    inst.latents = z;
    inst.label = z.torso ? 1 : 0;
    inst.image = render_instance(config, z);
    data.instances.push_back(std::move(inst));
    (id < config.train_count ? data.train_ids : data.test_ids).push_back(id);
  }
  return data;
}

std::vector<const SynthInstance*> Dataset::split(const std::vector<std::size_t>& ids) const {
  std::vector<const SynthInstance*> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(&instances.at(id));
  return out;
}

namespace {

Json latents_json(const SynthInstance& inst) {
  const auto& z = inst.latents;
  return Json{{"id", inst.id},
              {"label", inst.label},
              {"head", z.head},
              {"torso", z.torso},
              {"legs", z.legs},
              {"torso_x", z.torso_x},
              {"torso_y", z.torso_y},
              {"torso_width", z.torso_width},
              {"torso_height", z.torso_height},
              {"intensity", z.intensity},
              {"noise_seed", z.noise_seed}};
}

}  // namespace

void save_dataset(const fs::path& dir, const Dataset& data, const Json& provenance) {
  fs::create_directories(dir);
  Json manifest{{"format", "concausal-dataset-v1"},
                {"config", to_json(data.config)},
                {"seed", data.seed},
                {"count", data.instances.size()},
                {"image_shape", Shape{1, data.config.height, data.config.width}},
                {"train_ids", data.train_ids},
                {"test_ids", data.test_ids},
                {"provenance", provenance}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<double> pixels;
  pixels.reserve(data.instances.size() * data.config.height * data.config.width);
  std::string lines;
  for (const auto& inst : data.instances) {
    pixels.insert(pixels.end(), inst.image.values().begin(), inst.image.values().end());
    lines += latents_json(inst).dump() + "\n";
  }
  write_floats(dir / "images.f32", pixels);
  write_text(dir / "latents.jsonl", lines);
}

Dataset load_dataset(const fs::path& dir) {
  const Json manifest = Json::parse(read_text(dir / "manifest.json"));
  Dataset data;
  data.config = synth_config_from_json(manifest.at("config"));
  data.seed = manifest.at("seed").get<std::uint64_t>();
  data.train_ids = manifest.at("train_ids").get<std::vector<std::size_t>>();
  data.test_ids = manifest.at("test_ids").get<std::vector<std::size_t>>();
  const auto count = manifest.at("count").get<std::size_t>();
  const std::size_t plane = data.config.height * data.config.width;
  const auto pixels = read_floats(dir / "images.f32", count * plane);

  std::istringstream lines(read_text(dir / "latents.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    SynthInstance inst;
    inst.id = j.at("id").get<std::size_t>();
    inst.label = j.at("label").get<int>();
    auto& z = inst.latents;
    z.head = j.at("head").get<bool>();
    z.torso = j.at("torso").get<bool>();
    z.legs = j.at("legs").get<bool>();
    z.torso_x = j.at("torso_x").get<int>();
    z.torso_y = j.at("torso_y").get<int>();
    z.torso_width = j.at("torso_width").get<int>();
    z.torso_height = j.at("torso_height").get<int>();
    z.intensity = j.at("intensity").get<double>();
    z.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    if (inst.id >= count) throw ValidationError("latent record id out of range");
    const auto first = pixels.begin() + static_cast<std::ptrdiff_t>(inst.id * plane);
    inst.image = Tensor({1, data.config.height, data.config.width},
                        std::vector<double>(first, first + static_cast<std::ptrdiff_t>(plane)));
    data.instances.push_back(std::move(inst));
  }
  if (data.instances.size() != count) throw ValidationError("latent table does not match image count");
  return data;
}

}  // namespace concausal
