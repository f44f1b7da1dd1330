#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "concausal/error.hpp"
#include "concausal/synth_data.hpp"

using namespace concausal;

namespace {

SynthConfig small(std::size_t n = 400) {
  SynthConfig c;
  c.train_count = n;
  c.test_count = 0;
  return c;
}

}  // namespace

TEST_CASE("same config and seed give identical datasets") {
  const auto a = generate_dataset(small(50), 3);
  const auto b = generate_dataset(small(50), 3);
  REQUIRE(a.instances.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(a.instances[i].image == b.instances[i].image);
    CHECK(a.instances[i].latents == b.instances[i].latents);
    CHECK(a.instances[i].label == b.instances[i].label);
  }
  const auto c = generate_dataset(small(50), 4);
  bool differs = false;
  for (std::size_t i = 0; i < 50; ++i) differs = differs || !(a.instances[i].image == c.instances[i].image);
  CHECK(differs);
}

TEST_CASE("label iff torso, pixels in range, latents reproduce the image") {
  const SynthConfig config = small(200);
  const auto data = generate_dataset(config, 9);
  for (const auto& inst : data.instances) {
    CHECK((inst.label == 1) == inst.latents.torso);
    CHECK(inst.image.shape() == Shape{1, 32, 32});
    for (double v : inst.image.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(render_instance(config, inst.latents) == inst.image);
  }
}

TEST_CASE("head probability zero means no heads") {
  SynthConfig config = small(200);
  config.head_probability = 0.0;
  for (const auto& inst : generate_dataset(config, 1).instances) CHECK_FALSE(inst.latents.head);
}

TEST_CASE("figure count is binomial") {
  const auto data = generate_dataset(small(400), 21);
  std::size_t figures = 0;
  for (const auto& inst : data.instances) figures += inst.label == 1 ? 1 : 0;
  const double sigma = std::sqrt(400 * 0.25);
  CHECK(std::abs(static_cast<double>(figures) - 200.0) <= 3 * sigma);
}

TEST_CASE("degenerate configurations are rejected") {
  SynthConfig c;
  c.height = 12;
  CHECK_THROWS_AS(generate_dataset(c, 1), ValidationError);
  c = SynthConfig{};
  c.torso_max_height = 30;
  CHECK_THROWS_WITH_AS(generate_dataset(c, 1), doctest::Contains("degenerate geometry"), ValidationError);
  c = SynthConfig{};
  c.figure_probability = 1.0;
  CHECK_THROWS_AS(generate_dataset(c, 1), ValidationError);
}

TEST_CASE("splits are disjoint and ordered") {
  SynthConfig c = small(30);
  c.test_count = 10;
  const auto data = generate_dataset(c, 2);
  CHECK(data.train_ids.size() == 30);
  CHECK(data.test_ids.size() == 10);
  CHECK(data.train_ids.back() == 29);
  CHECK(data.test_ids.front() == 30);
}

TEST_CASE("dataset files round trip exactly") {
  SynthConfig c = small(20);
  c.test_count = 5;
  const auto data = generate_dataset(c, 5);
  const auto dir = std::filesystem::temp_directory_path() / "concausal_data_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir, data, Json{{"stage", "test"}});
  const auto back = load_dataset(dir);
  REQUIRE(back.instances.size() == data.instances.size());
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    CHECK(back.instances[i].image == data.instances[i].image);
    CHECK(back.instances[i].latents == data.instances[i].latents);
  }
  CHECK(back.test_ids == data.test_ids);
  std::filesystem::remove_all(dir);
}
