#include "doctest.h"

#include <cmath>

#include "concausal/error.hpp"
#include "concausal/target_net.hpp"

using namespace concausal;

namespace {

std::vector<const SynthInstance*> ptrs(const std::vector<SynthInstance>& v) {
  std::vector<const SynthInstance*> out;
  for (const auto& i : v) out.push_back(&i);
  return out;
}

// Two separable classes: a horizontal or a vertical bar at a random spot.
// (Position alone would not do: global average pooling discards it.)
std::vector<SynthInstance> blobs(std::size_t n, std::uint64_t seed, std::size_t first_id = 0) {
  Rng rng(seed);
  std::vector<SynthInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    SynthInstance s;
    s.id = first_id + i;
    s.label = static_cast<int>(i % 2);
    s.image = Tensor({1, 16, 16}, 0.0);
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(2, 9));
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(2, 9));
    for (std::size_t k = 0; k < 6; ++k) {
      const double v = 0.8 + 0.2 * rng.uniform();
      if (s.label) s.image.at(0, y0 + k, x0) = v;
      else s.image.at(0, y0, x0 + k) = v;
    }
    out.push_back(std::move(s));
  }
  return out;
}

ArchitectureSpec tiny_arch() {
  ArchitectureSpec a;
  a.conv_channels = {4, 4};
  a.pool_after = {1};
  return a;
}

}  // namespace

TEST_CASE("default six-block layout") {
  const Network net = build_target_net({1, 32, 32}, ArchitectureSpec{}, 1);
  CHECK(net.layer_count() == 17);
  CHECK(net.output_shape() == Shape{2});
  const auto levels = block_output_levels(ArchitectureSpec{});
  CHECK(levels.size() == 6);
  CHECK(net.activation_shapes()[5] == Shape{8, 16, 16});
  CHECK(net.activation_shapes()[10] == Shape{16, 8, 8});
  CHECK(net.activation_shapes()[14] == Shape{32, 8, 8});
}

TEST_CASE("zero epochs leaves the net near chance") {
  SynthConfig c;
  c.train_count = 100;
  c.test_count = 400;
  const auto data = generate_dataset(c, 3);
  TrainConfig t;
  t.epochs = 0;
  const auto trained = train_target(data.split(data.train_ids), data.split(data.test_ids), ArchitectureSpec{}, t, 5);
  // A constant classifier is at most the class imbalance away from 0.5.
  CHECK(std::abs(trained.report.test_accuracy - 0.5) <= 3 * std::sqrt(0.25 / 400) + 0.5 * 0.1 + 0.05);
  CHECK(trained.report.epoch_losses.empty());
}

TEST_CASE("separable blobs reach full training accuracy") {
  const auto train = blobs(40, 1), test = blobs(20, 2, 100);
  TrainConfig t;
  t.epochs = 50;
  t.learning_rate = 0.01;
  t.batch_size = 8;
  const auto trained = train_target(ptrs(train), ptrs(test), tiny_arch(), t, 3);
  CHECK(trained.report.train_accuracy == 1.0);
  CHECK(trained.report.epoch_losses.size() == 50);
}

TEST_CASE("training is reproducible from the seed") {
  const auto train = blobs(24, 1), test = blobs(8, 2, 100);
  TrainConfig t;
  t.epochs = 3;
  const auto a = train_target(ptrs(train), ptrs(test), tiny_arch(), t, 11);
  const auto b = train_target(ptrs(train), ptrs(test), tiny_arch(), t, 11);
  CHECK(to_json(a.report).dump() == to_json(b.report).dump());
  CHECK(a.net.forward(train[0].image) == b.net.forward(train[0].image));
}

TEST_CASE("evaluate contracts") {
  const auto data = blobs(1, 1);
  const Network net = build_target_net({1, 16, 16}, tiny_arch(), 1);
  const auto e = evaluate(net, ptrs(data));
  REQUIRE(e.distributions.size() == 1);
  CHECK(std::abs(e.distributions[0][0] + e.distributions[0][1] - 1.0) < 1e-9);
  std::size_t total = 0;
  for (const auto& row : e.confusion)
    for (auto v : row) total += v;
  CHECK(total == 1);
  CHECK_THROWS_WITH_AS(evaluate(net, {}), doctest::Contains("no instances"), ValidationError);
}

TEST_CASE("overlapping splits are rejected") {
  const auto data = blobs(4, 1);
  CHECK_THROWS_AS(train_target(ptrs(data), ptrs(data), tiny_arch(), TrainConfig{}, 1), ValidationError);
}
