#include "concausal/target_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "concausal/error.hpp"

namespace concausal {

Json to_json(const ArchitectureSpec& a) {
  return Json{{"conv_channels", a.conv_channels},
              {"pool_after", a.pool_after},
              {"kernel", a.kernel},
              {"class_count", a.class_count}};
}

ArchitectureSpec architecture_from_json(const Json& j) {
  ArchitectureSpec a;
  a.conv_channels = j.value("conv_channels", a.conv_channels);
  a.pool_after = j.value("pool_after", a.pool_after);
  a.kernel = j.value("kernel", a.kernel);
  a.class_count = j.value("class_count", a.class_count);
  return a;
}

Json to_json(const TrainConfig& t) {
  return Json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"momentum", t.momentum}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.momentum = j.value("momentum", t.momentum);
  return t;
}

Network build_target_net(const Shape& input_shape, const ArchitectureSpec& arch, std::uint64_t seed) {
  if (input_shape.size() != 3) throw ValidationError("target net expects (C, H, W) input");
  if (arch.conv_channels.empty() || arch.class_count < 2)
    throw ValidationError("architecture needs conv blocks and at least 2 classes");
  Rng rng(seed, "target.init");
  std::vector<Layer> layers;
  std::size_t channels = input_shape[0];
  for (std::size_t b = 0; b < arch.conv_channels.size(); ++b) {
    layers.push_back(make_conv(channels, arch.conv_channels[b], arch.kernel, 1, arch.kernel / 2, rng));
    layers.push_back(Relu{});
    if (std::find(arch.pool_after.begin(), arch.pool_after.end(), b + 1) != arch.pool_after.end())
      layers.push_back(MaxPool2d{2});
    channels = arch.conv_channels[b];
  }
  layers.push_back(GlobalAvgPool{});
  layers.push_back(make_dense(channels, arch.class_count, rng));
  layers.push_back(Softmax{});
  return Network(input_shape, std::move(layers));
}

std::vector<std::size_t> block_output_levels(const ArchitectureSpec& arch) {
  std::vector<std::size_t> levels;
  std::size_t level = 0;
  for (std::size_t b = 0; b < arch.conv_channels.size(); ++b) {
    level += 2;
    if (std::find(arch.pool_after.begin(), arch.pool_after.end(), b + 1) != arch.pool_after.end())
      ++level;
    levels.push_back(level);
  }
  return levels;
}

Evaluation evaluate(const Network& net, const std::vector<const SynthInstance*>& instances) {
  if (instances.empty()) throw ValidationError("no instances");
  const std::size_t classes = net.output_shape().at(0);
  Evaluation ev;
  ev.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (const auto* inst : instances) {
    Tensor p = net.forward(inst->image);
    const std::size_t pred = argmax(p.values());
    if (static_cast<std::size_t>(inst->label) >= classes) throw ValidationError("label out of range");
    ++ev.confusion[static_cast<std::size_t>(inst->label)][pred];
    if (pred == static_cast<std::size_t>(inst->label)) ++correct;
    ev.predictions.push_back(pred);
    ev.distributions.push_back(std::move(p));
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(instances.size());
  return ev;
}

Json to_json(const TrainReport& r) {
  return Json{{"epoch_losses", r.epoch_losses},
              {"train_accuracy", r.train_accuracy},
              {"test_accuracy", r.test_accuracy},
              {"confusion", r.confusion},
              {"seed", r.seed},
              {"loss_increase_flagged", r.loss_increase_flagged}};
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(idx[i - 1], idx[j]);
  }
}

TrainedTarget train_target(const std::vector<const SynthInstance*>& train,
                           const std::vector<const SynthInstance*>& test, const ArchitectureSpec& arch,
                           const TrainConfig& config, std::uint64_t seed) {
  if (train.empty()) throw ValidationError("no training instances");
  if (config.epochs < 0 || config.batch_size == 0) throw ValidationError("invalid training config");
  for (const auto* a : train)
    for (const auto* b : test)
      if (a == b) throw ValidationError("train and test splits overlap");

  TrainedTarget out{build_target_net(train.front()->image.shape(), arch, seed), {}};
  Network& net = out.net;
  out.report.seed = seed;
  Sgd sgd(config.learning_rate, config.momentum);

  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, "target.shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto grads = net.zero_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const auto* inst = train[order[k]];
        const auto acts = net.forward_all(inst->image);
        Tensor g;
        const double loss = cross_entropy(acts.back(), static_cast<std::size_t>(inst->label), &g);
        if (!std::isfinite(loss))
          throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
        epoch_loss += loss;
        net.backward_range(acts, g, 0, &grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) g *= scale;
      auto params = net.parameters();
      sgd.step(params, grads);
    }
    epoch_loss /= static_cast<double>(train.size());
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
    auto& losses = out.report.epoch_losses;
    if (!losses.empty() && epoch_loss > losses.back() * 1.05) out.report.loss_increase_flagged = true;
    losses.push_back(epoch_loss);
  }
  round_to_float32(net);

  out.report.train_accuracy = evaluate(net, train).accuracy;
  if (!test.empty()) {
    const auto ev = evaluate(net, test);
    out.report.test_accuracy = ev.accuracy;
    out.report.confusion = ev.confusion;
  }
  return out;
}

}  // namespace concausal
