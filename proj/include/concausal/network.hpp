#pragma once

#include <functional>
#include <span>
#include <vector>

#include "concausal/layers.hpp"

namespace concausal {

// Sequential network. Activation 0 is the input; activation i+1 is the output
// of layer i. Autoencoders attach at activation indices ("levels").
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  const std::vector<Shape>& activation_shapes() const { return shapes_; }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  Tensor forward(const Tensor& input) const;
  std::vector<Tensor> forward_all(const Tensor& input) const;

  // Runs layers [from, to) starting from the activation at level `from`.
  // Returns activations from..to inclusive.
  std::vector<Tensor> forward_range(const Tensor& activation, std::size_t from,
                                    std::size_t to) const;
  Tensor forward_from(const Tensor& activation, std::size_t from) const;

  // Back-propagates grad (w.r.t. activation `from + acts.size() - 1`) through
  // the layers covered by `acts` and returns the gradient w.r.t. acts.front().
  // Parameter gradients accumulate into `grads` when it is non-null.
  Tensor backward_range(std::span<const Tensor> acts, const Tensor& grad, std::size_t from,
                        std::vector<Tensor>* grads) const;

  // Flat parameter list: weight then bias for each parameterized layer.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor> zero_gradients() const;
  std::size_t parameter_count() const;

 private:
  void check_input(const Tensor& activation, std::size_t level) const;

  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> param_offset_;  // per layer; index into parameters()
};

// Batched forward pass over an (N, ...) tensor. Returns one (N, ...) tensor
// per activation level, input included.
std::vector<Tensor> forward_pass(const Network& net, const Tensor& batch);

// KL(p || q) in nats; q is clamped below at 1e-12 before the log.
double kl_divergence(std::span<const double> p, std::span<const double> q);
inline constexpr double kProbabilityClamp = 1e-12;

// -log p[label] with the same clamp; gradient w.r.t. p written to grad.
double cross_entropy(const Tensor& probabilities, std::size_t label, Tensor* grad);

std::size_t argmax(std::span<const double> values);

// Loss weights for concept autoencoder training.
struct LossWeights {
  double shallow = 1.0;
  double deep = 100.0;
  double sparsity = 0.1;
  double tv = 0.1;
  double entropy = 0.01;

  // Nonnegative, and deep dominating shallow by at least min_ratio.
  void validate(double min_ratio = 10.0) const;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;  // flat index across all parameter tensors
  std::size_t checked = 0;
};

// Central-difference check of `analytic` against `loss` for every entry of
// every tensor in `params`. The loss is re-evaluated with each entry nudged
// by +/- epsilon in place. Relative error uses max(|a|, |cd|, 1e-8).
GradCheckResult gradient_check(std::span<Tensor* const> params,
                               std::span<const Tensor> analytic,
                               const std::function<double()>& loss, double epsilon);

// Loss on the network output: value, and gradient w.r.t. the output.
using OutputLoss = std::function<double(const Tensor& output, Tensor* grad)>;

GradCheckResult gradient_check(Network& net, const OutputLoss& loss, const Tensor& input,
                               double epsilon);

class Sgd {
 public:
  // clip_norm > 0 rescales the gradient to at most that global L2 norm.
  Sgd(double learning_rate, double momentum, double clip_norm = 0.0)
      : lr_(learning_rate), momentum_(momentum), clip_norm_(clip_norm) {}
  // grads are averaged by the caller.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

 private:
  double lr_;
  double momentum_;
  double clip_norm_;
  std::vector<Tensor> velocity_;
};

}  // namespace concausal
