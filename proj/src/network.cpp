#include "concausal/network.hpp"

#include <algorithm>
#include <cmath>

#include "concausal/error.hpp"

namespace concausal {

Network::Network(Shape input_shape, std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (shape_size(input_shape) == 0) throw ValidationError("network input shape is empty");
  shapes_.push_back(std::move(input_shape));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      shapes_.push_back(concausal::output_shape(layers_[i], shapes_.back()));
    } catch (const ValidationError& e) {
      throw ValidationError("layer " + std::to_string(i) + ": " + e.what());
    }
    param_offset_.push_back(offset);
    if (has_parameters(layers_[i])) offset += 2;
  }
}

void Network::check_input(const Tensor& activation, std::size_t level) const {
  if (level >= shapes_.size())
    throw ValidationError("activation level " + std::to_string(level) + " out of range (network has " +
                          std::to_string(shapes_.size()) + " levels)");
  if (activation.shape() != shapes_[level])
    throw ValidationError("input shape " + shape_string(activation.shape()) + " does not match " +
                          shape_string(shapes_[level]) + " expected at level " + std::to_string(level));
}

Tensor Network::forward(const Tensor& input) const { return forward_from(input, 0); }

std::vector<Tensor> Network::forward_all(const Tensor& input) const {
  return forward_range(input, 0, layers_.size());
}

std::vector<Tensor> Network::forward_range(const Tensor& activation, std::size_t from,
                                           std::size_t to) const {
  check_input(activation, from);
  if (to < from || to > layers_.size()) throw ValidationError("invalid layer range");
  std::vector<Tensor> acts;
  acts.reserve(to - from + 1);
  acts.push_back(activation);
  for (std::size_t i = from; i < to; ++i) acts.push_back(concausal::forward(layers_[i], acts.back()));
  return acts;
}

Tensor Network::forward_from(const Tensor& activation, std::size_t from) const {
  check_input(activation, from);
  Tensor x = activation;
  for (std::size_t i = from; i < layers_.size(); ++i) x = concausal::forward(layers_[i], x);
  return x;
}

Tensor Network::backward_range(std::span<const Tensor> acts, const Tensor& grad, std::size_t from,
                               std::vector<Tensor>* grads) const {
  if (acts.empty()) throw ValidationError("backward_range needs activations");
  Tensor g = grad;
  for (std::size_t j = acts.size() - 1; j > 0; --j) {
    const std::size_t li = from + j - 1;
    Tensor* gw = nullptr;
    Tensor* gb = nullptr;
    if (grads && has_parameters(layers_[li])) {
      gw = &(*grads)[param_offset_[li]];
      gb = &(*grads)[param_offset_[li] + 1];
    }
    g = concausal::backward(layers_[li], acts[j - 1], acts[j], g, gw, gb);
  }
  return g;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<Conv2d>(&layer)) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    }
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* p : const_cast<Network*>(this)->parameters()) out.push_back(p);
  return out;
}

std::vector<Tensor> Network::zero_gradients() const {
  std::vector<Tensor> out;
  for (const auto* p : parameters()) out.emplace_back(p->shape(), 0.0);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

std::vector<Tensor> forward_pass(const Network& net, const Tensor& batch) {
  const Shape& in = net.input_shape();
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1))
    throw ValidationError("batch shape " + shape_string(batch.shape()) + " does not match [N]+" +
                          shape_string(in));
  const std::size_t n = batch.dim(0);
  const std::size_t item = shape_size(in);
  std::vector<Tensor> out;
  for (const auto& s : net.activation_shapes()) {
    Shape bs{n};
    bs.insert(bs.end(), s.begin(), s.end());
    out.emplace_back(bs, 0.0);
  }
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> x(batch.values().begin() + static_cast<std::ptrdiff_t>(b * item),
                          batch.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * item));
    const auto acts = net.forward_all(Tensor(in, std::move(x)));
    for (std::size_t l = 0; l < acts.size(); ++l)
      std::copy(acts[l].values().begin(), acts[l].values().end(),
                out[l].values().begin() + static_cast<std::ptrdiff_t>(b * acts[l].size()));
  }
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ValidationError("kl_divergence: length mismatch " + std::to_string(p.size()) + " vs " +
                          std::to_string(q.size()));
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbabilityClamp)));
  }
  return std::max(kl, 0.0);
}

double cross_entropy(const Tensor& probabilities, std::size_t label, Tensor* grad) {
  if (label >= probabilities.size()) throw ValidationError("label out of range");
  const double p = std::max(probabilities[label], kProbabilityClamp);
  if (grad) {
    *grad = Tensor(probabilities.shape(), 0.0);
    (*grad)[label] = probabilities[label] > kProbabilityClamp ? -1.0 / p : 0.0;
  }
  return -std::log(p);
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

void LossWeights::validate(double min_ratio) const {
  for (double w : {shallow, deep, sparsity, tv, entropy})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be nonnegative");
  if (deep < min_ratio * shallow)
    throw ValidationError("lambda_deep must be at least " + std::to_string(min_ratio) +
                          " times lambda_shallow for concept training");
}

GradCheckResult gradient_check(std::span<Tensor* const> params, std::span<const Tensor> analytic,
                               const std::function<double()>& loss, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw ValidationError("epsilon must lie in (0, 1e-3]");
  if (params.size() != analytic.size()) throw ValidationError("gradient list length mismatch");
  GradCheckResult result;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    require_same_shape(p, analytic[t], "gradient_check");
    for (std::size_t i = 0; i < p.size(); ++i, ++flat) {
      const double saved = p[i];
      p[i] = saved + epsilon;
      const double up = loss();
      p[i] = saved - epsilon;
      const double down = loss();
      p[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw ValidationError("non-finite loss while perturbing parameter " + std::to_string(flat));
      const double cd = (up - down) / (2.0 * epsilon);
      const double a = analytic[t][i];
      const double rel = std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8});
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = flat;
      }
      ++result.checked;
    }
  }
  return result;
}

GradCheckResult gradient_check(Network& net, const OutputLoss& loss, const Tensor& input,
                               double epsilon) {
  auto grads = net.zero_gradients();
  const auto acts = net.forward_all(input);
  Tensor g;
  const double base = loss(acts.back(), &g);
  if (!std::isfinite(base)) throw ValidationError("non-finite loss at unperturbed parameters");
  net.backward_range(acts, g, 0, &grads);
  auto params = net.parameters();
  return gradient_check(params, grads, [&] { return loss(net.forward(input), nullptr); }, epsilon);
}

void Sgd::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ValidationError("sgd: gradient list length mismatch");
  if (velocity_.empty())
    for (const auto* p : params) velocity_.emplace_back(p->shape(), 0.0);
  double scale = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double v : g.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    Tensor& v = velocity_[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum_ * v[i] - lr_ * scale * grads[t][i];
      p[i] += v[i];
    }
  }
}

}  // namespace concausal
