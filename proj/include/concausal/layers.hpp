#pragma once

#include <string>
#include <variant>

#include "concausal/rng.hpp"
#include "concausal/tensor.hpp"

namespace concausal {

// 2-D convolution over (C, H, W). weight is (out, in, k, k).
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weight;
  Tensor bias;
};

struct Relu {};

// Non-overlapping max pooling; stride equals window size.
struct MaxPool2d {
  std::size_t size = 2;
};

// (C, H, W) -> (C)
struct GlobalAvgPool {};

// weight is (out, in); the input is flattened.
struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weight;
  Tensor bias;
};

struct Softmax {};

using Layer = std::variant<Conv2d, Relu, MaxPool2d, GlobalAvgPool, Dense, Softmax>;

Conv2d make_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                 std::size_t padding, Rng& rng);
Dense make_dense(std::size_t in, std::size_t out, Rng& rng);

std::string layer_kind(const Layer& layer);
bool has_parameters(const Layer& layer);

// Throws ValidationError with both shapes when the layer cannot accept `in`.
Shape output_shape(const Layer& layer, const Shape& in);

Tensor forward(const Layer& layer, const Tensor& in);

// Gradient with respect to the layer input. When weight_grad/bias_grad are
// non-null the parameter gradients are accumulated into them.
Tensor backward(const Layer& layer, const Tensor& in, const Tensor& out, const Tensor& grad_out,
                Tensor* weight_grad, Tensor* bias_grad);

// Numerically stable softmax of a 1-D vector.
Tensor softmax(const Tensor& logits);

}  // namespace concausal
