#include "concausal/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "concausal/error.hpp"

namespace concausal {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_extent(std::size_t in, const Conv2d& c) {
  return (in + 2 * c.padding - c.kernel) / c.stride + 1;
}

// Unrolls the receptive fields into a (C*k*k, OH*OW) matrix.
RowMatrix im2col(const Tensor& in, const Conv2d& c, std::size_t oh, std::size_t ow) {
  const std::size_t channels = in.dim(0), h = in.dim(1), w = in.dim(2), k = c.kernel;
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(channels * k * k),
                                  static_cast<Eigen::Index>(oh * ow));
  const auto pad = static_cast<std::ptrdiff_t>(c.padding);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col.row(static_cast<Eigen::Index>((ch * k + ky) * k + kx)).data();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* src = in.data() + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            row[oy * ow + ox] = src[ix];
          }
        }
      }
  return col;
}

void col2im(const RowMatrix& col, const Conv2d& c, std::size_t oh, std::size_t ow, Tensor& out) {
  const std::size_t channels = out.dim(0), h = out.dim(1), w = out.dim(2), k = c.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(c.padding);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col.row(static_cast<Eigen::Index>((ch * k + ky) * k + kx)).data();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = out.data() + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[ix] += row[oy * ow + ox];
          }
        }
      }
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

[[noreturn]] void reject(const Layer& layer, const Shape& in, const std::string& expected) {
  throw ValidationError(layer_kind(layer) + " cannot accept input " + shape_string(in) +
                        " (expected " + expected + ")");
}

}  // namespace

Conv2d make_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                 std::size_t padding, Rng& rng) {
  Conv2d c{in, out, kernel, stride, padding, {}, {}};
  c.weight = he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng);
  c.bias = Tensor({out}, 0.0);
  return c;
}

Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  Dense d{in, out, {}, {}};
  d.weight = he_normal({out, in}, in, rng);
  d.bias = Tensor({out}, 0.0);
  return d;
}

std::string layer_kind(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Conv2d&) { return std::string("conv2d"); },
                        [](const Relu&) { return std::string("relu"); },
                        [](const MaxPool2d&) { return std::string("maxpool2d"); },
                        [](const GlobalAvgPool&) { return std::string("global_avg_pool"); },
                        [](const Dense&) { return std::string("dense"); },
                        [](const Softmax&) { return std::string("softmax"); },
                    },
                    layer);
}

bool has_parameters(const Layer& layer) {
  return std::holds_alternative<Conv2d>(layer) || std::holds_alternative<Dense>(layer);
}

Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Shape {
            if (in.size() != 3 || in[0] != c.in_channels)
              reject(layer, in, std::to_string(c.in_channels) + " channels, rank 3");
            if (in[1] + 2 * c.padding < c.kernel || in[2] + 2 * c.padding < c.kernel)
              reject(layer, in, "spatial extent >= kernel");
            return {c.out_channels, conv_extent(in[1], c), conv_extent(in[2], c)};
          },
          [&](const Relu&) -> Shape { return in; },
          [&](const MaxPool2d& p) -> Shape {
            if (in.size() != 3 || in[1] % p.size != 0 || in[2] % p.size != 0)
              reject(layer, in, "rank 3 with extents divisible by " + std::to_string(p.size));
            return {in[0], in[1] / p.size, in[2] / p.size};
          },
          [&](const GlobalAvgPool&) -> Shape {
            if (in.size() != 3) reject(layer, in, "rank 3");
            return {in[0]};
          },
          [&](const Dense& d) -> Shape {
            if (shape_size(in) != d.in_features)
              reject(layer, in, std::to_string(d.in_features) + " features");
            return {d.out_features};
          },
          [&](const Softmax&) -> Shape {
            if (in.size() != 1) reject(layer, in, "rank 1");
            return in;
          },
      },
      layer);
}

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.shape());
  const double m = *std::max_element(logits.values().begin(), logits.values().end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out.values()) v /= sum;
  return out;
}

Tensor forward(const Layer& layer, const Tensor& in) {
  const Shape out_shape = output_shape(layer, in.shape());
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) {
            Tensor out(out_shape);
            const std::size_t oh = out_shape[1], ow = out_shape[2];
            const RowMatrix col = im2col(in, c, oh, ow);
            ConstMatMap w(c.weight.data(), static_cast<Eigen::Index>(c.out_channels),
                          static_cast<Eigen::Index>(c.in_channels * c.kernel * c.kernel));
            MatMap o(out.data(), static_cast<Eigen::Index>(c.out_channels),
                     static_cast<Eigen::Index>(oh * ow));
            o.noalias() = w * col;
            for (std::size_t oc = 0; oc < c.out_channels; ++oc)
              o.row(static_cast<Eigen::Index>(oc)).array() += c.bias[oc];
            return out;
          },
          [&](const Relu&) {
            Tensor out = in;
            for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
            return out;
          },
          [&](const MaxPool2d& p) {
            Tensor out(out_shape);
            for (std::size_t ch = 0; ch < out_shape[0]; ++ch)
              for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
                for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
                  double best = in.at(ch, oy * p.size, ox * p.size);
                  for (std::size_t dy = 0; dy < p.size; ++dy)
                    for (std::size_t dx = 0; dx < p.size; ++dx)
                      best = std::max(best, in.at(ch, oy * p.size + dy, ox * p.size + dx));
                  out.at(ch, oy, ox) = best;
                }
            return out;
          },
          [&](const GlobalAvgPool&) {
            Tensor out(out_shape);
            const std::size_t plane = in.dim(1) * in.dim(2);
            for (std::size_t ch = 0; ch < out_shape[0]; ++ch) {
              double s = 0.0;
              for (std::size_t i = 0; i < plane; ++i) s += in[ch * plane + i];
              out[ch] = s / static_cast<double>(plane);
            }
            return out;
          },
          [&](const Dense& d) {
            Tensor out(out_shape);
            ConstMatMap w(d.weight.data(), static_cast<Eigen::Index>(d.out_features),
                          static_cast<Eigen::Index>(d.in_features));
            Eigen::Map<const Eigen::VectorXd> x(in.data(), static_cast<Eigen::Index>(d.in_features));
            Eigen::Map<Eigen::VectorXd> y(out.data(), static_cast<Eigen::Index>(d.out_features));
            Eigen::Map<const Eigen::VectorXd> b(d.bias.data(), static_cast<Eigen::Index>(d.out_features));
            y.noalias() = w * x + b;
            return out;
          },
          [&](const Softmax&) { return softmax(in); },
      },
      layer);
}

Tensor backward(const Layer& layer, const Tensor& in, const Tensor& out, const Tensor& grad_out,
                Tensor* weight_grad, Tensor* bias_grad) {
  require_same_shape(out, grad_out, "backward");
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) {
            const std::size_t oh = out.dim(1), ow = out.dim(2);
            const auto rows = static_cast<Eigen::Index>(c.out_channels);
            const auto inner = static_cast<Eigen::Index>(c.in_channels * c.kernel * c.kernel);
            const auto cols = static_cast<Eigen::Index>(oh * ow);
            const RowMatrix col = im2col(in, c, oh, ow);
            ConstMatMap g(grad_out.data(), rows, cols);
            ConstMatMap w(c.weight.data(), rows, inner);
            if (weight_grad) {
              MatMap gw(weight_grad->data(), rows, inner);
              gw.noalias() += g * col.transpose();
            }
            if (bias_grad)
              for (Eigen::Index oc = 0; oc < rows; ++oc)
                (*bias_grad)[static_cast<std::size_t>(oc)] += g.row(oc).sum();
            const RowMatrix gcol = w.transpose() * g;
            Tensor grad_in(in.shape(), 0.0);
            col2im(gcol, c, oh, ow, grad_in);
            return grad_in;
          },
          [&](const Relu&) {
            Tensor grad_in(in.shape());
            for (std::size_t i = 0; i < in.size(); ++i)
              grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
            return grad_in;
          },
          [&](const MaxPool2d& p) {
            Tensor grad_in(in.shape(), 0.0);
            for (std::size_t ch = 0; ch < out.dim(0); ++ch)
              for (std::size_t oy = 0; oy < out.dim(1); ++oy)
                for (std::size_t ox = 0; ox < out.dim(2); ++ox) {
                  const double best = out.at(ch, oy, ox);
                  bool routed = false;
                  for (std::size_t dy = 0; dy < p.size && !routed; ++dy)
                    for (std::size_t dx = 0; dx < p.size && !routed; ++dx)
                      if (in.at(ch, oy * p.size + dy, ox * p.size + dx) == best) {
                        grad_in.at(ch, oy * p.size + dy, ox * p.size + dx) += grad_out.at(ch, oy, ox);
                        routed = true;
                      }
                }
            return grad_in;
          },
          [&](const GlobalAvgPool&) {
            Tensor grad_in(in.shape());
            const std::size_t plane = in.dim(1) * in.dim(2);
            const double inv = 1.0 / static_cast<double>(plane);
            for (std::size_t ch = 0; ch < in.dim(0); ++ch)
              for (std::size_t i = 0; i < plane; ++i) grad_in[ch * plane + i] = grad_out[ch] * inv;
            return grad_in;
          },
          [&](const Dense& d) {
            const auto rows = static_cast<Eigen::Index>(d.out_features);
            const auto cols = static_cast<Eigen::Index>(d.in_features);
            ConstMatMap w(d.weight.data(), rows, cols);
            Eigen::Map<const Eigen::VectorXd> x(in.data(), cols);
            Eigen::Map<const Eigen::VectorXd> g(grad_out.data(), rows);
            if (weight_grad) {
              MatMap gw(weight_grad->data(), rows, cols);
              gw.noalias() += g * x.transpose();
            }
            if (bias_grad) {
              Eigen::Map<Eigen::VectorXd> gb(bias_grad->data(), rows);
              gb += g;
            }
            Tensor grad_in(in.shape());
            Eigen::Map<Eigen::VectorXd> gi(grad_in.data(), cols);
            gi.noalias() = w.transpose() * g;
            return grad_in;
          },
          [&](const Softmax&) {
            double dot = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) dot += grad_out[i] * out[i];
            Tensor grad_in(in.shape());
            for (std::size_t i = 0; i < out.size(); ++i) grad_in[i] = out[i] * (grad_out[i] - dot);
            return grad_in;
          },
      },
      layer);
}

}  // namespace concausal
