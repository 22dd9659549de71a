#pragma once

#include <string>

#include "repro/autodiff/ops.hpp"
#include "repro/autodiff/parameter.hpp"
#include "repro/util/rng.hpp"

namespace repro::nn {

using ad::Tensor;

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return ad::linear(x, weight, bias); }
  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }
};

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Tensor operator()(const Tensor& x) const {
    return ad::conv2d(x, weight, bias, stride, padding);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }
};

enum class Init { FanIn, Zero };

Linear make_linear(ad::ParameterStore& store, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, Init init = Init::FanIn);
Conv2d make_conv(ad::ParameterStore& store, const std::string& name, std::size_t in,
                 std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                 Rng& rng, Init init = Init::FanIn);
LayerNorm make_layer_norm(ad::ParameterStore& store, const std::string& name, std::size_t dim);

/// Output length of a (kernel, stride, padding) convolution along one axis.
constexpr std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace repro::nn
