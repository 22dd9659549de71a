#include "repro/models/layers.hpp"

namespace repro::nn {

Linear make_linear(ad::ParameterStore& store, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, Init init) {
  if (init == Init::Zero) {
    return {store.add(name + ".weight", {out, in}), store.add(name + ".bias", {out})};
  }
  Tensor w = store.add_uniform_fan_in(name + ".weight", {out, in}, in, rng);
  Tensor b = store.add_uniform_fan_in(name + ".bias", {out}, in, rng);
  return {w, b};
}

Conv2d make_conv(ad::ParameterStore& store, const std::string& name, std::size_t in,
                 std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                 Rng& rng, Init init) {
  const std::size_t fan_in = in * kernel * kernel;
  if (init == Init::Zero) {
    return {store.add(name + ".weight", {out, in, kernel, kernel}), store.add(name + ".bias", {out}),
            stride, padding};
  }
  Tensor w = store.add_uniform_fan_in(name + ".weight", {out, in, kernel, kernel}, fan_in, rng);
  Tensor b = store.add_uniform_fan_in(name + ".bias", {out}, fan_in, rng);
  return {w, b, stride, padding};
}

LayerNorm make_layer_norm(ad::ParameterStore& store, const std::string& name, std::size_t dim) {
  Tensor g = store.add(name + ".gamma", {dim});
  for (float& v : g.data()) v = 1.0f;
  return {g, store.add(name + ".beta", {dim})};
}

}  // namespace repro::nn
