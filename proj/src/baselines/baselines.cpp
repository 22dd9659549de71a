#include "repro/baselines/baselines.hpp"

#include "repro/util/errors.hpp"

namespace repro::baselines {

using namespace repro::ad;

ResNetBlock ResNetBlock::create(ParameterStore& store, const std::string& name,
                                std::size_t in_channels, std::size_t channels, Rng& rng) {
  ResNetBlock b;
  b.conv1 = nn::make_conv(store, name + ".conv1", in_channels, channels, 3, 1, 1, rng);
  b.conv2 = nn::make_conv(store, name + ".conv2", channels, channels, 3, 1, 1, rng);
  if (in_channels != channels) {
    b.has_projection = true;
    b.projection = nn::make_conv(store, name + ".proj", in_channels, channels, 1, 1, 0, rng);
  }
  return b;
}

Tensor ResNetBlock::operator()(const Tensor& x) const {
  Tensor residual = conv2(relu(conv1(x)));
  return add(has_projection ? projection(x) : x, residual);
}

BlCnn::BlCnn(const BlCnnConfig& config, std::uint64_t seed) : config_(config) {
  if (config.channels == 0 || config.blocks == 0 || config.num_classes < 2) {
    throw ConfigError("bl_cnn: channels, blocks must be positive and num_classes >= 2");
  }
  Rng rng(derive_seed(seed, "bl_cnn_init"));
  std::size_t in = 1;
  for (std::size_t i = 0; i < config.blocks; ++i) {
    blocks_.push_back(ResNetBlock::create(params_, "bl_cnn.block" + std::to_string(i), in,
                                          config.channels, rng));
    in = config.channels;
  }
  head_ = nn::make_linear(params_, "bl_cnn.head", config.channels, config.num_classes, rng);
}

Tensor BlCnn::forward(const Tensor& features) const {
  if (features.rank() != 3) {
    throw DimensionError("bl_cnn: expected [N,M,F], got " + shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), m = features.dim(1), f = features.dim(2);
  Tensor x = reshape(features, {n, 1, m, f});
  for (const auto& b : blocks_) x = b(x);
  x = mean_axis(reshape(x, {n, config_.channels, m * f}), 2);
  return head_(x);
}

std::size_t bl_cnn_parameter_count(const BlCnnConfig& c) {
  const std::size_t conv = 9 * c.channels * c.channels + c.channels;
  std::size_t total = (9 * c.channels + c.channels) + conv + (c.channels + c.channels);
  total += (c.blocks - 1) * 2 * conv;
  return total + c.channels * c.num_classes + c.num_classes;
}

std::unique_ptr<models::SourceModel> fine_tune_model(const models::SourceModel& source,
                                                     std::size_t num_classes, std::uint64_t seed) {
  auto copy = models::clone_model(source);
  copy->unfreeze();
  Rng rng(derive_seed(seed, "fine_tune_head"));
  copy->replace_classifier(num_classes, rng);
  return copy;
}

Tensor clip_representation(const models::SourceModel& model, const Tensor& chunk_features) {
  NoGradGuard guard;
  Tensor v = model.forward_with_tap(chunk_features).tap;
  return mean_axis(v, 0);
}

RepresentationProbe::RepresentationProbe(std::size_t dim, std::size_t num_classes,
                                         std::uint64_t seed, std::size_t hidden) {
  Rng rng(derive_seed(seed, "probe_init"));
  hidden_ = nn::make_linear(params_, "probe.hidden", dim, hidden, rng);
  out_ = nn::make_linear(params_, "probe.out", hidden, num_classes, rng);
}

Tensor RepresentationProbe::forward(const Tensor& reps) const { return out_(relu(hidden_(reps))); }

std::size_t probe_parameter_count(std::size_t dim, std::size_t num_classes, std::size_t hidden) {
  return dim * hidden + hidden + hidden * num_classes + num_classes;
}

}  // namespace repro::baselines
