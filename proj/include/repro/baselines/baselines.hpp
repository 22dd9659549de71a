#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "repro/autodiff/parameter.hpp"
#include "repro/models/layers.hpp"
#include "repro/models/source_model.hpp"

namespace repro::baselines {

using ad::Tensor;

/// out = shortcut(x) + conv2(relu(conv1(x))); both convs 3x3 with padding 1.
/// The shortcut is a 1x1 projection only when the channel count changes.
struct ResNetBlock {
  nn::Conv2d conv1, conv2;
  bool has_projection = false;
  nn::Conv2d projection;

  static ResNetBlock create(ad::ParameterStore& store, const std::string& name,
                            std::size_t in_channels, std::size_t channels, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct BlCnnConfig {
  std::size_t channels = 50;
  std::size_t blocks = 4;
  std::size_t num_classes = 10;
};

/// From-scratch CNN on log-mel chunks: 4 residual blocks, global mean pool,
/// one dense layer.
class BlCnn {
 public:
  BlCnn(const BlCnnConfig& config, std::uint64_t seed);

  /// Features [N, M, F] -> logits [N, K_T].
  Tensor forward(const Tensor& features) const;

  const BlCnnConfig& config() const { return config_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

 private:
  BlCnnConfig config_;
  ad::ParameterStore params_;
  std::vector<ResNetBlock> blocks_;
  nn::Linear head_;
};

std::size_t bl_cnn_parameter_count(const BlCnnConfig& config);

/// Unfrozen deep copy of `source` with a fresh num_classes head.
std::unique_ptr<models::SourceModel> fine_tune_model(const models::SourceModel& source,
                                                     std::size_t num_classes, std::uint64_t seed);

/// Clip representation: mean of the tap activation over the clip's chunks
/// (the tap is already pooled over time). Computed without a graph.
Tensor clip_representation(const models::SourceModel& model, const Tensor& chunk_features);

/// dim -> hidden -> relu -> K_T.
class RepresentationProbe {
 public:
  RepresentationProbe(std::size_t dim, std::size_t num_classes, std::uint64_t seed,
                      std::size_t hidden = 512);

  /// Representations [N, dim] -> logits [N, K_T].
  Tensor forward(const Tensor& reps) const;
  std::size_t hidden_size() const { return hidden_.out(); }
  std::size_t num_classes() const { return out_.out(); }

  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

 private:
  ad::ParameterStore params_;
  nn::Linear hidden_, out_;
};

std::size_t probe_parameter_count(std::size_t dim, std::size_t num_classes,
                                  std::size_t hidden = 512);

}  // namespace repro::baselines
