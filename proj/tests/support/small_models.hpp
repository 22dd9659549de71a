#pragma once

#include <memory>

#include "repro/models/source_model.hpp"
#include "repro/util/rng.hpp"

namespace repro::testing {

/// Tiny attention model: 16 mel bins, 0.25 s chunks (23 frames).
inline models::SourceConfig small_attention(std::size_t classes = 8) {
  auto c = models::SourceConfig::attention_defaults();
  c.mel.mel_bins = 16;
  c.chunk_seconds = 0.25;
  c.num_classes = classes;
  c.conv1_channels = 4;
  c.conv2_channels = 6;
  c.attention_dim = 12;
  return c;
}

/// Tiny patch transformer: 16 mel bins, 0.5 s chunks (48 frames), 8x8 patches.
inline models::SourceConfig small_patch(std::size_t classes = 8) {
  auto c = models::SourceConfig::patch_defaults();
  c.mel.mel_bins = 16;
  c.chunk_seconds = 0.5;
  c.num_classes = classes;
  c.patch = 8;
  c.model_dim = 16;
  c.heads = 2;
  c.mlp_dim = 32;
  c.blocks = 1;
  return c;
}

inline ad::Tensor random_features(const models::SourceConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ad::Tensor t({n, c.mel.mel_bins, c.chunk_frames()});
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-8.0, 2.0));
  return t;
}

inline std::shared_ptr<models::SourceModel> frozen_model(const models::SourceConfig& c) {
  std::shared_ptr<models::SourceModel> m = models::build_source_model(c);
  m->freeze();
  return m;
}

}  // namespace repro::testing
