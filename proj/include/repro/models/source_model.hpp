#pragma once

// Desk-scale frozen source classifiers. Both architectures split into a trunk
// (log-mel features -> tap activation v) and a downstream head (v -> logits),
// so a skip adapter can inject v' = v + S(v) and rerun only the head.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "repro/autodiff/parameter.hpp"
#include "repro/dsp/features.hpp"
#include "repro/models/checkpoint.hpp"
#include "repro/models/layers.hpp"

namespace repro::models {

using ad::Tensor;

enum class Arch { Attention, PatchTransformer };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct SourceConfig {
  Arch arch = Arch::Attention;
  std::size_t num_classes = 35;
  double chunk_seconds = 1.0;
  dsp::MelConfig mel;
  /// Attention arch: "attention_pool" (default) or "head_hidden".
  /// Patch arch: "class_token" (default) or "class_token_prenorm".
  std::string tap_layer;

  // attention arch
  std::size_t conv1_channels = 16;
  std::size_t conv2_channels = 32;
  std::size_t attention_dim = 64;

  // patch transformer
  std::size_t patch = 16;
  std::size_t model_dim = 384;
  std::size_t heads = 6;
  std::size_t mlp_dim = 1536;
  std::size_t blocks = 2;

  std::uint64_t seed = 0;

  static SourceConfig attention_defaults();
  static SourceConfig patch_defaults();

  std::size_t chunk_samples() const;
  std::size_t chunk_frames() const;
  void validate() const;

  nlohmann::json to_json() const;
  static SourceConfig from_json(const nlohmann::json& j);
};

struct TapOutput {
  Tensor logits;  // [N, K_S]
  Tensor probs;   // [N, K_S]
  Tensor tap;     // [N, tap_dim]
};

class SourceModel {
 public:
  virtual ~SourceModel() = default;

  const SourceConfig& config() const { return config_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  /// Features [N, mel_bins, frames] -> tap activation [N, tap_dim].
  virtual Tensor trunk(const Tensor& features) const = 0;
  /// Tap activation -> logits [N, num_classes].
  virtual Tensor head(const Tensor& tap) const = 0;
  virtual std::size_t tap_dim() const = 0;
  /// Documented tap shape for a batch of n chunks.
  ad::Shape tap_shape(std::size_t n) const { return {n, tap_dim()}; }

  TapOutput forward_with_tap(const Tensor& features) const;
  /// Class probabilities; same code path as forward_with_tap.
  Tensor forward(const Tensor& features) const;

  std::size_t num_classes() const { return config_.num_classes; }
  std::size_t parameter_count() const { return params_.count_scalars(false); }
  void freeze() { params_.freeze_all(); }
  void unfreeze() { params_.unfreeze_all(); }
  bool frozen() const;

  /// Swaps the final classification layer for a freshly initialized one with
  /// `num_classes` outputs (used by fine-tuning).
  virtual void replace_classifier(std::size_t num_classes, Rng& rng) = 0;

  std::string checksum() const;
  Checkpoint to_checkpoint() const;

 protected:
  explicit SourceModel(SourceConfig config) : config_(std::move(config)) {}
  void check_features(const Tensor& features) const;

  SourceConfig config_;
  ad::ParameterStore params_;
};

std::unique_ptr<SourceModel> build_source_model(const SourceConfig& config);
std::unique_ptr<SourceModel> build_attention_model(const SourceConfig& config);
std::unique_ptr<SourceModel> build_patch_transformer(const SourceConfig& config);

/// Deep copy (fresh parameter storage with identical values).
std::unique_ptr<SourceModel> clone_model(const SourceModel& model);

/// Closed-form parameter count from the layer shapes.
std::size_t analytic_parameter_count(const SourceConfig& config);

/// Patch grid (rows, cols) for a feature map; a trailing partial patch is kept
/// (zero-padded) iff it covers at least half a patch, and an axis always has
/// at least one patch.
std::pair<std::size_t, std::size_t> patch_grid(std::size_t mel_bins, std::size_t frames,
                                               std::size_t patch);

void save_source_model(const SourceModel& model, const std::filesystem::path& path);
/// Rebuilds the architecture from checkpoint metadata and loads the weights.
/// Models saved frozen come back frozen.
std::unique_ptr<SourceModel> load_source_model(const Checkpoint& ck);
std::unique_ptr<SourceModel> load_source_model(const std::filesystem::path& path);

}  // namespace repro::models
