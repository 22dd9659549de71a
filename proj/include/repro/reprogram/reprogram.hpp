#pragma once

// Reprogramming adapters around a frozen source model.
//
//   II   waveform chunk x -> x + theta          -> log-mel -> model
//   ID   log-mel X        -> X + C(X)            -> model
//   IDS  log-mel X -> trunk -> v -> v + S(v)     -> head
//
// Every method ends in the many-to-one label map; clip scores are the mean of
// the mapped chunk scores.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "repro/autodiff/parameter.hpp"
#include "repro/dsp/features.hpp"
#include "repro/models/checkpoint.hpp"
#include "repro/models/layers.hpp"
#include "repro/models/source_model.hpp"

namespace repro::reprog {

using ad::Tensor;

enum class Method { II, ID, IDS };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

// ---- label mapping ---------------------------------------------------------

class LabelMap {
 public:
  LabelMap() = default;
  /// Target t takes source indices [t*n, t*n + n).
  static LabelMap blocks(std::size_t num_source, std::size_t num_target, std::size_t n);
  /// Explicit assignment; every row must have the same length n.
  static LabelMap explicit_map(std::size_t num_source,
                               std::vector<std::vector<std::size_t>> assignment);

  std::size_t num_source() const { return num_source_; }
  std::size_t num_target() const { return assignment_.size(); }
  std::size_t fan_in() const { return assignment_.empty() ? 0 : assignment_.front().size(); }
  const std::vector<std::vector<std::size_t>>& assignment() const { return assignment_; }

  /// Fixed averaging matrix [K_T, K_S] with 1/n at assigned entries.
  const Tensor& matrix() const { return matrix_; }

  nlohmann::json to_json() const;
  static LabelMap from_json(const nlohmann::json& j);

 private:
  void validate() const;
  void build_matrix();

  std::size_t num_source_ = 0;
  std::vector<std::vector<std::size_t>> assignment_;
  Tensor matrix_;
};

/// Source probabilities [N, K_S] -> raw mapped scores [N, K_T]:
/// out[t] = mean of probs over assignment[t]. Differentiable.
Tensor map_labels(const LabelMap& lm, const Tensor& source_probs);

/// Mean over rows of a [C, K] tensor -> [K]. Each column is summed in sorted
/// order, so the result does not depend on the chunk order.
Tensor chunk_average(const Tensor& per_chunk);

/// Row groups of a [R, K] tensor -> [B, K] means; counts sum to R.
template <typename T>
ad::BasicTensor<T> segment_average(const ad::BasicTensor<T>& rows,
                                   std::span<const std::size_t> counts);

// ---- adapters --------------------------------------------------------------

struct AdapterConfig {
  std::size_t id_channels = 136;  // hidden channels of the ID conv stack
  std::size_t id_kernel = 3;
  std::size_t skip_hidden = 64;   // hidden width of the IDS transform

  nlohmann::json to_json() const;
  static AdapterConfig from_json(const nlohmann::json& j);
};

/// Universal additive waveform perturbation, zero-initialized.
struct IINoise {
  Tensor theta;  // [chunk samples]

  static IINoise create(ad::ParameterStore& store, std::size_t length);
  std::size_t length() const { return theta.size(); }
};

/// x [N, L] -> x + theta.
Tensor apply_ii(const IINoise& noise, const Tensor& x);

/// Residual conv stack on a log-mel map: X + C(X), last conv zero-initialized.
struct FeatureTransform {
  nn::Conv2d conv1, conv2, conv3;

  static FeatureTransform create(ad::ParameterStore& store, std::size_t channels,
                                 std::size_t kernel, Rng& rng);
};

/// X [N, M, F] -> X' of the same shape.
Tensor apply_id(const FeatureTransform& t, const Tensor& features);

/// v -> v + S(v) with S = Linear(d, h) -> relu -> Linear(h, d), last layer
/// zero-initialized.
struct SkipAdapter {
  nn::Linear in, out;

  static SkipAdapter create(ad::ParameterStore& store, std::size_t dim, std::size_t hidden,
                            Rng& rng);
  std::size_t dim() const { return in.in(); }
};

/// Frozen trunk -> v -> v + S(v) -> frozen head -> source probabilities [N, K_S].
Tensor apply_ids(const SkipAdapter& s, const models::SourceModel& model, const Tensor& features);

/// Analytic trainable-parameter counts.
std::size_t ii_parameter_count(std::size_t chunk_samples);
std::size_t id_parameter_count(std::size_t channels, std::size_t kernel);
std::size_t ids_parameter_count(std::size_t dim, std::size_t hidden);

/// One reprogramming method bound to a frozen source model and a label map.
class Reprogrammer {
 public:
  /// The model must be frozen; IDS checks the tap/head dimensions here.
  Reprogrammer(Method method, std::shared_ptr<const models::SourceModel> model, LabelMap labels,
               AdapterConfig config, std::uint64_t seed);

  Method method() const { return method_; }
  const models::SourceModel& model() const { return *model_; }
  const LabelMap& label_map() const { return labels_; }
  const AdapterConfig& config() const { return config_; }

  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  /// Exact count of non-frozen scalars (the source model contributes none).
  std::size_t count_trainable() const { return params_.count_scalars(true); }

  /// II consumes chunk waveforms [R, L]; ID and IDS consume features [R, M, F].
  bool needs_waveforms() const { return method_ == Method::II; }

  /// Source-class probabilities per chunk, [R, K_S].
  Tensor source_probs(const Tensor& input) const;
  /// Raw mapped target scores per chunk, [R, K_T].
  Tensor chunk_scores(const Tensor& input) const;

  const IINoise& ii() const { return ii_; }
  const FeatureTransform& id() const { return id_; }
  const SkipAdapter& ids() const { return ids_; }

  models::Checkpoint to_checkpoint() const;
  /// Rebuilds an adapter saved by to_checkpoint() around `model`.
  static std::unique_ptr<Reprogrammer> from_checkpoint(
      const models::Checkpoint& ck, std::shared_ptr<const models::SourceModel> model);

 private:
  Method method_;
  std::shared_ptr<const models::SourceModel> model_;
  LabelMap labels_;
  AdapterConfig config_;
  ad::ParameterStore params_;
  IINoise ii_;
  FeatureTransform id_;
  SkipAdapter ids_;
};

}  // namespace repro::reprog
