#pragma once

// Common surface for everything the harness trains: the three reprogramming
// methods, the three baselines and source pre-training. Each method maps a
// batch of chunk inputs to non-negative per-chunk target scores; the harness
// averages them per clip and applies one loss and one accuracy path.

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "repro/autodiff/parameter.hpp"
#include "repro/baselines/baselines.hpp"
#include "repro/data/dataset.hpp"
#include "repro/dsp/chunk.hpp"
#include "repro/dsp/features.hpp"
#include "repro/models/checkpoint.hpp"
#include "repro/models/source_model.hpp"
#include "repro/reprogram/reprogram.hpp"

namespace repro::harness {

using ad::Tensor;

enum class InputKind { Waveforms, Features, Representation };

/// A clip cut into chunks, with both the raw chunk samples and their log-mel
/// maps precomputed (the front end is never trained).
struct EncodedClip {
  std::string id;
  int label = 0;
  std::size_t chunks = 0;
  std::vector<float> waves;     // chunks x chunk_samples
  std::vector<float> features;  // chunks x mel_bins x frames
};

struct EncodedSet {
  std::string name;  // "train", "val", "test"
  std::size_t chunk_samples = 0, mel_bins = 0, frames = 0;
  std::vector<EncodedClip> clips;
};

EncodedSet encode(const std::vector<data::Clip>& clips, const std::string& name,
                  const dsp::ChunkOptions& chunking, const dsp::MelConfig& mel);

struct Batch {
  Tensor input;
  std::vector<std::size_t> counts;  // chunks (rows of input) per clip
  std::vector<int> labels;
};

class TargetMethod {
 public:
  virtual ~TargetMethod() = default;

  virtual std::string name() const = 0;
  virtual InputKind input_kind() const = 0;
  /// Per-chunk non-negative scores [R, K]; argmax of their clip mean is the
  /// prediction and the row-normalized clip mean feeds the loss.
  virtual Tensor chunk_scores(const Tensor& input) const = 0;

  virtual ad::ParameterStore& trainable_store() = 0;
  virtual const ad::ParameterStore& trainable_store() const = 0;
  std::size_t trainable_count() const { return trainable_store().count_scalars(true); }
  /// Trainable plus frozen scalars involved in a forward pass.
  virtual std::size_t total_count() const { return trainable_store().count_scalars(false); }

  /// The frozen source model this method must leave untouched, if any.
  virtual const models::SourceModel* frozen_source() const { return nullptr; }

  /// Clip-level input for InputKind::Representation; cached per (set, clip).
  virtual Tensor representation(const EncodedSet& set, std::size_t clip) const;

  virtual models::Checkpoint to_checkpoint() const = 0;
};

Batch make_batch(const TargetMethod& method, const EncodedSet& set,
                 std::span<const std::size_t> clips);

/// [B, K] clip scores: per-chunk scores averaged within each clip.
Tensor clip_scores(const TargetMethod& method, const Batch& batch);

/// Mean cross-entropy of the row-normalized clip scores.
Tensor batch_loss(const TargetMethod& method, const Batch& batch);

/// Fraction of clips whose argmax clip score equals the label.
double accuracy(const TargetMethod& method, const EncodedSet& set, std::size_t batch_size);

// ---- concrete methods --------------------------------------------------------

enum class MethodKind { II, ID, IDS, BlCnn, BlFt, BlRep, Source };

std::string to_string(MethodKind kind);
MethodKind method_kind_from_string(const std::string& name);
bool is_nmr(MethodKind kind);

struct MethodOptions {
  std::size_t num_classes = 4;  // K_T
  std::size_t label_fan_in = 2;  // n
  reprog::AdapterConfig adapter;
  baselines::BlCnnConfig bl_cnn;
  std::size_t probe_hidden = 512;
};

/// Builds a freshly initialized method around `source` (frozen). For
/// MethodKind::Source the model itself is trained on its own classes.
std::unique_ptr<TargetMethod> make_method(MethodKind kind,
                                          std::shared_ptr<models::SourceModel> source,
                                          const MethodOptions& options, std::uint64_t seed);

/// Rebuilds a trained method from its checkpoint. Every method but bl_cnn
/// needs the frozen source model it was trained against.
std::unique_ptr<TargetMethod> load_method(const models::Checkpoint& ck,
                                          std::shared_ptr<models::SourceModel> source);

/// Access to the reprogrammer behind an NMR method (nullptr otherwise).
const reprog::Reprogrammer* as_reprogrammer(const TargetMethod& method);

}  // namespace repro::harness
