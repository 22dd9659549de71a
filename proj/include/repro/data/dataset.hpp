#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "repro/dsp/waveform.hpp"

namespace repro::data {

struct Clip {
  std::string id;  // "<class>/<class>.<index>.wav" style relative path
  dsp::Waveform wave;
  int label = 0;
};

struct DatasetSplit {
  std::vector<Clip> train, val, test;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;

  /// Labels in range, clip ids unique across the three parts.
  void validate() const;
};

enum class TaskKind { Source12Tone, Target4Texture };

std::string to_string(TaskKind kind);
TaskKind task_from_string(const std::string& name);

/// Synthetic classification task. Source classes are steady harmonic stacks
/// (f, 2f, 3f) on a geometric grid; target classes are odd-harmonic stacks
/// with a class-specific amplitude-modulation rate on a separate frequency
/// grid. The two generators share no frequencies or envelopes.
struct SyntheticTask {
  TaskKind kind = TaskKind::Source12Tone;
  std::size_t num_classes = 12;
  double clip_seconds = 1.0;
  int sample_rate = dsp::kCanonicalSampleRate;
  std::uint64_t seed = 0;

  // frequency grid: class c has fundamental base_hz * ratio^c
  double base_hz = 200.0;
  double ratio = 1.2599210498948732;  // 2^(1/3)
  double jitter = 0.01;               // relative per-clip fundamental jitter
  double noise = 0.01;                // white-noise standard deviation

  static SyntheticTask source_defaults();
  static SyntheticTask target_defaults();

  double fundamental(std::size_t label) const;
  /// AM rate (Hz) of a target class; 0 for source classes.
  double modulation_rate(std::size_t label) const;
};

/// One clip of class `label`; deterministic in (task.seed, label, index).
dsp::Waveform synth_clip(const SyntheticTask& task, std::size_t label, std::size_t index);

/// Per-class split sizes (train, val, test): val = test = max(1, floor(0.15 n)).
std::array<std::size_t, 3> split_sizes(std::size_t n_per_class);

/// n_per_class clips per class, stratified 70/15/15 split.
DatasetSplit gen_synthetic(const SyntheticTask& task, std::size_t n_per_class);

/// Writes root/<class>/<class>.<idx>.wav plus train.txt, val.txt, test.txt.
void export_wav_tree(const DatasetSplit& split, const std::filesystem::path& root);

inline const std::array<std::string, 10> kGtzanGenres = {
    "blues", "classical", "country", "disco", "hiphop",
    "jazz",  "metal",     "pop",     "reggae", "rock"};

struct GtzanOptions {
  bool load_audio = true;
  int sample_rate = dsp::kCanonicalSampleRate;
};

/// GTZAN-layout loader driven by three split lists (one relative path per
/// line, e.g. "blues/blues.00012.wav"). Labels follow kGtzanGenres order.
DatasetSplit load_gtzan(const std::filesystem::path& root, const std::filesystem::path& train_list,
                        const std::filesystem::path& val_list,
                        const std::filesystem::path& test_list, const GtzanOptions& options = {});

}  // namespace repro::data
