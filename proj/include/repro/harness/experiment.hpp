#pragma once

// Experiment configuration file and the pipeline pieces built from it.
//
// A config document is a JSON object; every key is optional and overrides the
// preset named by the top-level "preset" key ("reference" by default).
// Unknown keys are rejected with their full path.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "repro/data/dataset.hpp"
#include "repro/harness/train.hpp"
#include "repro/models/source_model.hpp"

namespace repro::harness {

enum class Preset { Reference, Desk };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& name);

struct GtzanPaths {
  std::filesystem::path root, train_list, val_list, test_list;
};

struct ExperimentConfig {
  Preset preset = Preset::Reference;
  RunConfig run;
  models::SourceConfig model;  // model.mel is the feature front end for every method
  double min_partial_fraction = 0.5;

  /// Source pre-training task; num_classes and clip length follow the model.
  data::SyntheticTask source_task;
  std::size_t source_per_class = 30;
  PretrainOptions pretrain;

  /// Target task: "synthetic" or "gtzan".
  std::string target_kind = "synthetic";
  data::SyntheticTask target_task;
  std::size_t target_per_class = 40;
  GtzanPaths gtzan;

  /// Full-size defaults for an architecture.
  static ExperimentConfig reference(models::Arch arch);
  /// Reduced sizes that finish on one desktop core in minutes.
  static ExperimentConfig desk(models::Arch arch);
  static ExperimentConfig preset_config(Preset preset, models::Arch arch);

  void validate() const;
  dsp::ChunkOptions chunking() const { return {model.chunk_seconds, min_partial_fraction}; }

  nlohmann::json to_json() const;
  /// Preset + overrides. Throws ConfigError naming the offending field path.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Markdown table of every config key with its reference and desk defaults.
std::string defaults_reference();

/// Source and target splits built from the config.
data::DatasetSplit source_split(const ExperimentConfig& cfg);
data::DatasetSplit target_split(const ExperimentConfig& cfg);

struct EncodedSplit {
  EncodedSet train, val, test;
  std::size_t num_classes = 0;
};

EncodedSplit encode_split(const data::DatasetSplit& split, const ExperimentConfig& cfg);

/// Builds a fresh (unfrozen) source model and pre-trains it on the source task.
struct PretrainedSource {
  std::shared_ptr<models::SourceModel> model;
  PretrainResult result;
};
PretrainedSource pretrain_from_config(const ExperimentConfig& cfg);

}  // namespace repro::harness
