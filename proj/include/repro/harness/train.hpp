#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "repro/autodiff/parameter.hpp"
#include "repro/harness/method.hpp"

namespace repro::harness {

struct RunConfig {
  std::string method = "ii";
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t batch_size = 16;
  std::size_t label_fan_in = 2;
  reprog::AdapterConfig adapter;
  std::size_t bl_cnn_channels = 50;
  std::size_t probe_hidden = 512;

  void validate() const;
  MethodOptions method_options(std::size_t num_classes) const;
};

/// Encoded train/val/test sets plus the frozen source model they feed.
struct TrainContext {
  std::shared_ptr<models::SourceModel> source;
  const EncodedSet* train = nullptr;
  const EncodedSet* val = nullptr;
  const EncodedSet* test = nullptr;
  std::size_t num_classes = 0;  // K_T
  std::string dataset = "synthetic";
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct FitOptions {
  std::size_t epochs = 1;
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Stop once validation accuracy reaches this value (pre-training only).
  std::optional<double> stop_at;
  /// Called after every epoch.
  std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::vector<EpochLog> history;
  std::size_t backward_nodes = 0;  // graph nodes visited by the first backward
};

/// Epoch loop with seeded shuffling, Adam, and best-validation snapshotting
/// (ties keep the earlier epoch). Restores the best snapshot before returning.
/// Non-finite losses raise NumericError with epoch, batch and grad norms.
FitResult fit(TargetMethod& method, const EncodedSet& train, const EncodedSet& val,
              const FitOptions& options);

struct SeedRow {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct TrainOutcome {
  SeedRow row;
  std::unique_ptr<TargetMethod> method;
  FitResult fit;
  std::size_t trainable = 0;
  std::size_t total = 0;
};

/// One seed of cfg.method on ctx.
TrainOutcome train(const RunConfig& cfg, const TrainContext& ctx, std::uint64_t seed,
                   std::function<void(const EpochLog&)> on_epoch = {});

struct Aggregate {
  double mean = 0.0;
  std::optional<double> std;  // sample std; absent for a single seed
};

Aggregate aggregate(const std::vector<double>& accuracies);

struct RunReport {
  std::string method, arch, dataset;
  std::vector<SeedRow> rows;
  Aggregate test;
  std::size_t trainable = 0, total = 0;
  std::optional<double> seconds_per_epoch;
  std::string source_checksum_before, source_checksum_after;
  std::size_t num_classes = 0, label_fan_in = 0, epochs = 0, batch_size = 0;
  double lr = 0.0;
  double chunk_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

inline constexpr const char* kReportSchema = "repro.report/1";

/// Runs every seed in cfg.seeds; rows kept in seed order. `on_seed` receives
/// each finished outcome (e.g. to save its checkpoint).
RunReport multi_seed(const RunConfig& cfg, const TrainContext& ctx,
                     std::function<void(const TrainOutcome&)> on_seed = {});

struct BenchResult {
  double median_seconds = 0.0;
  std::vector<double> samples;
  std::size_t backward_nodes = 0;
};

/// One warm-up epoch, then the median wall time of `measured` epochs.
BenchResult bench_epoch(const RunConfig& cfg, const TrainContext& ctx, std::uint64_t seed,
                        std::size_t measured = 3);

struct PretrainOptions {
  std::size_t max_epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double target_accuracy = 0.9;
  double failure_accuracy = 0.6;
  std::function<void(const EpochLog&)> on_epoch;
};

struct PretrainResult {
  double val_acc = 0.0;
  std::size_t epochs_run = 0;
  std::string checksum;
};

/// Trains an unfrozen source model on its own task until the validation
/// accuracy reaches target_accuracy (or max_epochs), then freezes it.
/// Below failure_accuracy raises PretrainingFailed.
PretrainResult pretrain_source(std::shared_ptr<models::SourceModel> model, const EncodedSet& train,
                               const EncodedSet& val, const PretrainOptions& options);

}  // namespace repro::harness
